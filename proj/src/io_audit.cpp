#include "asdfd/io_audit.hpp"

#include <mutex>

#include "asdfd/common.hpp"

namespace asdfd::io {

namespace {
std::mutex log_mutex;
std::vector<std::string> reads;
std::vector<std::string> writes;
}  // namespace

std::ifstream open_input(const std::string& path, bool binary) {
    {
        std::lock_guard<std::mutex> lock(log_mutex);
        reads.push_back(path);
    }
    std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
    if (!f) throw io_error("cannot open for reading: " + path);
    return f;
}

std::ofstream open_output(const std::string& path, bool binary, bool append) {
    {
        std::lock_guard<std::mutex> lock(log_mutex);
        writes.push_back(path);
    }
    std::ios::openmode mode = binary ? std::ios::binary : std::ios::out;
    if (append) mode |= std::ios::app;
    std::ofstream f(path, mode);
    if (!f) throw io_error("cannot open for writing: " + path);
    return f;
}

std::vector<std::string> read_log() {
    std::lock_guard<std::mutex> lock(log_mutex);
    return reads;
}

std::vector<std::string> write_log() {
    std::lock_guard<std::mutex> lock(log_mutex);
    return writes;
}

void reset_log() {
    std::lock_guard<std::mutex> lock(log_mutex);
    reads.clear();
    writes.clear();
}

}  // namespace asdfd::io
