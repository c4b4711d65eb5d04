#pragma once

#include <fstream>
#include <string>
#include <vector>

namespace asdfd::io {

// Every file the library touches goes through these helpers so a test (or a
// cautious operator) can audit exactly which paths a run opened. The data-free
// guarantee is checked against this log.
std::ifstream open_input(const std::string& path, bool binary = false);
std::ofstream open_output(const std::string& path, bool binary = false, bool append = false);

std::vector<std::string> read_log();
std::vector<std::string> write_log();
void reset_log();

}  // namespace asdfd::io
