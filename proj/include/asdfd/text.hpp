#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "asdfd/common.hpp"
#include "asdfd/rng.hpp"

namespace asdfd {

// Reserved token ids, fixed and stable across save/load.
enum ReservedToken : int {
    kPadId = 0,
    kUnkId = 1,
    kClsId = 2,
    kSepId = 3,
    kMaskId = 4,
    kNumReserved = 5,
};

class Vocab {
public:
    Vocab();

    int size() const { return static_cast<int>(id_to_token_.size()); }
    // Lookup with [UNK] fallback.
    int id_of(const std::string& token) const;
    const std::string& token_of(int id) const;
    bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

    // Appends a non-reserved token; id is the current size.
    int add_token(const std::string& token);

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

private:
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

struct Example {
    int label = 0;
    std::string text;
    std::vector<int> token_ids;  // content only, filled by DatasetSplit::encode_with
};

struct DatasetSplit {
    std::string name;  // train / valid / test
    std::vector<Example> examples;

    size_t size() const { return examples.size(); }
    // Tokenises every example against `vocab`, truncated to max_len - 2.
    void encode_with(const Vocab& vocab, int max_len);
};

struct SyntheticSpec {
    int num_classes = 4;
    std::vector<std::vector<std::string>> class_keywords;
    std::vector<std::string> fillers;
    int sentence_min = 6;
    int sentence_max = 12;
    int train_count = 2000;
    int valid_count = 500;
    int test_count = 500;
    uint64_t seed = 9001;
};

struct SyntheticCorpus {
    DatasetSplit train;
    DatasetSplit valid;
    DatasetSplit test;
};

struct EncodedRow {
    std::vector<int> ids;         // exactly max_len entries
    std::vector<uint8_t> attend;  // 1 on non-PAD positions
    int effective_len = 0;        // [CLS] + content + [SEP]
};

// Lowercased whitespace tokens.
std::vector<std::string> tokenize(const std::string& text);

// Most frequent tokens up to `cap` total ids (reserved ids included in the
// cap); ties broken lexicographically.
Vocab build_vocab(const std::vector<std::string>& lines, int cap);

// [CLS] + content (truncated) + [SEP] + [PAD]... of exactly max_len ids.
EncodedRow encode_text(const std::string& text, const Vocab& vocab, int max_len);
EncodedRow encode_ids(const std::vector<int>& content_ids, int max_len);

// One record per line, `label,text`; text may be double-quoted with ""
// escapes. Malformed rows report their line number; labels outside
// [0, num_classes) are rejected when num_classes > 0.
DatasetSplit load_csv_dataset(const std::string& path, const std::string& split_name = "train", int num_classes = 0);
void save_csv_dataset(const DatasetSplit& split, const std::string& path);

// Deterministically carves `fraction` of `train` off as a validation split.
std::pair<DatasetSplit, DatasetSplit> split_validation(const DatasetSplit& train, double fraction, uint64_t seed);

// Seeded keyword-plus-filler corpus; every sentence carries at least one
// keyword of its class.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

// The desk-scale default corpus spec (4 classes, 2000/500/500).
SyntheticSpec default_synthetic_spec();

// All training text of a split, used to build vocabularies.
std::vector<std::string> split_lines(const DatasetSplit& split);

}  // namespace asdfd
