#include "asdfd/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

#include "asdfd/io_audit.hpp"

namespace asdfd {

namespace {
const std::vector<std::string> kReservedTokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
}

Vocab::Vocab() {
    for (const auto& t : kReservedTokens) {
        token_to_id_[t] = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(t);
    }
}

int Vocab::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || id >= size()) throw std::invalid_argument("vocab: id out of range");
    return id_to_token_[static_cast<size_t>(id)];
}

int Vocab::add_token(const std::string& token) {
    auto it = token_to_id_.find(token);
    if (it != token_to_id_.end()) return it->second;
    int id = size();
    token_to_id_[token] = id;
    id_to_token_.push_back(token);
    return id;
}

void Vocab::save(const std::string& path) const {
    auto f = io::open_output(path);
    for (int i = 0; i < size(); ++i) f << id_to_token_[static_cast<size_t>(i)] << '\t' << i << '\n';
}

Vocab Vocab::load(const std::string& path) {
    auto f = io::open_input(path);
    Vocab v;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw parse_error("vocab: missing tab at line " + std::to_string(line_no));
        std::string token = line.substr(0, tab);
        int id = std::stoi(line.substr(tab + 1));
        if (id < kNumReserved) {
            if (id < 0 || token != kReservedTokens[static_cast<size_t>(id)])
                throw parse_error("vocab: reserved token mismatch at line " + std::to_string(line_no));
            continue;
        }
        if (id != v.size()) throw parse_error("vocab: non-dense id at line " + std::to_string(line_no));
        v.add_token(token);
    }
    return v;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vocab build_vocab(const std::vector<std::string>& lines, int cap) {
    if (cap <= kNumReserved) throw std::invalid_argument("build_vocab: cap must exceed the reserved ids");
    std::map<std::string, long> counts;  // ordered map gives the lexicographic tie-break for free
    for (const auto& line : lines)
        for (auto& tok : tokenize(line)) ++counts[tok];
    if (counts.empty()) throw parse_error("build_vocab: empty corpus");

    std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocab v;
    for (const auto& [tok, n] : ranked) {
        if (v.size() >= cap) break;
        v.add_token(tok);
    }
    return v;
}

EncodedRow encode_ids(const std::vector<int>& content_ids, int max_len) {
    if (max_len < 3) throw precondition_error("encode: max_len must be at least 3");
    EncodedRow row;
    row.ids.assign(static_cast<size_t>(max_len), kPadId);
    row.attend.assign(static_cast<size_t>(max_len), 0);
    const int content = std::min<int>(static_cast<int>(content_ids.size()), max_len - 2);
    row.ids[0] = kClsId;
    for (int i = 0; i < content; ++i) row.ids[static_cast<size_t>(i + 1)] = content_ids[static_cast<size_t>(i)];
    row.ids[static_cast<size_t>(content + 1)] = kSepId;
    row.effective_len = content + 2;
    for (int i = 0; i < row.effective_len; ++i) row.attend[static_cast<size_t>(i)] = 1;
    return row;
}

EncodedRow encode_text(const std::string& text, const Vocab& vocab, int max_len) {
    std::vector<int> ids;
    for (auto& tok : tokenize(text)) ids.push_back(vocab.id_of(tok));
    return encode_ids(ids, max_len);
}

void DatasetSplit::encode_with(const Vocab& vocab, int max_len) {
    for (auto& ex : examples) {
        ex.token_ids.clear();
        for (auto& tok : tokenize(ex.text)) {
            if (static_cast<int>(ex.token_ids.size()) >= max_len - 2) break;
            ex.token_ids.push_back(vocab.id_of(tok));
        }
    }
}

namespace {

// Parses `label,text` with optional RFC-style quoting of the text field.
Example parse_csv_row(const std::string& line, int line_no) {
    auto comma = line.find(',');
    if (comma == std::string::npos) throw parse_error("csv: missing comma at line " + std::to_string(line_no));
    Example ex;
    try {
        size_t used = 0;
        ex.label = std::stoi(line.substr(0, comma), &used);
        if (used != comma) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw parse_error("csv: bad label at line " + std::to_string(line_no));
    }
    if (ex.label < 0) throw parse_error("csv: negative label at line " + std::to_string(line_no));

    std::string field = line.substr(comma + 1);
    if (!field.empty() && field.front() == '"') {
        std::string out;
        bool closed = false;
        for (size_t i = 1; i < field.size(); ++i) {
            if (field[i] == '"') {
                if (i + 1 < field.size() && field[i + 1] == '"') {
                    out.push_back('"');
                    ++i;
                } else {
                    closed = true;
                    break;
                }
            } else {
                out.push_back(field[i]);
            }
        }
        if (!closed) throw parse_error("csv: unterminated quote at line " + std::to_string(line_no));
        ex.text = out;
    } else {
        ex.text = field;
    }
    return ex;
}

}  // namespace

DatasetSplit load_csv_dataset(const std::string& path, const std::string& split_name, int num_classes) {
    auto f = io::open_input(path);
    DatasetSplit split;
    split.name = split_name;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        Example ex = parse_csv_row(line, line_no);
        if (num_classes > 0 && ex.label >= num_classes)
            throw parse_error("csv: label out of range at line " + std::to_string(line_no));
        split.examples.push_back(std::move(ex));
    }
    return split;
}

void save_csv_dataset(const DatasetSplit& split, const std::string& path) {
    auto f = io::open_output(path);
    for (const auto& ex : split.examples) {
        bool needs_quote = ex.text.find(',') != std::string::npos || ex.text.find('"') != std::string::npos;
        f << ex.label << ',';
        if (needs_quote) {
            f << '"';
            for (char c : ex.text) {
                f << c;
                if (c == '"') f << '"';
            }
            f << '"';
        } else {
            f << ex.text;
        }
        f << '\n';
    }
}

std::pair<DatasetSplit, DatasetSplit> split_validation(const DatasetSplit& train, double fraction, uint64_t seed) {
    if (fraction <= 0.0 || fraction >= 1.0) throw std::invalid_argument("split_validation: fraction in (0,1)");
    std::vector<size_t> order(train.examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    for (size_t i = order.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
        std::swap(order[i - 1], order[j]);
    }
    const size_t n_valid = static_cast<size_t>(static_cast<double>(order.size()) * fraction);
    DatasetSplit new_train{"train", {}};
    DatasetSplit valid{"valid", {}};
    for (size_t i = 0; i < order.size(); ++i) {
        const Example& ex = train.examples[order[i]];
        (i < n_valid ? valid : new_train).examples.push_back(ex);
    }
    return {new_train, valid};
}

SyntheticSpec default_synthetic_spec() {
    SyntheticSpec spec;
    spec.class_keywords = {
        {"match", "league", "coach", "playoff", "striker", "tournament", "stadium", "referee", "goal", "champion"},
        {"market", "shares", "investor", "profit", "merger", "revenue", "banking", "trade", "economy", "stocks"},
        {"protein", "genome", "telescope", "quantum", "neuron", "molecule", "fossil", "orbit", "enzyme", "particle"},
        {"ballot", "senate", "treaty", "minister", "embassy", "parliament", "diplomat", "election", "summit",
         "congress"},
    };
    spec.fillers = {"the",    "a",      "of",     "and",   "to",     "in",    "on",    "for",   "with",  "after",
                    "before", "about",  "over",   "under", "new",    "old",   "big",   "small", "early", "late",
                    "report", "people", "group",  "year",  "week",   "day",   "time",  "plan",  "talks", "deal",
                    "state",  "city",   "region", "local", "global", "major", "minor", "open",  "close", "final"};
    return spec;
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 1) throw std::invalid_argument("synthetic: need at least one class");
    if (static_cast<int>(spec.class_keywords.size()) < spec.num_classes)
        throw std::invalid_argument("synthetic: keyword pool per class required");
    if (spec.sentence_min < 1 || spec.sentence_max < spec.sentence_min)
        throw std::invalid_argument("synthetic: bad sentence length range");

    // Pools must be pairwise disjoint (fillers included) or labels get noisy.
    std::set<std::string> seen;
    auto check_pool = [&](const std::vector<std::string>& pool) {
        for (const auto& w : pool) {
            if (!seen.insert(w).second) throw std::invalid_argument("synthetic: overlapping pools at '" + w + "'");
        }
    };
    for (int c = 0; c < spec.num_classes; ++c) check_pool(spec.class_keywords[static_cast<size_t>(c)]);
    check_pool(spec.fillers);
    if (spec.fillers.empty()) throw std::invalid_argument("synthetic: filler pool empty");

    Rng rng(spec.seed);
    auto make_split = [&](const char* name, int count, Rng split_rng) {
        DatasetSplit split;
        split.name = name;
        split.examples.reserve(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) {
            Example ex;
            ex.label = i % spec.num_classes;
            const auto& pool = spec.class_keywords[static_cast<size_t>(ex.label)];
            const int len = split_rng.uniform_int(spec.sentence_min, spec.sentence_max);
            const int n_keys = split_rng.uniform_int(1, std::min(3, len));
            std::vector<std::string> words;
            words.reserve(static_cast<size_t>(len));
            for (int k = 0; k < n_keys; ++k)
                words.push_back(pool[static_cast<size_t>(split_rng.uniform_int(0, static_cast<int>(pool.size()) - 1))]);
            for (int k = n_keys; k < len; ++k)
                words.push_back(
                    spec.fillers[static_cast<size_t>(split_rng.uniform_int(0, static_cast<int>(spec.fillers.size()) - 1))]);
            for (size_t w = words.size(); w > 1; --w) {
                size_t j = static_cast<size_t>(split_rng.uniform_int(0, static_cast<int>(w) - 1));
                std::swap(words[w - 1], words[j]);
            }
            std::ostringstream os;
            for (size_t w = 0; w < words.size(); ++w) os << (w ? " " : "") << words[w];
            ex.text = os.str();
            split.examples.push_back(std::move(ex));
        }
        return split;
    };

    SyntheticCorpus corpus;
    corpus.train = make_split("train", spec.train_count, rng.fork(1));
    corpus.valid = make_split("valid", spec.valid_count, rng.fork(2));
    corpus.test = make_split("test", spec.test_count, rng.fork(3));
    return corpus;
}

std::vector<std::string> split_lines(const DatasetSplit& split) {
    std::vector<std::string> lines;
    lines.reserve(split.examples.size());
    for (const auto& ex : split.examples) lines.push_back(ex.text);
    return lines;
}

}  // namespace asdfd
