#include "simreglab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace simreg {

int64_t Vocabulary::size() const {
    return mode == TokenizerMode::byte ? 258 : static_cast<int64_t>(words.size()) + 2;
}

int64_t Vocabulary::unk_id() const {
    return mode == TokenizerMode::byte ? 257 : static_cast<int64_t>(words.size());
}

int64_t Vocabulary::bos_id() const {
    return mode == TokenizerMode::byte ? 256 : static_cast<int64_t>(words.size()) + 1;
}

Vocabulary Vocabulary::bytes() { return Vocabulary{}; }

Vocabulary Vocabulary::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("word mode needs a vocabulary file; cannot open '" + path + "'");
    Vocabulary v;
    v.mode = TokenizerMode::word;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) v.words.push_back(line);
    if (v.words.empty()) throw std::runtime_error("vocabulary file '" + path + "' has no entries");
    return v;
}

std::vector<int64_t> tokenize(std::span<const char> text, const Vocabulary& vocab) {
    std::vector<int64_t> ids;
    if (vocab.mode == TokenizerMode::byte) {
        ids.reserve(text.size());
        for (char c : text) ids.push_back(static_cast<int64_t>(static_cast<unsigned char>(c)));
        return ids;
    }
    std::map<std::string, int64_t> index;
    for (size_t i = 0; i < vocab.words.size(); ++i) index[vocab.words[i]] = static_cast<int64_t>(i);
    std::istringstream stream(std::string(text.data(), text.size()));
    std::string word;
    while (stream >> word) {
        auto it = index.find(word);
        ids.push_back(it == index.end() ? vocab.unk_id() : it->second);
    }
    return ids;
}

std::string detokenize(std::span<const int64_t> ids, const Vocabulary& vocab) {
    std::string out;
    if (vocab.mode == TokenizerMode::byte) {
        for (int64_t id : ids)
            if (id >= 0 && id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
        return out;
    }
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out.push_back(' ');
        const int64_t id = ids[i];
        if (id >= 0 && id < static_cast<int64_t>(vocab.words.size()))
            out += vocab.words[static_cast<size_t>(id)];
        else
            out += "<unk>";
    }
    return out;
}

std::vector<int64_t> zipf_corpus(int64_t vocab, double exponent, int64_t length, uint64_t seed) {
    if (vocab < 2) throw std::invalid_argument("zipf_corpus: vocab must be >= 2");
    if (!(exponent > 0.0)) throw std::invalid_argument("zipf_corpus: exponent must be > 0");
    if (length < 0) throw std::invalid_argument("zipf_corpus: negative length");
    std::vector<double> cdf(static_cast<size_t>(vocab));
    double total = 0.0;
    for (int64_t r = 0; r < vocab; ++r) {
        total += std::pow(static_cast<double>(r + 1), -exponent);
        cdf[static_cast<size_t>(r)] = total;
    }
    for (auto& v : cdf) v /= total;
    cdf.back() = 1.0;
    Rng rng(seed);
    std::vector<int64_t> ids(static_cast<size_t>(length));
    for (auto& id : ids) {
        const double u = rng.uniform01();
        id = std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
        if (id == vocab) id = vocab - 1;  // u == 1.0 cannot happen, belt and braces
    }
    return ids;
}

TokenBatch TokenBatch::from_tokens(std::span<const int64_t> tokens) {
    if (tokens.empty()) throw std::invalid_argument("TokenBatch: empty token sequence");
    TokenBatch b;
    const size_t n = tokens.size();
    b.sequences.push_back(std::vector<int64_t>(tokens.begin(), tokens.end()));
    std::vector<int64_t> labels(n, 0);
    std::vector<bool> valid(n, true);
    for (size_t t = 0; t + 1 < n; ++t) labels[t] = tokens[t + 1];
    valid[n - 1] = false;
    b.labels.push_back(std::move(labels));
    b.label_valid.push_back(std::move(valid));
    return b;
}

BatchIterator::BatchIterator(std::span<const int64_t> corpus, int64_t batch, int64_t seq_len, uint64_t seed)
    : corpus_(corpus.begin(), corpus.end()), batch_(batch), seq_len_(seq_len), seed_(seed) {
    if (batch < 1 || seq_len < 1) throw std::invalid_argument("batch_iterator: batch and seq_len must be >= 1");
    const int64_t window = seq_len_ + 1;
    const int64_t windows = static_cast<int64_t>(corpus_.size()) / window;
    if (windows < batch_)
        throw std::invalid_argument("batch_iterator: corpus too short (" + std::to_string(corpus_.size()) +
                                    " ids) for batch " + std::to_string(batch_) + " x window " +
                                    std::to_string(window));
    order_.resize(static_cast<size_t>(windows));
    start_epoch(0);
}

void BatchIterator::start_epoch(int64_t epoch) {
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int64_t>(i);
    Rng rng(seed_ + 0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(epoch + 1));
    for (size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
    cursor_ = 0;
}

std::optional<TokenBatch> BatchIterator::next() {
    if (cursor_ + static_cast<size_t>(batch_) > order_.size()) return std::nullopt;
    const int64_t window = seq_len_ + 1;
    TokenBatch b;
    for (int64_t s = 0; s < batch_; ++s) {
        const int64_t base = order_[cursor_++] * window;
        std::vector<int64_t> seq(static_cast<size_t>(seq_len_));
        std::vector<int64_t> lab(static_cast<size_t>(seq_len_));
        for (int64_t t = 0; t < seq_len_; ++t) {
            seq[static_cast<size_t>(t)] = corpus_[static_cast<size_t>(base + t)];
            lab[static_cast<size_t>(t)] = corpus_[static_cast<size_t>(base + t + 1)];
        }
        b.sequences.push_back(std::move(seq));
        b.labels.push_back(std::move(lab));
        b.label_valid.push_back(std::vector<bool>(static_cast<size_t>(seq_len_), true));
    }
    return b;
}

FrequencyReport token_frequency_report(std::span<const int64_t> corpus, double head_fraction) {
    if (corpus.empty()) throw std::invalid_argument("token_frequency_report: empty corpus");
    if (head_fraction < 0.0 || head_fraction > 1.0)
        throw std::invalid_argument("token_frequency_report: head fraction must be in [0,1]");
    std::map<int64_t, int64_t> counts;
    for (int64_t id : corpus) ++counts[id];
    std::vector<std::pair<int64_t, int64_t>> sorted(counts.begin(), counts.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    FrequencyReport report;
    report.total_tokens = static_cast<int64_t>(corpus.size());
    report.head_types = static_cast<int64_t>(
        std::ceil(head_fraction * static_cast<double>(sorted.size())));
    int64_t running = 0;
    for (size_t i = 0; i < sorted.size(); ++i) {
        running += sorted[i].second;
        report.rows.push_back(FrequencyReport::Row{
            static_cast<int64_t>(i + 1), sorted[i].first, sorted[i].second,
            static_cast<double>(running) / static_cast<double>(report.total_tokens)});
        if (static_cast<int64_t>(i + 1) == report.head_types) report.head_share = report.rows.back().cumulative_share;
    }
    if (report.head_types >= static_cast<int64_t>(sorted.size())) report.head_share = 1.0;
    if (report.head_types == 0) report.head_share = 0.0;
    return report;
}

void write_frequency_csv(const FrequencyReport& report, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << "rank,token_id,count,cumulative_share\n";
    char buf[64];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%.12g", r.cumulative_share);
        f << r.rank << "," << r.token_id << "," << r.count << "," << buf << "\n";
    }
}

}  // namespace simreg
