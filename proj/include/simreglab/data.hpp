#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "simreglab/rng.hpp"

namespace simreg {

// Byte mode maps each byte to its own id (vocab 256 + 2 specials appended);
// word mode needs a newline-delimited vocabulary file, rank = line number.
enum class TokenizerMode : uint8_t { byte, word };

struct Vocabulary {
    TokenizerMode mode = TokenizerMode::byte;
    std::vector<std::string> words;  // word mode only
    int64_t size() const;
    int64_t unk_id() const;
    int64_t bos_id() const;

    static Vocabulary bytes();
    static Vocabulary from_file(const std::string& path);
};

std::vector<int64_t> tokenize(std::span<const char> text, const Vocabulary& vocab);
std::string detokenize(std::span<const int64_t> ids, const Vocabulary& vocab);

// i.i.d. ids with P(rank r) proportional to r^-s, ranks 0..V-1.
std::vector<int64_t> zipf_corpus(int64_t vocab, double exponent, int64_t length, uint64_t seed);

struct TokenBatch {
    std::vector<std::vector<int64_t>> sequences;  // [batch][seq_len]
    std::vector<std::vector<int64_t>> labels;     // labels[t] = next id
    std::vector<std::vector<bool>> label_valid;   // false only where no next id exists

    // sequence + shift-by-one labels with the final position masked
    static TokenBatch from_tokens(std::span<const int64_t> tokens);
};

// Non-overlapping windows of seq_len+1 ids in shuffled order; labels are the
// window shifted by one, all valid. Deterministic per (seed, epoch).
class BatchIterator {
public:
    BatchIterator(std::span<const int64_t> corpus, int64_t batch, int64_t seq_len, uint64_t seed);

    std::optional<TokenBatch> next();  // nullopt at epoch end
    void start_epoch(int64_t epoch);
    int64_t windows_per_epoch() const { return static_cast<int64_t>(order_.size()); }

private:
    std::vector<int64_t> corpus_;
    int64_t batch_;
    int64_t seq_len_;
    uint64_t seed_;
    std::vector<int64_t> order_;
    size_t cursor_ = 0;
};

struct FrequencyReport {
    struct Row {
        int64_t rank;
        int64_t token_id;
        int64_t count;
        double cumulative_share;
    };
    std::vector<Row> rows;    // sorted by count descending
    double head_share = 0.0;  // coverage of the top ceil(p * #types) types
    int64_t head_types = 0;
    int64_t total_tokens = 0;
};

FrequencyReport token_frequency_report(std::span<const int64_t> corpus, double head_fraction);

void write_frequency_csv(const FrequencyReport& report, const std::string& path);

}  // namespace simreg
