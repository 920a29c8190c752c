#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hglm {

inline constexpr int kByteVocab = 256;

// Byte -> id identity mapping. Ids >= 256 are reserved for callers.
std::vector<int> tokenize_bytes(std::string_view text);
// Inverse of tokenize_bytes; throws ValidationError on ids outside 0..255.
std::string detokenize_bytes(std::span<const int> ids);

struct Corpus {
    std::vector<int> tokens;
    std::vector<std::string> sources;

    std::size_t size() const { return tokens.size(); }
    // Throws ValidationError naming the first id >= vocab_size.
    void check_vocab(std::int64_t vocab_size) const;
};

Corpus corpus_from_text(std::string_view text, std::string source = "<memory>");
// Raw bytes of each file, concatenated in argument order.
Corpus load_byte_corpus(const std::vector<std::string>& paths);
// Whitespace-separated non-negative integer ids.
Corpus load_id_corpus(const std::string& path);

struct Batch {
    std::vector<int> inputs;   // batch_size * seq_len, sequence-major
    std::vector<int> targets;  // inputs shifted by one position
    std::size_t batch_size = 0;
    std::size_t seq_len = 0;
};

// Number of non-overlapping input windows: floor((len - 1) / seq_len).
std::size_t window_count(std::size_t corpus_len, std::size_t seq_len);

// Streams non-overlapping contiguous windows; window w covers tokens
// [w*seq_len, w*seq_len + seq_len] (inputs plus one target token). With
// `shuffle`, each pass visits windows in a seed-determined permutation;
// otherwise in corpus order. The stream depends only on (corpus, seq_len,
// batch_tokens, seed, shuffle), never on the model consuming it.
class BatchIterator {
public:
    BatchIterator(const Corpus& corpus, std::size_t seq_len, std::size_t batch_tokens, std::uint64_t seed,
                  bool shuffle = true, bool allow_wrap = false);

    std::size_t batches_per_pass() const { return windows_ / batch_size_; }
    std::size_t batch_size() const { return batch_size_; }
    std::size_t position() const { return next_batch_; }

    // Skips ahead so the next call to next() returns batch `index`.
    void seek(std::size_t index);
    bool has_next() const;
    Batch next();

private:
    std::vector<std::size_t> order_for_pass(std::size_t pass) const;

    const Corpus* corpus_;
    std::size_t seq_len_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    bool shuffle_;
    bool allow_wrap_;
    std::size_t windows_;
    std::size_t next_batch_ = 0;
    std::size_t cached_pass_ = static_cast<std::size_t>(-1);
    std::vector<std::size_t> order_;
};

}  // namespace hglm
