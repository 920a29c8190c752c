#include "hglm/data.hpp"

#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <cstdint>

#include "hglm/error.hpp"

namespace hglm {

std::vector<int> tokenize_bytes(std::string_view text) {
    std::vector<int> ids(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) ids[i] = static_cast<unsigned char>(text[i]);
    return ids;
}

std::string detokenize_bytes(std::span<const int> ids) {
    std::string out(ids.size(), '\0');
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= kByteVocab) {
            throw ValidationError("id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                                  " is not a byte");
        }
        out[i] = static_cast<char>(static_cast<unsigned char>(ids[i]));
    }
    return out;
}

void Corpus::check_vocab(std::int64_t vocab_size) const {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= vocab_size) {
            throw ValidationError("corpus id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                                  " is outside vocabulary of size " + std::to_string(vocab_size));
        }
    }
}

Corpus corpus_from_text(std::string_view text, std::string source) {
    return Corpus{tokenize_bytes(text), {std::move(source)}};
}

Corpus load_byte_corpus(const std::vector<std::string>& paths) {
    Corpus c;
    for (const auto& path : paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open corpus file " + path);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto ids = tokenize_bytes(bytes);
        c.tokens.insert(c.tokens.end(), ids.begin(), ids.end());
        c.sources.push_back(path);
    }
    return c;
}

Corpus load_id_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open id file " + path);
    Corpus c;
    c.sources.push_back(path);
    std::string word;
    while (in >> word) {
        std::size_t used = 0;
        long long v = -1;
        try {
            v = std::stoll(word, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != word.size() || v < 0 || v > INT32_MAX) {
            throw ValidationError("invalid token id '" + word + "' in " + path);
        }
        c.tokens.push_back(static_cast<int>(v));
    }
    return c;
}

std::size_t window_count(std::size_t corpus_len, std::size_t seq_len) {
    if (seq_len == 0 || corpus_len < 1) return 0;
    return (corpus_len - 1) / seq_len;
}

BatchIterator::BatchIterator(const Corpus& corpus, std::size_t seq_len, std::size_t batch_tokens,
                             std::uint64_t seed, bool shuffle, bool allow_wrap)
    : corpus_(&corpus),
      seq_len_(seq_len),
      batch_size_(seq_len == 0 ? 0 : batch_tokens / seq_len),
      seed_(seed),
      shuffle_(shuffle),
      allow_wrap_(allow_wrap),
      windows_(window_count(corpus.size(), seq_len)) {
    if (seq_len == 0 || batch_tokens == 0 || batch_tokens % seq_len != 0) {
        throw ValidationError("batch_tokens (" + std::to_string(batch_tokens) + ") must be a positive multiple of seq_len (" +
                              std::to_string(seq_len) + ")");
    }
    if (windows_ < batch_size_) {
        throw ValidationError("corpus of " + std::to_string(corpus.size()) + " tokens yields " + std::to_string(windows_) +
                              " windows of length " + std::to_string(seq_len) + ", fewer than one batch of " +
                              std::to_string(batch_size_));
    }
}

std::vector<std::size_t> BatchIterator::order_for_pass(std::size_t pass) const {
    std::vector<std::size_t> order(windows_);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle_) {
        std::mt19937_64 rng(seed_ + 0x9E3779B97F4A7C15ULL * pass);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng() % i]);
        }
    }
    return order;
}

void BatchIterator::seek(std::size_t index) { next_batch_ = index; }

bool BatchIterator::has_next() const { return allow_wrap_ || next_batch_ < batches_per_pass(); }

Batch BatchIterator::next() {
    const std::size_t per_pass = batches_per_pass();
    if (!allow_wrap_ && next_batch_ >= per_pass) {
        throw ValidationError("corpus exhausted after " + std::to_string(per_pass) + " batches of " +
                              std::to_string(batch_size_ * seq_len_) + " tokens");
    }
    const std::size_t pass = next_batch_ / per_pass;
    const std::size_t in_pass = next_batch_ % per_pass;
    if (pass != cached_pass_) {
        order_ = order_for_pass(pass);
        cached_pass_ = pass;
    }
    Batch b;
    b.batch_size = batch_size_;
    b.seq_len = seq_len_;
    b.inputs.reserve(batch_size_ * seq_len_);
    b.targets.reserve(batch_size_ * seq_len_);
    const auto& toks = corpus_->tokens;
    for (std::size_t s = 0; s < batch_size_; ++s) {
        const std::size_t start = order_[in_pass * batch_size_ + s] * seq_len_;
        b.inputs.insert(b.inputs.end(), toks.begin() + static_cast<std::ptrdiff_t>(start),
                        toks.begin() + static_cast<std::ptrdiff_t>(start + seq_len_));
        b.targets.insert(b.targets.end(), toks.begin() + static_cast<std::ptrdiff_t>(start + 1),
                         toks.begin() + static_cast<std::ptrdiff_t>(start + seq_len_ + 1));
    }
    ++next_batch_;
    return b;
}

}  // namespace hglm
