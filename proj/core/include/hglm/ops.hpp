#pragma once

#include <cstddef>
#include <span>

#include "hglm/tensor.hpp"

// Differentiable primitives. Every function validates shapes and throws
// ValidationError naming the offending shapes.
namespace hglm::ops {

// a[m x k] . b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x[m x in] . w[out x in]^T, the projection form used for weights stored as [out x in].
Tensor linear(const Tensor& x, const Tensor& w);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a);

Tensor silu(const Tensor& x);

// Normalizes every vector along the last axis by its RMS and scales by gamma.
Tensor rmsnorm(const Tensor& x, const Tensor& gamma, double eps = 1e-6);

// Max-subtracted softmax along `axis` (negative values count from the end).
Tensor softmax(const Tensor& x, int axis = -1);

// Rows of `table` selected by `ids`; out-of-range ids are reported with their index.
Tensor embedding(const Tensor& table, std::span<const int> ids);

// Rotates interleaved pairs (2i, 2i+1) of every head in x[rows x n_heads*head_dim]
// by angle position * theta^(-2i/head_dim). `positions` has one entry per row.
Tensor rope(const Tensor& x, std::span<const std::size_t> positions, std::size_t head_dim, double theta);

// Multi-head causal scaled dot-product attention over `batch` packed sequences.
// q, k, v are [batch*seq_len x n_heads*head_dim]; row b*seq_len+t is token t of
// sequence b. Masked positions receive exactly zero weight.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t seq_len,
                        std::size_t n_heads);

struct LossParts {
    double cross_entropy = 0.0;  // mean token cross-entropy
    double z_term = 0.0;         // mean (log Z)^2, before the coefficient
};

// mean_t CE(logits_t, target_t) + zloss_coeff * mean_t (log Z_t)^2.
Tensor language_model_loss(const Tensor& logits, std::span<const int> targets, double zloss_coeff,
                           LossParts* parts = nullptr);

}  // namespace hglm::ops
