#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hglm/config.hpp"
#include "hglm/tensor.hpp"

namespace hglm {

inline constexpr double kNormEps = 1e-6;

// One SwiGLU sub-block: norm gamma [d_model], w_d1/w_d2 [d_h x d_model], w_u [d_model x d_h].
// A conventional FFN is exactly one of these with d_h > d_model.
struct FfnSubBlock {
    Tensor norm;
    Tensor w_d1;
    Tensor w_d2;
    Tensor w_u;
};

struct LayerWeights {
    Tensor attn_norm;  // [d_model]
    Tensor wq, wk, wv, wo;  // [d_model x d_model], stored [out x in]
    std::vector<FfnSubBlock> ffn;  // K entries (1 for conventional)
};

struct NamedParameter {
    std::string name;
    Tensor tensor;
    bool decay = true;  // false for norm gammas and the token embedding
};

struct LanguageModel {
    ModelConfig config;
    Tensor embedding;   // [vocab_size x d_model]
    std::vector<LayerWeights> layers;
    Tensor final_norm;  // [d_model]
    Tensor lm_head;     // [d_model x vocab_size], untied

    // Stable order: embedding, layers (attention, then FFN sub-blocks), final norm, lm_head.
    std::vector<NamedParameter> parameters() const;

    // Deep copy; the result shares no storage with this model.
    LanguageModel clone() const;

    void zero_grad() const;
};

// Expected shape of every named parameter for `cfg`, in parameters() order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& cfg);

// Truncated normal (std 0.02, cut at 3 std) for all matrices; W_o and each W_u
// additionally scaled by 1/sqrt(2*L*K); gammas are 1. Deterministic in `seed`.
LanguageModel init_weights(const ModelConfig& cfg, std::uint64_t seed);

// Element count of attention and FFN weight matrices (embedding, lm_head and
// gammas excluded), obtained by walking the allocated tensors.
std::int64_t count_weight_matrix_elements(const LanguageModel& model);

// Query/key rotation for a single head: q, k are [T x head_dim].
std::pair<Tensor, Tensor> apply_rope(const Tensor& q, const Tensor& k, std::span<const std::size_t> positions,
                                     double theta);

// Attention residual block on x [batch*seq_len x d_model].
Tensor attention_block(const Tensor& x, const LayerWeights& w, const ModelConfig& cfg, std::size_t seq_len);

// One residual SwiGLU sub-block: h + MLP(h) with the configured norm placement.
Tensor ffn_sub_block(const Tensor& h, const FfnSubBlock& w, const ModelConfig& cfg);

// z + W_u(SiLU(W_d1 norm z) * W_d2 norm z). Requires ffn_kind = conventional.
Tensor conventional_ffn(const Tensor& z, const LayerWeights& w, const ModelConfig& cfg);

// h_0 = u, h_{i+1} = h_i + MLP_i(h_i), returns h_K.
Tensor hourglass_ffn(const Tensor& u, const LayerWeights& w, const ModelConfig& cfg);

// Dispatches on cfg.ffn_kind.
Tensor ffn_block(const Tensor& x, const LayerWeights& w, const ModelConfig& cfg);

// Next-token logits [batch*seq_len x vocab] for `batch` packed sequences.
Tensor forward_batch(const LanguageModel& model, std::span<const int> tokens, std::size_t batch);

// Next-token logits [T x vocab] for one sequence.
Tensor lm_forward(std::span<const int> tokens, const LanguageModel& model);

}  // namespace hglm
