#include "hglm/model.hpp"

#include <cmath>
#include <random>

#include "hglm/error.hpp"
#include "hglm/ops.hpp"

namespace hglm {

namespace {

std::size_t usize(std::int64_t v) { return static_cast<std::size_t>(v); }

std::string layer_prefix(std::size_t l) { return "layers." + std::to_string(l) + "."; }

std::string block_prefix(std::size_t l, std::size_t i) { return layer_prefix(l) + "ffn." + std::to_string(i) + "."; }

Tensor clone_param(const Tensor& t) {
    Tensor c = t.clone();
    c.set_requires_grad(true);
    return c;
}

std::vector<std::size_t> row_positions(std::size_t rows, std::size_t seq_len) {
    std::vector<std::size_t> pos(rows);
    for (std::size_t r = 0; r < rows; ++r) pos[r] = r % seq_len;
    return pos;
}

class TruncatedNormal {
public:
    explicit TruncatedNormal(std::uint64_t seed) : rng_(seed) {}

    Tensor matrix(std::size_t rows, std::size_t cols, double std, double extra_scale) {
        std::vector<double> data(rows * cols);
        for (double& v : data) {
            double z = 0.0;
            do {
                z = normal_(rng_);
            } while (std::fabs(z) > 3.0);
            v = z * std * extra_scale;
        }
        return Tensor::from_data({rows, cols}, std::move(data), true);
    }

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace

std::vector<NamedParameter> LanguageModel::parameters() const {
    std::vector<NamedParameter> out;
    out.push_back({"embedding", embedding, false});
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& lw = layers[l];
        const std::string p = layer_prefix(l);
        out.push_back({p + "attn_norm", lw.attn_norm, false});
        out.push_back({p + "wq", lw.wq, true});
        out.push_back({p + "wk", lw.wk, true});
        out.push_back({p + "wv", lw.wv, true});
        out.push_back({p + "wo", lw.wo, true});
        for (std::size_t i = 0; i < lw.ffn.size(); ++i) {
            const auto& b = lw.ffn[i];
            const std::string bp = block_prefix(l, i);
            out.push_back({bp + "norm", b.norm, false});
            out.push_back({bp + "w_d1", b.w_d1, true});
            out.push_back({bp + "w_d2", b.w_d2, true});
            out.push_back({bp + "w_u", b.w_u, true});
        }
    }
    out.push_back({"final_norm", final_norm, false});
    out.push_back({"lm_head", lm_head, true});
    return out;
}

LanguageModel LanguageModel::clone() const {
    LanguageModel m;
    m.config = config;
    m.embedding = clone_param(embedding);
    for (const auto& lw : layers) {
        LayerWeights c;
        c.attn_norm = clone_param(lw.attn_norm);
        c.wq = clone_param(lw.wq);
        c.wk = clone_param(lw.wk);
        c.wv = clone_param(lw.wv);
        c.wo = clone_param(lw.wo);
        for (const auto& b : lw.ffn) {
            c.ffn.push_back({clone_param(b.norm), clone_param(b.w_d1), clone_param(b.w_d2), clone_param(b.w_u)});
        }
        m.layers.push_back(std::move(c));
    }
    m.final_norm = clone_param(final_norm);
    m.lm_head = clone_param(lm_head);
    return m;
}

void LanguageModel::zero_grad() const {
    for (auto& p : parameters()) p.tensor.zero_grad();
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& cfg) {
    const std::size_t d = usize(cfg.d_model), dh = usize(cfg.d_h), v = usize(cfg.vocab_size);
    std::vector<std::pair<std::string, Shape>> out;
    out.emplace_back("embedding", Shape{v, d});
    for (std::size_t l = 0; l < usize(cfg.L); ++l) {
        const std::string p = layer_prefix(l);
        out.emplace_back(p + "attn_norm", Shape{d});
        for (const char* w : {"wq", "wk", "wv", "wo"}) out.emplace_back(p + w, Shape{d, d});
        for (std::size_t i = 0; i < usize(cfg.K); ++i) {
            const std::string bp = block_prefix(l, i);
            out.emplace_back(bp + "norm", Shape{d});
            out.emplace_back(bp + "w_d1", Shape{dh, d});
            out.emplace_back(bp + "w_d2", Shape{dh, d});
            out.emplace_back(bp + "w_u", Shape{d, dh});
        }
    }
    out.emplace_back("final_norm", Shape{d});
    out.emplace_back("lm_head", Shape{d, v});
    return out;
}

LanguageModel init_weights(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    constexpr double kStd = 0.02;
    const std::size_t d = usize(cfg.d_model), dh = usize(cfg.d_h), v = usize(cfg.vocab_size);
    const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.L) * static_cast<double>(cfg.K));
    TruncatedNormal gen(seed);

    LanguageModel m;
    m.config = cfg;
    m.embedding = gen.matrix(v, d, kStd, 1.0);
    for (std::int64_t l = 0; l < cfg.L; ++l) {
        LayerWeights lw;
        lw.attn_norm = Tensor::full({d}, 1.0, true);
        lw.wq = gen.matrix(d, d, kStd, 1.0);
        lw.wk = gen.matrix(d, d, kStd, 1.0);
        lw.wv = gen.matrix(d, d, kStd, 1.0);
        lw.wo = gen.matrix(d, d, kStd, residual_scale);
        for (std::int64_t i = 0; i < cfg.K; ++i) {
            FfnSubBlock b;
            b.norm = Tensor::full({d}, 1.0, true);
            b.w_d1 = gen.matrix(dh, d, kStd, 1.0);
            b.w_d2 = gen.matrix(dh, d, kStd, 1.0);
            b.w_u = gen.matrix(d, dh, kStd, residual_scale);
            lw.ffn.push_back(std::move(b));
        }
        m.layers.push_back(std::move(lw));
    }
    m.final_norm = Tensor::full({d}, 1.0, true);
    m.lm_head = gen.matrix(d, v, kStd, 1.0);
    return m;
}

std::int64_t count_weight_matrix_elements(const LanguageModel& model) {
    std::int64_t n = 0;
    for (const auto& lw : model.layers) {
        for (const Tensor* t : {&lw.wq, &lw.wk, &lw.wv, &lw.wo}) n += static_cast<std::int64_t>(t->numel());
        for (const auto& b : lw.ffn) {
            n += static_cast<std::int64_t>(b.w_d1.numel() + b.w_d2.numel() + b.w_u.numel());
        }
    }
    return n;
}

std::pair<Tensor, Tensor> apply_rope(const Tensor& q, const Tensor& k, std::span<const std::size_t> positions,
                                     double theta) {
    if (q.rank() != 2 || q.shape() != k.shape()) {
        throw ValidationError("apply_rope: q " + shape_to_string(q.shape()) + " and k " + shape_to_string(k.shape()) +
                              " must be equal rank-2 shapes");
    }
    const std::size_t head_dim = q.dim(1);
    return {ops::rope(q, positions, head_dim, theta), ops::rope(k, positions, head_dim, theta)};
}

Tensor attention_block(const Tensor& x, const LayerWeights& w, const ModelConfig& cfg, std::size_t seq_len) {
    if (seq_len > usize(cfg.max_seq)) {
        throw ValidationError("sequence length " + std::to_string(seq_len) + " exceeds max_seq " +
                              std::to_string(cfg.max_seq));
    }
    if (x.rank() != 2 || x.dim(1) != usize(cfg.d_model)) {
        throw ValidationError("attention input " + shape_to_string(x.shape()) + " does not match d_model " +
                              std::to_string(cfg.d_model));
    }
    const bool pre = cfg.norm_placement == NormPlacement::pre_norm;
    const Tensor in = pre ? ops::rmsnorm(x, w.attn_norm, kNormEps) : x;
    const auto positions = row_positions(x.dim(0), seq_len);
    const std::size_t hd = usize(cfg.head_dim());
    const Tensor q = ops::rope(ops::linear(in, w.wq), positions, hd, cfg.rope_theta);
    const Tensor k = ops::rope(ops::linear(in, w.wk), positions, hd, cfg.rope_theta);
    const Tensor v = ops::linear(in, w.wv);
    const Tensor mixed = ops::causal_attention(q, k, v, seq_len, usize(cfg.n_heads));
    const Tensor out = ops::linear(mixed, w.wo);
    return ops::add(x, pre ? out : ops::rmsnorm(out, w.attn_norm, kNormEps));
}

Tensor ffn_sub_block(const Tensor& h, const FfnSubBlock& w, const ModelConfig& cfg) {
    const bool pre = cfg.norm_placement == NormPlacement::pre_norm;
    const Tensor in = pre ? ops::rmsnorm(h, w.norm, kNormEps) : h;
    const Tensor gate = ops::silu(ops::linear(in, w.w_d1));
    const Tensor up = ops::linear(in, w.w_d2);
    const Tensor out = ops::linear(ops::mul(gate, up), w.w_u);
    return ops::add(h, pre ? out : ops::rmsnorm(out, w.norm, kNormEps));
}

Tensor conventional_ffn(const Tensor& z, const LayerWeights& w, const ModelConfig& cfg) {
    if (cfg.ffn_kind != FfnKind::conventional || w.ffn.size() != 1) {
        throw ValidationError("conventional_ffn needs ffn_kind=conventional and exactly one sub-block");
    }
    return ffn_sub_block(z, w.ffn[0], cfg);
}

Tensor hourglass_ffn(const Tensor& u, const LayerWeights& w, const ModelConfig& cfg) {
    if (w.ffn.empty()) throw ValidationError("hourglass_ffn needs K >= 1 sub-blocks");
    Tensor h = u;
    for (const auto& block : w.ffn) h = ffn_sub_block(h, block, cfg);
    return h;
}

Tensor ffn_block(const Tensor& x, const LayerWeights& w, const ModelConfig& cfg) {
    return cfg.ffn_kind == FfnKind::conventional ? conventional_ffn(x, w, cfg) : hourglass_ffn(x, w, cfg);
}

Tensor forward_batch(const LanguageModel& model, std::span<const int> tokens, std::size_t batch) {
    const ModelConfig& cfg = model.config;
    if (batch == 0 || tokens.empty() || tokens.size() % batch != 0) {
        throw ValidationError(std::to_string(tokens.size()) + " tokens cannot be split into " + std::to_string(batch) +
                              " sequences");
    }
    const std::size_t seq_len = tokens.size() / batch;
    if (seq_len > usize(cfg.max_seq)) {
        throw ValidationError("sequence length " + std::to_string(seq_len) + " exceeds max_seq " +
                              std::to_string(cfg.max_seq));
    }
    Tensor x = ops::embedding(model.embedding, tokens);
    for (const auto& layer : model.layers) {
        x = attention_block(x, layer, cfg, seq_len);
        x = ffn_block(x, layer, cfg);
    }
    return ops::matmul(ops::rmsnorm(x, model.final_norm, kNormEps), model.lm_head);
}

Tensor lm_forward(std::span<const int> tokens, const LanguageModel& model) { return forward_batch(model, tokens, 1); }

}  // namespace hglm
