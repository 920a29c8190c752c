#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hglm/budget.hpp"
#include "hglm/error.hpp"
#include "hglm/model.hpp"
#include "hglm/ops.hpp"
#include "hglm/training.hpp"
#include "oracles.hpp"

using namespace hglm;
using hglm::oracle::random_tensor;

namespace {

ModelConfig small_config(FfnKind kind = FfnKind::hourglass, std::int64_t K = 2) {
    ModelConfig c;
    c.d_model = 16;
    c.d_h = 8;
    c.L = 2;
    c.K = K;
    c.n_heads = 2;
    c.ffn_kind = kind;
    c.vocab_size = 11;
    c.max_seq = 16;
    return c;
}

void expect_bit_equal(const Tensor& a, const Tensor& b, const std::string& what = "") {
    ASSERT_EQ(a.shape(), b.shape()) << what;
    for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.at(i), b.at(i)) << what << " at " << i;
}

void zero(const Tensor& t) {
    Tensor h = t;
    for (double& v : h.mutable_data()) v = 0.0;
}

double stddev(std::span<const double> v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

std::vector<int> tokens_for(std::size_t n, int vocab, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<int> t(n);
    for (auto& x : t) x = static_cast<int>(rng() % static_cast<std::uint64_t>(vocab));
    return t;
}

}  // namespace

TEST(ModelConfig, ValidationRules) {
    ModelConfig c = small_config();
    EXPECT_NO_THROW(c.validate());
    c.n_heads = 3;
    EXPECT_THROW(c.validate(), ValidationError);
    c = small_config();
    c.n_heads = 16;  // head_dim 1 is odd
    EXPECT_THROW(c.validate(), ValidationError);
    c = small_config(FfnKind::conventional, 2);
    EXPECT_THROW(c.validate(), ValidationError);
    c = small_config();
    c.d_h = 0;
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(ModelConfig, HeadDimNeedNotBePowerOfTwo) {
    ModelConfig c;
    c.d_model = 1032;
    c.n_heads = 12;
    c.d_h = 418;
    c.L = 12;
    c.K = 4;
    c.ffn_kind = FfnKind::hourglass;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.head_dim(), 86);
}

TEST(ModelConfig, AnyPositiveDhIsAccepted) {
    ModelConfig c = small_config(FfnKind::conventional, 1);
    c.d_h = 3;  // narrower than d_model
    EXPECT_NO_THROW(c.validate());
    c = small_config();
    c.d_h = 64;  // wider than d_model
    EXPECT_NO_THROW(c.validate());
}

TEST(InitWeights, DeterministicInSeed) {
    const auto a = init_weights(small_config(), 42).parameters();
    const auto b = init_weights(small_config(), 42).parameters();
    const auto c = init_weights(small_config(), 43).parameters();
    ASSERT_EQ(a.size(), b.size());
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        expect_bit_equal(a[i].tensor, b[i].tensor, a[i].name);
        for (std::size_t j = 0; j < a[i].tensor.numel(); ++j) differs |= a[i].tensor.at(j) != c[i].tensor.at(j);
    }
    EXPECT_TRUE(differs);
}

TEST(InitWeights, GammasAreOne) {
    const auto m = init_weights(small_config(), 1);
    for (const auto& p : m.parameters()) {
        if (p.name.find("norm") == std::string::npos) continue;
        for (double v : p.tensor.data()) EXPECT_EQ(v, 1.0) << p.name;
    }
}

TEST(InitWeights, ProjectionStatistics) {
    ModelConfig c;
    c.d_model = 512;
    c.d_h = 8;
    c.L = 2;
    c.K = 1;
    c.n_heads = 8;
    c.vocab_size = 4;
    const auto m = init_weights(c, 7);
    const double s = stddev(m.layers[0].wq.data());
    EXPECT_NEAR(s, 0.02, 0.002);
    for (double v : m.layers[0].wq.data()) EXPECT_LE(std::abs(v), 0.06);
    const double scale = 1.0 / std::sqrt(2.0 * 2.0 * 1.0);
    EXPECT_NEAR(stddev(m.layers[0].wo.data()), 0.02 * scale, 0.002 * scale);
    for (double v : m.layers[0].wo.data()) EXPECT_LE(std::abs(v), 0.06 * scale);
}

TEST(Model, ParameterShapesAndNames) {
    const ModelConfig c = small_config();
    const auto m = init_weights(c, 1);
    const auto params = m.parameters();
    const auto shapes = parameter_shapes(c);
    ASSERT_EQ(params.size(), shapes.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        EXPECT_EQ(params[i].name, shapes[i].first);
        EXPECT_EQ(params[i].tensor.shape(), shapes[i].second) << params[i].name;
    }
    EXPECT_EQ(m.layers.size(), 2u);
    EXPECT_EQ(m.embedding.shape(), (Shape{11, 16}));
    EXPECT_EQ(m.lm_head.shape(), (Shape{16, 11}));
    EXPECT_EQ(m.layers[1].ffn[1].w_d1.shape(), (Shape{8, 16}));
    EXPECT_EQ(m.layers[1].ffn[1].w_u.shape(), (Shape{16, 8}));
}

TEST(Model, DecayExemptions) {
    for (const auto& p : init_weights(small_config(), 1).parameters()) {
        const bool exempt = p.name == "embedding" || p.name.find("norm") != std::string::npos;
        EXPECT_EQ(p.decay, !exempt) << p.name;
    }
}

TEST(Model, PerLayerWeightCount) {
    const ModelConfig c = small_config(FfnKind::hourglass, 3);
    const auto m = init_weights(c, 1);
    const std::int64_t per_layer = 4 * c.d_model * c.d_model + c.K * 3 * c.d_h * c.d_model;
    EXPECT_EQ(count_weight_matrix_elements(m), c.L * per_layer);
}

TEST(Rope, PositionZeroIsIdentity) {
    const Tensor q = random_tensor({1, 8}, -2, 2, 1);
    const Tensor k = random_tensor({1, 8}, -2, 2, 2);
    const std::vector<std::size_t> pos = {0};
    const auto [rq, rk] = apply_rope(q, k, pos, 10000.0);
    expect_bit_equal(rq, q);
    expect_bit_equal(rk, k);
}

TEST(Rope, PreservesNorms) {
    const Tensor q = random_tensor({6, 8}, -2, 2, 3);
    const Tensor k = random_tensor({6, 8}, -2, 2, 4);
    const std::vector<std::size_t> pos = {0, 1, 7, 100, 1000, 4095};
    const auto [rq, rk] = apply_rope(q, k, pos, 10000.0);
    for (std::size_t r = 0; r < 6; ++r) {
        double a = 0, b = 0;
        for (std::size_t c = 0; c < 8; ++c) {
            a += q.at(r, c) * q.at(r, c);
            b += rq.at(r, c) * rq.at(r, c);
        }
        EXPECT_NEAR(std::sqrt(a), std::sqrt(b), 1e-12);
    }
}

TEST(Rope, DotProductDependsOnlyOnOffset) {
    const Tensor q = random_tensor({1, 8}, -2, 2, 5);
    const Tensor k = random_tensor({1, 8}, -2, 2, 6);
    auto score = [&](std::size_t pq, std::size_t pk) {
        const std::vector<std::size_t> a = {pq}, b = {pk};
        const Tensor rq = apply_rope(q, k, a, 10000.0).first;
        const Tensor rk = apply_rope(q, k, b, 10000.0).second;
        double s = 0;
        for (std::size_t c = 0; c < 8; ++c) s += rq.at(c) * rk.at(c);
        return s;
    };
    for (std::size_t delta : {0u, 1u, 3u, 17u}) {
        const double ref = score(2, 2 + delta);
        for (std::size_t p : {0u, 5u, 40u, 311u}) EXPECT_NEAR(score(p, p + delta), ref, 1e-9) << delta << " " << p;
    }
}

TEST(Attention, SingleTokenPreNorm) {
    const ModelConfig c = small_config();
    const auto m = init_weights(c, 3);
    oracle::randomize(m, -0.5, 0.5, 9);
    const Tensor x = random_tensor({1, 16}, -2, 2, 4);
    const auto& w = m.layers[0];
    const Tensor got = attention_block(x, w, c, 1);
    const Tensor want = ops::add(x, ops::linear(ops::linear(ops::rmsnorm(x, w.attn_norm, kNormEps), w.wv), w.wo));
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(got.at(i), want.at(i), 1e-14);
}

TEST(Attention, PostSublayerPlacementNormalizesOutput) {
    ModelConfig c = small_config();
    c.norm_placement = NormPlacement::post_sublayer_pre_residual;
    const auto m = init_weights(c, 3);
    oracle::randomize(m, -0.5, 0.5, 9);
    const Tensor x = random_tensor({1, 16}, -2, 2, 4);
    const auto& w = m.layers[0];
    const Tensor got = attention_block(x, w, c, 1);
    const Tensor want = ops::add(x, ops::rmsnorm(ops::linear(ops::linear(x, w.wv), w.wo), w.attn_norm, kNormEps));
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(got.at(i), want.at(i), 1e-14);
}

TEST(Attention, RejectsSequenceBeyondMaxSeq) {
    const ModelConfig c = small_config();
    const auto m = init_weights(c, 1);
    EXPECT_THROW(attention_block(Tensor::zeros({17, 16}), m.layers[0], c, 17), ValidationError);
}

TEST(Attention, ZeroOutputProjectionIsIdentity) {
    for (auto placement : {NormPlacement::pre_norm, NormPlacement::post_sublayer_pre_residual}) {
        ModelConfig c = small_config();
        c.norm_placement = placement;
        const auto m = init_weights(c, 2);
        zero(m.layers[0].wo);
        const Tensor x = random_tensor({5, 16}, -2, 2, 8);
        expect_bit_equal(attention_block(x, m.layers[0], c, 5), x);
    }
}

TEST(Attention, CausalPerturbation) {
    const ModelConfig c = small_config();
    const auto m = init_weights(c, 5);
    oracle::randomize(m, -0.5, 0.5, 10);
    const std::size_t T = 7;
    Tensor x = random_tensor({T, 16}, -2, 2, 11);
    const Tensor base = attention_block(x, m.layers[0], c, T);
    for (std::size_t t = 0; t + 1 < T; ++t) {
        Tensor y = x.clone();
        for (std::size_t r = t + 1; r < T; ++r) {
            for (std::size_t col = 0; col < 16; ++col) y.mutable_data()[r * 16 + col] += 1.0 + static_cast<double>(r);
        }
        const Tensor out = attention_block(y, m.layers[0], c, T);
        for (std::size_t i = 0; i < (t + 1) * 16; ++i) ASSERT_EQ(out.at(i), base.at(i)) << "t=" << t;
    }
}

TEST(Ffn, ZeroUpProjectionIsIdentity) {
    const auto conv = init_weights(small_config(FfnKind::conventional, 1), 1);
    zero(conv.layers[0].ffn[0].w_u);
    const Tensor z = random_tensor({4, 16}, -2, 2, 3);
    expect_bit_equal(conventional_ffn(z, conv.layers[0], conv.config), z);

    for (std::int64_t K : {1, 2, 5}) {
        const auto hg = init_weights(small_config(FfnKind::hourglass, K), 1);
        for (const auto& b : hg.layers[0].ffn) zero(b.w_u);
        expect_bit_equal(hourglass_ffn(z, hg.layers[0], hg.config), z, "K=" + std::to_string(K));
    }
}

TEST(Ffn, ShapeContract) {
    const auto m = init_weights(small_config(FfnKind::conventional, 1), 1);
    for (std::size_t T : {1u, 3u, 9u}) {
        const Tensor z = random_tensor({T, 16}, -2, 2, T);
        EXPECT_EQ(conventional_ffn(z, m.layers[0], m.config).shape(), z.shape());
    }
    EXPECT_THROW(hourglass_ffn(Tensor::zeros({2, 16}), LayerWeights{}, m.config), ValidationError);
}

TEST(Ffn, StackedSubBlocksComposeSequentially) {
    const auto m = init_weights(small_config(FfnKind::hourglass, 2), 4);
    oracle::randomize(m, -0.5, 0.5, 4);
    ModelConfig one = m.config;
    one.K = 1;
    LayerWeights first = m.layers[0], second = m.layers[0];
    first.ffn = {m.layers[0].ffn[0]};
    second.ffn = {m.layers[0].ffn[1]};
    const Tensor u = random_tensor({5, 16}, -2, 2, 6);
    const Tensor both = hourglass_ffn(u, m.layers[0], m.config);
    const Tensor seq = hourglass_ffn(hourglass_ffn(u, first, one), second, one);
    expect_bit_equal(both, seq);
}

TEST(Ffn, KEqualsOneMatchesConventional) {
    for (auto placement : {NormPlacement::pre_norm, NormPlacement::post_sublayer_pre_residual}) {
        ModelConfig conv = small_config(FfnKind::conventional, 1);
        conv.norm_placement = placement;
        conv.d_h = 40;
        ModelConfig hg = conv;
        hg.ffn_kind = FfnKind::hourglass;
        const auto m = init_weights(conv, 8);
        oracle::randomize(m, -0.5, 0.5, 8);
        const Tensor z = random_tensor({6, 16}, -2, 2, 1);
        expect_bit_equal(conventional_ffn(z, m.layers[0], conv), hourglass_ffn(z, m.layers[0], hg));
    }
}

TEST(LmForward, ShapeAndOutOfRangeToken) {
    const auto m = init_weights(small_config(), 1);
    const std::vector<int> toks = {1, 2, 3, 10};
    EXPECT_EQ(lm_forward(toks, m).shape(), (Shape{4, 11}));
    const std::vector<int> bad = {1, 2, 11};
    try {
        lm_forward(bad, m);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("position 2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(lm_forward(tokens_for(17, 11, 1), m), ValidationError);
}

TEST(LmForward, ZeroHeadGivesLogVocabLoss) {
    const auto m = init_weights(small_config(), 1);
    zero(m.lm_head);
    const auto toks = tokens_for(9, 11, 2);
    const std::vector<int> targets(toks.begin() + 1, toks.end());
    const std::vector<int> inputs(toks.begin(), toks.end() - 1);
    const double loss = ops::language_model_loss(lm_forward(inputs, m), targets, 0.0).item();
    EXPECT_NEAR(loss, std::log(11.0), 1e-12);
}

TEST(LmForward, FutureTokensDoNotChangePastLogits) {
    const auto m = init_weights(small_config(), 3);
    oracle::randomize(m, -0.5, 0.5, 3);
    const auto toks = tokens_for(10, 11, 5);
    const Tensor base = lm_forward(toks, m);
    std::mt19937_64 rng(77);
    for (std::size_t t = 0; t + 1 < toks.size(); ++t) {
        for (int trial = 0; trial < 3; ++trial) {
            auto pert = toks;
            for (std::size_t j = t + 1; j < pert.size(); ++j) pert[j] = static_cast<int>(rng() % 11);
            const Tensor out = lm_forward(pert, m);
            for (std::size_t i = 0; i < (t + 1) * 11; ++i) ASSERT_EQ(out.at(i), base.at(i)) << "t=" << t;
        }
    }
}

TEST(LmForward, ResidualZeroIdentity) {
    for (auto kind : {FfnKind::conventional, FfnKind::hourglass}) {
        const auto m = init_weights(small_config(kind, kind == FfnKind::conventional ? 1 : 3), 4);
        oracle::randomize(m, -0.5, 0.5, 4);
        for (const auto& l : m.layers) {
            zero(l.wo);
            for (const auto& b : l.ffn) zero(b.w_u);
        }
        const auto toks = tokens_for(6, 11, 6);
        const Tensor direct =
            ops::matmul(ops::rmsnorm(ops::embedding(m.embedding, toks), m.final_norm, kNormEps), m.lm_head);
        expect_bit_equal(lm_forward(toks, m), direct);
    }
}

TEST(LmForward, BatchedEqualsPerSequence) {
    const auto m = init_weights(small_config(), 6);
    oracle::randomize(m, -0.5, 0.5, 6);
    const auto toks = tokens_for(15, 11, 7);
    const Tensor packed = forward_batch(m, toks, 3);
    for (std::size_t b = 0; b < 3; ++b) {
        const std::span<const int> seq(toks.data() + b * 5, 5);
        const Tensor single = lm_forward(seq, m);
        for (std::size_t i = 0; i < 5 * 11; ++i) EXPECT_NEAR(packed.at(b * 55 + i), single.at(i), 1e-13);
    }
}

TEST(LmForward, Deterministic) {
    const auto m = init_weights(small_config(), 6);
    const auto toks = tokens_for(8, 11, 8);
    expect_bit_equal(lm_forward(toks, m), lm_forward(toks, m));
}

TEST(Model, CloneSharesNothing) {
    const auto m = init_weights(small_config(), 1);
    const auto c = m.clone();
    zero(c.layers[0].wq);
    EXPECT_NE(m.layers[0].wq.at(0), 0.0);
}

TEST(ModelGradient, EndToEndMatchesFiniteDifferences) {
    for (auto placement : {NormPlacement::pre_norm, NormPlacement::post_sublayer_pre_residual}) {
        ModelConfig c = small_config(FfnKind::hourglass, 2);
        c.norm_placement = placement;
        const auto m = init_weights(c, 21);
        oracle::randomize(m, -0.5, 0.5, 21);
        const std::vector<int> toks = {3, 7, 1, 10, 0, 5};
        const std::vector<int> inputs(toks.begin(), toks.end() - 1);
        const std::vector<int> targets(toks.begin() + 1, toks.end());
        const auto r = oracle::check_gradients(
            m.parameters(), [&] { return training_loss(lm_forward(inputs, m), targets, 1e-4); });
        EXPECT_LT(r.max_rel_error, 1e-4) << to_string(placement) << " worst " << r.worst;
    }
}

// Fourth-order stencil at a larger step: truncation error O(h^4), roundoff
// far below the 1e-5 central difference, so tiny gradients are resolved too.
TEST(ModelGradient, EndToEndMatchesFourthOrderStencil) {
    for (auto placement : {NormPlacement::pre_norm, NormPlacement::post_sublayer_pre_residual}) {
        ModelConfig c = small_config(FfnKind::hourglass, 2);
        c.norm_placement = placement;
        const auto m = init_weights(c, 21);
        oracle::randomize(m, -0.5, 0.5, 21);
        const std::vector<int> inputs = {3, 7, 1, 10, 0}, targets = {7, 1, 10, 0, 5};
        m.zero_grad();
        training_loss(lm_forward(inputs, m), targets, 1e-4).backward();
        auto loss = [&] {
            NoGradGuard guard;
            return training_loss(lm_forward(inputs, m), targets, 1e-4).item();
        };
        double worst = 0.0;
        for (const auto& p : m.parameters()) {
            Tensor t = p.tensor;
            auto d = t.mutable_data();
            for (std::size_t i = 0; i < d.size(); ++i) {
                const double x0 = d[i], h = 1e-3;
                auto f = [&](double dx) {
                    d[i] = x0 + dx;
                    const double v = loss();
                    d[i] = x0;
                    return v;
                };
                const double fd = (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h);
                worst = std::max(worst, oracle::relative_error(t.grad()[i], fd));
            }
        }
        EXPECT_LT(worst, 1e-5) << to_string(placement);
    }
}

TEST(ModelGradient, KEqualsOneGradientsMatchConventional) {
    ModelConfig conv = small_config(FfnKind::conventional, 1);
    conv.d_h = 24;
    ModelConfig hg = conv;
    hg.ffn_kind = FfnKind::hourglass;
    const auto a = init_weights(conv, 5);
    oracle::randomize(a, -0.5, 0.5, 5);
    auto b = a.clone();
    b.config = hg;
    const std::vector<int> inputs = {1, 4, 9, 2}, targets = {4, 9, 2, 0};
    training_loss(lm_forward(inputs, a), targets, 1e-4).backward();
    training_loss(lm_forward(inputs, b), targets, 1e-4).backward();
    const auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        ASSERT_EQ(pa[i].tensor.grad().size(), pb[i].tensor.grad().size());
        for (std::size_t j = 0; j < pa[i].tensor.numel(); ++j) {
            ASSERT_EQ(pa[i].tensor.grad()[j], pb[i].tensor.grad()[j]) << pa[i].name;
        }
    }
}

TEST(Model, FormulaMatchesInstantiation) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        ModelConfig c;
        c.n_heads = 1 + static_cast<std::int64_t>(rng() % 4);
        c.d_model = c.n_heads * 2 * (1 + static_cast<std::int64_t>(rng() % 8));
        c.d_h = 1 + static_cast<std::int64_t>(rng() % 48);
        c.L = 1 + static_cast<std::int64_t>(rng() % 4);
        c.ffn_kind = rng() % 2 ? FfnKind::hourglass : FfnKind::conventional;
        c.K = c.ffn_kind == FfnKind::conventional ? 1 : 1 + static_cast<std::int64_t>(rng() % 5);
        c.vocab_size = 3 + static_cast<std::int64_t>(rng() % 20);
        const auto m = init_weights(c, static_cast<std::uint64_t>(trial));
        const ParamBreakdown p = total_params(c);
        EXPECT_EQ(count_weight_matrix_elements(m), p.total_nonembedding) << to_config_text(c);
        std::int64_t gammas = 0;
        for (const auto& np : m.parameters()) {
            if (np.name.find("norm") != std::string::npos) gammas += static_cast<std::int64_t>(np.tensor.numel());
        }
        EXPECT_EQ(gammas, p.norm_params);
    }
}
