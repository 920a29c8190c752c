#include <gtest/gtest.h>

#include <sstream>

#include "hglm/budget.hpp"
#include "hglm/error.hpp"

using namespace hglm;

namespace {

ModelConfig shape(std::int64_t d_model, std::int64_t d_h, std::int64_t L, std::int64_t K) {
    ModelConfig c;
    c.d_model = d_model;
    c.d_h = d_h;
    c.L = L;
    c.K = K;
    c.n_heads = 4;
    c.ffn_kind = K == 1 && d_h > d_model ? FfnKind::conventional : FfnKind::hourglass;
    return c;
}

std::int64_t M(std::int64_t n) { return round_to_millions(n); }

}  // namespace

TEST(TotalParams, ConventionalBaselineExact) {
    const ParamBreakdown p = total_params(shape(768, 3072, 12, 1));
    EXPECT_EQ(p.attention_params, 28'311'552);
    EXPECT_EQ(p.ffn_params, 84'934'656);
    EXPECT_EQ(p.total_nonembedding, 113'246'208);
    EXPECT_EQ(p.norm_params, 12 * 2 * 768 + 768);
}

TEST(TotalParams, PrintedRoundedSizes) {
    struct Row {
        std::int64_t d, dh, L, K, attn, ffn;
    };
    // Fixed-attention rows, joint (K, L) rows and the matched-budget rows that reproduce.
    const Row rows[] = {
        {768, 3072, 12, 1, 28, 85},  {768, 614, 12, 5, 28, 85},   {768, 512, 12, 6, 28, 85},
        {768, 384, 12, 8, 28, 85},   {768, 307, 12, 10, 28, 85},  {1176, 553, 12, 2, 66, 47},
        {1488, 1122, 6, 2, 53, 60},  {1032, 418, 12, 4, 51, 62},  {1368, 694, 6, 4, 45, 68},
        {1024, 4096, 24, 1, 101, 302}, {2080, 819, 24, 4, 415, 491}, {2848, 2486, 20, 1, 649, 425},
        {1536, 6144, 24, 1, 226, 679}, {2048, 8192, 16, 1, 268, 805},
    };
    for (const auto& r : rows) {
        const ParamBreakdown p = total_params(shape(r.d, r.dh, r.L, r.K));
        EXPECT_EQ(M(p.attention_params), r.attn) << r.d << "/" << r.dh;
        EXPECT_EQ(M(p.ffn_params), r.ffn) << r.d << "/" << r.dh;
    }
}

TEST(TotalParams, DepthAblationTotals) {
    const std::int64_t totals[] = {67, 82, 113, 144, 175};
    const std::int64_t ffn[] = {16, 31, 62, 93, 124};
    const std::int64_t Ks[] = {1, 2, 4, 6, 8};
    for (int i = 0; i < 5; ++i) {
        const ParamBreakdown p = total_params(shape(1032, 418, 12, Ks[i]));
        EXPECT_EQ(M(p.total_nonembedding), totals[i]) << "K=" << Ks[i];
        EXPECT_EQ(M(p.ffn_params), ffn[i]) << "K=" << Ks[i];
        EXPECT_EQ(M(p.attention_params), 51);
    }
}

TEST(TotalParams, InvariantsHoldForRandomShapes) {
    for (std::int64_t d = 2; d <= 40; d += 6) {
        for (std::int64_t K = 1; K <= 4; ++K) {
            const ModelConfig c = shape(d * 4, 3 + d, 1 + K, K);
            const ParamBreakdown p = total_params(c);
            EXPECT_EQ(p.attention_params, c.L * 4 * c.d_model * c.d_model);
            EXPECT_EQ(p.ffn_params, c.L * c.K * 3 * c.d_h * c.d_model);
            EXPECT_EQ(p.total_nonembedding, p.attention_params + p.ffn_params);
            EXPECT_EQ(p.norm_params, c.L * (1 + c.K) * c.d_model + c.d_model);
        }
    }
}

TEST(SolveDh, MatchedShapes) {
    EXPECT_EQ(solve_dh(113'246'208, 1032, 12, 4), 418);
    EXPECT_EQ(solve_dh(402'653'184, 1376, 24, 4), 557);
    EXPECT_EQ(solve_dh(total_params(shape(1536, 6144, 24, 1)).total_nonembedding, 2080, 24, 4), 819);
    EXPECT_EQ(solve_dh(total_params(shape(2048, 8192, 16, 1)).total_nonembedding, 2848, 20, 1), 2486);
}

TEST(SolveDh, NeverExceedsBudgetAndIsMaximal) {
    for (std::int64_t budget : {1'000'000LL, 113'246'208LL, 402'653'184LL, 987'654'321LL}) {
        for (std::int64_t d : {256, 512, 1032}) {
            for (std::int64_t K : {1, 2, 4}) {
                const std::int64_t L = 4;
                if (L * 4 * d * d >= budget) continue;
                std::int64_t dh = 0;
                try {
                    dh = solve_dh(budget, d, L, K);
                } catch (const InfeasibleError&) {
                    continue;
                }
                EXPECT_LE(total_params(shape(d, dh, L, K)).total_nonembedding, budget);
                EXPECT_GT(total_params(shape(d, dh + 1, L, K)).total_nonembedding, budget);
            }
        }
    }
}

TEST(SolveDh, InfeasibleBudgets) {
    const std::int64_t attention = 12 * 4 * 1032LL * 1032LL;
    EXPECT_THROW(solve_dh(attention, 1032, 12, 4), InfeasibleError);
    EXPECT_THROW(solve_dh(attention - 1, 1032, 12, 4), InfeasibleError);
    EXPECT_THROW(solve_dh(attention + 5, 1032, 12, 4), InfeasibleError);  // no room for d_h = 1
}

TEST(Flops, Conventions) {
    const ModelConfig c = shape(768, 3072, 12, 1);
    EXPECT_EQ(flops_per_token(c, FlopMode::train), 6.79477248e8);
    EXPECT_EQ(flops_per_token(c, FlopMode::forward) * 3, flops_per_token(c, FlopMode::train));
    EXPECT_EQ(flops_per_token(ParamBreakdown{}, FlopMode::train), 0.0);
}

TEST(Budget, ToleranceHelpers) {
    EXPECT_TRUE(within_budget(100'000'000, 100'000'000));
    EXPECT_TRUE(within_budget(100'000'999, 100'000'000));
    EXPECT_FALSE(within_budget(100'001'001, 100'000'000));
    EXPECT_EQ(round_to_millions(28'311'552), 28);
    EXPECT_EQ(round_to_millions(84'500'000), 85);
    EXPECT_EQ(round_to_millions(499'999), 0);
}

TEST(Sweep, DhGridFromExplicitValues) {
    SweepSpec s;
    s.d_model = 1032;
    s.L = 12;
    s.K_values = {4};
    s.dh_values = {836, 627, 418, 209, 103};
    s.base.n_heads = 12;
    const auto rows = enumerate_sweep(s);
    ASSERT_EQ(rows.size(), 5u);
    const std::int64_t ffn[] = {15, 31, 62, 93, 124};
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(round_to_millions(rows[i].params.ffn_params), ffn[i]);
        EXPECT_EQ(rows[i].config.ffn_kind, FfnKind::hourglass);
        if (i) {
            EXPECT_LT(rows[i - 1].axis_value, rows[i].axis_value);
        }
    }
}

TEST(Sweep, DhGridFromRatiosFloors) {
    SweepSpec s;
    s.d_model = 1032;
    s.L = 12;
    s.K_values = {4, 2};
    s.dh_ratios = {0.4, 0.1};
    s.base.n_heads = 12;
    const auto rows = enumerate_sweep(s);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0].config.d_h, 103);
    EXPECT_EQ(rows[0].config.K, 2);
    EXPECT_EQ(rows[1].config.K, 4);
    EXPECT_EQ(rows[3].config.d_h, 412);
}

TEST(Sweep, EmptyGridGivesHeaderOnly) {
    SweepSpec s;
    s.d_model = 64;
    s.L = 2;
    const auto rows = enumerate_sweep(s);
    EXPECT_TRUE(rows.empty());
    std::ostringstream os;
    write_sweep_csv(os, rows);
    EXPECT_EQ(os.str(), "d_model,d_h,L,K,attention_params,ffn_params,total,flops_per_token_train,within_tolerance\n");
}

TEST(Sweep, WidthDepthRowsAreFlaggedAgainstBudget) {
    SweepSpec s;
    s.axis = SweepAxis::width_depth;
    s.budget = 113'246'208;
    s.K_values = {4};
    s.dh_ratios = {0.4};
    s.width_depth_ratios = {200, 86, 40, 10};
    s.base.n_heads = 12;
    const auto rows = enumerate_sweep(s);
    ASSERT_EQ(rows.size(), 4u);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ASSERT_TRUE(rows[i].within_tolerance.has_value());
        if (i) {
            EXPECT_LE(rows[i - 1].axis_value, rows[i].axis_value);
        }
        if (rows[i].feasible) {
            EXPECT_EQ(rows[i].config.d_model % 24, 0);
            EXPECT_LE(rows[i].params.total_nonembedding, *s.budget);
            EXPECT_EQ(*rows[i].within_tolerance, within_budget(rows[i].params.total_nonembedding, *s.budget));
        } else {
            EXPECT_FALSE(*rows[i].within_tolerance);
        }
    }
    EXPECT_EQ(enumerate_sweep(s).size(), rows.size());
}

TEST(Sweep, DeterministicCsv) {
    SweepSpec s;
    s.d_model = 1032;
    s.L = 12;
    s.K_values = {1, 2, 4, 6, 8};
    s.dh_values = {418};
    s.budget = 113'246'208;
    std::ostringstream a, b;
    write_sweep_csv(a, enumerate_sweep(s));
    write_sweep_csv(b, enumerate_sweep(s));
    EXPECT_EQ(a.str(), b.str());
    EXPECT_NE(a.str().find("1032,418,12,4,51121152,62118144,113239296,679435776,0"), std::string::npos) << a.str();
}

TEST(Sweep, SettingsParse) {
    SweepSpec s;
    EXPECT_TRUE(apply_sweep_setting(s, "K_values", "1, 2,4"));
    EXPECT_EQ(s.K_values, (std::vector<std::int64_t>{1, 2, 4}));
    EXPECT_TRUE(apply_sweep_setting(s, "axis", "width_depth"));
    EXPECT_EQ(s.axis, SweepAxis::width_depth);
    EXPECT_THROW(apply_sweep_setting(s, "axis", "diagonal"), ValidationError);
    EXPECT_THROW(apply_sweep_setting(s, "dh_ratios", "0.4,x"), ValidationError);
    EXPECT_FALSE(apply_sweep_setting(s, "n_heads", "4"));
}
