#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hglm/config.hpp"

namespace hglm {

// Relative tolerance for budget-matched comparisons (0.001%).
inline constexpr double kBudgetTolerance = 1e-5;

struct ParamBreakdown {
    std::int64_t attention_params = 0;    // L * 4 * d_model^2
    std::int64_t ffn_params = 0;          // L * K * 3 * d_h * d_model
    std::int64_t norm_params = 0;         // L * (1 + K) * d_model + d_model, reported separately
    std::int64_t total_nonembedding = 0;  // attention + ffn

    bool operator==(const ParamBreakdown&) const = default;
};

// Attention size of one no-bias multi-head attention module.
std::int64_t attention_params_per_layer(std::int64_t d_model);

ParamBreakdown total_params(const ModelConfig& cfg);

// Largest d_h whose total stays at or under `budget`:
// floor((budget/L - 4 d_model^2) / (3 K d_model)). Throws InfeasibleError when
// attention alone reaches the budget or no positive d_h fits.
std::int64_t solve_dh(std::int64_t budget, std::int64_t d_model, std::int64_t L, std::int64_t K);

enum class FlopMode { forward, train };

// 2N (forward) or 6N (train) per token over non-embedding parameters N.
double flops_per_token(const ModelConfig& cfg, FlopMode mode);
double flops_per_token(const ParamBreakdown& params, FlopMode mode);

// |total - budget| / budget <= tolerance
bool within_budget(std::int64_t total, std::int64_t budget, double tolerance = kBudgetTolerance);
double relative_budget_gap(std::int64_t total, std::int64_t budget);

// Rounds to the nearest million, the precision the reported tables use.
std::int64_t round_to_millions(std::int64_t count);

enum class SweepAxis { dh_ratio, width_depth };

struct SweepSpec {
    SweepAxis axis = SweepAxis::dh_ratio;
    std::optional<std::int64_t> budget;  // rows are flagged against it when set
    std::vector<std::int64_t> K_values;

    // dh_ratio: d_model and L fixed; one row per (K, d_h) with d_h = floor(ratio*d_model),
    // or taken verbatim from dh_values when that grid is non-empty.
    std::int64_t d_model = 0;
    std::int64_t L = 0;
    std::vector<double> dh_ratios;
    std::vector<std::int64_t> dh_values;

    // width_depth: K and d_h/d_model (first dh_ratios entry) fixed; one row per
    // d_model/L target. d_model is rounded to a multiple of 2*n_heads, L to the
    // nearest positive integer, then d_h is solved against the budget.
    std::vector<double> width_depth_ratios;

    ModelConfig base;  // supplies n_heads, vocab_size, norm placement and friends
};

struct SweepRow {
    ModelConfig config;
    ParamBreakdown params;
    double axis_value = 0.0;          // d_h/d_model or d_model/L
    bool feasible = true;             // false when no positive d_h fits the budget
    std::optional<bool> within_tolerance;  // empty when the spec has no budget
};

// Deterministic; sorted ascending by axis value, then K.
std::vector<SweepRow> enumerate_sweep(const SweepSpec& spec);

const std::vector<std::string>& sweep_spec_keys();
// Applies one sweep spec key; returns false for keys it does not know.
bool apply_sweep_setting(SweepSpec& spec, const std::string& key, const std::string& value);

// Header: d_model,d_h,L,K,attention_params,ffn_params,total,flops_per_token_train,within_tolerance
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);
SweepRow make_sweep_row(const ModelConfig& cfg, double axis_value, std::optional<std::int64_t> budget);

}  // namespace hglm
