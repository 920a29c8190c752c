#include "hglm/budget.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>

#include "hglm/error.hpp"

namespace hglm {

std::int64_t attention_params_per_layer(std::int64_t d_model) { return 4 * d_model * d_model; }

ParamBreakdown total_params(const ModelConfig& cfg) {
    ParamBreakdown p;
    p.attention_params = cfg.L * attention_params_per_layer(cfg.d_model);
    p.ffn_params = cfg.L * cfg.K * 3 * cfg.d_h * cfg.d_model;
    p.norm_params = cfg.L * (1 + cfg.K) * cfg.d_model + cfg.d_model;
    p.total_nonembedding = p.attention_params + p.ffn_params;
    return p;
}

std::int64_t solve_dh(std::int64_t budget, std::int64_t d_model, std::int64_t L, std::int64_t K) {
    if (d_model <= 0 || L <= 0 || K <= 0) throw ValidationError("solve_dh: d_model, L and K must be positive");
    const std::int64_t attention = L * attention_params_per_layer(d_model);
    if (budget <= attention) {
        throw InfeasibleError("budget " + std::to_string(budget) + " does not exceed the attention cost " +
                              std::to_string(attention) + " of d_model=" + std::to_string(d_model) +
                              ", L=" + std::to_string(L));
    }
    // floor((budget/L - 4d^2) / (3Kd)) == floor((budget - L*4d^2) / (3KdL)) for positive operands
    const std::int64_t dh = (budget - attention) / (3 * K * d_model * L);
    if (dh <= 0) {
        throw InfeasibleError("budget " + std::to_string(budget) + " leaves no room for a positive d_h at d_model=" +
                              std::to_string(d_model) + ", L=" + std::to_string(L) + ", K=" + std::to_string(K));
    }
    return dh;
}

double flops_per_token(const ParamBreakdown& params, FlopMode mode) {
    const double n = static_cast<double>(params.total_nonembedding);
    return mode == FlopMode::forward ? 2.0 * n : 6.0 * n;
}

double flops_per_token(const ModelConfig& cfg, FlopMode mode) { return flops_per_token(total_params(cfg), mode); }

double relative_budget_gap(std::int64_t total, std::int64_t budget) {
    return std::fabs(static_cast<double>(total - budget)) / static_cast<double>(budget);
}

bool within_budget(std::int64_t total, std::int64_t budget, double tolerance) {
    if (budget <= 0) return false;
    return relative_budget_gap(total, budget) <= tolerance;
}

std::int64_t round_to_millions(std::int64_t count) { return (count + 500'000) / 1'000'000; }

SweepRow make_sweep_row(const ModelConfig& cfg, double axis_value, std::optional<std::int64_t> budget) {
    SweepRow row;
    row.config = cfg;
    row.axis_value = axis_value;
    row.params = total_params(cfg);
    if (budget) row.within_tolerance = within_budget(row.params.total_nonembedding, *budget);
    return row;
}

namespace {

ModelConfig shaped(const SweepSpec& spec, std::int64_t d_model, std::int64_t d_h, std::int64_t L, std::int64_t K) {
    ModelConfig c = spec.base;
    c.d_model = d_model;
    c.d_h = d_h;
    c.L = L;
    c.K = K;
    c.ffn_kind = (K == 1 && spec.base.ffn_kind == FfnKind::conventional) ? FfnKind::conventional : FfnKind::hourglass;
    return c;
}

std::vector<SweepRow> dh_ratio_rows(const SweepSpec& spec) {
    if (spec.d_model <= 0 || spec.L <= 0) throw ValidationError("dh_ratio sweep needs positive d_model and L");
    std::vector<std::int64_t> dhs;
    if (!spec.dh_values.empty()) {
        dhs = spec.dh_values;
    } else {
        for (double r : spec.dh_ratios) {
            if (!(r > 0.0)) throw ValidationError("d_h/d_model ratios must be positive");
            dhs.push_back(static_cast<std::int64_t>(std::floor(r * static_cast<double>(spec.d_model))));
        }
    }
    std::vector<SweepRow> rows;
    for (std::int64_t K : spec.K_values) {
        for (std::int64_t dh : dhs) {
            if (dh <= 0) throw ValidationError("d_h must be positive, got " + std::to_string(dh));
            const double ratio = static_cast<double>(dh) / static_cast<double>(spec.d_model);
            rows.push_back(make_sweep_row(shaped(spec, spec.d_model, dh, spec.L, K), ratio, spec.budget));
        }
    }
    return rows;
}

std::vector<SweepRow> width_depth_rows(const SweepSpec& spec) {
    if (!spec.budget || *spec.budget <= 0) throw ValidationError("width_depth sweep needs a positive budget");
    if (spec.dh_ratios.size() != 1 || !(spec.dh_ratios[0] > 0.0)) {
        throw ValidationError("width_depth sweep needs exactly one positive d_h/d_model ratio");
    }
    const double r = spec.dh_ratios[0];
    const std::int64_t step = 2 * spec.base.n_heads;
    if (step <= 0) throw ValidationError("n_heads must be positive");
    const double budget = static_cast<double>(*spec.budget);
    std::vector<SweepRow> rows;
    for (std::int64_t K : spec.K_values) {
        for (double rho : spec.width_depth_ratios) {
            if (!(rho > 0.0)) throw ValidationError("d_model/L ratios must be positive");
            // L (4 d^2 + 3 K r d^2) = B with L = d / rho
            const double d_real = std::cbrt(budget * rho / (4.0 + 3.0 * static_cast<double>(K) * r));
            const std::int64_t d_model = std::max<std::int64_t>(step, std::llround(d_real / static_cast<double>(step)) * step);
            const std::int64_t L = std::max<std::int64_t>(1, std::llround(static_cast<double>(d_model) / rho));
            SweepRow row;
            try {
                const std::int64_t dh = solve_dh(*spec.budget, d_model, L, K);
                row = make_sweep_row(shaped(spec, d_model, dh, L, K), rho, spec.budget);
            } catch (const InfeasibleError&) {
                row = make_sweep_row(shaped(spec, d_model, 0, L, K), rho, spec.budget);
                row.feasible = false;
                row.within_tolerance = false;
            }
            rows.push_back(row);
        }
    }
    return rows;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
    std::vector<T> out;
    std::size_t pos = 0;
    while (pos < value.size()) {
        auto comma = value.find(',', pos);
        if (comma == std::string::npos) comma = value.size();
        std::string item = value.substr(pos, comma - pos);
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        pos = comma + 1;
        if (item.empty()) continue;
        T v{};
        auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc() || ptr != item.data() + item.size()) {
            throw ValidationError("invalid list entry for " + key + ": '" + item + "'");
        }
        out.push_back(v);
    }
    return out;
}

std::int64_t parse_single_int(const std::string& key, const std::string& value) {
    auto v = parse_list<std::int64_t>(key, value);
    if (v.size() != 1) throw ValidationError(key + " needs a single integer");
    return v[0];
}

}  // namespace

std::vector<SweepRow> enumerate_sweep(const SweepSpec& spec) {
    const bool empty = spec.K_values.empty() ||
                       (spec.axis == SweepAxis::dh_ratio ? (spec.dh_ratios.empty() && spec.dh_values.empty())
                                                         : spec.width_depth_ratios.empty());
    if (empty) return {};
    for (std::int64_t K : spec.K_values) {
        if (K <= 0) throw ValidationError("K values must be positive");
    }
    std::vector<SweepRow> rows = spec.axis == SweepAxis::dh_ratio ? dh_ratio_rows(spec) : width_depth_rows(spec);
    std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        if (a.axis_value != b.axis_value) return a.axis_value < b.axis_value;
        return a.config.K < b.config.K;
    });
    return rows;
}

const std::vector<std::string>& sweep_spec_keys() {
    static const std::vector<std::string> keys = {"axis",      "budget",    "K_values", "d_model",
                                                  "L",         "dh_ratios", "dh_values", "width_depth_ratios"};
    return keys;
}

bool apply_sweep_setting(SweepSpec& spec, const std::string& key, const std::string& value) {
    if (key == "axis") {
        if (value == "dh_ratio") spec.axis = SweepAxis::dh_ratio;
        else if (value == "width_depth") spec.axis = SweepAxis::width_depth;
        else throw ValidationError("axis must be dh_ratio or width_depth, got '" + value + "'");
    } else if (key == "budget") {
        spec.budget = parse_single_int(key, value);
    } else if (key == "K_values") {
        spec.K_values = parse_list<std::int64_t>(key, value);
    } else if (key == "d_model") {
        spec.d_model = parse_single_int(key, value);
    } else if (key == "L") {
        spec.L = parse_single_int(key, value);
    } else if (key == "dh_ratios") {
        spec.dh_ratios = parse_list<double>(key, value);
    } else if (key == "dh_values") {
        spec.dh_values = parse_list<std::int64_t>(key, value);
    } else if (key == "width_depth_ratios") {
        spec.width_depth_ratios = parse_list<double>(key, value);
    } else {
        return false;
    }
    return true;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
    os << "d_model,d_h,L,K,attention_params,ffn_params,total,flops_per_token_train,within_tolerance\n";
    for (const auto& r : rows) {
        os << r.config.d_model << ',' << r.config.d_h << ',' << r.config.L << ',' << r.config.K << ','
           << r.params.attention_params << ',' << r.params.ffn_params << ',' << r.params.total_nonembedding << ','
           << format_double(flops_per_token(r.params, FlopMode::train)) << ',';
        if (r.within_tolerance) os << (*r.within_tolerance ? 1 : 0);
        os << '\n';
    }
}

}  // namespace hglm
