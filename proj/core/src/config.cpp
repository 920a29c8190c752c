#include "hglm/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hglm/error.hpp"

namespace hglm {

std::string_view to_string(FfnKind kind) { return kind == FfnKind::conventional ? "conventional" : "hourglass"; }

std::string_view to_string(NormPlacement placement) {
    return placement == NormPlacement::pre_norm ? "pre_norm" : "post_sublayer_pre_residual";
}

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw ValidationError(message);
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
    std::int64_t out = 0;
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec == std::errc() && ptr == end) return out;
    // Accept integral scientific notation such as 5e5.
    double d = 0.0;
    auto [p2, ec2] = std::from_chars(value.data(), end, d);
    if (ec2 == std::errc() && p2 == end && std::isfinite(d) && d == std::floor(d) && std::fabs(d) < 9.0e18) {
        return static_cast<std::int64_t>(d);
    }
    throw ValidationError("invalid integer for " + key + ": '" + value + "'");
}

double parse_float(const std::string& key, const std::string& value) {
    double out = 0.0;
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
        throw ValidationError("invalid number for " + key + ": '" + value + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ValidationError("invalid boolean for " + key + ": '" + value + "'");
}

}  // namespace

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

void ModelConfig::validate() const {
    require(d_model > 0, "d_model must be positive");
    require(d_h > 0, "d_h must be positive");
    require(L > 0, "L must be positive");
    require(K > 0, "K must be positive");
    require(n_heads > 0, "n_heads must be positive");
    require(vocab_size > 0, "vocab_size must be positive");
    require(max_seq > 0, "max_seq must be positive");
    require(rope_theta > 0.0, "rope_theta must be positive");
    require(d_model % n_heads == 0, "d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                                        std::to_string(n_heads) + ")");
    require(head_dim() % 2 == 0, "head dimension d_model/n_heads = " + std::to_string(head_dim()) +
                                     " must be even for rotary embeddings");
    require(ffn_kind == FfnKind::hourglass || K == 1, "conventional FFN requires K = 1, got K = " + std::to_string(K));
}

void TrainConfig::validate() const {
    require(peak_lr >= 0.0, "peak_lr must be non-negative");
    require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must be in [0, 1)");
    require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must be in [0, 1)");
    require(adam_eps > 0.0, "adam_eps must be positive");
    require(weight_decay >= 0.0, "weight_decay must be non-negative");
    require(seq_len > 0, "seq_len must be positive");
    require(batch_tokens > 0, "batch_tokens must be positive");
    require(batch_tokens % seq_len == 0, "batch_tokens (" + std::to_string(batch_tokens) +
                                             ") must be a multiple of seq_len (" + std::to_string(seq_len) + ")");
    require(total_tokens >= 0, "total_tokens must be non-negative");
    require(warmup_tokens >= 0 && warmup_tokens <= total_tokens, "warmup_tokens must lie in [0, total_tokens]");
    require(zloss_coeff >= 0.0, "zloss_coeff must be non-negative");
    require(min_lr_fraction >= 0.0 && min_lr_fraction <= 1.0, "min_lr_fraction must be in [0, 1]");
    require(grad_clip >= 0.0, "grad_clip must be non-negative");
    require(log_every > 0, "log_every must be positive");
    require(eval_every >= 0, "eval_every must be non-negative");
}

std::vector<Setting> parse_settings(std::string_view text, std::string_view source) {
    std::vector<Setting> out;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        ++line_no;
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        const std::string trimmed = trim(line);
        if (trimmed.empty()) continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(std::string(source) + ":" + std::to_string(line_no) + ": expected key=value");
        }
        Setting s{trim(std::string_view(trimmed).substr(0, eq)), trim(std::string_view(trimmed).substr(eq + 1)), line_no};
        if (s.key.empty()) throw ValidationError(std::string(source) + ":" + std::to_string(line_no) + ": empty key");
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Setting> read_settings_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_settings(ss.str(), path);
}

Setting parse_override(std::string_view text) {
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) throw ValidationError("override '" + std::string(text) + "' is not key=value");
    Setting s{trim(text.substr(0, eq)), trim(text.substr(eq + 1)), 0};
    if (s.key.empty()) throw ValidationError("override '" + std::string(text) + "' has an empty key");
    return s;
}

bool apply_setting(ModelConfig& c, const std::string& key, const std::string& v) {
    if (key == "d_model") c.d_model = parse_int(key, v);
    else if (key == "d_h") c.d_h = parse_int(key, v);
    else if (key == "L") c.L = parse_int(key, v);
    else if (key == "K") c.K = parse_int(key, v);
    else if (key == "n_heads") c.n_heads = parse_int(key, v);
    else if (key == "vocab_size") c.vocab_size = parse_int(key, v);
    else if (key == "max_seq") c.max_seq = parse_int(key, v);
    else if (key == "rope_theta") c.rope_theta = parse_float(key, v);
    else if (key == "ffn_kind") {
        if (v == "conventional") c.ffn_kind = FfnKind::conventional;
        else if (v == "hourglass") c.ffn_kind = FfnKind::hourglass;
        else throw ValidationError("ffn_kind must be conventional or hourglass, got '" + v + "'");
    } else if (key == "norm_placement") {
        if (v == "pre_norm") c.norm_placement = NormPlacement::pre_norm;
        else if (v == "post_sublayer_pre_residual") c.norm_placement = NormPlacement::post_sublayer_pre_residual;
        else throw ValidationError("norm_placement must be pre_norm or post_sublayer_pre_residual, got '" + v + "'");
    } else {
        return false;
    }
    return true;
}

bool apply_setting(TrainConfig& c, const std::string& key, const std::string& v) {
    if (key == "peak_lr") c.peak_lr = parse_float(key, v);
    else if (key == "beta1") c.beta1 = parse_float(key, v);
    else if (key == "beta2") c.beta2 = parse_float(key, v);
    else if (key == "adam_eps") c.adam_eps = parse_float(key, v);
    else if (key == "weight_decay") c.weight_decay = parse_float(key, v);
    else if (key == "warmup_tokens") c.warmup_tokens = parse_int(key, v);
    else if (key == "total_tokens") c.total_tokens = parse_int(key, v);
    else if (key == "batch_tokens") c.batch_tokens = parse_int(key, v);
    else if (key == "seq_len") c.seq_len = parse_int(key, v);
    else if (key == "seed") c.seed = parse_int(key, v);
    else if (key == "zloss_coeff") c.zloss_coeff = parse_float(key, v);
    else if (key == "min_lr_fraction") c.min_lr_fraction = parse_float(key, v);
    else if (key == "grad_clip") c.grad_clip = parse_float(key, v);
    else if (key == "log_every") c.log_every = parse_int(key, v);
    else if (key == "eval_every") c.eval_every = parse_int(key, v);
    else if (key == "shuffle") c.shuffle = parse_bool(key, v);
    else if (key == "allow_wrap") c.allow_wrap = parse_bool(key, v);
    else return false;
    return true;
}

const std::vector<std::string>& model_config_keys() {
    static const std::vector<std::string> keys = {"d_model", "d_h",            "L",          "K",
                                                  "n_heads", "ffn_kind",       "norm_placement",
                                                  "vocab_size", "max_seq",     "rope_theta"};
    return keys;
}

const std::vector<std::string>& train_config_keys() {
    static const std::vector<std::string> keys = {
        "peak_lr",   "beta1",       "beta2",      "adam_eps",        "weight_decay", "warmup_tokens",
        "total_tokens", "batch_tokens", "seq_len", "seed",           "zloss_coeff",  "min_lr_fraction",
        "grad_clip", "log_every",   "eval_every", "shuffle",         "allow_wrap"};
    return keys;
}

std::string to_config_text(const ModelConfig& c) {
    std::ostringstream os;
    os << "d_model=" << c.d_model << '\n'
       << "d_h=" << c.d_h << '\n'
       << "L=" << c.L << '\n'
       << "K=" << c.K << '\n'
       << "n_heads=" << c.n_heads << '\n'
       << "ffn_kind=" << to_string(c.ffn_kind) << '\n'
       << "norm_placement=" << to_string(c.norm_placement) << '\n'
       << "vocab_size=" << c.vocab_size << '\n'
       << "max_seq=" << c.max_seq << '\n'
       << "rope_theta=" << format_double(c.rope_theta) << '\n';
    return os.str();
}

std::string to_config_text(const TrainConfig& c) {
    std::ostringstream os;
    os << "peak_lr=" << format_double(c.peak_lr) << '\n'
       << "beta1=" << format_double(c.beta1) << '\n'
       << "beta2=" << format_double(c.beta2) << '\n'
       << "adam_eps=" << format_double(c.adam_eps) << '\n'
       << "weight_decay=" << format_double(c.weight_decay) << '\n'
       << "warmup_tokens=" << c.warmup_tokens << '\n'
       << "total_tokens=" << c.total_tokens << '\n'
       << "batch_tokens=" << c.batch_tokens << '\n'
       << "seq_len=" << c.seq_len << '\n'
       << "seed=" << c.seed << '\n'
       << "zloss_coeff=" << format_double(c.zloss_coeff) << '\n'
       << "min_lr_fraction=" << format_double(c.min_lr_fraction) << '\n'
       << "grad_clip=" << format_double(c.grad_clip) << '\n'
       << "log_every=" << c.log_every << '\n'
       << "eval_every=" << c.eval_every << '\n'
       << "shuffle=" << (c.shuffle ? "true" : "false") << '\n'
       << "allow_wrap=" << (c.allow_wrap ? "true" : "false") << '\n';
    return os.str();
}

void RunConfig::apply(const Setting& s) {
    if (apply_setting(model, s.key, s.value)) return;
    if (apply_setting(train, s.key, s.value)) return;
    std::string where = s.line > 0 ? " (line " + std::to_string(s.line) + ")" : "";
    throw ValidationError("unknown config key '" + s.key + "'" + where);
}

void RunConfig::apply_all(const std::vector<Setting>& settings) {
    for (const auto& s : settings) apply(s);
}

}  // namespace hglm
