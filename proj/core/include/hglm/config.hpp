#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hglm {

enum class FfnKind { conventional, hourglass };
enum class NormPlacement { pre_norm, post_sublayer_pre_residual };

std::string_view to_string(FfnKind kind);
std::string_view to_string(NormPlacement placement);

// Full shape vector of a decoder-only model. Key names in config files match
// the field names exactly.
struct ModelConfig {
    std::int64_t d_model = 64;
    std::int64_t d_h = 256;
    std::int64_t L = 2;
    std::int64_t K = 1;
    std::int64_t n_heads = 4;
    FfnKind ffn_kind = FfnKind::conventional;
    NormPlacement norm_placement = NormPlacement::pre_norm;
    std::int64_t vocab_size = 256;
    std::int64_t max_seq = 256;
    double rope_theta = 10000.0;

    std::int64_t head_dim() const { return d_model / n_heads; }

    // Throws ValidationError describing the first violated constraint.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
    double peak_lr = 6e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double weight_decay = 0.1;
    std::int64_t warmup_tokens = 0;
    std::int64_t total_tokens = 0;
    std::int64_t batch_tokens = 512;
    std::int64_t seq_len = 64;
    std::int64_t seed = 6198;
    double zloss_coeff = 1e-4;
    double min_lr_fraction = 0.1;
    double grad_clip = 1.0;  // global L2 norm; 0 disables
    std::int64_t log_every = 10;
    std::int64_t eval_every = 0;  // 0: evaluate only after the last step
    bool shuffle = true;
    bool allow_wrap = false;

    void validate() const;

    bool operator==(const TrainConfig&) const = default;
};

struct Setting {
    std::string key;
    std::string value;
    int line = 0;
};

// Parses flat `key = value` text. Blank lines and `#` comments are skipped.
std::vector<Setting> parse_settings(std::string_view text, std::string_view source = "<text>");
std::vector<Setting> read_settings_file(const std::string& path);
// "key=value" as given on the command line.
Setting parse_override(std::string_view text);

// Each returns false when the key does not belong to the struct, and throws
// ValidationError when the value does not parse.
bool apply_setting(ModelConfig& cfg, const std::string& key, const std::string& value);
bool apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value);

const std::vector<std::string>& model_config_keys();
const std::vector<std::string>& train_config_keys();

std::string to_config_text(const ModelConfig& cfg);
std::string to_config_text(const TrainConfig& cfg);

// Model and train settings from one or more files; unknown keys are errors.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;

    void apply(const Setting& setting);
    void apply_all(const std::vector<Setting>& settings);
};

// Shortest round-trip decimal for doubles, used in all text outputs.
std::string format_double(double value);

}  // namespace hglm
