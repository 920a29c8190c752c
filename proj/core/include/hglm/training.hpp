#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "hglm/config.hpp"
#include "hglm/data.hpp"
#include "hglm/model.hpp"
#include "hglm/ops.hpp"

namespace hglm {

// Linear warmup from 0 to peak_lr over warmup_tokens, then cosine decay to
// min_lr_fraction * peak_lr at total_tokens.
double lr_at(std::int64_t tokens_seen, const TrainConfig& cfg);

// Cross-entropy plus zloss_coeff * mean (log Z)^2.
Tensor training_loss(const Tensor& logits, std::span<const int> targets, double zloss_coeff,
                     ops::LossParts* parts = nullptr);

struct OptimizerState {
    std::int64_t step = 0;
    std::vector<std::vector<double>> m;  // one buffer per parameter, parameters() order
    std::vector<std::vector<double>> v;

    static OptimizerState for_model(const LanguageModel& model);
    bool operator==(const OptimizerState&) const = default;
};

// Global L2 norm of all parameter gradients (missing grads count as zero).
double global_grad_norm(std::span<const NamedParameter> params);

// One AdamW step over `params` using their current grads. Decoupled decay
// w <- w * (1 - lr * weight_decay) runs before the bias-corrected Adam delta and
// skips parameters with decay=false. Grads are clipped to cfg.grad_clip first.
void adamw_step(std::span<const NamedParameter> params, OptimizerState& state, double lr, const TrainConfig& cfg);

struct MetricsRecord {
    std::int64_t step = 0;
    std::int64_t tokens_seen = 0;
    double lr = 0.0;
    double train_loss = 0.0;  // mean token cross-entropy of the step's batch
    std::optional<double> val_loss;
    std::optional<double> val_ppl;

    bool operator==(const MetricsRecord&) const = default;
};

struct EvalResult {
    double loss = 0.0;
    double ppl = 0.0;
};

// Mean token cross-entropy over non-overlapping seq_len windows.
EvalResult evaluate(const LanguageModel& model, std::span<const int> tokens, std::size_t seq_len);
// Macro average: per-set losses averaged with equal weight, ppl = exp(mean loss).
EvalResult evaluate_sets(const LanguageModel& model, const std::vector<Corpus>& sets, std::size_t seq_len);

// Step-at-a-time training loop. All state needed to resume (model, optimizer
// state, tokens_seen) is observable, so a run can be checkpointed between steps.
class Trainer {
public:
    Trainer(LanguageModel& model, const Corpus& corpus, const TrainConfig& cfg,
            const std::vector<Corpus>* validation = nullptr, std::optional<OptimizerState> state = std::nullopt,
            std::int64_t tokens_seen = 0);

    std::int64_t total_steps() const { return total_steps_; }
    std::int64_t steps_done() const { return state_.step; }
    std::int64_t tokens_seen() const { return tokens_seen_; }
    bool done() const { return state_.step >= total_steps_; }
    const OptimizerState& optimizer_state() const { return state_; }

    // Runs one step; returns the record when the step falls on the log cadence.
    std::optional<MetricsRecord> step();
    std::vector<MetricsRecord> run();

private:
    LanguageModel& model_;
    TrainConfig cfg_;
    const std::vector<Corpus>* validation_;
    std::vector<NamedParameter> params_;
    std::optional<BatchIterator> batches_;
    OptimizerState state_;
    std::int64_t tokens_seen_;
    std::int64_t total_steps_ = 0;
};

struct TrainResult {
    std::vector<MetricsRecord> metrics;
    OptimizerState state;
    std::int64_t tokens_seen = 0;
};

// Runs total_tokens / batch_tokens steps on `model` in place. Throws
// ValidationError when the corpus cannot supply total_tokens and allow_wrap is off.
TrainResult train(LanguageModel& model, const Corpus& corpus, const TrainConfig& cfg,
                  const std::vector<Corpus>* validation = nullptr);

// step,tokens_seen,lr,train_loss,val_loss,val_ppl
void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& records);

struct ComparisonResult {
    std::vector<MetricsRecord> first;
    std::vector<MetricsRecord> second;
};

// Trains both models on the identical token stream with identical TrainConfig.
// With `concurrent`, the two trajectories run on separate threads.
ComparisonResult train_pair(LanguageModel& first, LanguageModel& second, const Corpus& corpus, const TrainConfig& cfg,
                            const std::vector<Corpus>* validation, bool concurrent);

// step,tokens_seen,lr,a_train_loss,a_val_loss,a_val_ppl,b_train_loss,b_val_loss,b_val_ppl
void write_paired_csv(std::ostream& os, const ComparisonResult& result);

}  // namespace hglm
