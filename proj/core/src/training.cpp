#include "hglm/training.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <thread>

#include "hglm/error.hpp"

namespace hglm {

double lr_at(std::int64_t tokens_seen, const TrainConfig& cfg) {
    const double t = static_cast<double>(tokens_seen);
    const double warmup = static_cast<double>(cfg.warmup_tokens);
    const double total = static_cast<double>(cfg.total_tokens);
    if (cfg.warmup_tokens > 0 && tokens_seen <= cfg.warmup_tokens) return cfg.peak_lr * t / warmup;
    const double min_lr = cfg.min_lr_fraction * cfg.peak_lr;
    double progress = 1.0;
    if (cfg.total_tokens > cfg.warmup_tokens) progress = std::clamp((t - warmup) / (total - warmup), 0.0, 1.0);
    return min_lr + (cfg.peak_lr - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Tensor training_loss(const Tensor& logits, std::span<const int> targets, double zloss_coeff, ops::LossParts* parts) {
    return ops::language_model_loss(logits, targets, zloss_coeff, parts);
}

OptimizerState OptimizerState::for_model(const LanguageModel& model) {
    OptimizerState s;
    for (const auto& p : model.parameters()) {
        s.m.emplace_back(p.tensor.numel(), 0.0);
        s.v.emplace_back(p.tensor.numel(), 0.0);
    }
    return s;
}

double global_grad_norm(std::span<const NamedParameter> params) {
    double ss = 0.0;
    for (const auto& p : params) {
        for (double g : p.tensor.grad()) ss += g * g;
    }
    return std::sqrt(ss);
}

void adamw_step(std::span<const NamedParameter> params, OptimizerState& state, double lr, const TrainConfig& cfg) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ValidationError("optimizer state holds " + std::to_string(state.m.size()) + " buffers for " +
                              std::to_string(params.size()) + " parameters");
    }
    double clip = 1.0;
    if (cfg.grad_clip > 0.0) {
        const double norm = global_grad_norm(params);
        if (norm > cfg.grad_clip) clip = cfg.grad_clip / norm;
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - lr * cfg.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor w = params[i].tensor;
        auto data = w.mutable_data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != data.size() || v.size() != data.size()) {
            throw ValidationError("optimizer state shape mismatch for " + params[i].name);
        }
        const auto grad = w.grad();
        const bool has_grad = !grad.empty();
        if (params[i].decay) {
            for (double& x : data) x *= decay;
        }
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = has_grad ? grad[j] * clip : 0.0;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            data[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
        }
    }
}

EvalResult evaluate(const LanguageModel& model, std::span<const int> tokens, std::size_t seq_len) {
    const std::size_t windows = window_count(tokens.size(), seq_len);
    if (windows == 0) {
        throw ValidationError("validation stream of " + std::to_string(tokens.size()) +
                              " tokens holds no window of length " + std::to_string(seq_len));
    }
    NoGradGuard no_grad;
    constexpr std::size_t kChunk = 16;
    double total = 0.0;
    for (std::size_t w0 = 0; w0 < windows; w0 += kChunk) {
        const std::size_t n = std::min(kChunk, windows - w0);
        std::vector<int> inputs, targets;
        inputs.reserve(n * seq_len);
        targets.reserve(n * seq_len);
        for (std::size_t w = w0; w < w0 + n; ++w) {
            const std::size_t start = w * seq_len;
            inputs.insert(inputs.end(), tokens.begin() + static_cast<std::ptrdiff_t>(start),
                          tokens.begin() + static_cast<std::ptrdiff_t>(start + seq_len));
            targets.insert(targets.end(), tokens.begin() + static_cast<std::ptrdiff_t>(start + 1),
                           tokens.begin() + static_cast<std::ptrdiff_t>(start + seq_len + 1));
        }
        ops::LossParts parts;
        ops::language_model_loss(forward_batch(model, inputs, n), targets, 0.0, &parts);
        total += parts.cross_entropy * static_cast<double>(n);
    }
    EvalResult r;
    r.loss = total / static_cast<double>(windows);
    r.ppl = std::exp(r.loss);
    return r;
}

EvalResult evaluate_sets(const LanguageModel& model, const std::vector<Corpus>& sets, std::size_t seq_len) {
    if (sets.empty()) throw ValidationError("no validation sets given");
    double sum = 0.0;
    for (const auto& s : sets) sum += evaluate(model, s.tokens, seq_len).loss;
    EvalResult r;
    r.loss = sum / static_cast<double>(sets.size());
    r.ppl = std::exp(r.loss);
    return r;
}

namespace {

BatchIterator make_iterator(const Corpus& corpus, const TrainConfig& cfg, std::int64_t total_steps) {
    BatchIterator it(corpus, static_cast<std::size_t>(cfg.seq_len), static_cast<std::size_t>(cfg.batch_tokens),
                     static_cast<std::uint64_t>(cfg.seed), cfg.shuffle, cfg.allow_wrap);
    if (!cfg.allow_wrap && static_cast<std::int64_t>(it.batches_per_pass()) < total_steps) {
        throw ValidationError("corpus supplies " + std::to_string(it.batches_per_pass() * it.batch_size() *
                                                                  static_cast<std::size_t>(cfg.seq_len)) +
                              " training tokens but total_tokens is " + std::to_string(cfg.total_tokens) +
                              " (set allow_wrap=true to reuse the corpus)");
    }
    return it;
}

}  // namespace

Trainer::Trainer(LanguageModel& model, const Corpus& corpus, const TrainConfig& cfg,
                 const std::vector<Corpus>* validation, std::optional<OptimizerState> state, std::int64_t tokens_seen)
    : model_(model), cfg_(cfg), validation_(validation), params_(model.parameters()), tokens_seen_(tokens_seen) {
    cfg_.validate();
    model_.config.validate();
    if (cfg_.seq_len > model_.config.max_seq) {
        throw ValidationError("seq_len " + std::to_string(cfg_.seq_len) + " exceeds max_seq " +
                              std::to_string(model_.config.max_seq));
    }
    total_steps_ = cfg_.total_tokens / cfg_.batch_tokens;
    state_ = state ? std::move(*state) : OptimizerState::for_model(model_);
    if (state_.m.size() != params_.size()) throw ValidationError("optimizer state does not match the model");
    if (total_steps_ > 0) {
        corpus.check_vocab(model_.config.vocab_size);
        batches_.emplace(make_iterator(corpus, cfg_, total_steps_));
        batches_->seek(static_cast<std::size_t>(state_.step));
    }
    if (validation_) {
        for (const auto& v : *validation_) v.check_vocab(model_.config.vocab_size);
    }
}

std::optional<MetricsRecord> Trainer::step() {
    if (done()) return std::nullopt;
    const Batch batch = batches_->next();
    model_.zero_grad();
    ops::LossParts parts;
    const Tensor logits = forward_batch(model_, batch.inputs, batch.batch_size);
    const Tensor loss = training_loss(logits, batch.targets, cfg_.zloss_coeff, &parts);
    loss.backward();
    tokens_seen_ += cfg_.batch_tokens;
    const double lr = lr_at(tokens_seen_, cfg_);
    adamw_step(params_, state_, lr, cfg_);

    const std::int64_t step = state_.step;
    const bool last = step == total_steps_;
    const bool eval_now = validation_ && !validation_->empty() &&
                          (last || (cfg_.eval_every > 0 && step % cfg_.eval_every == 0));
    if (!(last || eval_now || step % cfg_.log_every == 0)) return std::nullopt;
    MetricsRecord rec;
    rec.step = step;
    rec.tokens_seen = tokens_seen_;
    rec.lr = lr;
    rec.train_loss = parts.cross_entropy;
    if (eval_now) {
        const EvalResult ev = evaluate_sets(model_, *validation_, static_cast<std::size_t>(cfg_.seq_len));
        rec.val_loss = ev.loss;
        rec.val_ppl = ev.ppl;
    }
    return rec;
}

std::vector<MetricsRecord> Trainer::run() {
    std::vector<MetricsRecord> out;
    while (!done()) {
        if (auto rec = step()) out.push_back(*rec);
    }
    return out;
}

TrainResult train(LanguageModel& model, const Corpus& corpus, const TrainConfig& cfg,
                  const std::vector<Corpus>* validation) {
    Trainer trainer(model, corpus, cfg, validation);
    TrainResult r;
    r.metrics = trainer.run();
    r.state = trainer.optimizer_state();
    r.tokens_seen = trainer.tokens_seen();
    return r;
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& records) {
    os << "step,tokens_seen,lr,train_loss,val_loss,val_ppl\n";
    for (const auto& r : records) {
        os << r.step << ',' << r.tokens_seen << ',' << format_double(r.lr) << ',' << format_double(r.train_loss) << ',';
        if (r.val_loss) os << format_double(*r.val_loss);
        os << ',';
        if (r.val_ppl) os << format_double(*r.val_ppl);
        os << '\n';
    }
}

ComparisonResult train_pair(LanguageModel& first, LanguageModel& second, const Corpus& corpus, const TrainConfig& cfg,
                            const std::vector<Corpus>* validation, bool concurrent) {
    ComparisonResult result;
    if (!concurrent) {
        result.first = train(first, corpus, cfg, validation).metrics;
        result.second = train(second, corpus, cfg, validation).metrics;
        return result;
    }
    Eigen::initParallel();
    std::exception_ptr error;
    std::thread worker([&] {
        try {
            result.second = train(second, corpus, cfg, validation).metrics;
        } catch (...) {
            error = std::current_exception();
        }
    });
    try {
        result.first = train(first, corpus, cfg, validation).metrics;
    } catch (...) {
        worker.join();
        throw;
    }
    worker.join();
    if (error) std::rethrow_exception(error);
    return result;
}

void write_paired_csv(std::ostream& os, const ComparisonResult& result) {
    if (result.first.size() != result.second.size()) {
        throw ValidationError("paired runs logged a different number of records");
    }
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    os << "step,tokens_seen,lr,a_train_loss,a_val_loss,a_val_ppl,b_train_loss,b_val_loss,b_val_ppl\n";
    for (std::size_t i = 0; i < result.first.size(); ++i) {
        const auto& a = result.first[i];
        const auto& b = result.second[i];
        if (a.step != b.step || a.tokens_seen != b.tokens_seen) {
            throw ValidationError("paired runs are misaligned at record " + std::to_string(i));
        }
        os << a.step << ',' << a.tokens_seen << ',' << format_double(a.lr) << ',' << format_double(a.train_loss) << ','
           << opt(a.val_loss) << ',' << opt(a.val_ppl) << ',' << format_double(b.train_loss) << ',' << opt(b.val_loss)
           << ',' << opt(b.val_ppl) << '\n';
    }
}

}  // namespace hglm
