#include "hglm_cli/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

#include "hglm/budget.hpp"
#include "hglm/checkpoint.hpp"
#include "hglm/config.hpp"
#include "hglm/data.hpp"
#include "hglm/error.hpp"
#include "hglm/model.hpp"
#include "hglm/training.hpp"

namespace hglm::cli {

namespace {

std::string join(const std::vector<std::string>& items, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

std::string keys_footer(const std::string& title, const std::vector<std::string>& keys) {
    return title + ":\n  " + join(keys, " ") + "\n";
}

std::string million_label(std::int64_t n) { return std::to_string(round_to_millions(n)) + "M"; }

std::vector<Setting> overrides_from(const std::vector<std::string>& sets) {
    std::vector<Setting> out;
    for (const auto& s : sets) out.push_back(parse_override(s));
    return out;
}

// Settings from files, then command-line overrides, each tagged with its source.
struct SourcedSetting {
    Setting setting;
    std::string source;
};

std::vector<SourcedSetting> gather(const std::vector<std::string>& files, const std::vector<std::string>& sets) {
    std::vector<SourcedSetting> out;
    for (const auto& f : files) {
        for (auto& s : read_settings_file(f)) out.push_back({std::move(s), f});
    }
    for (auto& s : overrides_from(sets)) out.push_back({std::move(s), "--set"});
    return out;
}

[[noreturn]] void unknown_key(const SourcedSetting& s) {
    std::string where = s.source;
    if (s.setting.line > 0) where += ":" + std::to_string(s.setting.line);
    throw ValidationError("unknown key '" + s.setting.key + "' in " + where);
}

ModelConfig model_from(const std::vector<SourcedSetting>& settings, bool allow_train_keys, TrainConfig* train) {
    ModelConfig cfg;
    for (const auto& s : settings) {
        if (apply_setting(cfg, s.setting.key, s.setting.value)) continue;
        if (allow_train_keys && train && apply_setting(*train, s.setting.key, s.setting.value)) continue;
        TrainConfig probe;
        if (!allow_train_keys && apply_setting(probe, s.setting.key, s.setting.value)) {
            throw ValidationError("training key '" + s.setting.key + "' in " + s.source +
                                  " is not accepted here; pass it via --train-config or --set");
        }
        unknown_key(s);
    }
    cfg.validate();
    return cfg;
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << text;
    if (!f) throw IoError("failed to write " + path);
}

Corpus load_corpus(const std::vector<std::string>& paths, bool ids) {
    if (paths.empty()) throw ValidationError("no corpus files given");
    if (!ids) return load_byte_corpus(paths);
    Corpus all;
    for (const auto& p : paths) {
        Corpus c = load_id_corpus(p);
        all.tokens.insert(all.tokens.end(), c.tokens.begin(), c.tokens.end());
        all.sources.push_back(p);
    }
    return all;
}

std::vector<Corpus> load_validation(const std::vector<std::string>& paths, bool ids) {
    std::vector<Corpus> sets;
    for (const auto& p : paths) sets.push_back(ids ? load_id_corpus(p) : load_byte_corpus({p}));
    return sets;
}

void check_eval_seq(const TrainConfig& train, const ModelConfig& model) {
    if (train.seq_len > model.max_seq) {
        throw ValidationError("seq_len " + std::to_string(train.seq_len) + " exceeds max_seq " +
                              std::to_string(model.max_seq));
    }
}

struct Options {
    std::vector<std::string> configs;
    std::vector<std::string> sets;
    std::vector<std::string> train_configs;
    std::string out;
    std::optional<std::int64_t> seed;
    bool allow_budget_mismatch = false;

    std::optional<std::int64_t> budget;
    std::string budget_config;

    std::vector<std::string> corpus;
    std::vector<std::string> val;
    bool ids = false;
    std::string metrics;
    std::string checkpoint;
    std::string resume;
    std::optional<std::int64_t> max_steps;
    bool serial = false;
};

int cmd_count(const Options& o, std::ostream& out) {
    if (o.configs.empty()) throw ValidationError("count needs --config");
    const ModelConfig cfg = model_from(gather(o.configs, o.sets), false, nullptr);
    const ParamBreakdown p = total_params(cfg);
    const auto fwd = static_cast<std::int64_t>(flops_per_token(p, FlopMode::forward));
    const auto trn = static_cast<std::int64_t>(flops_per_token(p, FlopMode::train));
    std::ostringstream os;
    os << "attention_params " << p.attention_params << ' ' << million_label(p.attention_params) << '\n'
       << "ffn_params " << p.ffn_params << ' ' << million_label(p.ffn_params) << '\n'
       << "norm_params " << p.norm_params << ' ' << million_label(p.norm_params) << '\n'
       << "total_nonembedding " << p.total_nonembedding << ' ' << million_label(p.total_nonembedding) << '\n'
       << "flops_per_token_forward " << fwd << ' ' << million_label(fwd) << '\n'
       << "flops_per_token_train " << trn << ' ' << million_label(trn) << '\n';
    write_text(o.out, os.str(), out);
    return kOk;
}

int cmd_solve(const Options& o, std::ostream& out, std::ostream& err) {
    if (o.configs.empty()) throw ValidationError("solve needs --config with d_model, L and K");
    if (o.budget.has_value() == !o.budget_config.empty()) {
        throw ValidationError("solve needs exactly one of --budget or --budget-config");
    }
    ModelConfig cfg = model_from(gather(o.configs, o.sets), false, nullptr);
    std::int64_t budget = 0;
    if (o.budget) {
        budget = *o.budget;
        if (budget <= 0) throw ValidationError("--budget must be positive");
    } else {
        budget = total_params(model_from(gather({o.budget_config}, {}), false, nullptr)).total_nonembedding;
    }
    cfg.d_h = solve_dh(budget, cfg.d_model, cfg.L, cfg.K);
    const SweepRow row = make_sweep_row(cfg, static_cast<double>(cfg.d_h) / static_cast<double>(cfg.d_model), budget);
    std::ostringstream os;
    write_sweep_csv(os, {row});
    write_text(o.out, os.str(), out);
    err << "budget " << budget << ", d_h " << cfg.d_h << ", total " << row.params.total_nonembedding << ", gap "
        << format_double(relative_budget_gap(row.params.total_nonembedding, budget))
        << (*row.within_tolerance ? " (within tolerance)" : " (outside tolerance)") << '\n';
    return kOk;
}

int cmd_sweep(const Options& o, std::ostream& out) {
    SweepSpec spec;
    for (const auto& s : gather(o.configs, o.sets)) {
        if (apply_sweep_setting(spec, s.setting.key, s.setting.value)) continue;
        if (apply_setting(spec.base, s.setting.key, s.setting.value)) continue;
        unknown_key(s);
    }
    const auto rows = enumerate_sweep(spec);
    std::ostringstream os;
    write_sweep_csv(os, rows);
    write_text(o.out, os.str(), out);
    return kOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
    if (o.configs.empty()) throw ValidationError("train needs --config");
    TrainConfig tcfg;
    auto settings = gather(o.train_configs, {});
    for (auto& s : gather(o.configs, o.sets)) settings.push_back(std::move(s));
    const ModelConfig mcfg = model_from(settings, true, &tcfg);
    if (o.seed) tcfg.seed = *o.seed;
    tcfg.validate();
    if (o.checkpoint.empty()) throw ValidationError("train needs --checkpoint for the final weights");

    const Corpus corpus = tcfg.total_tokens > 0 ? load_corpus(o.corpus, o.ids) : Corpus{};
    const auto val = load_validation(o.val, o.ids);

    LanguageModel model;
    std::optional<OptimizerState> state;
    std::int64_t tokens_seen = 0;
    if (!o.resume.empty()) {
        Checkpoint ck = load_checkpoint(o.resume, mcfg);
        model = std::move(ck.model);
        state = std::move(ck.optimizer);
        tokens_seen = ck.tokens_seen;
    } else {
        model = init_weights(mcfg, static_cast<std::uint64_t>(tcfg.seed));
    }
    Trainer trainer(model, corpus, tcfg, val.empty() ? nullptr : &val, std::move(state), tokens_seen);
    std::vector<MetricsRecord> records;
    if (o.max_steps && *o.max_steps < 0) throw ValidationError("--max-steps must be non-negative");
    for (std::int64_t n = 0; !trainer.done() && (!o.max_steps || n < *o.max_steps); ++n) {
        if (auto rec = trainer.step()) records.push_back(*rec);
    }

    std::ostringstream os;
    write_metrics_csv(os, records);
    write_text(o.metrics.empty() ? o.out : o.metrics, os.str(), out);
    save_checkpoint(o.checkpoint, model, &trainer.optimizer_state(), trainer.tokens_seen());
    err << "trained " << trainer.steps_done() << " steps, " << trainer.tokens_seen() << " tokens\n";
    return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
    if (o.checkpoint.empty()) throw ValidationError("eval needs --checkpoint");
    if (o.val.empty()) throw ValidationError("eval needs at least one --val file");
    TrainConfig tcfg;
    std::optional<ModelConfig> expected;
    {
        ModelConfig probe;
        bool any_model_key = false;
        for (const auto& s : gather(o.configs, o.sets)) {
            if (apply_setting(probe, s.setting.key, s.setting.value)) {
                any_model_key = true;
                continue;
            }
            if (apply_setting(tcfg, s.setting.key, s.setting.value)) continue;
            unknown_key(s);
        }
        if (any_model_key) {
            probe.validate();
            expected = probe;
        }
    }
    tcfg.validate();
    const auto val = load_validation(o.val, o.ids);
    Checkpoint ck = expected ? load_checkpoint(o.checkpoint, *expected) : load_checkpoint(o.checkpoint);
    check_eval_seq(tcfg, ck.model.config);
    for (const auto& v : val) v.check_vocab(ck.model.config.vocab_size);
    const EvalResult r = evaluate_sets(ck.model, val, static_cast<std::size_t>(tcfg.seq_len));
    std::ostringstream os;
    os << "val_loss " << format_double(r.loss) << '\n' << "val_ppl " << format_double(r.ppl) << '\n';
    write_text(o.out, os.str(), out);
    return kOk;
}

int cmd_compare(const Options& o, std::ostream& out, std::ostream& err) {
    if (o.configs.size() != 2) {
        throw ValidationError("compare needs exactly two --config model files, got " + std::to_string(o.configs.size()));
    }
    TrainConfig tcfg;
    std::vector<SourcedSetting> model_sets, train_sets = gather(o.train_configs, {});
    for (auto& s : gather({}, o.sets)) {
        ModelConfig probe;
        if (apply_setting(probe, s.setting.key, s.setting.value)) model_sets.push_back(std::move(s));
        else train_sets.push_back(std::move(s));
    }
    for (const auto& s : train_sets) {
        if (!apply_setting(tcfg, s.setting.key, s.setting.value)) unknown_key(s);
    }
    if (o.seed) tcfg.seed = *o.seed;
    tcfg.validate();

    ModelConfig cfgs[2];
    for (int i = 0; i < 2; ++i) {
        auto settings = gather({o.configs[i]}, {});
        settings.insert(settings.end(), model_sets.begin(), model_sets.end());
        cfgs[i] = model_from(settings, false, nullptr);
    }
    const std::int64_t a_total = total_params(cfgs[0]).total_nonembedding;
    const std::int64_t b_total = total_params(cfgs[1]).total_nonembedding;
    if (!within_budget(b_total, a_total) && !o.allow_budget_mismatch) {
        throw InfeasibleError("budget mismatch: " + o.configs[0] + " has " + std::to_string(a_total) + " and " +
                              o.configs[1] + " has " + std::to_string(b_total) +
                              " non-embedding parameters (relative gap " +
                              format_double(relative_budget_gap(b_total, a_total)) +
                              " exceeds 1e-05; pass --allow-budget-mismatch to override)");
    }

    const Corpus corpus = load_corpus(o.corpus, o.ids);
    const auto val = load_validation(o.val, o.ids);
    LanguageModel a = init_weights(cfgs[0], static_cast<std::uint64_t>(tcfg.seed));
    LanguageModel b = init_weights(cfgs[1], static_cast<std::uint64_t>(tcfg.seed));
    const ComparisonResult result = train_pair(a, b, corpus, tcfg, val.empty() ? nullptr : &val, !o.serial);

    std::ostringstream os;
    write_paired_csv(os, result);
    write_text(o.out, os.str(), out);

    std::ostringstream verdict;
    if (!result.first.empty() && result.first.back().val_loss && result.second.back().val_loss) {
        const double la = *result.first.back().val_loss;
        const double lb = *result.second.back().val_loss;
        verdict << "verdict: a=" << o.configs[0] << " val_loss=" << format_double(la) << " b=" << o.configs[1]
                << " val_loss=" << format_double(lb) << " lower=" << (la < lb ? "a" : lb < la ? "b" : "tie");
    } else if (!result.first.empty()) {
        verdict << "verdict: no validation set; a=" << o.configs[0]
                << " train_loss=" << format_double(result.first.back().train_loss) << " b=" << o.configs[1]
                << " train_loss=" << format_double(result.second.back().train_loss);
    } else {
        verdict << "verdict: no training steps run";
    }
    verdict << '\n';
    // The verdict goes to stdout unless the CSV already occupies it.
    if (o.out.empty() || o.out == "-") err << verdict.str();
    else out << verdict.str();
    return kOk;
}

void add_config_options(CLI::App* sub, Options& o, const std::string& config_help) {
    sub->add_option("--config", o.configs, config_help);
    sub->add_option("--set", o.sets, "key=value override applied after the config files (repeatable)");
    sub->add_option("--out", o.out, "Output path (stdout when omitted)");
}

int map_error(std::ostream& err, const char* kind, const std::exception& e, int code) {
    err << "hglm: " << kind << ": " << e.what() << '\n';
    return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Hourglass and conventional FFN language models: budgets, sweeps and training"};
    app.name(args.empty() ? "hglm" : args[0]);
    app.require_subcommand(1);

    const std::string model_keys = keys_footer("Model keys", model_config_keys());
    const std::string train_keys = keys_footer("Training keys", train_config_keys());
    const std::string sweep_keys = keys_footer("Sweep keys", sweep_spec_keys());

    auto* count = app.add_subcommand("count", "Print the parameter breakdown and FLOPs per token of a model config");
    add_config_options(count, o, "Model config file (repeatable, later files win)");
    count->footer(model_keys);

    auto* solve = app.add_subcommand("solve", "Solve d_h so a model config meets a parameter budget");
    add_config_options(solve, o, "Model config file supplying d_model, L, K");
    solve->add_option("--budget", o.budget, "Target non-embedding parameter count");
    solve->add_option("--budget-config", o.budget_config, "Model config whose total defines the budget");
    solve->footer(model_keys);

    auto* sweep = app.add_subcommand("sweep", "Enumerate a d_h ratio or width/depth sweep as CSV");
    add_config_options(sweep, o, "Sweep spec file");
    sweep->footer(sweep_keys + model_keys);

    auto* train = app.add_subcommand("train", "Train one model and write metrics CSV plus a checkpoint");
    add_config_options(train, o, "Model and training config file (repeatable)");
    train->add_option("--train-config", o.train_configs, "Training config file (repeatable)");
    train->add_option("--corpus", o.corpus, "Training corpus file(s)");
    train->add_option("--val", o.val, "Validation file (repeatable; losses are macro-averaged)");
    train->add_option("--metrics", o.metrics, "Metrics CSV path (defaults to --out)");
    train->add_option("--checkpoint", o.checkpoint, "Checkpoint path for the final weights");
    train->add_option("--resume", o.resume, "Continue from a checkpoint written by train");
    train->add_option("--max-steps", o.max_steps, "Stop after this many steps; resume later with --resume");
    train->add_option("--seed", o.seed, "Overrides the seed key");
    train->add_flag("--ids", o.ids, "Corpus files hold whitespace-separated token ids instead of bytes");
    train->footer(model_keys + train_keys);

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on validation files");
    add_config_options(eval, o, "Optional config; model keys must match the checkpoint, seq_len sets the window");
    eval->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate");
    eval->add_option("--val", o.val, "Validation file (repeatable)");
    eval->add_flag("--ids", o.ids, "Validation files hold token ids instead of bytes");
    eval->footer(model_keys + train_keys);

    auto* compare = app.add_subcommand("compare", "Train two budget-matched models on the same token stream");
    add_config_options(compare, o, "Model config file (exactly two)");
    compare->add_option("--train-config", o.train_configs, "Shared training config file (repeatable)");
    compare->add_option("--corpus", o.corpus, "Training corpus file(s)");
    compare->add_option("--val", o.val, "Validation file (repeatable)");
    compare->add_option("--seed", o.seed, "Overrides the seed key");
    compare->add_flag("--allow-budget-mismatch", o.allow_budget_mismatch,
                      "Run even when totals differ by more than 0.001%");
    compare->add_flag("--serial", o.serial, "Train the two models one after the other");
    compare->add_flag("--ids", o.ids, "Corpus files hold token ids instead of bytes");
    compare->footer(model_keys + train_keys);

    std::vector<const char*> argv;
    if (args.empty()) argv.push_back("hglm");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kValidation;
    }

    try {
        if (*count) return cmd_count(o, out);
        if (*solve) return cmd_solve(o, out, err);
        if (*sweep) return cmd_sweep(o, out);
        if (*train) return cmd_train(o, out, err);
        if (*eval) return cmd_eval(o, out);
        if (*compare) return cmd_compare(o, out, err);
    } catch (const CheckpointError& e) {
        const bool mismatch = e.kind() == CheckpointError::Kind::config_mismatch ||
                              e.kind() == CheckpointError::Kind::shape_mismatch;
        return map_error(err, mismatch ? "checkpoint mismatch" : "checkpoint error", e, mismatch ? kInfeasible : kIo);
    } catch (const ValidationError& e) {
        return map_error(err, "invalid input", e, kValidation);
    } catch (const InfeasibleError& e) {
        return map_error(err, "infeasible", e, kInfeasible);
    } catch (const IoError& e) {
        return map_error(err, "i/o error", e, kIo);
    }
    return kValidation;
}

}  // namespace hglm::cli
