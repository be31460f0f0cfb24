// Command-line workbench: train transformers on noisy linear-regression
// sequences, compare them with the exact Bayes predictor and classical
// baselines, and run the distribution-shift and theory-facing studies.
//
// Exit codes: 0 success, 1 check failure, 2 config error, 3 IO error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "icluq/baselines.hpp"
#include "icluq/bayes.hpp"
#include "icluq/checkpoint_io.hpp"
#include "icluq/config.hpp"
#include "icluq/experiments.hpp"
#include "icluq/report.hpp"
#include "icluq/trainer.hpp"
#include "icluq/transformer.hpp"

namespace fs = std::filesystem;
using namespace icluq;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string out_dir;
    std::vector<std::string> checkpoints;
    std::int64_t steps = -1;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "config file (key = value lines)");
    cmd->add_option("--set", opts.overrides, "inline override key=value (repeatable)");
    cmd->add_option("--seed", opts.seed, "root RNG seed")->each([&](const std::string&) {
        opts.seed_given = true;
    });
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--checkpoint", opts.checkpoints, "checkpoint path (repeatable)");
    cmd->add_option("--steps", opts.steps, "override train.steps");
    cmd->add_flag("--quiet", opts.quiet, "suppress progress output");
}

RunConfig resolve_config(const CommonOpts& opts) {
    RunConfig cfg = opts.config_path.empty() ? parse_config_text("", opts.overrides)
                                             : parse_config_file(opts.config_path, opts.overrides);
    if (opts.seed_given) cfg.seed = opts.seed;
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    if (opts.steps >= 0) cfg.train.steps = opts.steps;
    cfg.train.seed = cfg.seed;
    return cfg;
}

std::string ensure_dir(const std::string& base, const std::string& sub) {
    fs::path p = fs::path(base) / sub;
    fs::create_directories(p);
    return p.string();
}

void emit(const RunConfig& cfg, const std::string& suite, const std::vector<MetricSeries>& series,
          const PlotSpec& plot, bool quiet) {
    const std::string dir = ensure_dir(cfg.out_dir, suite);
    const std::string hash = cfg.hash_short();
    std::vector<MetricSeries> kept;
    for (const auto& s : series) {
        std::string fname = s.name;
        for (char& c : fname) {
            if (c == '/') c = '_';
        }
        const std::string path = dir + "/" + fname + "_" + hash + ".csv";
        write_csv(s, path);
        if (!quiet) std::printf("wrote %s\n", path.c_str());
        kept.push_back(s);
    }
    if (kept.empty()) {
        std::fprintf(stderr, "warning: no series to plot for %s\n", suite.c_str());
        return;
    }
    write_svg(kept, dir + "/" + suite + "_" + hash + ".svg", plot);
}

SequencePredictor predictor_for_checkpoint(const Checkpoint& ck) {
    // Models trained with randomized offsets are evaluated with the plain
    // builtin encoding (offset zero); the no-encoding model stays bare.
    ModelConfig eval_cfg = ck.model;
    if (eval_cfg.pos_mode != PosMode::None) eval_cfg.pos_mode = PosMode::Builtin;
    return transformer_predictor(ck.params, eval_cfg);
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

int cmd_train(const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    TrainResult result;
    if (cfg.train.fixed_dataset_n > 0) {
        result = train_fixed_dataset(cfg.train, cfg.model, cfg.prior, cfg.cov);
        if (!opts.quiet) {
            std::printf("fixed-dataset ERM: n=%lld epochs=%lld train_risk=%.6f\n",
                        static_cast<long long>(cfg.train.fixed_dataset_n),
                        static_cast<long long>(result.epochs_run), result.final_train_risk);
        }
    } else if (!opts.checkpoints.empty()) {
        const Checkpoint resume = load_checkpoint(opts.checkpoints.front());
        result = train(cfg.train, resume.model, cfg.prior, cfg.cov, &resume);
    } else {
        result = train(cfg.train, cfg.model, cfg.prior, cfg.cov);
    }

    const std::string dir = ensure_dir(cfg.out_dir, "train");
    const std::string hash = cfg.hash_short();
    result.checkpoint.config_hash = cfg.hash_bytes();
    const std::string ck_path = dir + "/ckpt_" + hash + ".icluq";
    save_checkpoint(ck_path, result.checkpoint);
    for (const Checkpoint& snap : result.snapshots) {
        Checkpoint stamped = snap;
        stamped.config_hash = cfg.hash_bytes();
        save_checkpoint(dir + "/ckpt_" + hash + "_step" + std::to_string(snap.step) + ".icluq",
                        stamped);
    }
    {
        std::ofstream os(dir + "/trace_" + hash + ".csv");
        os << "step,train_loss,eval_loss\n";
        char buf[128];
        for (const TraceRow& row : result.trace) {
            std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g\n",
                          static_cast<long long>(row.step), row.train_loss, row.eval_loss);
            os << buf;
        }
    }
    if (result.diverged) {
        std::fprintf(stderr, "training diverged (non-finite loss) at step %lld; diagnostic "
                             "checkpoint written to %s\n",
                     static_cast<long long>(result.checkpoint.step), ck_path.c_str());
        return 1;
    }
    if (!opts.quiet) {
        std::printf("checkpoint: %s (step %lld)\n", ck_path.c_str(),
                    static_cast<long long>(result.checkpoint.step));
        if (!result.trace.empty()) {
            std::printf("final train loss %.6f eval loss %.6f\n", result.trace.back().train_loss,
                        result.trace.back().eval_loss);
        }
    }
    return 0;
}

int cmd_eval(const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    if (opts.checkpoints.empty()) throw IoError("eval: --checkpoint is required");
    std::vector<MetricSeries> series;
    for (const std::string& path : opts.checkpoints) {
        const Checkpoint ck = load_checkpoint(path);
        MetricSeries s = eval_by_position(predictor_for_checkpoint(ck), cfg.prior, cfg.cov,
                                          cfg.eval_t_len, cfg.eval_n, cfg.eval_metric, cfg.seed,
                                          stem_of(path));
        series.push_back(std::move(s));
    }
    emit(cfg, "eval", series, PlotSpec{std::string("eval: ") + to_string(cfg.eval_metric),
                                       "position", to_string(cfg.eval_metric)},
         opts.quiet);
    return 0;
}

int cmd_bayes_curves(const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    std::vector<MetricSeries> series;
    const std::vector<std::pair<std::string, SequencePredictor>> preds = {
        {"bayes", bayes_predictor(cfg.prior)},
        {"ridge", ridge_predictor()},
        {"ols", ols_predictor()},
    };
    for (Metric metric : {Metric::AvgSigma, Metric::MeanMse, Metric::Nll}) {
        for (const auto& [name, pred] : preds) {
            series.push_back(eval_by_position(pred, cfg.prior, cfg.cov, cfg.eval_t_len, cfg.eval_n,
                                              metric, cfg.seed,
                                              std::string(to_string(metric)) + "/" + name));
        }
    }
    emit(cfg, "bayes-curves", series, PlotSpec{"oracle and baselines", "position", "value"},
         opts.quiet);
    const MetricSeries& avg_sigma_bayes = series[0];
    std::printf("bayes avg sigma* at t=%lld: %.4f\n", static_cast<long long>(cfg.eval_t_len),
                avg_sigma_bayes.mean.back());
    return 0;
}

int cmd_task_shift(const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    std::vector<std::pair<std::string, SequencePredictor>> models;
    for (const std::string& path : opts.checkpoints) {
        models.emplace_back(stem_of(path), predictor_for_checkpoint(load_checkpoint(path)));
    }
    SuiteConfig scfg{cfg.eval_t_len, cfg.eval_n, cfg.seed, cfg.prior};
    emit(cfg, "task-shift", task_shift_suite(models, scfg),
         PlotSpec{"task shift: avg predicted sigma", "position", "avg sigma"}, opts.quiet);
    return 0;
}

int cmd_cov_shift(const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    if (opts.checkpoints.size() != 2)
        throw IoError("cov-shift: pass --checkpoint static.icluq --checkpoint meta.icluq");
    const SequencePredictor stat = predictor_for_checkpoint(load_checkpoint(opts.checkpoints[0]));
    const SequencePredictor meta = predictor_for_checkpoint(load_checkpoint(opts.checkpoints[1]));
    SuiteConfig scfg{cfg.eval_t_len, cfg.eval_n, cfg.seed, cfg.prior};
    emit(cfg, "cov-shift", covariate_shift_suite(stat, meta, scfg),
         PlotSpec{"covariate shift: error vs Bayes", "position", "abs error"}, opts.quiet);
    return 0;
}

int cmd_length_shift(const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    std::vector<std::pair<std::string, SequencePredictor>> models;
    for (const std::string& path : opts.checkpoints) {
        models.emplace_back(stem_of(path), predictor_for_checkpoint(load_checkpoint(path)));
    }
    if (models.empty()) throw IoError("length-shift: --checkpoint is required");
    SuiteConfig scfg{cfg.eval_t_len, cfg.eval_n, cfg.seed, cfg.prior};
    emit(cfg, "length-shift", length_shift_suite(models, scfg),
         PlotSpec{"length shift: |sigma_hat - sigma*|", "position", "abs sigma error"},
         opts.quiet);
    return 0;
}

int cmd_flipped(const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    std::vector<Checkpoint> snapshots;
    if (!opts.checkpoints.empty()) {
        for (const std::string& path : opts.checkpoints) snapshots.push_back(load_checkpoint(path));
    } else {
        TrainConfig tcfg = cfg.train;
        tcfg.task_mode = TrainConfig::TaskMode::FlippedID;
        if (tcfg.snapshot_every <= 0) tcfg.snapshot_every = std::max<std::int64_t>(tcfg.steps / 10, 1);
        const TrainResult result = train(tcfg, cfg.model, cfg.prior, cfg.cov);
        if (result.diverged) return 1;
        snapshots = result.snapshots;
    }
    const FlippedSuiteResult res = flipped_suite(snapshots, cfg.eval_t_len, cfg.eval_n, cfg.seed);
    emit(cfg, "flipped", res.series, PlotSpec{"flipped-region accuracy", "step", "probability"},
         opts.quiet);
    return 0;
}

int cmd_gap_study(const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    ModelConfig mcfg;
    mcfg.layers = cfg.gap_layers;
    mcfg.heads = cfg.gap_heads;
    mcfg.d_in = cfg.prior.d;
    mcfg.d_embed = cfg.prior.d; // theory mode
    mcfg.d_key = cfg.gap_d_key;
    mcfg.d_hidden = cfg.gap_d_hidden;
    mcfg.window = cfg.gap_window;
    mcfg.pos_mode = PosMode::None;
    TrainConfig tcfg = cfg.train;
    tcfg.seed = cfg.seed;
    std::vector<GapPoint> grid;
    for (std::int64_t n : cfg.gap_n_list) grid.push_back(GapPoint{n, cfg.gap_t_len, cfg.gap_window});
    const GapStudyResult res =
        gap_study(mcfg, tcfg, cfg.prior, cfg.cov, grid, cfg.gap_trials, cfg.gap_n_mc, cfg.seed);
    MetricSeries s;
    s.name = "gap_vs_n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
        s.x.push_back(static_cast<double>(grid[i].n));
        s.mean.push_back(res.gap_mean[i]);
        s.stderr_.push_back(res.gap_stderr[i]);
    }
    s.metadata["slope_vs_n"] = std::to_string(res.slope_vs_n);
    emit(cfg, "gap-study", {s}, PlotSpec{"generalization gap vs n", "n", "gap", 760, 480, true},
         opts.quiet);
    std::printf("gap slope vs n: %.3f\n", res.slope_vs_n);
    return 0;
}

int cmd_truncation_gap(const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    const MetricSeries s = truncation_gap_study(cfg.prior, cfg.cov, cfg.trunc_t_eval,
                                                cfg.trunc_windows, cfg.trunc_n_mc, cfg.seed);
    emit(cfg, "truncation-gap", {s},
         PlotSpec{"truncation gap vs window", "S", "risk gap", 760, 480, true}, opts.quiet);
    std::printf("truncation gap log-log slope: %s\n", s.metadata.at("loglog_slope").c_str());
    return 0;
}

int cmd_gradcheck(const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    ModelConfig mcfg;
    mcfg.layers = 2;
    mcfg.heads = 2;
    mcfg.d_in = 4;
    mcfg.d_embed = 8;
    mcfg.d_key = 3;
    mcfg.d_hidden = 6;
    mcfg.window = 8;
    Rng rng(cfg.seed, "gradcheck-params", 0);
    ModelParams params = init_params(mcfg, rng, "gaussian", 0.3);

    PriorConfig prior;
    prior.d = mcfg.d_in;
    Rng data_rng(cfg.seed, "gradcheck-data", 0);
    const TaskParams task = sample_task(prior, data_rng);
    const PromptSequence seq = sample_sequence(task, Isotropic{1.0}, 5, data_rng);

    // Pack trainable parameters into one flat vector and check the full loss
    // gradient against central differences.
    std::vector<Tensor*> tensors;
    params.for_each_trainable([&](const std::string&, Tensor& t) { tensors.push_back(&t); });
    std::int64_t total = 0;
    for (Tensor* t : tensors) total += t->size();
    Tensor flat = Tensor::vector(total);
    {
        std::int64_t at = 0;
        for (Tensor* t : tensors)
            for (std::int64_t i = 0; i < t->size(); ++i) flat[at++] = (*t)[i];
    }
    auto scatter = [&](const Tensor& point) {
        std::int64_t at = 0;
        for (Tensor* t : tensors)
            for (std::int64_t i = 0; i < t->size(); ++i) (*t)[i] = point[at++];
    };
    auto loss_at = [&](const Tensor& point) {
        scatter(point);
        const BatchEval ev = batch_loss(params, mcfg, {seq}, {0}, 1, seq.length(), false, 1);
        return ev.loss;
    };
    scatter(flat);
    const BatchEval ev = batch_loss(params, mcfg, {seq}, {0}, 1, seq.length(), true, 1);
    Tensor analytic = Tensor::vector(total);
    {
        std::int64_t at = 0;
        for (const Tensor& g : ev.grads)
            for (std::int64_t i = 0; i < g.size(); ++i) analytic[at++] = g[i];
    }
    const double err = finite_diff_check(loss_at, flat, 1e-5, analytic);
    std::printf("gradcheck: max relative error %.3e over %lld coordinates (threshold 1e-4)\n", err,
                static_cast<long long>(total));
    return err < 1e-4 ? 0 : 1;
}

int cmd_certify(const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    CertificateReport total{};
    int failures = 0;
    for (int rep = 0; rep < 8; ++rep) {
        ModelConfig mcfg;
        Rng cfg_rng(cfg.seed, "certify-cfg", static_cast<std::uint64_t>(rep));
        mcfg.layers = 1 + static_cast<std::int64_t>(cfg_rng.below(3));
        mcfg.heads = 1 + static_cast<std::int64_t>(cfg_rng.below(3));
        mcfg.d_in = cfg.prior.d;
        mcfg.d_embed = cfg.prior.d; // theory mode: raw tokens are the input bound
        mcfg.d_key = 4;
        mcfg.d_hidden = 8;
        mcfg.window = 16;
        Rng rng(cfg.seed, "certify-params", static_cast<std::uint64_t>(rep));
        const ModelParams params = init_params(mcfg, rng, "gaussian", 0.25);
        const CertificateReport rep_out = boundedness_certificate(
            params, mcfg, cfg.certify_b_h, cfg.certify_trials / 8 + 1, cfg.seed + rep);
        total.checks += rep_out.checks;
        total.violations += rep_out.violations;
        if (!opts.quiet) {
            std::printf("certify[%d]: C1=%.4g C2=%.4g max|y_hat|=%.4g sigma in [%.4g, %.4g] "
                        "max|loss|=%.4g violations=%lld/%lld\n",
                        rep, rep_out.c1, rep_out.c2, rep_out.max_abs_y_hat, rep_out.min_sigma,
                        rep_out.max_sigma, rep_out.max_abs_loss,
                        static_cast<long long>(rep_out.violations),
                        static_cast<long long>(rep_out.checks));
        }
        if (rep_out.violations > 0) ++failures;
    }
    std::printf("certificate: %lld checks, %lld violations\n",
                static_cast<long long>(total.checks), static_cast<long long>(total.violations));
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"in-context uncertainty quantification workbench"};
    app.require_subcommand(1);

    struct Cmd {
        const char* name;
        const char* desc;
        int (*fn)(const CommonOpts&);
        CommonOpts opts;
        CLI::App* sub = nullptr;
    };
    std::vector<Cmd> cmds = {
        {"train", "train a transformer (fresh-batch pool or fixed-dataset ERM)", cmd_train, {}},
        {"eval", "per-position metric curve for a checkpoint", cmd_eval, {}},
        {"bayes-curves", "Bayes oracle vs ridge/OLS curves", cmd_bayes_curves, {}},
        {"task-shift", "S/M/L-OOD avg-sigma curves", cmd_task_shift, {}},
        {"cov-shift", "covariate-shift error curves (static vs meta)", cmd_cov_shift, {}},
        {"length-shift", "per-position |sigma error| for length-shift models", cmd_length_shift, {}},
        {"flipped", "flipped-region accuracy along a training run", cmd_flipped, {}},
        {"gap-study", "generalization gap vs n (fixed-dataset ERM)", cmd_gap_study, {}},
        {"truncation-gap", "truncated-oracle risk gap vs window S", cmd_truncation_gap, {}},
        {"gradcheck", "finite-difference check of the full model gradient", cmd_gradcheck, {}},
        {"certify", "boundedness certificate over random models/inputs", cmd_certify, {}},
    };
    for (auto& c : cmds) {
        c.sub = app.add_subcommand(c.name, c.desc);
        add_common(c.sub, c.opts);
    }

    CLI11_PARSE(app, argc, argv);

    for (auto& c : cmds) {
        if (!c.sub->parsed()) continue;
        try {
            return c.fn(c.opts);
        } catch (const ConfigError& e) {
            std::fprintf(stderr, "%s\n", e.what());
            return 2;
        } catch (const DomainError& e) {
            std::fprintf(stderr, "%s\n", e.what());
            return 2;
        } catch (const ShapeError& e) {
            std::fprintf(stderr, "%s\n", e.what());
            return 2;
        } catch (const FormatError& e) {
            std::fprintf(stderr, "%s\n", e.what());
            return 3;
        } catch (const IoError& e) {
            std::fprintf(stderr, "%s\n", e.what());
            return 3;
        }
    }
    return 0;
}
