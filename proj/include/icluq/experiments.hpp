#pragma once

// Evaluation drivers: per-position metric curves against fresh tasks, the
// task-shift / covariate-shift / length-shift / flipped suites, the
// generalization-gap study, and the truncation-gap study. Suites return
// MetricSeries; serialization to CSV/SVG lives in report.hpp.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "icluq/baselines.hpp"
#include "icluq/bayes.hpp"
#include "icluq/predict.hpp"
#include "icluq/rng.hpp"
#include "icluq/taskgen.hpp"
#include "icluq/trainer.hpp"
#include "icluq/transformer.hpp"

namespace icluq {

struct MetricSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> mean;
    std::vector<double> stderr_;
    std::map<std::string, std::string> metadata;
};

enum class Metric {
    MeanMse,
    AvgSigma,
    Nll,
    NeglogAbsSigmaErr,
    AbsErrVsBayesMean,
    AbsErrVsBayesSigma,
};

inline const char* to_string(Metric m) {
    switch (m) {
        case Metric::MeanMse: return "mean_mse";
        case Metric::AvgSigma: return "avg_sigma";
        case Metric::Nll: return "nll";
        case Metric::NeglogAbsSigmaErr: return "neglog_abs_sigma_err";
        case Metric::AbsErrVsBayesMean: return "abs_err_vs_bayes_mean";
        case Metric::AbsErrVsBayesSigma: return "abs_err_vs_bayes_sigma";
    }
    return "?";
}

inline Metric metric_from_string(const std::string& s) {
    for (Metric m : {Metric::MeanMse, Metric::AvgSigma, Metric::Nll, Metric::NeglogAbsSigmaErr,
                     Metric::AbsErrVsBayesMean, Metric::AbsErrVsBayesSigma}) {
        if (s == to_string(m)) return m;
    }
    throw DomainError("unknown metric: " + s);
}

inline bool metric_needs_bayes(Metric m) {
    return m == Metric::NeglogAbsSigmaErr || m == Metric::AbsErrVsBayesMean ||
           m == Metric::AbsErrVsBayesSigma;
}

// Per-position metric curve over n_eval fresh sequences whose tasks come from
// the prior itself (never a pool). The nll metric shares its code path (and
// random stream) with mc_risk, so Bayes-risk references agree exactly.
inline MetricSeries eval_by_position(const SequencePredictor& predictor, const PriorConfig& prior,
                                     const CovariateConfig& cov, std::int64_t t_len,
                                     std::int64_t n_eval, Metric metric, std::uint64_t seed,
                                     const std::string& name,
                                     std::string_view stream = "mc_risk") {
    MetricSeries series;
    series.name = name;
    series.metadata["metric"] = to_string(metric);
    series.metadata["n_eval"] = std::to_string(n_eval);

    if (metric == Metric::Nll) {
        const RiskEstimate est = mc_risk(predictor, prior, cov, t_len, n_eval, seed, stream);
        for (std::int64_t t = 0; t < t_len; ++t) {
            series.x.push_back(static_cast<double>(t + 1));
            series.mean.push_back(est.mean[t]);
            series.stderr_.push_back(est.stderr[t]);
        }
        return series;
    }

    const SequencePredictor bayes =
        metric_needs_bayes(metric) ? bayes_predictor(prior) : SequencePredictor{};
    Tensor sum = Tensor::vector(t_len);
    Tensor sumsq = Tensor::vector(t_len);
    for (std::int64_t i = 0; i < n_eval; ++i) {
        Rng rng(seed, stream, static_cast<std::uint64_t>(i));
        const TaskParams task = sample_task(prior, rng);
        const PromptSequence seq = sample_sequence(task, cov, t_len, rng);
        const std::vector<Prediction> preds = predictor(seq);
        std::vector<Prediction> ref;
        if (bayes) ref = bayes(seq);
        for (std::int64_t t = 0; t < t_len; ++t) {
            const Prediction& p = preds[static_cast<std::size_t>(t)];
            double v = 0.0;
            switch (metric) {
                case Metric::MeanMse: {
                    const double r = seq.ys[t] - p.y_hat;
                    v = r * r;
                    break;
                }
                case Metric::AvgSigma:
                    v = p.sigma_hat;
                    break;
                case Metric::NeglogAbsSigmaErr:
                    v = -std::log(std::max(
                        std::abs(p.sigma_hat - ref[static_cast<std::size_t>(t)].sigma_hat), 1e-8));
                    break;
                case Metric::AbsErrVsBayesMean:
                    v = std::abs(p.y_hat - ref[static_cast<std::size_t>(t)].y_hat);
                    break;
                case Metric::AbsErrVsBayesSigma:
                    v = std::abs(p.sigma_hat - ref[static_cast<std::size_t>(t)].sigma_hat);
                    break;
                case Metric::Nll:
                    break;
            }
            sum[t] += v;
            sumsq[t] += v * v;
        }
    }
    for (std::int64_t t = 0; t < t_len; ++t) {
        const double m = sum[t] / static_cast<double>(n_eval);
        const double var = std::max(0.0, sumsq[t] / static_cast<double>(n_eval) - m * m);
        series.x.push_back(static_cast<double>(t + 1));
        series.mean.push_back(m);
        series.stderr_.push_back(std::sqrt(var / static_cast<double>(n_eval)));
    }
    return series;
}

// ---------------------------------------------------------------------------
// Task shift (S/M/L-OOD priors)
// ---------------------------------------------------------------------------

inline PriorConfig ood_prior(const PriorConfig& base, double tau_shape, double tau_rate) {
    PriorConfig p = base;
    p.tau_shape = tau_shape;
    p.tau_rate = tau_rate;
    return p;
}

struct SuiteConfig {
    std::int64_t t_len = 100;
    std::int64_t n_eval = 2000;
    std::uint64_t seed = 0;
    PriorConfig id_prior;
};

// Evaluates each named predictor plus the ID-prior Bayes oracle on the three
// OOD priors; emits avg-sigma curves.
inline std::vector<MetricSeries> task_shift_suite(
    const std::vector<std::pair<std::string, SequencePredictor>>& models, const SuiteConfig& cfg) {
    std::vector<MetricSeries> out;
    const std::pair<std::string, PriorConfig> settings[] = {
        {"s_ood", ood_prior(cfg.id_prior, 80.0, 20.0)},
        {"m_ood", ood_prior(cfg.id_prior, 100.0, 400.0)},
        {"l_ood", ood_prior(cfg.id_prior, 100.0, 1600.0)},
    };
    for (const auto& [tag, prior] : settings) {
        std::vector<std::pair<std::string, SequencePredictor>> all = models;
        all.emplace_back("bayes_id_prior", bayes_predictor(cfg.id_prior));
        for (const auto& [name, pred] : all) {
            MetricSeries s = eval_by_position(pred, prior, Isotropic{1.0}, cfg.t_len, cfg.n_eval,
                                              Metric::AvgSigma, cfg.seed, tag + "/" + name,
                                              "task-shift-" + tag);
            s.metadata["setting"] = tag;
            out.push_back(std::move(s));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Covariate shift
// ---------------------------------------------------------------------------

inline std::vector<std::pair<std::string, CovariateConfig>> covariate_shift_settings(
    std::int64_t d) {
    return {
        {"l_cov", Isotropic{4.0}},
        {"dec", decreasing_diagonal(d)},
        {"shr", shrinking_diagonal(d)},
        {"rot", RotatedDecreasing{}},
    };
}

// |y_hat - y*| and |sigma_hat - sigma*| curves for both models under the four
// covariate-shift settings.
inline std::vector<MetricSeries> covariate_shift_suite(const SequencePredictor& static_model,
                                                       const SequencePredictor& meta_model,
                                                       const SuiteConfig& cfg) {
    std::vector<MetricSeries> out;
    for (const auto& [tag, cov] : covariate_shift_settings(cfg.id_prior.d)) {
        for (const auto& [name, pred] :
             std::vector<std::pair<std::string, SequencePredictor>>{{"static", static_model},
                                                                    {"meta", meta_model}}) {
            for (Metric metric : {Metric::AbsErrVsBayesMean, Metric::AbsErrVsBayesSigma}) {
                MetricSeries s =
                    eval_by_position(pred, cfg.id_prior, cov, cfg.t_len, cfg.n_eval, metric,
                                     cfg.seed, tag + "/" + name + "/" + to_string(metric),
                                     "cov-shift-" + tag);
                s.metadata["setting"] = tag;
                out.push_back(std::move(s));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Length shift
// ---------------------------------------------------------------------------

// |sigma_hat - sigma*| curves over t = 1..T for each named model.
inline std::vector<MetricSeries> length_shift_suite(
    const std::vector<std::pair<std::string, SequencePredictor>>& models, const SuiteConfig& cfg) {
    std::vector<MetricSeries> out;
    for (const auto& [name, pred] : models) {
        out.push_back(eval_by_position(pred, cfg.id_prior, Isotropic{1.0}, cfg.t_len, cfg.n_eval,
                                       Metric::AbsErrVsBayesSigma, cfg.seed, name,
                                       "length-shift"));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Flipped-region suite
// ---------------------------------------------------------------------------

struct FlippedEval {
    double accuracy = 0.0;          // resolved classification lands in the true group
    double complementary = 0.0;     // raw sigma_hat lies in the complementary group
    double out_of_support = 0.0;    // raw sigma_hat lies outside both groups
    double raw_accuracy = 0.0;      // raw sigma_hat lies in the true group
    // Of resolved misclassifications, the fraction whose raw value lies in the
    // complementary group.
    double misclassified_to_complementary = 0.0;
};

// Classifies sigma_hat at the final position of length-t_len prompts.
inline FlippedEval flipped_eval(const SequencePredictor& predictor, FlippedRegionConfig::Mode mode,
                                std::int64_t d, std::int64_t t_len, std::int64_t n_eval,
                                std::uint64_t seed) {
    FlippedRegionConfig fcfg;
    fcfg.mode = mode;
    fcfg.d = d;
    std::int64_t right = 0, comp = 0, outside = 0, raw_right = 0, mis = 0, mis_comp = 0;
    for (std::int64_t i = 0; i < n_eval; ++i) {
        Rng rng(seed, mode == FlippedRegionConfig::Mode::ID ? "flipped-id" : "flipped-ood",
                static_cast<std::uint64_t>(i));
        const TaskParams task = sample_flipped_task(fcfg, rng);
        const PromptSequence seq = sample_sequence(task, Isotropic{1.0}, t_len, rng);
        const std::vector<Prediction> preds = predictor(seq);
        const double sig = preds.back().sigma_hat;
        const SigmaGroup truth = sigma_group_raw(task.sigma);
        const SigmaGroup raw = sigma_group_raw(sig);
        const SigmaGroup resolved = sigma_group_resolved(sig);
        if (resolved == truth) ++right;
        if (raw == truth) ++raw_right;
        if (raw == SigmaGroup::Outside) ++outside;
        else if (raw != truth) ++comp;
        if (resolved != truth) {
            ++mis;
            if (raw != SigmaGroup::Outside && raw != truth) ++mis_comp;
        }
    }
    FlippedEval ev;
    const double n = static_cast<double>(n_eval);
    ev.accuracy = right / n;
    ev.complementary = comp / n;
    ev.out_of_support = outside / n;
    ev.raw_accuracy = raw_right / n;
    ev.misclassified_to_complementary = mis > 0 ? static_cast<double>(mis_comp) / static_cast<double>(mis) : 0.0;
    return ev;
}

struct FlippedSuiteResult {
    std::vector<MetricSeries> series; // vs training step
};

// Evaluates ID/OOD accuracy and the complementary rate at every checkpoint of
// a training run on ID flipped tasks.
inline FlippedSuiteResult flipped_suite(const std::vector<Checkpoint>& checkpoints,
                                        std::int64_t t_len, std::int64_t n_eval,
                                        std::uint64_t seed) {
    FlippedSuiteResult res;
    MetricSeries acc_id{"flipped/id_accuracy", {}, {}, {}, {}};
    MetricSeries acc_ood{"flipped/ood_accuracy", {}, {}, {}, {}};
    MetricSeries comp_ood{"flipped/ood_complementary", {}, {}, {}, {}};
    MetricSeries outside_ood{"flipped/ood_out_of_support", {}, {}, {}, {}};
    MetricSeries mis_comp_ood{"flipped/ood_misclassified_to_complementary", {}, {}, {}, {}};
    for (const Checkpoint& ck : checkpoints) {
        const SequencePredictor pred = transformer_predictor(ck.params, ck.model);
        const FlippedEval id =
            flipped_eval(pred, FlippedRegionConfig::Mode::ID, ck.model.d_in, t_len, n_eval, seed);
        const FlippedEval ood =
            flipped_eval(pred, FlippedRegionConfig::Mode::OOD, ck.model.d_in, t_len, n_eval, seed);
        const auto step = static_cast<double>(ck.step);
        auto push = [&](MetricSeries& s, double v) {
            s.x.push_back(step);
            s.mean.push_back(v);
            s.stderr_.push_back(0.0);
        };
        push(acc_id, id.accuracy);
        push(acc_ood, ood.accuracy);
        push(comp_ood, ood.complementary);
        push(outside_ood, ood.out_of_support);
        push(mis_comp_ood, ood.misclassified_to_complementary);
    }
    res.series = {acc_id, acc_ood, comp_ood, outside_ood, mis_comp_ood};
    return res;
}

// ---------------------------------------------------------------------------
// Generalization-gap study (fixed-dataset ERM vs population risk)
// ---------------------------------------------------------------------------

struct GapPoint {
    std::int64_t n = 8;
    std::int64_t t_len = 16;
    std::int64_t window = 16;
};

struct GapStudyResult {
    std::vector<GapPoint> points;
    std::vector<double> gap_mean;   // population risk - empirical risk, per point
    std::vector<double> gap_stderr; // over trials
    std::vector<double> train_risk;
    std::vector<double> pop_risk;
    double slope_vs_n = 0.0;        // log-log fit over points grouped by (T, S)
    double slope_vs_min_st = 0.0;
};

inline double loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(ys[i] > 0.0)) continue;
        const double lx = std::log(xs[i]);
        const double ly = std::log(ys[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++n;
    }
    if (n < 2) return std::nan("");
    const double dn = static_cast<double>(n);
    return (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
}

// For each (n, T, S): train a theory-mode model on a frozen dataset of n
// sequences, then measure population risk on fresh sequences. Gap slopes are
// fitted on the per-point mean gaps.
inline GapStudyResult gap_study(const ModelConfig& model_base, const TrainConfig& train_base,
                                const PriorConfig& prior, const CovariateConfig& cov,
                                const std::vector<GapPoint>& grid, std::int64_t trials,
                                std::int64_t n_mc, std::uint64_t seed) {
    GapStudyResult res;
    res.points = grid;
    for (const GapPoint& pt : grid) {
        double sum = 0.0, sumsq = 0.0, tr_sum = 0.0, pop_sum = 0.0;
        for (std::int64_t trial = 0; trial < trials; ++trial) {
            ModelConfig mcfg = model_base;
            mcfg.window = pt.window;
            TrainConfig tcfg = train_base;
            tcfg.fixed_dataset_n = pt.n;
            tcfg.t_len = pt.t_len;
            tcfg.seed = seed + 7919 * static_cast<std::uint64_t>(trial) +
                        static_cast<std::uint64_t>(pt.n) * 104729ULL +
                        static_cast<std::uint64_t>(pt.window) * 1299709ULL;
            const TrainResult tr = train_fixed_dataset(tcfg, mcfg, prior, cov);
            const SequencePredictor pred = transformer_predictor(tr.checkpoint.params, mcfg);
            const RiskEstimate pop = mc_risk(pred, prior, cov, pt.t_len, n_mc, tcfg.seed, "gap-pop");
            double pop_risk = 0.0;
            for (std::int64_t t = 0; t < pt.t_len; ++t) pop_risk += pop.mean[t];
            pop_risk /= static_cast<double>(pt.t_len);
            const double gap = pop_risk - tr.final_train_risk;
            sum += gap;
            sumsq += gap * gap;
            tr_sum += tr.final_train_risk;
            pop_sum += pop_risk;
        }
        const double m = sum / static_cast<double>(trials);
        const double var = std::max(0.0, sumsq / static_cast<double>(trials) - m * m);
        res.gap_mean.push_back(m);
        res.gap_stderr.push_back(trials > 1 ? std::sqrt(var / static_cast<double>(trials - 1))
                                            : 0.0);
        res.train_risk.push_back(tr_sum / static_cast<double>(trials));
        res.pop_risk.push_back(pop_sum / static_cast<double>(trials));
    }
    // Slope vs n over the subset sharing the modal (T, S).
    std::vector<double> xs, ys, xs2, ys2;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i].t_len == grid[0].t_len && grid[i].window == grid[0].window) {
            xs.push_back(static_cast<double>(grid[i].n));
            ys.push_back(res.gap_mean[i]);
        }
        if (grid[i].n == grid[0].n && grid[i].t_len == grid[0].t_len) {
            xs2.push_back(static_cast<double>(
                std::min<std::int64_t>(grid[i].window, grid[i].t_len)));
            ys2.push_back(res.gap_mean[i]);
        }
    }
    res.slope_vs_n = loglog_slope(xs, ys);
    res.slope_vs_min_st = loglog_slope(xs2, ys2);
    return res;
}

// ---------------------------------------------------------------------------
// Truncation-gap study (oracle only)
// ---------------------------------------------------------------------------

// Paired Monte-Carlo estimate of R_t^{S*} - R_t^* at position t_eval for each
// window S: both oracles see the same sequences, so the difference's standard
// error stays far below either risk's.
inline MetricSeries truncation_gap_study(const PriorConfig& prior, const CovariateConfig& cov,
                                         std::int64_t t_eval, const std::vector<std::int64_t>& s_list,
                                         std::int64_t n_mc, std::uint64_t seed) {
    MetricSeries series;
    series.name = "truncation_gap";
    series.metadata["t_eval"] = std::to_string(t_eval);
    series.metadata["n_eval"] = std::to_string(n_mc);
    std::vector<double> sum(s_list.size(), 0.0), sumsq(s_list.size(), 0.0);
    Tensor x = Tensor::vector(prior.d);
    for (std::int64_t i = 0; i < n_mc; ++i) {
        Rng rng(seed, "mc_risk", static_cast<std::uint64_t>(i));
        const TaskParams task = sample_task(prior, rng);
        const PromptSequence seq = sample_sequence(task, cov, t_eval, rng);
        for (std::int64_t j = 0; j < prior.d; ++j) x[j] = seq.xs(t_eval - 1, j);
        const double y = seq.ys[t_eval - 1];

        PosteriorState full = init_prior(prior);
        Tensor xs_row = Tensor::vector(prior.d);
        for (std::int64_t s = 0; s < t_eval - 1; ++s) {
            for (std::int64_t j = 0; j < prior.d; ++j) xs_row[j] = seq.xs(s, j);
            update_inplace(full, xs_row, seq.ys[s]);
        }
        const double loss_full = nll_loss(predict(full, x), y);

        for (std::size_t k = 0; k < s_list.size(); ++k) {
            const Prediction p = truncated_predict(seq, t_eval - 1, s_list[k], x, prior);
            const double diff = nll_loss(p, y) - loss_full;
            sum[k] += diff;
            sumsq[k] += diff * diff;
        }
    }
    for (std::size_t k = 0; k < s_list.size(); ++k) {
        const double m = sum[k] / static_cast<double>(n_mc);
        const double var = std::max(0.0, sumsq[k] / static_cast<double>(n_mc) - m * m);
        series.x.push_back(static_cast<double>(s_list[k]));
        series.mean.push_back(m);
        series.stderr_.push_back(std::sqrt(var / static_cast<double>(n_mc)));
    }
    series.metadata["loglog_slope"] = std::to_string(loglog_slope(series.x, series.mean));
    return series;
}

} // namespace icluq
