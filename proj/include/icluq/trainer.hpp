#pragma once

// Training loop for the per-position heteroscedastic NLL objective: fresh
// batches of sequences whose tasks are drawn (with replacement) from a frozen
// task pool, Adam with bias correction and global-norm gradient clipping, a
// position mask for the length-shift experiments, and a fixed-dataset mode
// that minimizes the empirical risk of a frozen set of n sequences.
//
// Determinism contract: every random draw comes from a substream keyed by
// (seed, purpose, index), and per-sequence gradients are reduced in sequence
// order, so a (seed, config) pair yields bitwise-identical checkpoints for
// any thread count.

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "icluq/bayes.hpp"
#include "icluq/parallel.hpp"
#include "icluq/predict.hpp"
#include "icluq/rng.hpp"
#include "icluq/taskgen.hpp"
#include "icluq/tensor.hpp"
#include "icluq/transformer.hpp"

namespace icluq {

struct TrainConfig {
    std::int64_t steps = 20000;
    std::int64_t batch = 32;
    std::int64_t t_len = 64;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0; // <= 0 disables clipping
    std::int64_t pool_size = 8192;
    std::int64_t t_lo = 1; // loss positions [t_lo, t_hi], 1-indexed
    std::int64_t t_hi = 0; // 0 means t_len
    std::int64_t fixed_dataset_n = 0; // > 0 selects frozen-dataset ERM mode
    std::uint64_t seed = 0;
    std::int64_t trace_every = 100;
    std::int64_t snapshot_every = 0; // > 0 keeps periodic checkpoints in memory
    int threads = 2;
    double init_std = 0.02;
    // fixed-dataset stopping rule: stop when the best empirical risk has not
    // improved by tol over the last `patience` epochs
    std::int64_t max_epochs = 100000;
    double stop_tol = 1e-4;
    std::int64_t stop_patience = 10;

    enum class TaskMode { Pool, Fresh, FlippedID };
    TaskMode task_mode = TaskMode::Pool;

    std::int64_t effective_t_hi() const { return t_hi > 0 ? t_hi : t_len; }

    void validate() const {
        if (batch < 1) throw DomainError("train: batch must be >= 1");
        if (t_len < 1) throw DomainError("train: T must be >= 1");
        const std::int64_t hi = effective_t_hi();
        if (!(1 <= t_lo && t_lo <= hi && hi <= t_len))
            throw DomainError("train: need 1 <= t_lo <= t_hi <= T");
        if (task_mode == TaskMode::Pool && pool_size < 1)
            throw DomainError("train: pool_size must be >= 1");
    }
};

struct Checkpoint {
    ModelConfig model;
    ModelParams params;
    std::vector<Tensor> adam_m; // for_each_trainable order
    std::vector<Tensor> adam_v;
    std::int64_t step = 0;
    std::uint64_t seed = 0;
    std::string config_hash; // 32 raw bytes; empty until the CLI stamps it
};

struct TraceRow {
    std::int64_t step = 0;
    double train_loss = 0.0;
    double eval_loss = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<TraceRow> trace;
    std::vector<Checkpoint> snapshots;
    bool diverged = false;
    std::int64_t epochs_run = 0;       // fixed-dataset mode
    double final_train_risk = 0.0;     // fixed-dataset mode: exact empirical risk
};

// ---------------------------------------------------------------------------
// Loss over a batch
// ---------------------------------------------------------------------------

// Mean NLL over all sequences and positions t in [t_lo, t_hi] (1-indexed).
// Gradients (if requested) are w.r.t. the trainable tensors in enumeration
// order and are reduced over sequences in ascending sequence index.
struct BatchEval {
    double loss = 0.0;
    std::vector<Tensor> grads;
};

inline BatchEval batch_loss(const ModelParams& params, const ModelConfig& cfg,
                            const std::vector<PromptSequence>& batch,
                            const std::vector<std::int64_t>& pos_offsets, std::int64_t t_lo,
                            std::int64_t t_hi, bool with_grad, int threads) {
    const std::int64_t b = static_cast<std::int64_t>(batch.size());
    detail::require(pos_offsets.size() == batch.size(), "batch_loss: offsets size mismatch");
    std::vector<double> losses(static_cast<std::size_t>(b), 0.0);
    std::vector<std::vector<Tensor>> grads(static_cast<std::size_t>(b));

    parallel_for(b, threads, [&](std::int64_t i) {
        const PromptSequence& seq = batch[static_cast<std::size_t>(i)];
        const std::int64_t t_len = seq.length();
        const std::int64_t hi = std::min<std::int64_t>(t_hi, t_len);
        const std::int64_t count = hi - t_lo + 1;
        detail::require(count >= 1, "batch_loss: empty position mask");
        Tensor y = Tensor::vector(t_len);
        Tensor w = Tensor::vector(t_len);
        for (std::int64_t t = 0; t < t_len; ++t) {
            y[t] = seq.ys[t];
            w[t] = (t + 1 >= t_lo && t + 1 <= hi) ? 1.0 / static_cast<double>(count) : 0.0;
        }
        const Tensor content = token_content(seq, 0, t_len, true);
        ForwardResult res = forward_tokens(params, cfg, content,
                                           pos_offsets[static_cast<std::size_t>(i)], with_grad);
        Var loss = res.tape.gaussian_nll(res.y_hat, res.sigma, std::move(y), std::move(w));
        losses[static_cast<std::size_t>(i)] = res.tape.val(loss)[0];
        if (with_grad) {
            res.tape.backward(loss);
            auto& g = grads[static_cast<std::size_t>(i)];
            g.reserve(res.leaves.size());
            for (Var leaf : res.leaves) g.push_back(res.tape.grad(leaf));
        }
    });

    BatchEval out;
    for (std::int64_t i = 0; i < b; ++i) out.loss += losses[static_cast<std::size_t>(i)];
    out.loss /= static_cast<double>(b);
    if (with_grad) {
        out.grads = std::move(grads[0]);
        for (auto& g : out.grads) {
            for (std::int64_t k = 0; k < g.size(); ++k) g[k] /= static_cast<double>(b);
        }
        for (std::int64_t i = 1; i < b; ++i) {
            auto& gi = grads[static_cast<std::size_t>(i)];
            for (std::size_t j = 0; j < out.grads.size(); ++j)
                axpy(1.0 / static_cast<double>(b), gi[j], out.grads[j]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamHyper {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected update; `step` is the 1-based update count.
inline void adam_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                      std::vector<Tensor>& m, std::vector<Tensor>& v, const AdamHyper& hyper,
                      std::int64_t step) {
    detail::require(params.size() == grads.size() && params.size() == m.size() &&
                        params.size() == v.size(),
                    "adam_step: state size mismatch");
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
    for (std::size_t j = 0; j < params.size(); ++j) {
        Tensor& p = *params[j];
        const Tensor& g = grads[j];
        Tensor& mj = m[j];
        Tensor& vj = v[j];
        for (std::int64_t k = 0; k < p.size(); ++k) {
            mj[k] = hyper.beta1 * mj[k] + (1.0 - hyper.beta1) * g[k];
            vj[k] = hyper.beta2 * vj[k] + (1.0 - hyper.beta2) * g[k] * g[k];
            const double mhat = mj[k] / bc1;
            const double vhat = vj[k] / bc2;
            p[k] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
        }
    }
}

inline double global_grad_norm(const std::vector<Tensor>& grads) {
    double s = 0.0;
    for (const auto& g : grads)
        for (std::int64_t k = 0; k < g.size(); ++k) s += g[k] * g[k];
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Training drivers
// ---------------------------------------------------------------------------

namespace detail {

inline TaskParams draw_task(const TrainConfig& cfg, const PriorConfig& prior,
                            const TaskPool& pool, std::uint64_t step, std::int64_t i) {
    switch (cfg.task_mode) {
        case TrainConfig::TaskMode::Pool: {
            Rng rng(cfg.seed, "batch-task", step * static_cast<std::uint64_t>(cfg.batch) +
                                                static_cast<std::uint64_t>(i));
            return pool.tasks[rng.below(static_cast<std::uint64_t>(pool.size()))];
        }
        case TrainConfig::TaskMode::Fresh: {
            Rng rng(cfg.seed, "fresh-task", step * static_cast<std::uint64_t>(cfg.batch) +
                                                static_cast<std::uint64_t>(i));
            return sample_task(prior, rng);
        }
        case TrainConfig::TaskMode::FlippedID: {
            Rng rng(cfg.seed, "flip-task", step * static_cast<std::uint64_t>(cfg.batch) +
                                               static_cast<std::uint64_t>(i));
            FlippedRegionConfig fcfg;
            fcfg.mode = FlippedRegionConfig::Mode::ID;
            fcfg.d = prior.d;
            return sample_flipped_task(fcfg, rng);
        }
    }
    throw DomainError("draw_task: bad mode");
}

inline Checkpoint make_checkpoint(const ModelConfig& mcfg, const ModelParams& params,
                                  const std::vector<Tensor>& m, const std::vector<Tensor>& v,
                                  std::int64_t step, std::uint64_t seed) {
    Checkpoint ck;
    ck.model = mcfg;
    ck.params = params;
    ck.adam_m = m;
    ck.adam_v = v;
    ck.step = step;
    ck.seed = seed;
    return ck;
}

} // namespace detail

// Fresh-batch training against the task pool (or fresh/flipped tasks).
// `resume` continues a run bitwise as if it had never stopped.
inline TrainResult train(const TrainConfig& cfg, const ModelConfig& mcfg, const PriorConfig& prior,
                         const CovariateConfig& cov, const Checkpoint* resume = nullptr) {
    cfg.validate();
    mcfg.validate();
    prior.validate();

    TaskPool pool;
    if (cfg.task_mode == TrainConfig::TaskMode::Pool) {
        Rng pool_rng(cfg.seed, "pool", 0);
        pool = build_pool(prior, cfg.pool_size, pool_rng);
    }

    ModelParams params;
    std::vector<Tensor> m, v;
    std::int64_t start_step = 0;
    if (resume != nullptr) {
        params = resume->params;
        m = resume->adam_m;
        v = resume->adam_v;
        start_step = resume->step;
    } else {
        Rng init_rng(cfg.seed, "init", 0);
        params = init_params(mcfg, init_rng, "gaussian", cfg.init_std);
        params.for_each_trainable([&](const std::string&, Tensor& t) {
            m.emplace_back(t.shape());
            v.emplace_back(t.shape());
        });
    }
    std::vector<Tensor*> trainable;
    params.for_each_trainable([&](const std::string&, Tensor& t) { trainable.push_back(&t); });

    AdamHyper hyper{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};
    TrainResult result;

    std::vector<PromptSequence> batch(static_cast<std::size_t>(cfg.batch));
    std::vector<std::int64_t> offsets(static_cast<std::size_t>(cfg.batch), 0);

    for (std::int64_t step = start_step; step < cfg.steps; ++step) {
        const auto ustep = static_cast<std::uint64_t>(step);
        for (std::int64_t i = 0; i < cfg.batch; ++i) {
            const TaskParams task = detail::draw_task(cfg, prior, pool, ustep, i);
            Rng seq_rng(cfg.seed, "train-seq",
                        ustep * static_cast<std::uint64_t>(cfg.batch) + static_cast<std::uint64_t>(i));
            batch[static_cast<std::size_t>(i)] = sample_sequence(task, cov, cfg.t_len, seq_rng);
            offsets[static_cast<std::size_t>(i)] = sample_pos_offset(mcfg, seq_rng);
        }
        BatchEval eval = batch_loss(params, mcfg, batch, offsets, cfg.t_lo, cfg.effective_t_hi(),
                                    true, cfg.threads);
        if (!std::isfinite(eval.loss)) {
            result.checkpoint = detail::make_checkpoint(mcfg, params, m, v, step, cfg.seed);
            result.diverged = true;
            return result;
        }
        if (cfg.clip_norm > 0.0) {
            const double gn = global_grad_norm(eval.grads);
            if (gn > cfg.clip_norm) {
                const double sc = cfg.clip_norm / gn;
                for (auto& g : eval.grads)
                    for (std::int64_t k = 0; k < g.size(); ++k) g[k] *= sc;
            }
        }
        adam_step(trainable, eval.grads, m, v, hyper, step + 1);

        if (cfg.trace_every > 0 && (step % cfg.trace_every == 0 || step + 1 == cfg.steps)) {
            // Small fresh-task evaluation batch (tasks from the prior, not the pool).
            double eval_loss = 0.0;
            const std::int64_t n_eval = 8;
            std::vector<PromptSequence> eb(static_cast<std::size_t>(n_eval));
            std::vector<std::int64_t> eo(static_cast<std::size_t>(n_eval), 0);
            for (std::int64_t i = 0; i < n_eval; ++i) {
                Rng rng(cfg.seed, "trace-eval",
                        ustep * static_cast<std::uint64_t>(n_eval) + static_cast<std::uint64_t>(i));
                const TaskParams task = sample_task(prior, rng);
                eb[static_cast<std::size_t>(i)] = sample_sequence(task, cov, cfg.t_len, rng);
                eo[static_cast<std::size_t>(i)] = sample_pos_offset(mcfg, rng);
            }
            eval_loss = batch_loss(params, mcfg, eb, eo, cfg.t_lo, cfg.effective_t_hi(), false,
                                   cfg.threads)
                            .loss;
            result.trace.push_back(TraceRow{step, eval.loss, eval_loss});
        }
        if (cfg.snapshot_every > 0 &&
            ((step + 1) % cfg.snapshot_every == 0 || step + 1 == cfg.steps)) {
            result.snapshots.push_back(
                detail::make_checkpoint(mcfg, params, m, v, step + 1, cfg.seed));
        }
    }
    result.checkpoint = detail::make_checkpoint(mcfg, params, m, v, cfg.steps, cfg.seed);
    return result;
}

// Frozen-dataset ERM: generates n sequences once, then runs Adam epochs over
// them until the best full-dataset empirical risk stops improving.
inline TrainResult train_fixed_dataset(const TrainConfig& cfg, const ModelConfig& mcfg,
                                       const PriorConfig& prior, const CovariateConfig& cov) {
    cfg.validate();
    mcfg.validate();
    if (cfg.fixed_dataset_n < 1) throw DomainError("train_fixed_dataset: n must be >= 1");
    const std::int64_t n = cfg.fixed_dataset_n;

    std::vector<PromptSequence> data(static_cast<std::size_t>(n));
    std::vector<std::int64_t> offsets(static_cast<std::size_t>(n), 0);
    for (std::int64_t i = 0; i < n; ++i) {
        Rng rng(cfg.seed, "fixed-task", static_cast<std::uint64_t>(i));
        const TaskParams task = sample_task(prior, rng);
        Rng seq_rng(cfg.seed, "fixed-seq", static_cast<std::uint64_t>(i));
        data[static_cast<std::size_t>(i)] = sample_sequence(task, cov, cfg.t_len, seq_rng);
        offsets[static_cast<std::size_t>(i)] = sample_pos_offset(mcfg, seq_rng);
    }

    Rng init_rng(cfg.seed, "init", 0);
    ModelParams params = init_params(mcfg, init_rng, "gaussian", cfg.init_std);
    std::vector<Tensor> m, v;
    std::vector<Tensor*> trainable;
    params.for_each_trainable([&](const std::string&, Tensor& t) {
        m.emplace_back(t.shape());
        v.emplace_back(t.shape());
        trainable.push_back(&t);
    });
    AdamHyper hyper{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};

    const std::int64_t mb = std::min<std::int64_t>(cfg.batch, n);
    auto full_risk = [&]() {
        return batch_loss(params, mcfg, data, offsets, cfg.t_lo, cfg.effective_t_hi(), false,
                          cfg.threads)
            .loss;
    };

    TrainResult result;
    double best = 1e300;
    std::int64_t best_epoch = 0;
    std::int64_t adam_t = 0;
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    std::int64_t epoch = 0;
    for (; epoch < cfg.max_epochs; ++epoch) {
        Rng perm_rng(cfg.seed, "epoch-perm", static_cast<std::uint64_t>(epoch));
        for (std::int64_t i = n - 1; i > 0; --i) {
            const auto j = static_cast<std::int64_t>(perm_rng.below(static_cast<std::uint64_t>(i + 1)));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
        for (std::int64_t start = 0; start + mb <= n; start += mb) {
            std::vector<PromptSequence> batch;
            std::vector<std::int64_t> boff;
            batch.reserve(static_cast<std::size_t>(mb));
            for (std::int64_t i = start; i < start + mb; ++i) {
                batch.push_back(data[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
                boff.push_back(offsets[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
            }
            BatchEval eval = batch_loss(params, mcfg, batch, boff, cfg.t_lo, cfg.effective_t_hi(),
                                        true, cfg.threads);
            if (!std::isfinite(eval.loss)) {
                result.checkpoint =
                    detail::make_checkpoint(mcfg, params, m, v, adam_t, cfg.seed);
                result.diverged = true;
                return result;
            }
            if (cfg.clip_norm > 0.0) {
                const double gn = global_grad_norm(eval.grads);
                if (gn > cfg.clip_norm) {
                    const double sc = cfg.clip_norm / gn;
                    for (auto& g : eval.grads)
                        for (std::int64_t k = 0; k < g.size(); ++k) g[k] *= sc;
                }
            }
            adam_step(trainable, eval.grads, m, v, hyper, ++adam_t);
        }
        const double risk = full_risk();
        if (cfg.trace_every > 0 && epoch % cfg.trace_every == 0) {
            result.trace.push_back(TraceRow{epoch, risk, 0.0});
        }
        if (risk < best - cfg.stop_tol) {
            best = risk;
            best_epoch = epoch;
        } else if (epoch - best_epoch >= cfg.stop_patience) {
            break;
        }
    }
    result.checkpoint = detail::make_checkpoint(mcfg, params, m, v, adam_t, cfg.seed);
    result.epochs_run = epoch;
    result.final_train_risk = full_risk();
    return result;
}

} // namespace icluq
