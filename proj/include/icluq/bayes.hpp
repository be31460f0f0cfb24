#pragma once

// Exact Bayes-optimal mean/uncertainty prediction under the
// Normal-Inverse-Gamma task prior:
//
//   tau ~ Gamma(tau_shape, tau_rate), sigma^2 = 1/tau,
//   w | sigma ~ N(w_bar, sigma^2 I_d),  y = w^T x + sigma eps.
//
// Posterior after observing pairs (x_1,y_1..x_m,y_m):
//   Lambda_m = I + sum x x^T,  Sigma_m = Lambda_m^{-1},
//   w_m = Sigma_m (w_bar + sum x y),
//   a_m = tau_shape + m/2,
//   b_m = tau_rate + (sum y^2 + w_bar^T w_bar - c^T w_m)/2, c = w_bar + sum x y.
//
// Predictive: y* = w_m^T x,  sigma*^2 = b_m/(a_m - 1) * (x^T Sigma_m x + 1).
//
// Sigma is maintained by rank-one Sherman-Morrison updates with a full
// re-inversion every 64 updates to bound drift.

#include <cmath>
#include <cstdint>
#include <vector>

#include "icluq/predict.hpp"
#include "icluq/rng.hpp"
#include "icluq/taskgen.hpp"
#include "icluq/tensor.hpp"

namespace icluq {

struct PosteriorState {
    Tensor sigma_mat;  // posterior covariance shape matrix Sigma_t (d x d)
    Tensor lambda_mat; // precision Lambda_t = Sigma_t^{-1}, kept for re-inversion
    Tensor w;          // posterior mean weights
    double a = 0.0;    // Inv-Gamma shape
    double b = 0.0;    // Inv-Gamma scale
    std::int64_t t_obs = 0;

    // running sufficient statistics
    Tensor c;          // w_bar + sum x_s y_s
    double sum_y2 = 0.0;
    Tensor w_bar;
    double w_bar_sq = 0.0;
    double b0 = 0.0;
    std::int64_t since_inversion = 0;
};

inline PosteriorState init_prior(const PriorConfig& prior) {
    prior.validate();
    PosteriorState st;
    st.sigma_mat = Tensor::identity(prior.d);
    st.lambda_mat = Tensor::identity(prior.d);
    st.w_bar = prior.mean_weights();
    st.w = st.w_bar;
    st.c = st.w_bar;
    st.a = prior.tau_shape;
    st.b = prior.tau_rate;
    st.b0 = prior.tau_rate;
    st.w_bar_sq = dot(st.w_bar, st.w_bar);
    return st;
}

inline void update_inplace(PosteriorState& st, const Tensor& x, double y) {
    const std::int64_t d = st.w.size();
    // Lambda += x x^T
    for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t j = 0; j < d; ++j) st.lambda_mat(i, j) += x[i] * x[j];

    if (++st.since_inversion >= 64) {
        st.sigma_mat = spd_inverse(st.lambda_mat);
        st.since_inversion = 0;
    } else {
        // Sherman-Morrison: Sigma -= (Sigma x)(Sigma x)^T / (1 + x^T Sigma x)
        Tensor sx = matvec(st.sigma_mat, x);
        const double denom = 1.0 + dot(x, sx);
        for (std::int64_t i = 0; i < d; ++i)
            for (std::int64_t j = 0; j < d; ++j) st.sigma_mat(i, j) -= sx[i] * sx[j] / denom;
    }

    axpy(y, x, st.c);
    st.sum_y2 += y * y;
    st.w = matvec(st.sigma_mat, st.c);
    st.a += 0.5;
    st.b = st.b0 + 0.5 * (st.sum_y2 + st.w_bar_sq - dot(st.c, st.w));
    ++st.t_obs;
}

inline PosteriorState update(PosteriorState st, const Tensor& x, double y) {
    update_inplace(st, x, y);
    return st;
}

inline Prediction predict(const PosteriorState& st, const Tensor& x) {
    if (!(st.a > 1.0)) throw DomainError("predict: posterior shape <= 1, moment undefined");
    const double y_hat = dot(st.w, x);
    const Tensor sx = matvec(st.sigma_mat, x);
    const double quad = dot(x, sx);
    const double s2 = st.b / (st.a - 1.0) * (quad + 1.0);
    return Prediction{y_hat, std::sqrt(s2)};
}

// Prediction from only the last min(S, t-1) pairs of the history, i.e. the
// truncated Bayes optimum over H_t^S.
inline Prediction truncated_predict(const PromptSequence& seq, std::int64_t t_pairs,
                                    std::int64_t window, const Tensor& x,
                                    const PriorConfig& prior) {
    if (window < 0) throw DomainError("truncated_predict: window must be >= 0");
    PosteriorState st = init_prior(prior);
    const std::int64_t use = std::min<std::int64_t>(window, t_pairs);
    for (std::int64_t s = t_pairs - use; s < t_pairs; ++s) {
        Tensor x_s = Tensor::vector(seq.dim());
        for (std::int64_t j = 0; j < seq.dim(); ++j) x_s[j] = seq.xs(s, j);
        update_inplace(st, x_s, seq.ys[s]);
    }
    return predict(st, x);
}

// Sequence predictor for the full-history oracle.
inline SequencePredictor bayes_predictor(PriorConfig prior) {
    return [prior](const PromptSequence& seq) {
        std::vector<Prediction> out;
        out.reserve(static_cast<std::size_t>(seq.length()));
        PosteriorState st = init_prior(prior);
        Tensor x = Tensor::vector(seq.dim());
        for (std::int64_t t = 0; t < seq.length(); ++t) {
            for (std::int64_t j = 0; j < seq.dim(); ++j) x[j] = seq.xs(t, j);
            out.push_back(predict(st, x));
            update_inplace(st, x, seq.ys[t]);
        }
        return out;
    };
}

// Sequence predictor for the truncated oracle with window S. Maintaining the
// posterior over a sliding window is done by recomputation from the window
// start (downdating would defeat the oracle's independence).
inline SequencePredictor truncated_bayes_predictor(PriorConfig prior, std::int64_t window) {
    return [prior, window](const PromptSequence& seq) {
        std::vector<Prediction> out;
        out.reserve(static_cast<std::size_t>(seq.length()));
        Tensor x = Tensor::vector(seq.dim());
        for (std::int64_t t = 0; t < seq.length(); ++t) {
            for (std::int64_t j = 0; j < seq.dim(); ++j) x[j] = seq.xs(t, j);
            out.push_back(truncated_predict(seq, t, window, x, prior));
        }
        return out;
    };
}

// ---------------------------------------------------------------------------
// Monte-Carlo risk estimation
// ---------------------------------------------------------------------------

struct RiskEstimate {
    Tensor mean;   // [T] per-position mean loss
    Tensor stderr; // [T]
};

// Average nll_loss over n_mc freshly sampled sequences per position. Tasks
// are drawn from the prior itself (not a pool).
inline RiskEstimate mc_risk(const SequencePredictor& predictor, const PriorConfig& prior,
                            const CovariateConfig& cov, std::int64_t t_len, std::int64_t n_mc,
                            std::uint64_t seed, std::string_view stream = "mc_risk") {
    if (n_mc < 1) throw DomainError("mc_risk: n_mc must be >= 1");
    Tensor sum = Tensor::vector(t_len);
    Tensor sumsq = Tensor::vector(t_len);
    for (std::int64_t i = 0; i < n_mc; ++i) {
        Rng rng(seed, stream, static_cast<std::uint64_t>(i));
        const TaskParams task = sample_task(prior, rng);
        const PromptSequence seq = sample_sequence(task, cov, t_len, rng);
        const std::vector<Prediction> preds = predictor(seq);
        for (std::int64_t t = 0; t < t_len; ++t) {
            const double l = nll_loss(preds[static_cast<std::size_t>(t)], seq.ys[t]);
            sum[t] += l;
            sumsq[t] += l * l;
        }
    }
    RiskEstimate est{Tensor::vector(t_len), Tensor::vector(t_len)};
    for (std::int64_t t = 0; t < t_len; ++t) {
        const double m = sum[t] / static_cast<double>(n_mc);
        est.mean[t] = m;
        const double var = std::max(0.0, sumsq[t] / static_cast<double>(n_mc) - m * m);
        est.stderr[t] = std::sqrt(var / static_cast<double>(n_mc));
    }
    return est;
}

// ---------------------------------------------------------------------------
// Brute-force grid oracle (d = 1)
// ---------------------------------------------------------------------------

struct GridSpec {
    std::int64_t n_w = 1201;
    std::int64_t n_v = 1201;
    double w_half_range = 0.0; // 0: choose from prior + data scale
    double v_log_lo = 0.0;     // 0: choose from prior scale
    double v_log_hi = 0.0;
};

// Numerically integrates the joint posterior of (w, sigma^2) on a 2-D grid
// and returns the posterior-predictive mean and standard deviation at x.
// Entirely independent of the closed-form path above.
inline Prediction grid_oracle_1d(const PromptSequence& seq, std::int64_t t_pairs, double x,
                                 const PriorConfig& prior, GridSpec spec = {}) {
    if (prior.d != 1) throw DomainError("grid_oracle_1d: d must be 1");
    const double a0 = prior.tau_shape;
    const double b0 = prior.tau_rate;
    const double wbar = prior.mean_weights()[0];

    double ymax = 1.0, xmax = 1.0;
    for (std::int64_t s = 0; s < t_pairs; ++s) {
        ymax = std::max(ymax, std::abs(seq.ys[s]));
        xmax = std::max(xmax, std::abs(seq.xs(s, 0)));
    }
    const double prior_sd = std::sqrt(b0 / (a0 - 1.0));
    if (spec.w_half_range <= 0.0) spec.w_half_range = 12.0 * prior_sd + 6.0 * ymax;
    if (spec.v_log_lo >= spec.v_log_hi) {
        const double v_scale = b0 / a0;
        spec.v_log_lo = std::log(v_scale) - 9.0;
        spec.v_log_hi = std::log(std::max(v_scale, ymax * ymax * (xmax + 1.0))) + 9.0;
    }

    std::vector<double> wg(static_cast<std::size_t>(spec.n_w));
    for (std::int64_t i = 0; i < spec.n_w; ++i)
        wg[static_cast<std::size_t>(i)] =
            wbar - spec.w_half_range +
            2.0 * spec.w_half_range * (static_cast<double>(i) + 0.5) / static_cast<double>(spec.n_w);
    std::vector<double> vg(static_cast<std::size_t>(spec.n_v));
    for (std::int64_t j = 0; j < spec.n_v; ++j)
        vg[static_cast<std::size_t>(j)] = std::exp(
            spec.v_log_lo + (spec.v_log_hi - spec.v_log_lo) * (static_cast<double>(j) + 0.5) /
                                static_cast<double>(spec.n_v));

    // log posterior density over (w, v), up to a constant; the log-v grid
    // carries a Jacobian factor v.
    std::vector<double> logp(static_cast<std::size_t>(spec.n_w * spec.n_v));
    double logp_max = -1e300;
    for (std::int64_t j = 0; j < spec.n_v; ++j) {
        const double v = vg[static_cast<std::size_t>(j)];
        const double base = -(a0 + 1.0) * std::log(v) - b0 / v - 0.5 * std::log(v) -
                            0.5 * static_cast<double>(t_pairs) * std::log(v) + std::log(v);
        for (std::int64_t i = 0; i < spec.n_w; ++i) {
            const double w = wg[static_cast<std::size_t>(i)];
            double quad = (w - wbar) * (w - wbar);
            for (std::int64_t s = 0; s < t_pairs; ++s) {
                const double r = seq.ys[s] - w * seq.xs(s, 0);
                quad += r * r;
            }
            const double lp = base - 0.5 * quad / v;
            logp[static_cast<std::size_t>(j * spec.n_w + i)] = lp;
            if (lp > logp_max) logp_max = lp;
        }
    }

    double z = 0.0, ew = 0.0, ew2 = 0.0, ev = 0.0;
    for (std::int64_t j = 0; j < spec.n_v; ++j) {
        const double v = vg[static_cast<std::size_t>(j)];
        for (std::int64_t i = 0; i < spec.n_w; ++i) {
            const double p = std::exp(logp[static_cast<std::size_t>(j * spec.n_w + i)] - logp_max);
            const double w = wg[static_cast<std::size_t>(i)];
            z += p;
            ew += p * w;
            ew2 += p * w * w;
            ev += p * v;
        }
    }
    ew /= z;
    ew2 /= z;
    ev /= z;
    const double var_w = std::max(0.0, ew2 - ew * ew);
    return Prediction{ew * x, std::sqrt(x * x * var_w + ev)};
}

} // namespace icluq
