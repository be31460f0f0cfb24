#pragma once

// Ridge regression and ordinary least squares with residual-based
// uncertainty: sigma_hat is the root-mean-square residual on the in-context
// samples (divisor max(#pairs, 1)). With no context the prediction is (0, 1).

#include <cmath>
#include <cstdint>

#include "icluq/predict.hpp"
#include "icluq/tensor.hpp"

namespace icluq {

struct RidgeConfig {
    double lambda = 1.0;

    void validate() const {
        if (lambda < 0.0) throw DomainError("ridge: lambda must be >= 0");
    }
};

namespace detail {

inline double rms_residual(const PromptSequence& seq, std::int64_t m, const Tensor& w_fit,
                           double floor_val) {
    double ss = 0.0;
    for (std::int64_t s = 0; s < m; ++s) {
        double f = 0.0;
        for (std::int64_t j = 0; j < seq.dim(); ++j) f += w_fit[j] * seq.xs(s, j);
        const double r = seq.ys[s] - f;
        ss += r * r;
    }
    const double denom = static_cast<double>(std::max<std::int64_t>(m, 1));
    return std::max(std::sqrt(ss / denom), floor_val);
}

} // namespace detail

// Ridge fit on the first m pairs of seq, queried at x.
inline Prediction ridge_predict(const PromptSequence& seq, std::int64_t m, const Tensor& x,
                                const RidgeConfig& cfg = {}) {
    cfg.validate();
    if (m <= 0) return Prediction{0.0, 1.0};
    const std::int64_t d = seq.dim();
    Tensor gram = Tensor::identity(d);
    for (std::int64_t i = 0; i < d; ++i) gram(i, i) = cfg.lambda;
    Tensor xty = Tensor::vector(d);
    for (std::int64_t s = 0; s < m; ++s) {
        const double* xs = seq.xs.row_ptr(s);
        for (std::int64_t i = 0; i < d; ++i) {
            xty[i] += xs[i] * seq.ys[s];
            for (std::int64_t j = 0; j < d; ++j) gram(i, j) += xs[i] * xs[j];
        }
    }
    const Tensor w_fit = spd_solve(gram, xty);
    return Prediction{dot(w_fit, x), detail::rms_residual(seq, m, w_fit, 0.0)};
}

// Minimum-norm least squares on the first m pairs; singular directions of the
// Gram matrix (singular values of X below 1e-10) are dropped. sigma_hat is
// floored at 1e-6 so the loss stays finite in the interpolation regime.
inline Prediction ols_predict(const PromptSequence& seq, std::int64_t m, const Tensor& x) {
    if (m <= 0) return Prediction{0.0, 1.0};
    const std::int64_t d = seq.dim();
    Tensor gram(d, d);
    Tensor xty = Tensor::vector(d);
    for (std::int64_t s = 0; s < m; ++s) {
        const double* xs = seq.xs.row_ptr(s);
        for (std::int64_t i = 0; i < d; ++i) {
            xty[i] += xs[i] * seq.ys[s];
            for (std::int64_t j = 0; j < d; ++j) gram(i, j) += xs[i] * xs[j];
        }
    }
    const SymEig eig = sym_eig(gram);
    // Singular values of X are sqrt of the Gram eigenvalues.
    const double sv_tol = 1e-10;
    Tensor w_fit = Tensor::vector(d);
    for (std::int64_t k = 0; k < d; ++k) {
        const double lam = eig.values[k];
        if (lam <= sv_tol * sv_tol) continue;
        double proj = 0.0;
        for (std::int64_t i = 0; i < d; ++i) proj += eig.vectors(i, k) * xty[i];
        const double coef = proj / lam;
        for (std::int64_t i = 0; i < d; ++i) w_fit[i] += coef * eig.vectors(i, k);
    }
    return Prediction{dot(w_fit, x), detail::rms_residual(seq, m, w_fit, 1e-6)};
}

inline SequencePredictor ridge_predictor(RidgeConfig cfg = {}) {
    return [cfg](const PromptSequence& seq) {
        std::vector<Prediction> out;
        out.reserve(static_cast<std::size_t>(seq.length()));
        Tensor x = Tensor::vector(seq.dim());
        for (std::int64_t t = 0; t < seq.length(); ++t) {
            for (std::int64_t j = 0; j < seq.dim(); ++j) x[j] = seq.xs(t, j);
            out.push_back(ridge_predict(seq, t, x, cfg));
        }
        return out;
    };
}

inline SequencePredictor ols_predictor() {
    return [](const PromptSequence& seq) {
        std::vector<Prediction> out;
        out.reserve(static_cast<std::size_t>(seq.length()));
        Tensor x = Tensor::vector(seq.dim());
        for (std::int64_t t = 0; t < seq.length(); ++t) {
            for (std::int64_t j = 0; j < seq.dim(); ++j) x[j] = seq.xs(t, j);
            out.push_back(ols_predict(seq, t, x));
        }
        return out;
    };
}

} // namespace icluq
