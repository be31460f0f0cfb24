#pragma once

// Task, covariate, and prompt-sequence sampling for every training and
// evaluation distribution: the Normal-Inverse-Gamma task prior, the four
// covariate families, frozen task pools, and the flipped-region design.
//
// All samplers are pure given an explicit Rng, and every caller derives its
// Rng from (root seed, purpose, index), so sequences are reproducible
// independent of batching or threading.

#include <cstdint>
#include <stdexcept>
#include <variant>
#include <vector>

#include "icluq/rng.hpp"
#include "icluq/tensor.hpp"

namespace icluq {

struct PriorConfig {
    std::int64_t d = 8;
    double tau_shape = 20.0; // shape of the Gamma prior on the noise precision
    double tau_rate = 20.0;  // rate of the Gamma prior on the noise precision
    Tensor w_bar;            // defaults to all-ones of length d

    Tensor mean_weights() const {
        if (w_bar.size() == d) return w_bar;
        Tensor w = Tensor::vector(d);
        w.fill(1.0);
        return w;
    }

    void validate() const {
        if (d < 1) throw DomainError("prior: d must be >= 1");
        if (!(tau_shape > 1.0)) throw DomainError("prior: tau_shape must be > 1");
        if (!(tau_rate > 0.0)) throw DomainError("prior: tau_rate must be > 0");
        if (w_bar.size() != 0 && w_bar.size() != d) throw ShapeError("prior: w_bar length != d");
    }
};

struct TaskParams {
    Tensor w;     // weight vector, length d
    double sigma; // noise standard deviation, > 0
};

// Covariate distributions. Per-sequence parameters (lambda or the rotation)
// are drawn once per sequence.
struct Isotropic {
    double variance = 1.0;
};
struct FixedDiagonal {
    Tensor lambda; // per-coordinate variances
};
struct MetaUniform {
    double lo = 0.0;
    double hi = 2.0;
};
struct RotatedDecreasing {}; // N(0, U diag(d/i) U^T), fresh Haar U per sequence

using CovariateConfig = std::variant<Isotropic, FixedDiagonal, MetaUniform, RotatedDecreasing>;

struct TaskPool {
    std::vector<TaskParams> tasks;
    std::int64_t size() const { return static_cast<std::int64_t>(tasks.size()); }
};

struct PromptSequence {
    Tensor xs; // [T x d], row t is x_{t+1}
    Tensor ys; // [T]
    TaskParams task;
    std::int64_t length() const { return ys.size(); }
    std::int64_t dim() const { return xs.cols(); }
};

struct FlippedRegionConfig {
    enum class Mode { ID, OOD };
    Mode mode = Mode::ID;
    std::int64_t d = 8;
};

// tau ~ Gamma(shape, rate), sigma = 1/sqrt(tau); w | sigma ~ N(w_bar, sigma^2 I).
inline TaskParams sample_task(const PriorConfig& prior, Rng& rng) {
    const double tau = rng.gamma(prior.tau_shape, prior.tau_rate);
    const double sigma = 1.0 / std::sqrt(tau);
    Tensor w = prior.mean_weights();
    for (std::int64_t i = 0; i < prior.d; ++i) w[i] += sigma * rng.normal();
    return TaskParams{std::move(w), sigma};
}

inline TaskPool build_pool(const PriorConfig& prior, std::int64_t n, Rng& rng) {
    if (n < 1) throw DomainError("build_pool: N must be >= 1");
    TaskPool pool;
    pool.tasks.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) pool.tasks.push_back(sample_task(prior, rng));
    return pool;
}

// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the R
// diagonal kept positive. Gram-Schmidt normalizes against the column norm, so
// R(j,j) > 0 holds by construction and no explicit sign flip is needed.
inline Tensor random_orthogonal(std::int64_t d, Rng& rng) {
    const Tensor a = rng.normal_matrix(d, d);
    Tensor q(d, d);
    for (std::int64_t j = 0; j < d; ++j) {
        Tensor v = Tensor::vector(d);
        for (std::int64_t i = 0; i < d; ++i) v[i] = a(i, j);
        // Two orthogonalization passes; plain MGS drifts for unlucky draws.
        for (int pass = 0; pass < 2; ++pass) {
            for (std::int64_t k = 0; k < j; ++k) {
                double proj = 0.0;
                for (std::int64_t i = 0; i < d; ++i) proj += q(i, k) * v[i];
                for (std::int64_t i = 0; i < d; ++i) v[i] -= proj * q(i, k);
            }
        }
        double nrm = 0.0;
        for (std::int64_t i = 0; i < d; ++i) nrm += v[i] * v[i];
        nrm = std::sqrt(nrm);
        for (std::int64_t i = 0; i < d; ++i) q(i, j) = v[i] / nrm;
    }
    return q;
}

// Draw the per-sequence covariate root: X ~ N(0, C) realized as X = z * A^T
// with C = A A^T. Returns the [T x d] covariate block.
inline Tensor sample_covariates(const CovariateConfig& cov, std::int64_t t_len, std::int64_t d,
                                Rng& rng) {
    Tensor xs(t_len, d);
    if (const auto* iso = std::get_if<Isotropic>(&cov)) {
        const double s = std::sqrt(iso->variance);
        for (std::int64_t i = 0; i < xs.size(); ++i) xs[i] = s * rng.normal();
        return xs;
    }
    if (const auto* fd = std::get_if<FixedDiagonal>(&cov)) {
        if (fd->lambda.size() != d) throw ShapeError("FixedDiagonal: lambda length != d");
        Tensor sd = Tensor::vector(d);
        for (std::int64_t j = 0; j < d; ++j) {
            if (fd->lambda[j] < 0.0) throw DomainError("FixedDiagonal: negative variance");
            sd[j] = std::sqrt(fd->lambda[j]);
        }
        for (std::int64_t t = 0; t < t_len; ++t)
            for (std::int64_t j = 0; j < d; ++j) xs(t, j) = sd[j] * rng.normal();
        return xs;
    }
    if (const auto* mu = std::get_if<MetaUniform>(&cov)) {
        Tensor sd = Tensor::vector(d);
        for (std::int64_t j = 0; j < d; ++j) sd[j] = std::sqrt(rng.uniform(mu->lo, mu->hi));
        for (std::int64_t t = 0; t < t_len; ++t)
            for (std::int64_t j = 0; j < d; ++j) xs(t, j) = sd[j] * rng.normal();
        return xs;
    }
    // RotatedDecreasing: N(0, U diag(d/i) U^T); x = U diag(sqrt(d/i)) z.
    const Tensor u = random_orthogonal(d, rng);
    Tensor sd = Tensor::vector(d);
    for (std::int64_t j = 0; j < d; ++j) sd[j] = std::sqrt(static_cast<double>(d) / (j + 1));
    for (std::int64_t t = 0; t < t_len; ++t) {
        Tensor z = Tensor::vector(d);
        for (std::int64_t j = 0; j < d; ++j) z[j] = sd[j] * rng.normal();
        for (std::int64_t i = 0; i < d; ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < d; ++j) s += u(i, j) * z[j];
            xs(t, i) = s;
        }
    }
    return xs;
}

// Fixed diagonal families used by the covariate-shift suite.
inline FixedDiagonal decreasing_diagonal(std::int64_t d) {
    Tensor l = Tensor::vector(d);
    for (std::int64_t i = 0; i < d; ++i) l[i] = static_cast<double>(d) / (i + 1);
    return FixedDiagonal{std::move(l)};
}

inline FixedDiagonal shrinking_diagonal(std::int64_t d) {
    Tensor l = Tensor::vector(d);
    for (std::int64_t i = 0; i < d; ++i)
        l[i] = static_cast<double>(d) / (static_cast<double>(i + 1) * (i + 1));
    return FixedDiagonal{std::move(l)};
}

// y_t = w^T x_t + sigma * eps_t with eps ~ N(0,1).
inline PromptSequence sample_sequence(const TaskParams& task, const CovariateConfig& cov,
                                      std::int64_t t_len, Rng& rng) {
    if (t_len < 1) throw DomainError("sample_sequence: T must be >= 1");
    const std::int64_t d = task.w.size();
    PromptSequence seq;
    seq.xs = sample_covariates(cov, t_len, d, rng);
    seq.ys = Tensor::vector(t_len);
    for (std::int64_t t = 0; t < t_len; ++t) {
        const double* x = seq.xs.row_ptr(t);
        double mean = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += task.w[j] * x[j];
        seq.ys[t] = mean + task.sigma * rng.normal();
    }
    seq.task = task;
    return seq;
}

// Flipped-region tasks: w = +|beta| (W1) or -|beta| (W2) with beta ~ N(0, I);
// sigma uniform over the two intervals of the group paired with the block.
// ID pairs (W1,G1) or (W2,G2); OOD pairs (W1,G2) or (W2,G1).
inline TaskParams sample_flipped_task(const FlippedRegionConfig& cfg, Rng& rng) {
    const bool block_w1 = rng.uniform() < 0.5;
    const bool group_g1 = (cfg.mode == FlippedRegionConfig::Mode::ID) ? block_w1 : !block_w1;

    Tensor w = Tensor::vector(cfg.d);
    for (std::int64_t i = 0; i < cfg.d; ++i) {
        const double b = std::abs(rng.normal());
        w[i] = block_w1 ? b : -b;
    }
    const bool first_interval = rng.uniform() < 0.5;
    double lo, hi;
    if (group_g1) {
        lo = first_interval ? 0.1 : 0.5;
        hi = first_interval ? 0.3 : 0.7;
    } else {
        lo = first_interval ? 0.3 : 0.7;
        hi = first_interval ? 0.5 : 0.9;
    }
    const double sigma = rng.uniform(lo, hi);
    return TaskParams{std::move(w), sigma};
}

// Membership classification for the flipped experiment's sigma groups.
// Group 1 is [0.1,0.3] U [0.5,0.7]; group 2 is [0.3,0.5] U [0.7,0.9].
enum class SigmaGroup { G1, G2, Outside };

inline SigmaGroup sigma_group_raw(double s) {
    if ((s >= 0.1 && s <= 0.3) || (s >= 0.5 && s <= 0.7)) return SigmaGroup::G1;
    if ((s > 0.3 && s < 0.5) || (s > 0.7 && s <= 0.9)) return SigmaGroup::G2;
    return SigmaGroup::Outside;
}

// Values outside both groups resolve to the nearest interval's group.
inline SigmaGroup sigma_group_resolved(double s) {
    const SigmaGroup raw = sigma_group_raw(s);
    if (raw != SigmaGroup::Outside) return raw;
    struct Iv {
        double lo, hi;
        SigmaGroup g;
    };
    static constexpr Iv ivs[] = {{0.1, 0.3, SigmaGroup::G1},
                                 {0.5, 0.7, SigmaGroup::G1},
                                 {0.3, 0.5, SigmaGroup::G2},
                                 {0.7, 0.9, SigmaGroup::G2}};
    double best = 1e300;
    SigmaGroup bg = SigmaGroup::G1;
    for (const auto& iv : ivs) {
        const double dist = s < iv.lo ? iv.lo - s : (s > iv.hi ? s - iv.hi : 0.0);
        if (dist < best) {
            best = dist;
            bg = iv.g;
        }
    }
    return bg;
}

} // namespace icluq
