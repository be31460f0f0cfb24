#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "icluq/taskgen.hpp"

using namespace icluq;

namespace {

// E[sigma] = sqrt(rate) * Gamma(shape - 1/2) / Gamma(shape) for
// tau ~ Gamma(shape, rate), sigma = 1/sqrt(tau).
double analytic_mean_sigma(double shape, double rate) {
    return std::exp(0.5 * std::log(rate) + std::lgamma(shape - 0.5) - std::lgamma(shape));
}

} // namespace

TEST_CASE("sample_task matches the analytic prior mean of sigma") {
    struct Case {
        double shape, rate, about;
    };
    // The analytic means are 1.0193 / 0.5024 / 2.0075 / 4.0151; the paper
    // rounds them to "around 1 / 0.5 / 2 / 4".
    const Case cases[] = {{20, 20, 1.0}, {80, 20, 0.5}, {100, 400, 2.0}, {100, 1600, 4.0}};
    for (const auto& c : cases) {
        PriorConfig prior;
        prior.tau_shape = c.shape;
        prior.tau_rate = c.rate;
        const double expected = analytic_mean_sigma(c.shape, c.rate);
        CHECK(std::abs(expected - c.about) / c.about < 0.05);
        double sum = 0.0;
        const std::int64_t n = 100000;
        Rng rng(17, "prior-mean", static_cast<std::uint64_t>(c.shape));
        for (std::int64_t i = 0; i < n; ++i) sum += sample_task(prior, rng).sigma;
        const double mc = sum / static_cast<double>(n);
        CHECK(std::abs(mc - expected) / expected < 0.02);
    }
}

TEST_CASE("conditional weight law: Cov(w | sigma) = sigma^2 I") {
    PriorConfig prior;
    prior.d = 4;
    // Freeze sigma by conditioning: draw tasks, bucket by sigma, and check the
    // normalized deviations w - w_bar share unit covariance after dividing by
    // sigma.
    Rng rng(23, "condw", 0);
    const std::int64_t n = 100000;
    Tensor cov(prior.d, prior.d);
    for (std::int64_t i = 0; i < n; ++i) {
        const TaskParams task = sample_task(prior, rng);
        for (std::int64_t a = 0; a < prior.d; ++a)
            for (std::int64_t b = 0; b < prior.d; ++b)
                cov(a, b) += (task.w[a] - 1.0) * (task.w[b] - 1.0) / (task.sigma * task.sigma);
    }
    for (std::int64_t a = 0; a < prior.d; ++a)
        for (std::int64_t b = 0; b < prior.d; ++b) {
            const double v = cov(a, b) / static_cast<double>(n);
            if (a == b) {
                CHECK(std::abs(v - 1.0) < 0.05);
            } else {
                CHECK(std::abs(v) < 0.05);
            }
        }
}

TEST_CASE("build_pool sizes and determinism") {
    PriorConfig prior;
    Rng rng(5, "pool", 0);
    const TaskPool pool = build_pool(prior, 4096, rng);
    CHECK(pool.size() == 4096);
    for (const auto& t : pool.tasks) CHECK(t.sigma > 0.0);

    Rng rng2(5, "pool", 0);
    const TaskPool pool2 = build_pool(prior, 4096, rng2);
    CHECK(pool.tasks[17].sigma == pool2.tasks[17].sigma);
    CHECK(pool.tasks[4000].w[3] == pool2.tasks[4000].w[3]);

    Rng rng3(5, "pool-one", 0);
    CHECK(build_pool(prior, 1, rng3).size() == 1);
    CHECK_THROWS_AS(build_pool(prior, 0, rng3), DomainError);
}

TEST_CASE("sample_sequence noiseless case and reproducibility") {
    TaskParams task;
    task.w = Tensor::vector(3);
    task.w[0] = 1.0;
    task.sigma = 1e-300; // sigma must stay positive; effectively noiseless
    (void)task;

    // Noiseless y follows w^T x exactly when sigma -> 0.
    PromptSequence seq;
    {
        TaskParams t2;
        t2.w = Tensor::vector(2);
        t2.w[0] = 2.0;
        t2.w[1] = -1.0;
        t2.sigma = 1e-12;
        Rng rng(3, "seq", 0);
        seq = sample_sequence(t2, Isotropic{1.0}, 16, rng);
        for (std::int64_t t = 0; t < 16; ++t) {
            const double mean = 2.0 * seq.xs(t, 0) - seq.xs(t, 1);
            CHECK(std::abs(seq.ys[t] - mean) < 1e-9);
        }
    }
    // Bit-reproducible under the same substream.
    {
        TaskParams t3;
        t3.w = Tensor::vector(2);
        t3.sigma = 0.7;
        Rng a(9, "seq", 4);
        Rng b(9, "seq", 4);
        const PromptSequence s1 = sample_sequence(t3, MetaUniform{0.0, 2.0}, 8, a);
        const PromptSequence s2 = sample_sequence(t3, MetaUniform{0.0, 2.0}, 8, b);
        CHECK(max_abs_diff(s1.xs, s2.xs) == 0.0);
        CHECK(max_abs_diff(s1.ys, s2.ys) == 0.0);
    }
}

TEST_CASE("covariate families produce the right second moments") {
    const std::int64_t d = 8;
    SECTION("isotropic unit covariance") {
        Rng rng(31, "cov-iso", 0);
        Tensor cov(d, d);
        const std::int64_t n = 100000;
        TaskParams task;
        task.w = Tensor::vector(d);
        task.sigma = 1.0;
        const Tensor xs = sample_covariates(Isotropic{1.0}, n, d, rng);
        for (std::int64_t t = 0; t < n; ++t)
            for (std::int64_t a = 0; a < d; ++a)
                for (std::int64_t b = a; b < d; ++b) cov(a, b) += xs(t, a) * xs(t, b);
        for (std::int64_t a = 0; a < d; ++a)
            for (std::int64_t b = a; b < d; ++b) {
                const double v = cov(a, b) / static_cast<double>(n);
                CHECK(std::abs(v - (a == b ? 1.0 : 0.0)) < 0.05);
            }
    }
    SECTION("meta-uniform marginal variance is E[lambda] = 1") {
        const std::int64_t n_seq = 4000, t_len = 25;
        double sum2 = 0.0;
        std::int64_t count = 0;
        for (std::int64_t i = 0; i < n_seq; ++i) {
            Rng rng(37, "cov-meta", static_cast<std::uint64_t>(i));
            const Tensor xs = sample_covariates(MetaUniform{0.0, 2.0}, t_len, d, rng);
            for (std::int64_t t = 0; t < t_len; ++t) {
                sum2 += xs(t, 0) * xs(t, 0);
                ++count;
            }
        }
        CHECK(std::abs(sum2 / static_cast<double>(count) - 1.0) < 0.05);
    }
    SECTION("fixed decreasing diagonal variances are monotone") {
        Rng rng(41, "cov-dec", 0);
        const Tensor xs = sample_covariates(decreasing_diagonal(d), 200000, d, rng);
        double prev = 1e300;
        for (std::int64_t j = 0; j < d; ++j) {
            double v = 0.0;
            for (std::int64_t t = 0; t < xs.rows(); ++t) v += xs(t, j) * xs(t, j);
            v /= static_cast<double>(xs.rows());
            CHECK(v < prev);
            prev = v;
        }
    }
}

TEST_CASE("random_orthogonal is orthogonal with unit determinant magnitude") {
    SECTION("d = 1 gives a sign") {
        int plus = 0, minus = 0;
        for (int i = 0; i < 64; ++i) {
            Rng rng(43, "orth1", static_cast<std::uint64_t>(i));
            const Tensor u = random_orthogonal(1, rng);
            CHECK(std::abs(std::abs(u(0, 0)) - 1.0) < 1e-12);
            (u(0, 0) > 0 ? plus : minus)++;
        }
        CHECK(plus > 0);
        CHECK(minus > 0);
    }
    SECTION("U^T U = I and |det U| = 1 at d = 8") {
        for (int i = 0; i < 20; ++i) {
            Rng rng(47, "orth8", static_cast<std::uint64_t>(i));
            const Tensor u = random_orthogonal(8, rng);
            CHECK(max_abs_diff(matmul_tn(u, u), Tensor::identity(8)) < 1e-10);
            // determinant via the Cholesky of U^T U is 1; use LU-free proxy:
            // product of column norms after projection is 1 for orthogonal U,
            // so check |det| through the eigenvalues of U^T U instead.
            const SymEig e = sym_eig(matmul_tn(u, u));
            double logdet = 0.0;
            for (std::int64_t k = 0; k < 8; ++k) logdet += std::log(e.values[k]);
            CHECK(std::abs(logdet) < 1e-8);
        }
    }
}

TEST_CASE("flipped-region sampling respects block pairings") {
    FlippedRegionConfig id_cfg;
    id_cfg.mode = FlippedRegionConfig::Mode::ID;
    FlippedRegionConfig ood_cfg;
    ood_cfg.mode = FlippedRegionConfig::Mode::OOD;
    int id_w1 = 0;
    for (int i = 0; i < 4000; ++i) {
        Rng rng(53, "flip-id", static_cast<std::uint64_t>(i));
        const TaskParams t = sample_flipped_task(id_cfg, rng);
        const bool w_pos = t.w[0] >= 0.0;
        for (std::int64_t j = 0; j < t.w.size(); ++j) {
            CHECK((w_pos ? t.w[j] >= 0.0 : t.w[j] <= 0.0));
        }
        // sigma support never leaves [0.1, 0.9]
        CHECK(t.sigma >= 0.1);
        CHECK(t.sigma <= 0.9);
        const SigmaGroup g = sigma_group_raw(t.sigma);
        if (w_pos) {
            ++id_w1;
            CHECK(g == SigmaGroup::G1); // ID pairs (W1, G1)
        } else {
            CHECK(g == SigmaGroup::G2); // ID pairs (W2, G2)
        }
    }
    CHECK(id_w1 > 1500);
    CHECK(id_w1 < 2500);
    for (int i = 0; i < 4000; ++i) {
        Rng rng(53, "flip-ood", static_cast<std::uint64_t>(i));
        const TaskParams t = sample_flipped_task(ood_cfg, rng);
        const bool w_pos = t.w[0] >= 0.0;
        const SigmaGroup g = sigma_group_raw(t.sigma);
        CHECK((w_pos ? g == SigmaGroup::G2 : g == SigmaGroup::G1));
    }
}

TEST_CASE("sigma group classification and nearest-interval resolution") {
    CHECK(sigma_group_raw(0.2) == SigmaGroup::G1);
    CHECK(sigma_group_raw(0.6) == SigmaGroup::G1);
    CHECK(sigma_group_raw(0.4) == SigmaGroup::G2);
    CHECK(sigma_group_raw(0.8) == SigmaGroup::G2);
    CHECK(sigma_group_raw(0.05) == SigmaGroup::Outside);
    CHECK(sigma_group_raw(1.5) == SigmaGroup::Outside);
    CHECK(sigma_group_resolved(0.05) == SigmaGroup::G1);  // nearest is [0.1, 0.3]
    CHECK(sigma_group_resolved(1.5) == SigmaGroup::G2);   // nearest is [0.7, 0.9]
    CHECK(sigma_group_resolved(0.4) == SigmaGroup::G2);
}
