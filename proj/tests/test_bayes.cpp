#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "icluq/baselines.hpp"
#include "icluq/bayes.hpp"

using namespace icluq;

namespace {

// Batch-form posterior evaluated directly from the definitions, used as the
// oracle against the incremental Sherman-Morrison path.
struct BatchPosterior {
    Tensor sigma_mat;
    Tensor w;
    double a = 0.0, b = 0.0;
};

BatchPosterior batch_posterior(const PromptSequence& seq, std::int64_t m,
                               const PriorConfig& prior) {
    const std::int64_t d = prior.d;
    Tensor lambda = Tensor::identity(d);
    Tensor c = prior.mean_weights();
    double sum_y2 = 0.0;
    for (std::int64_t s = 0; s < m; ++s) {
        for (std::int64_t i = 0; i < d; ++i) {
            for (std::int64_t j = 0; j < d; ++j) lambda(i, j) += seq.xs(s, i) * seq.xs(s, j);
            c[i] += seq.xs(s, i) * seq.ys[s];
        }
        sum_y2 += seq.ys[s] * seq.ys[s];
    }
    BatchPosterior out;
    out.sigma_mat = spd_inverse(lambda);
    out.w = matvec(out.sigma_mat, c);
    out.a = prior.tau_shape + 0.5 * static_cast<double>(m);
    const Tensor wb = prior.mean_weights();
    out.b = prior.tau_rate + 0.5 * (sum_y2 + dot(wb, wb) - dot(c, out.w));
    return out;
}

PromptSequence random_history(const PriorConfig& prior, std::int64_t t_len, std::uint64_t idx) {
    Rng rng(71, "bayes-hist", idx);
    const TaskParams task = sample_task(prior, rng);
    return sample_sequence(task, Isotropic{1.0}, t_len, rng);
}

} // namespace

TEST_CASE("init_prior is the empty-history posterior") {
    PriorConfig prior; // d=8, tau 20/20, w_bar ones
    const PosteriorState st = init_prior(prior);
    CHECK(max_abs_diff(st.sigma_mat, Tensor::identity(8)) == 0.0);
    CHECK(st.a == 20.0);
    CHECK(st.b == 20.0);
    CHECK(st.w[0] == 1.0);
    CHECK(st.b / (st.a - 1.0) == Catch::Approx(20.0 / 19.0).epsilon(1e-15));

    Tensor e1 = Tensor::vector(8);
    e1[0] = 1.0;
    const Prediction p = predict(st, e1);
    CHECK(p.y_hat == Catch::Approx(1.0));
    CHECK(p.sigma_hat == Catch::Approx(std::sqrt(40.0 / 19.0)).epsilon(1e-12)); // 1.4510

    Tensor zero = Tensor::vector(8);
    const Prediction p0 = predict(st, zero);
    CHECK(p0.y_hat == 0.0);
    CHECK(p0.sigma_hat == Catch::Approx(std::sqrt(20.0 / 19.0)).epsilon(1e-12)); // 1.0260
}

TEST_CASE("hand-computed single update in d=1") {
    PriorConfig prior;
    prior.d = 1;
    PosteriorState st = init_prior(prior);
    Tensor x = Tensor::vector(1);
    x[0] = 1.0;
    st = update(st, x, 1.0);
    CHECK(st.sigma_mat(0, 0) == Catch::Approx(0.5).epsilon(1e-15));
    CHECK(st.w[0] == Catch::Approx(1.0).epsilon(1e-15));
    CHECK(st.a == Catch::Approx(20.5).epsilon(1e-15));
    CHECK(st.b == Catch::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("sequential updates equal batch formulas") {
    PriorConfig prior;
    for (const std::int64_t d : {1LL, 3LL, 8LL}) {
        prior.d = d;
        for (int rep = 0; rep < 3; ++rep) {
            const std::int64_t t_len = 200;
            const PromptSequence seq =
                random_history(prior, t_len, static_cast<std::uint64_t>(d * 10 + rep));
            PosteriorState st = init_prior(prior);
            Tensor x = Tensor::vector(d);
            for (std::int64_t s = 0; s < t_len; ++s) {
                for (std::int64_t j = 0; j < d; ++j) x[j] = seq.xs(s, j);
                update_inplace(st, x, seq.ys[s]);
            }
            const BatchPosterior ref = batch_posterior(seq, t_len, prior);
            CHECK(max_abs_diff(st.sigma_mat, ref.sigma_mat) < 1e-8);
            CHECK(max_abs_diff(st.w, ref.w) < 1e-8);
            CHECK(std::abs(st.a - ref.a) < 1e-8);
            CHECK(std::abs(st.b - ref.b) < 1e-8);
        }
    }
}

TEST_CASE("epistemic shrinkage: x^T Sigma x never increases") {
    PriorConfig prior;
    const PromptSequence seq = random_history(prior, 60, 99);
    PosteriorState st = init_prior(prior);
    Rng rng(73, "probe", 0);
    const Tensor probe = rng.normal_vector(prior.d);
    double prev = dot(probe, matvec(st.sigma_mat, probe));
    Tensor x = Tensor::vector(prior.d);
    for (std::int64_t s = 0; s < seq.length(); ++s) {
        for (std::int64_t j = 0; j < prior.d; ++j) x[j] = seq.xs(s, j);
        update_inplace(st, x, seq.ys[s]);
        const double cur = dot(probe, matvec(st.sigma_mat, probe));
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
}

TEST_CASE("posterior mean converges on noiseless data") {
    PriorConfig prior;
    prior.d = 1;
    PosteriorState st = init_prior(prior);
    Rng rng(79, "noiseless", 0);
    Tensor x = Tensor::vector(1);
    for (int s = 0; s < 50; ++s) {
        x[0] = rng.normal();
        update_inplace(st, x, 2.0 * x[0]);
    }
    x[0] = 1.7;
    const Prediction p = predict(st, x);
    CHECK(std::abs(p.y_hat - 2.0 * 1.7) < 1e-2 * 3.4);
}

TEST_CASE("truncated predictor") {
    PriorConfig prior;
    const PromptSequence seq = random_history(prior, 40, 7);
    Tensor x = Tensor::vector(prior.d);
    for (std::int64_t j = 0; j < prior.d; ++j) x[j] = seq.xs(39, j);

    SECTION("window >= t-1 is bitwise the full predictor") {
        PosteriorState st = init_prior(prior);
        Tensor xi = Tensor::vector(prior.d);
        for (std::int64_t s = 0; s < 39; ++s) {
            for (std::int64_t j = 0; j < prior.d; ++j) xi[j] = seq.xs(s, j);
            update_inplace(st, xi, seq.ys[s]);
        }
        const Prediction full = predict(st, x);
        const Prediction trunc = truncated_predict(seq, 39, 39, x, prior);
        const Prediction wide = truncated_predict(seq, 39, 1000, x, prior);
        CHECK(trunc.y_hat == full.y_hat);
        CHECK(trunc.sigma_hat == full.sigma_hat);
        CHECK(wide.y_hat == full.y_hat);
    }
    SECTION("window 0 reproduces the prior prediction") {
        const Prediction p = truncated_predict(seq, 39, 0, x, prior);
        const Prediction prior_p = predict(init_prior(prior), x);
        CHECK(p.y_hat == prior_p.y_hat);
        CHECK(p.sigma_hat == prior_p.sigma_hat);
    }
    SECTION("smaller windows lose more (Monte-Carlo risk)") {
        const std::int64_t t_eval = 100, n_mc = 3000;
        double risk5 = 0.0, risk50 = 0.0, risk_full = 0.0;
        for (std::int64_t i = 0; i < n_mc; ++i) {
            Rng rng(83, "trunc-risk", static_cast<std::uint64_t>(i));
            const TaskParams task = sample_task(prior, rng);
            const PromptSequence s = sample_sequence(task, Isotropic{1.0}, t_eval, rng);
            Tensor q = Tensor::vector(prior.d);
            for (std::int64_t j = 0; j < prior.d; ++j) q[j] = s.xs(t_eval - 1, j);
            const double y = s.ys[t_eval - 1];
            risk5 += nll_loss(truncated_predict(s, t_eval - 1, 5, q, prior), y);
            risk50 += nll_loss(truncated_predict(s, t_eval - 1, 50, q, prior), y);
            risk_full += nll_loss(truncated_predict(s, t_eval - 1, t_eval, q, prior), y);
        }
        CHECK(risk5 > risk50);
        CHECK(risk50 > risk_full);
    }
}

TEST_CASE("grid oracle agrees with the closed form in d=1") {
    PriorConfig prior;
    prior.d = 1;
    int checked = 0;
    for (std::uint64_t i = 0; i < 100; ++i) {
        Rng rng(89, "grid-hist", i);
        const TaskParams task = sample_task(prior, rng);
        const std::int64_t t_len = 1 + static_cast<std::int64_t>(rng.below(10));
        const PromptSequence seq = sample_sequence(task, Isotropic{1.0}, t_len, rng);
        const std::int64_t m = t_len - 1;
        Tensor x = Tensor::vector(1);
        x[0] = seq.xs(m, 0);

        PosteriorState st = init_prior(prior);
        Tensor xi = Tensor::vector(1);
        for (std::int64_t s = 0; s < m; ++s) {
            xi[0] = seq.xs(s, 0);
            update_inplace(st, xi, seq.ys[s]);
        }
        const Prediction closed = predict(st, x);
        const Prediction grid = grid_oracle_1d(seq, m, x[0], prior);
        // three significant digits
        CHECK(std::abs(grid.sigma_hat - closed.sigma_hat) <= 5e-4 * closed.sigma_hat);
        const double y_scale = std::max(std::abs(closed.y_hat), closed.sigma_hat);
        CHECK(std::abs(grid.y_hat - closed.y_hat) <= 5e-4 * y_scale);
        ++checked;
    }
    CHECK(checked == 100);

    SECTION("empty history recovers the prior predictive") {
        PromptSequence seq;
        seq.xs = Tensor(1, 1);
        seq.xs(0, 0) = 0.7;
        seq.ys = Tensor::vector(1);
        const Prediction grid = grid_oracle_1d(seq, 0, 0.7, prior);
        const Prediction closed = predict(init_prior(prior), Tensor::from_vec({0.7}));
        CHECK(std::abs(grid.y_hat - closed.y_hat) < 5e-4);
        CHECK(std::abs(grid.sigma_hat - closed.sigma_hat) < 5e-4 * closed.sigma_hat);
    }
    SECTION("single observation matches the hand-computed state") {
        PriorConfig p1;
        p1.d = 1;
        PromptSequence seq;
        seq.xs = Tensor(2, 1);
        seq.xs(0, 0) = 1.0;
        seq.xs(1, 0) = 1.0;
        seq.ys = Tensor::vector(2);
        seq.ys[0] = 1.0;
        const Prediction grid = grid_oracle_1d(seq, 1, 1.0, p1);
        // posterior after (x=1, y=1): Sigma=1/2, w=1, a=20.5, b=20
        const double sig = std::sqrt(20.0 / 19.5 * 1.5);
        CHECK(std::abs(grid.y_hat - 1.0) < 5e-4);
        CHECK(std::abs(grid.sigma_hat - sig) < 5e-4 * sig);
    }
}

TEST_CASE("grid_oracle_1d rejects d != 1") {
    PriorConfig prior; // d = 8
    PromptSequence seq;
    seq.xs = Tensor(1, 8);
    seq.ys = Tensor::vector(1);
    CHECK_THROWS_AS(grid_oracle_1d(seq, 0, 0.0, prior), DomainError);
}

TEST_CASE("mc_risk orders Bayes below ridge and OLS") {
    PriorConfig prior;
    const std::int64_t t_len = 30, n_mc = 2000;
    const RiskEstimate bayes = mc_risk(bayes_predictor(prior), prior, Isotropic{1.0}, t_len, n_mc, 3);
    const RiskEstimate ridge = mc_risk(ridge_predictor(), prior, Isotropic{1.0}, t_len, n_mc, 3);
    const RiskEstimate ols = mc_risk(ols_predictor(), prior, Isotropic{1.0}, t_len, n_mc, 3);
    for (std::int64_t t = 0; t < t_len; ++t) {
        CHECK(bayes.mean[t] <= ridge.mean[t] + 3.0 * (bayes.stderr[t] + ridge.stderr[t]));
        CHECK(bayes.mean[t] <= ols.mean[t] + 3.0 * (bayes.stderr[t] + ols.stderr[t]));
    }
}

TEST_CASE("fixed sigma_hat on zero-noise tasks gives loss log c") {
    // Perfect mean predictor with constant sigma_hat = c on noiseless data.
    const double c = 2.5;
    Prediction p{0.0, c};
    CHECK(nll_loss(p, 0.0) == Catch::Approx(std::log(c)).epsilon(1e-15));
}

TEST_CASE("posterior sigma concentrates near the prior mean at t=100") {
    PriorConfig prior;
    const std::int64_t t_len = 100, n_mc = 1500;
    double sum = 0.0;
    for (std::int64_t i = 0; i < n_mc; ++i) {
        Rng rng(97, "conc", static_cast<std::uint64_t>(i));
        const TaskParams task = sample_task(prior, rng);
        const PromptSequence seq = sample_sequence(task, Isotropic{1.0}, t_len, rng);
        const std::vector<Prediction> preds = bayes_predictor(prior)(seq);
        sum += preds.back().sigma_hat;
    }
    const double avg = sum / static_cast<double>(n_mc);
    CHECK(std::abs(avg - std::sqrt(20.0 / 19.0)) / std::sqrt(20.0 / 19.0) < 0.05);
}
