#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icluq/baselines.hpp"
#include "icluq/bayes.hpp"

using namespace icluq;

namespace {

PromptSequence make_seq(std::initializer_list<std::initializer_list<double>> xs,
                        std::initializer_list<double> ys) {
    PromptSequence seq;
    seq.xs = Tensor::from_rows(xs);
    seq.ys = Tensor::vector(static_cast<std::int64_t>(ys.size()));
    std::int64_t i = 0;
    for (double y : ys) seq.ys[i++] = y;
    return seq;
}

} // namespace

TEST_CASE("ridge closed form on one pair") {
    // lambda=1, one pair (x=e1, y=2), query e1: (1+1)^{-1} * 2 = 1
    const PromptSequence seq = make_seq({{1, 0}, {1, 0}}, {2, 0});
    Tensor q = Tensor::vector(2);
    q[0] = 1.0;
    const Prediction p = ridge_predict(seq, 1, q);
    CHECK(p.y_hat == Catch::Approx(1.0).epsilon(1e-14));
    CHECK(p.sigma_hat >= 0.0);
}

TEST_CASE("zero context returns the declared default") {
    const PromptSequence seq = make_seq({{1, 0}}, {0});
    Tensor q = Tensor::vector(2);
    const Prediction r = ridge_predict(seq, 0, q);
    CHECK(r.y_hat == 0.0);
    CHECK(r.sigma_hat == 1.0);
    const Prediction o = ols_predict(seq, 0, q);
    CHECK(o.y_hat == 0.0);
    CHECK(o.sigma_hat == 1.0);
}

TEST_CASE("OLS min-norm fit on a single pair") {
    const PromptSequence seq = make_seq({{1, 0}, {1, 0}}, {2, 0});
    Tensor q = Tensor::vector(2);
    q[0] = 1.0;
    const Prediction p = ols_predict(seq, 1, q);
    CHECK(p.y_hat == Catch::Approx(2.0).epsilon(1e-10));
    CHECK(p.sigma_hat == Catch::Approx(1e-6)); // interpolation floor
}

TEST_CASE("interpolation regime: m = d generic data has floor residuals") {
    Rng rng(11, "ols-interp", 0);
    PromptSequence seq;
    const std::int64_t d = 5;
    seq.xs = rng.normal_matrix(d + 1, d);
    seq.ys = rng.normal_vector(d + 1);
    Tensor q = Tensor::vector(d);
    for (std::int64_t j = 0; j < d; ++j) q[j] = seq.xs(d, j);
    const Prediction p = ols_predict(seq, d, q);
    CHECK(p.sigma_hat == Catch::Approx(1e-6));
}

TEST_CASE("ridge converges to OLS as lambda -> 0 on full-rank histories") {
    Rng rng(13, "ridge-ols", 0);
    PromptSequence seq;
    const std::int64_t d = 4, m = 30;
    seq.xs = rng.normal_matrix(m + 1, d);
    seq.ys = rng.normal_vector(m + 1);
    Tensor q = Tensor::vector(d);
    for (std::int64_t j = 0; j < d; ++j) q[j] = seq.xs(m, j);
    RidgeConfig tiny;
    tiny.lambda = 1e-8;
    const Prediction r = ridge_predict(seq, m, q, tiny);
    const Prediction o = ols_predict(seq, m, q);
    CHECK(std::abs(r.y_hat - o.y_hat) < 1e-6);
    CHECK(std::abs(r.sigma_hat - o.sigma_hat) < 1e-6);
}

TEST_CASE("predictions are invariant under context permutation") {
    Rng rng(17, "perm", 0);
    const std::int64_t d = 4, m = 12;
    PromptSequence seq;
    seq.xs = rng.normal_matrix(m + 1, d);
    seq.ys = rng.normal_vector(m + 1);
    Tensor q = rng.normal_vector(d);

    PromptSequence shuffled = seq;
    std::vector<std::int64_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::reverse(order.begin(), order.begin() + 7);
    std::swap(order[8], order[11]);
    for (std::int64_t s = 0; s < m; ++s) {
        for (std::int64_t j = 0; j < d; ++j) shuffled.xs(s, j) = seq.xs(order[s], j);
        shuffled.ys[s] = seq.ys[order[s]];
    }
    const Prediction a = ridge_predict(seq, m, q);
    const Prediction b = ridge_predict(shuffled, m, q);
    CHECK(std::abs(a.y_hat - b.y_hat) < 1e-9);
    CHECK(std::abs(a.sigma_hat - b.sigma_hat) < 1e-9);
    const Prediction oa = ols_predict(seq, m, q);
    const Prediction ob = ols_predict(shuffled, m, q);
    CHECK(std::abs(oa.y_hat - ob.y_hat) < 1e-9);
    CHECK(std::abs(oa.sigma_hat - ob.sigma_hat) < 1e-9);
}

TEST_CASE("sigma_hat is nonnegative and finite across random histories") {
    for (int rep = 0; rep < 50; ++rep) {
        Rng rng(19, "sig-fin", static_cast<std::uint64_t>(rep));
        const std::int64_t d = 3, m = static_cast<std::int64_t>(rng.below(10));
        PromptSequence seq;
        seq.xs = rng.normal_matrix(m + 1, d);
        seq.ys = rng.normal_vector(m + 1);
        Tensor q = rng.normal_vector(d);
        for (const Prediction& p :
             {ridge_predict(seq, m, q), ols_predict(seq, m, q)}) {
            CHECK(p.sigma_hat >= 0.0);
            CHECK(std::isfinite(p.sigma_hat));
            CHECK(std::isfinite(p.y_hat));
        }
    }
}

TEST_CASE("OLS mean squared error dominates Bayes at every position") {
    PriorConfig prior;
    prior.d = 4;
    const std::int64_t t_len = 20, n_mc = 4000;
    Tensor mse_ols = Tensor::vector(t_len);
    Tensor mse_bayes = Tensor::vector(t_len);
    Tensor var_diff = Tensor::vector(t_len);
    const SequencePredictor bayes = bayes_predictor(prior);
    const SequencePredictor ols = ols_predictor();
    for (std::int64_t i = 0; i < n_mc; ++i) {
        Rng rng(23, "olsmse", static_cast<std::uint64_t>(i));
        const TaskParams task = sample_task(prior, rng);
        const PromptSequence seq = sample_sequence(task, Isotropic{1.0}, t_len, rng);
        const auto pb = bayes(seq);
        const auto po = ols(seq);
        for (std::int64_t t = 0; t < t_len; ++t) {
            const double eb = seq.ys[t] - pb[static_cast<std::size_t>(t)].y_hat;
            const double eo = seq.ys[t] - po[static_cast<std::size_t>(t)].y_hat;
            const double db = eb * eb, dd = eo * eo - eb * eb;
            mse_bayes[t] += db;
            mse_ols[t] += eo * eo;
            var_diff[t] += dd * dd;
        }
    }
    for (std::int64_t t = 0; t < t_len; ++t) {
        const double diff = (mse_ols[t] - mse_bayes[t]) / n_mc;
        const double se = std::sqrt(var_diff[t] / n_mc / n_mc);
        CHECK(diff > -3.0 * se);
    }
}
