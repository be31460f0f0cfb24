#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "icluq/autodiff.hpp"
#include "icluq/rng.hpp"
#include "icluq/tensor.hpp"

using namespace icluq;

namespace {

// Finite-difference check of a scalar-valued tape program against its own
// analytic gradient, at `trials` random points.
template <typename Builder>
double max_fd_error(Builder&& build, std::int64_t n_inputs, int trials, std::uint64_t seed,
                    double step = 1e-5) {
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        Rng rng(seed, "fdcheck", static_cast<std::uint64_t>(trial));
        Tensor x = rng.normal_vector(n_inputs);
        Tensor analytic;
        {
            Tape tape;
            Var xv = tape.leaf(x);
            Var loss = build(tape, xv);
            tape.backward(loss);
            analytic = tape.grad(xv);
        }
        auto f = [&](const Tensor& p) {
            Tape tape;
            Var xv = tape.leaf(p);
            return tape.val(build(tape, xv))[0];
        };
        worst = std::max(worst, finite_diff_check(f, x, step, analytic));
    }
    return worst;
}

} // namespace

TEST_CASE("backward on simple programs") {
    // loss = x^2 at x = 3 -> grad 6
    Tensor x = Tensor::vector(1);
    x[0] = 3.0;
    {
        Tape tape;
        Var xv = tape.leaf(x);
        Var loss = tape.sum_all(tape.square(xv));
        tape.backward(loss);
        CHECK(tape.grad(xv)[0] == Catch::Approx(6.0).epsilon(1e-14));
    }
    // loss = softplus(x) at x = 0 -> grad 0.5
    x[0] = 0.0;
    {
        Tape tape;
        Var xv = tape.leaf(x);
        Var loss = tape.sum_all(tape.softplus(xv));
        tape.backward(loss);
        CHECK(tape.grad(xv)[0] == Catch::Approx(0.5).epsilon(1e-14));
    }
    // parameters not on any path receive zero
    {
        Tape tape;
        Var used = tape.leaf(x);
        Tensor unused_t = Tensor::vector(3);
        Var unused = tape.leaf(unused_t);
        Var loss = tape.sum_all(tape.square(used));
        tape.backward(loss);
        const Tensor g = tape.grad(unused);
        CHECK(g.size() == 3);
        CHECK(max_abs(g) == 0.0);
    }
}

TEST_CASE("finite_diff_check on closed forms") {
    // f(x) = x^2 at x = 1
    Tensor p = Tensor::vector(1);
    p[0] = 1.0;
    Tensor analytic = Tensor::vector(1);
    analytic[0] = 2.0;
    auto f = [](const Tensor& x) { return x[0] * x[0]; };
    CHECK(finite_diff_check(f, p, 1e-5, analytic) < 1e-6);

    // constant function: analytic grad 0, error 0
    Tensor zero_grad = Tensor::vector(1);
    auto c = [](const Tensor&) { return 4.25; };
    CHECK(finite_diff_check(c, p, 1e-5, zero_grad) == 0.0);
}

TEST_CASE("softmax_cols output structure") {
    Tape tape;
    Tensor z(2, 3);
    z(0, 0) = 0.0;
    z(1, 0) = 0.0;
    z(0, 1) = 1000.0;
    z(1, 1) = 1000.0;
    z(0, 2) = 0.0;
    z(1, 2) = std::log(3.0);
    Var out = tape.softmax_cols(tape.constant(z));
    const Tensor& y = tape.val(out);
    CHECK(y(0, 0) == Catch::Approx(0.5).epsilon(1e-14));
    CHECK(y(0, 1) == Catch::Approx(0.5).epsilon(1e-14)); // stable under max-subtraction
    CHECK(y(0, 2) == Catch::Approx(0.25).epsilon(1e-12));
    CHECK(y(1, 2) == Catch::Approx(0.75).epsilon(1e-12));

    Rng rng(21, "softmax", 0);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor r = rng.normal_matrix(5, 4, 3.0);
        Tape t2;
        const Tensor& s = t2.val(t2.softmax_cols(t2.constant(r)));
        for (std::int64_t j = 0; j < 4; ++j) {
            double col = 0.0;
            for (std::int64_t i = 0; i < 5; ++i) {
                col += s(i, j);
                CHECK(s(i, j) > 0.0);
                CHECK(s(i, j) < 1.0);
            }
            CHECK(std::abs(col - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("elementwise op domain errors") {
    Tape tape;
    Tensor z = Tensor::vector(1);
    z[0] = -1.0;
    CHECK_THROWS_AS(tape.log_ew(tape.constant(z)), DomainError);
    // relu(-1) = 0
    const Tensor& r = tape.val(tape.relu(tape.constant(z)));
    CHECK(r[0] == 0.0);
}

TEST_CASE("gradients match central finite differences at random points") {
    const int kTrials = 20;

    SECTION("matmul chain") {
        const Tensor w = Tensor::from_rows(
            {{0.3, -0.2, 0.5}, {1.0, 0.7, -0.4}, {-0.6, 0.1, 0.8}, {0.2, 0.9, -1.1}});
        const double err = max_fd_error(
            [&](Tape& t, Var x) {
                Var prod = t.matmul(t.reshape(x, {3, 4}), t.constant(w));
                return t.mean_all(t.square(prod));
            },
            12, kTrials, 101);
        CHECK(err < 1e-4);
    }

    SECTION("softmax_cols + log") {
        const double err = max_fd_error(
            [](Tape& t, Var x) {
                Var sm = t.softmax_cols(t.reshape(x, {4, 2}));
                return t.mean_all(t.square(t.log_ew(sm)));
            },
            8, kTrials, 102);
        CHECK(err < 1e-4);
    }

    SECTION("relu softplus mixtures") {
        const double err = max_fd_error(
            [](Tape& t, Var x) {
                Var a = t.relu(x);
                Var b = t.softplus(x);
                return t.mean_all(t.add(t.square(a), t.hadamard(b, b)));
            },
            9, kTrials, 103);
        CHECK(err < 1e-4);
    }

    SECTION("windowed attention equals primitive composition and passes fd") {
        Rng rng(55, "attn", 0);
        const std::int64_t n = 6, dm = 3, dv = 4;
        std::vector<std::int32_t> lows = {0, 0, 0, 1, 2, 2};
        const Tensor q = rng.normal_matrix(n, dm);
        const Tensor k = rng.normal_matrix(n, dm);
        const Tensor v = rng.normal_matrix(n, dv);
        Tape t1;
        const Tensor fused = t1.val(t1.windowed_attention(
            t1.constant(q), t1.constant(k), t1.constant(v), lows));
        Tape t2;
        Var scores = t2.matmul_nt(t2.constant(q), t2.constant(k));
        Var probs = t2.window_softmax_rows(scores, lows);
        const Tensor composed = t2.val(t2.matmul(probs, t2.constant(v)));
        CHECK(max_abs_diff(fused, composed) < 1e-13);

        const double err = max_fd_error(
            [&](Tape& t, Var x) {
                Var qv = t.reshape(x, {n, dm});
                Var h = t.windowed_attention(qv, t.constant(k), t.constant(v), lows);
                return t.mean_all(t.square(h));
            },
            n * dm, kTrials, 104);
        CHECK(err < 1e-4);

        const double err_kv = max_fd_error(
            [&](Tape& t, Var x) {
                Var kv2 = t.reshape(x, {n, dm});
                Var h = t.windowed_attention(t.constant(q), kv2, t.constant(v), lows);
                return t.mean_all(t.square(h));
            },
            n * dm, kTrials, 105);
        CHECK(err_kv < 1e-4);
    }

    SECTION("gaussian nll") {
        Tensor y = Tensor::vector(3);
        y[0] = 0.4;
        y[1] = -1.2;
        y[2] = 2.0;
        Tensor w = Tensor::vector(3);
        w.fill(1.0 / 3.0);
        const double err = max_fd_error(
            [&](Tape& t, Var x) {
                Var yh = t.slice_1d(x, 0, 3);
                Var sg = t.softplus(t.slice_1d(x, 3, 6));
                return t.gaussian_nll(yh, sg, y, w);
            },
            6, kTrials, 106);
        CHECK(err < 1e-4);
    }
}
