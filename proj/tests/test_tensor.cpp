#include <catch2/catch_amalgamated.hpp>

#include "icluq/rng.hpp"
#include "icluq/tensor.hpp"

using namespace icluq;

TEST_CASE("matmul basics") {
    const Tensor i2 = Tensor::identity(2);
    const Tensor v = Tensor::from_rows({{1.0}, {2.0}});
    const Tensor r1 = matmul(i2, v);
    CHECK(r1(0, 0) == 1.0);
    CHECK(r1(1, 0) == 2.0);

    const Tensor a = Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}});
    const Tensor z = Tensor::from_rows({{0.0}, {0.0}});
    const Tensor r2 = matmul(a, z);
    CHECK(r2(0, 0) == 0.0);
    CHECK(r2(1, 0) == 0.0);

    const Tensor b = Tensor::from_rows({{5.0}, {6.0}});
    const Tensor r3 = matmul(a, b);
    CHECK(r3(0, 0) == 17.0);
    CHECK(r3(1, 0) == 39.0);

    CHECK_THROWS_AS(matmul(a, Tensor(3, 2)), ShapeError);
}

TEST_CASE("matmul transposed variants agree with explicit transpose") {
    Rng rng(7, "mmtest", 0);
    const Tensor a = rng.normal_matrix(5, 3);
    const Tensor b = rng.normal_matrix(4, 3);
    const Tensor c = rng.normal_matrix(5, 4);
    CHECK(max_abs_diff(matmul_nt(a, b), matmul(a, transpose(b))) < 1e-14);
    CHECK(max_abs_diff(matmul_tn(a, c), matmul(transpose(a), c)) < 1e-14);
}

TEST_CASE("softplus and logistic") {
    CHECK(softplus(0.0) == Catch::Approx(0.69314718055994531).epsilon(1e-14));
    CHECK(softplus(50.0) == Catch::Approx(50.0).margin(1e-12));
    CHECK(softplus(-800.0) >= 0.0);
    CHECK(std::isfinite(softplus(800.0)));
    CHECK(logistic(0.0) == Catch::Approx(0.5));
    // softplus is strictly positive for all finite inputs
    for (double z : {-700.0, -50.0, -1.0, 0.0, 1.0, 50.0, 700.0}) {
        CHECK(softplus(z) > 0.0);
    }
}

TEST_CASE("cholesky inverse and solve") {
    Rng rng(3, "chol", 0);
    const std::int64_t d = 6;
    Tensor g = Tensor::identity(d);
    const Tensor x = rng.normal_matrix(12, d);
    for (std::int64_t s = 0; s < 12; ++s)
        for (std::int64_t i = 0; i < d; ++i)
            for (std::int64_t j = 0; j < d; ++j) g(i, j) += x(s, i) * x(s, j);
    const Tensor inv = spd_inverse(g);
    CHECK(max_abs_diff(matmul(g, inv), Tensor::identity(d)) < 1e-10);

    const Tensor b = rng.normal_vector(d);
    const Tensor sol = spd_solve(g, b);
    CHECK(max_abs_diff(matvec(g, sol), b) < 1e-10);
}

TEST_CASE("symmetric eigensolver") {
    Rng rng(11, "eig", 0);
    const std::int64_t d = 7;
    const Tensor m = rng.normal_matrix(d, d);
    Tensor a(d, d);
    for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::int64_t k = 0; k < d; ++k) s += m(i, k) * m(j, k);
            a(i, j) = s;
        }
    const SymEig e = sym_eig(a);
    // A v = lambda v for every pair
    for (std::int64_t k = 0; k < d; ++k) {
        Tensor v = Tensor::vector(d);
        for (std::int64_t i = 0; i < d; ++i) v[i] = e.vectors(i, k);
        const Tensor av = matvec(a, v);
        Tensor lv = v;
        for (std::int64_t i = 0; i < d; ++i) lv[i] *= e.values[k];
        CHECK(max_abs_diff(av, lv) < 1e-8 * (1.0 + std::abs(e.values[k])));
    }
    // spectral norm of a diagonal matrix
    Tensor diag(3, 3);
    diag(0, 0) = 3.0;
    CHECK(spectral_norm(diag) == Catch::Approx(3.0).epsilon(1e-10));
}
