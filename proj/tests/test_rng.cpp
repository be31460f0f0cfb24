#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "icluq/rng.hpp"

using namespace icluq;

TEST_CASE("substreams are reproducible and distinct") {
    Rng a(42, "stream", 7);
    Rng b(42, "stream", 7);
    Rng c(42, "stream", 8);
    for (int i = 0; i < 16; ++i) {
        const auto va = a.next_u64();
        CHECK(va == b.next_u64());
        CHECK(va != c.next_u64());
    }
}

TEST_CASE("gamma sampler matches the first moment") {
    // Empirical mean of Gamma(shape a, rate b) must be a/b within 1%.
    const std::pair<double, double> cases[] = {{20, 20}, {80, 20}, {100, 400}, {100, 1600}};
    for (const auto& [a, b] : cases) {
        Rng rng(5, "gamma", static_cast<std::uint64_t>(a * 7 + b));
        const std::int64_t n = 1000000;
        double sum = 0.0;
        for (std::int64_t i = 0; i < n; ++i) sum += rng.gamma(a, b);
        const double mean = sum / static_cast<double>(n);
        CHECK(std::abs(mean - a / b) / (a / b) < 0.01);
    }
}

TEST_CASE("normal sampler moments") {
    Rng rng(9, "normal", 0);
    const std::int64_t n = 400000;
    double s1 = 0.0, s2 = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double z = rng.normal();
        s1 += z;
        s2 += z * z;
    }
    CHECK(std::abs(s1 / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.01);
}

TEST_CASE("below is unbiased over small ranges") {
    Rng rng(1, "below", 0);
    int counts[5] = {0, 0, 0, 0, 0};
    for (int i = 0; i < 100000; ++i) ++counts[rng.below(5)];
    for (int k = 0; k < 5; ++k) CHECK(std::abs(counts[k] - 20000) < 1000);
}
