#include <doctest.h>

#include <cmath>

#include "bta/common.hpp"

using namespace bta;

TEST_CASE("solve_spd solves a known system") {
    Matrix a(2, 2);
    a.at(0, 0) = 4.0; a.at(0, 1) = 1.0;
    a.at(1, 0) = 1.0; a.at(1, 1) = 3.0;
    const auto x = solve_spd(a, {1.0, 2.0});
    CHECK(x[0] == doctest::Approx(1.0 / 11.0).epsilon(1e-12));
    CHECK(x[1] == doctest::Approx(7.0 / 11.0).epsilon(1e-12));
}

TEST_CASE("solve_spd rejects a singular matrix") {
    Matrix a(2, 2);
    a.at(0, 0) = 1.0; a.at(0, 1) = 1.0;
    a.at(1, 0) = 1.0; a.at(1, 1) = 1.0;
    CHECK_THROWS_AS(solve_spd(a, {1.0, 1.0}), ContractError);
}

TEST_CASE("cholesky factors an equicorrelated matrix") {
    const int n = 4;
    Matrix sigma(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sigma.at(i, j) = (i == j) ? 1.0 : 0.4;
    const Matrix l = cholesky(sigma);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int k = 0; k <= std::min(i, j); ++k) s += l.at(i, k) * l.at(j, k);
            CHECK(s == doctest::Approx(sigma.at(i, j)).epsilon(1e-12));
        }
    }
}

TEST_CASE("rng streams are reproducible and roughly standard normal") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());

    Rng c(7);
    double sum = 0.0, sumsq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = c.normal();
        sum += z;
        sumsq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.02);
    CHECK(sumsq / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("seed derivation separates stages and masters") {
    const uint64_t m = 123456789;
    CHECK(derive_seed(m, "generate") != derive_seed(m, "train"));
    CHECK(derive_seed(m, "generate") != derive_seed(m + 1, "generate"));
    CHECK(derive_seed(m, "generate") == derive_seed(m, "generate"));
}

TEST_CASE("sign convention maps zero to zero") {
    CHECK(sign0(3.5) == 1.0);
    CHECK(sign0(-0.1) == -1.0);
    CHECK(sign0(0.0) == 0.0);
}
