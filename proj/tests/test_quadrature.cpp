// SPDX-License-Identifier: Apache-2.0
#include "lball/quadrature.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

using namespace lball;

namespace {

BoundingBox unit_box(int d) { return BoundingBox(Vec::Zero(d), Vec::Ones(d)); }

QuadratureConfig config(std::uint64_t budget, std::uint64_t seed = 42)
{
    QuadratureConfig cfg;
    cfg.budget = budget;
    cfg.seed = seed;
    return cfg;
}

double gaussian_density(const Vec& p)
{
    return std::exp(-0.5 * p.squaredNorm()) / std::pow(2.0 * std::numbers::pi, 0.5 * static_cast<double>(p.size()));
}

}  // namespace

TEST_CASE("constant integrand is exact")
{
    for (int d = 1; d <= 4; ++d) {
        auto e = integrate_box([](const Vec&) { return 1.0; }, unit_box(d), config(20000));
        CHECK(e.value == 1.0);
        CHECK(e.std_error == 0.0);
    }
    BoundingBox box(to_vec({-1.0, 2.0}), to_vec({3.0, 2.5}));
    auto e = integrate_box([](const Vec&) { return 2.0; }, box, config(10000));
    CHECK(e.value == Catch::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("linear and Gaussian integrands")
{
    auto e = integrate_box([](const Vec& p) { return p[0]; }, unit_box(2), config(100000));
    CHECK(std::abs(e.value - 0.5) <= 3.0 * e.std_error);
    CHECK(e.std_error > 0.0);

    for (int d = 1; d <= 3; ++d) {
        BoundingBox box(Vec::Constant(d, -6.0), Vec::Constant(d, 6.0));
        auto g = integrate_box(gaussian_density, box, config(200000));
        double exact = std::pow(std::erf(6.0 / std::sqrt(2.0)), d);
        CHECK(std::abs(g.value - exact) <= 3.0 * g.std_error);
    }
}

TEST_CASE("results are bit-identical across worker counts")
{
    auto f = [](const Vec& p) { return std::sin(3.0 * p[0]) * std::exp(p[1]) + p[2] * p[2]; };
    IntegralEstimate ref;
    for (int workers : {1, 2, 8}) {
        QuadratureConfig cfg = config(300000, 7);
        cfg.workers = workers;
        auto e = integrate_box(f, unit_box(3), cfg);
        if (workers == 1) {
            ref = e;
        } else {
            CHECK(e.value == ref.value);
            CHECK(e.std_error == ref.std_error);
            CHECK(e.samples == ref.samples);
        }
    }
    for (int workers : {1, 2, 8}) {
        QuadratureConfig cfg = config(50000, 7);
        cfg.workers = workers;
        cfg.target_rel_stderr = 1e-6;
        cfg.max_refinements = 3;
        auto e = integrate_box(f, unit_box(3), cfg);
        if (workers == 1) {
            ref = e;
        } else {
            CHECK(e.value == ref.value);
            CHECK(e.std_error == ref.std_error);
        }
    }
}

TEST_CASE("standard errors are calibrated")
{
    auto f = [](const Vec& p) { return std::exp(-p.squaredNorm()) * (1.0 + p[0]); };
    // Exact value: (int_0^1 e^{-x^2} dx)^2 + (1 - e^{-1})/2 * int_0^1 e^{-y^2} dy.
    double i0 = 0.5 * std::sqrt(std::numbers::pi) * std::erf(1.0);
    double exact = i0 * i0 + 0.5 * (1.0 - std::exp(-1.0)) * i0;
    int covered = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        auto e = integrate_box(f, unit_box(2), config(2048, seed));
        if (std::abs(e.value - exact) <= 2.0 * e.std_error) {
            ++covered;
        }
    }
    CHECK(covered >= 90);
}

TEST_CASE("estimates are linear in the integrand under a shared seed")
{
    auto f = [](const Vec& p) { return std::cos(p[0]) + p[1]; };
    auto g = [](const Vec& p) { return p[0] * p[1] * p[1]; };
    auto cfg = config(40000, 3);
    auto ef = integrate_box(f, unit_box(2), cfg);
    auto eg = integrate_box(g, unit_box(2), cfg);
    auto ec = integrate_box([&](const Vec& p) { return 2.0 * f(p) - 3.0 * g(p); }, unit_box(2), cfg);
    CHECK(ec.value == Catch::Approx(2.0 * ef.value - 3.0 * eg.value).epsilon(1e-13));

    auto multi = integrate_multi(
        [&](const Vec& p, std::span<double> out) {
            out[0] = f(p);
            out[1] = g(p);
            return true;
        },
        2, unit_box(2), cfg);
    CHECK(multi[0].value == ef.value);
    CHECK(multi[1].value == eg.value);
    CHECK(multi[1].std_error == eg.std_error);
}

TEST_CASE("region integration")
{
    auto disc = [](const Vec& p) { return (p - Vec::Constant(2, 0.5)).squaredNorm() < 0.25; };
    auto e = integrate_region([](const Vec&) { return 1.0; }, disc, unit_box(2), config(400000));
    CHECK(std::abs(e.value - std::numbers::pi / 4.0) <= 3.0 * e.std_error);
    CHECK(e.hits > 0);
    CHECK(e.hits < e.samples);

    auto none = integrate_region([](const Vec&) { return 1.0; }, [](const Vec&) { return false; }, unit_box(2),
                                 config(10000));
    CHECK(none.value == 0.0);
    CHECK(none.has(kEmptyRegion));
    CHECK(flag_names(none.flags) == std::vector<std::string>{"empty_region"});
}

TEST_CASE("refinement respects its budget and reduces the error")
{
    auto peaked = [](const Vec& p) { return 1.0 / std::sqrt((p - Vec::Constant(2, 0.3)).norm() + 1e-3); };
    auto plain = integrate_box(peaked, unit_box(2), config(20000));
    QuadratureConfig cfg = config(20000);
    cfg.target_rel_stderr = 1e-9;
    cfg.max_refinements = 4;
    auto refined = integrate_box(peaked, unit_box(2), cfg);
    CHECK(refined.samples <= cfg.budget * (1 + static_cast<std::uint64_t>(cfg.max_refinements)));
    CHECK(refined.samples > plain.samples);
    CHECK(refined.std_error < plain.std_error);
    CHECK(refined.has(kBudgetExhausted));
    CHECK(std::abs(refined.value - plain.value) <= 3.0 * std::hypot(refined.std_error, plain.std_error));

    cfg.target_rel_stderr = 0.5;
    auto easy = integrate_box(peaked, unit_box(2), cfg);
    CHECK_FALSE(easy.has(kBudgetExhausted));
    CHECK(easy.samples == plain.samples);
}

TEST_CASE("invalid input is rejected")
{
    auto nan_at_corner = [](const Vec& p) { return p[0] > 0.99 ? std::nan("") : 1.0; };
    CHECK_THROWS_AS(integrate_box(nan_at_corner, unit_box(1), config(10000)), NumericalError);
    CHECK_THROWS_WITH(integrate_box(nan_at_corner, unit_box(1), config(10000)),
                      Catch::Matchers::ContainsSubstring("non-finite integrand"));
    QuadratureConfig cfg = config(100);
    cfg.strata_per_axis = 10;
    CHECK_THROWS_AS(integrate_box([](const Vec&) { return 1.0; }, unit_box(2), cfg), UsageError);
    CHECK_THROWS_AS(integrate_box([](const Vec&) { return 1.0; }, unit_box(2), config(0)), UsageError);
}
