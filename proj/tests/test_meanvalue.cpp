// SPDX-License-Identifier: Apache-2.0
#include "lball/meanvalue.hpp"
#include "lball/models.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace lball;

namespace {

QuadratureConfig config(std::uint64_t budget, std::uint64_t seed = 42)
{
    QuadratureConfig cfg;
    cfg.budget = budget;
    cfg.seed = seed;
    return cfg;
}

std::vector<Vec> centers(int dim)
{
    std::vector<Vec> out;
    std::mt19937_64 rng(static_cast<std::uint64_t>(dim) * 1000u + 1u);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int k = 0; k < 5; ++k) {
        Vec c(dim);
        for (int i = 0; i < dim; ++i) {
            c[i] = u(rng);
        }
        out.push_back(c);
    }
    return out;
}

double slope(const std::vector<double>& x, const std::vector<double>& y)
{
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]) / static_cast<double>(x.size());
        my += std::log(y[i]) / static_cast<double>(x.size());
    }
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
        sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    }
    return sxy / sxx;
}

}  // namespace

TEST_CASE("level weight")
{
    CHECK(level_weight(1e-12) == Catch::Approx(0.5e-24).epsilon(1e-11));
    for (double h : {1e-6, 5e-4, 1e-3, 2e-3, 0.1, 1.0, 10.0}) {
        long double exact = std::expm1(static_cast<long double>(h)) - static_cast<long double>(h);
        CHECK(level_weight(h) == Catch::Approx(static_cast<double>(exact)).epsilon(1e-9));
        CHECK(level_weight(h) > 0.0);
    }
    CHECK(level_weight(0.0) == 0.0);
}

TEST_CASE("built-in fields have consistent derivatives")
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    for (const auto& info : builtin_fields()) {
        int dim = info.family == "kolmogorov" ? 3 : 2;
        SmoothField f = builtin_field(info.id, dim);
        for (int k = 0; k < 10; ++k) {
            Vec z(dim);
            for (int i = 0; i < dim; ++i) {
                z[i] = u(rng);
            }
            CHECK((f.gradient(z) - fd_gradient(f.value, z)).norm() <= 1e-4 * std::max(1.0, f.gradient(z).norm()));
            CHECK((f.hessian(z) - fd_hessian(f.value, z)).norm() <= 1e-4 * std::max(1.0, f.hessian(z).norm()));
        }
    }
    CHECK_THROWS_AS(builtin_field("v4", 2), UsageError);
    CHECK_THROWS_AS(builtin_field("nope", 2), UsageError);
}

TEST_CASE("caloric suites are annihilated by L and the others are not")
{
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (const char* id : {"heat_1d", "heat_2d", "kolmogorov_1d"}) {
        auto op = make_model(id);
        const int dim = op->total_dim();
        for (int k = 0; k < 20; ++k) {
            Vec z(dim);
            for (int i = 0; i < dim; ++i) {
                z[i] = u(rng);
            }
            for (const auto& f : caloric_suite(*op)) {
                CHECK(op->apply_operator(builtin_field(f, dim), z, false) == Catch::Approx(0.0).margin(1e-12));
            }
            for (const auto& f : noncaloric_suite(*op)) {
                CHECK(std::abs(op->apply_operator(builtin_field(f, dim), z, false)) > 0.0);
            }
        }
    }
}

TEST_CASE("M_r(1) = 1")
{
    for (const char* id : {"heat_1d", "kolmogorov_1d"}) {
        auto op = make_model(id);
        for (const Vec& c : centers(op->total_dim())) {
            for (double r : {0.25, 0.5, 1.0, 2.0}) {
                LBall ball(op, SpaceTimePoint(c), r);
                auto m = surface_mean_M(ball, [](const Vec&) { return 1.0; }, config(100000));
                CHECK(std::abs(m.value - 1.0) <= 3.0 * m.std_error);
                CHECK(m.std_error < 5e-3);
            }
        }
    }
}

TEST_CASE("mean-value property for caloric fields")
{
    for (const char* id : {"heat_1d", "heat_2d", "kolmogorov_1d"}) {
        auto op = make_model(id);
        for (const auto& fid : caloric_suite(*op)) {
            SmoothField u = builtin_field(fid, op->total_dim());
            for (const Vec& c : centers(op->total_dim())) {
                for (double r : {0.25, 1.0}) {
                    LBall ball(op, SpaceTimePoint(c), r);
                    auto m = surface_mean_M(ball, u.value, config(100000));
                    INFO(id << " " << fid << " r=" << r);
                    CHECK(std::abs(m.value - u.value(c)) <= 3.0 * m.std_error + 1e-12);
                }
            }
        }
    }
    // The caloric example centered at the origin has mean 0.
    auto heat = make_model("heat_1d");
    LBall ball(heat, SpaceTimePoint{0.0, 0.0}, 1.0);
    auto m = surface_mean_M(ball, builtin_field("y2_plus_2s", 2).value, config(100000));
    CHECK(std::abs(m.value) <= 3.0 * m.std_error);
}

TEST_CASE("linearity, positivity and monotonicity of M_r")
{
    auto op = make_model("kolmogorov_1d");
    LBall ball(op, SpaceTimePoint{0.1, 0.2, 0.3}, 0.7);
    auto cfg = config(50000);
    auto f = [](const Vec& z) { return std::sin(z[0]) + z[1] * z[2]; };
    auto m1 = surface_mean_M(ball, f, cfg);
    auto m2 = surface_mean_M(ball, [&](const Vec& z) { return 2.0 * f(z); }, cfg);
    CHECK(m2.value == 2.0 * m1.value);
    CHECK(m2.std_error == 2.0 * m1.std_error);

    auto pos = [](const Vec& z) { return z[0] * z[0]; };
    auto bigger = [](const Vec& z) { return z[0] * z[0] + 0.01 * std::exp(z[1]); };
    auto mp = surface_mean_M(ball, pos, cfg);
    auto mb = surface_mean_M(ball, bigger, cfg);
    CHECK(mp.value >= -3.0 * mp.std_error);
    CHECK(mp.value <= mb.value + 3.0 * std::hypot(mp.std_error, mb.std_error));
}

TEST_CASE("N_r basics")
{
    auto op = make_model("heat_1d");
    LBall ball(op, SpaceTimePoint{0.0, 0.0}, 1.0);
    auto zero = [](const Vec&) { return 0.0; };
    CHECK(volume_functional_N(ball, zero, config(10000)).value == 0.0);
    CHECK(volume_functional_N_reference(ball, zero, config(2000)).value == 0.0);
    auto pos = [](const Vec& z) { return std::exp(z[0]); };
    auto n = volume_functional_N(ball, pos, config(50000));
    CHECK(n.value >= -3.0 * n.std_error);
    auto q = q_r(ball, config(50000));
    CHECK(q.value > 0.0);
}

TEST_CASE("fast N_r agrees with the double-integral reference")
{
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const char* ids[] = {"heat_1d", "kolmogorov_1d"};
    for (int k = 0; k < 10; ++k) {
        auto op = make_model(ids[k % 2]);
        const int dim = op->total_dim();
        Vec c(dim);
        for (int i = 0; i < dim; ++i) {
            c[i] = u(rng);
        }
        double r = std::exp(1.5 * u(rng));
        double a = u(rng);
        double b = u(rng);
        auto g = [a, b](const Vec& z) { return 1.0 + a * z[0] + b * std::cos(3.0 * z[z.size() - 1]); };
        LBall ball(op, SpaceTimePoint(c), r);
        auto fast = volume_functional_N(ball, g, config(100000, 100 + k));
        auto ref = volume_functional_N_reference(ball, g, config(20000, 200 + k));
        INFO("case " << k << " fast " << fast.value << " ref " << ref.value);
        CHECK(std::abs(fast.value - ref.value) <= 3.0 * std::hypot(fast.std_error, ref.std_error));
    }
}

TEST_CASE("Q_r scaling slopes")
{
    std::vector<double> radii{0.25, 0.5, 1.0, 2.0};
    for (auto [id, expected, tol] : {std::tuple{"heat_1d", 2.0, 0.1}, std::tuple{"kolmogorov_1d", 0.5, 0.05}}) {
        auto op = make_model(id);
        std::vector<double> q;
        for (double r : radii) {
            q.push_back(q_r(LBall(op, SpaceTimePoint(Vec::Constant(op->total_dim(), 0.2)), r), config(100000)).value);
        }
        CHECK(std::abs(slope(radii, q) - expected) < tol);
    }
}

TEST_CASE("Q_r is bounded on compacts and stable across seeds")
{
    for (const char* id : {"heat_1d", "kolmogorov_1d"}) {
        auto op = make_model(id);
        const int dim = op->total_dim();
        double sup_a = 0.0;
        double sup_b = 0.0;
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 5; ++j) {
                Vec c = Vec::Zero(dim);
                c[0] = -1.0 + 0.5 * i;
                c[dim - 1] = -1.0 + 0.5 * j;
                LBall ball(op, SpaceTimePoint(c), 0.5);
                sup_a = std::max(sup_a, q_r(ball, config(20000, 1)).value);
                sup_b = std::max(sup_b, q_r(ball, config(20000, 2)).value);
            }
        }
        CHECK(std::isfinite(sup_a));
        CHECK(sup_a == Catch::Approx(sup_b).epsilon(0.02));
    }
}

TEST_CASE("representation residual for non-caloric fields")
{
    for (const char* id : {"heat_1d", "kolmogorov_1d"}) {
        auto op = make_model(id);
        for (const auto& fid : noncaloric_suite(*op)) {
            SmoothField u = builtin_field(fid, op->total_dim());
            for (const Vec& c : centers(op->total_dim())) {
                for (double r : {0.25, 0.5, 1.0}) {
                    LBall ball(op, SpaceTimePoint(c), r);
                    auto j = pj1_functionals(ball, u, config(100000));
                    double tol = 3.0 * j.residual.std_error + 1e-3 * std::max(1.0, std::abs(j.u_center));
                    INFO(id << " " << fid << " r=" << r << " residual " << j.residual.value << " se "
                            << j.residual.std_error);
                    CHECK(std::abs(j.residual.value) <= tol);
                    CHECK(std::abs(j.m_one.value - 1.0) <= 3.0 * j.m_one.std_error);
                }
            }
        }
    }
}

TEST_CASE("doubling Lu breaks the representation")
{
    auto op = make_model("heat_1d");
    SmoothField u = builtin_field("y4", 2);
    LBall ball(op, SpaceTimePoint{0.5, 0.0}, 1.0);
    auto j = joint_functionals(
        ball, u.value, u.value(to_vec({0.5, 0.0})), [&](const Vec& z) { return 2.0 * op->apply_operator(u, z); },
        config(100000));
    CHECK(std::abs(j.residual.value) > 3.0 * j.residual.std_error + 1e-3);
}
