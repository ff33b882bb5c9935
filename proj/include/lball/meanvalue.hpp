// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lball/cubature.hpp"
#include "lball/fields.hpp"
#include "lball/geometry.hpp"
#include "lball/quadrature.hpp"

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace lball {

/// w = e^h - 1 - h for h = log(r Gamma) >= 0, accurate as h -> 0.
inline double level_weight(double h)
{
    if (h < 1e-3) {
        return h * h * (0.5 + h * (1.0 / 6.0 + h * (1.0 / 24.0 + h / 120.0)));
    }
    return std::expm1(h) - h;
}

/// One chart sample of Omega_r(x) with the two measure densities it carries:
/// `m_density` = K J / r for M_r and `n_density` = w_r J / r for N_r.
struct BallSample {
    const Vec& zeta;
    double m_density;
    double n_density;
};

/// Integrates several functionals of one ball over a shared sample set.
/// `fn(sample, out)` adds its outputs into `out`.  Each parameter point is
/// paired with its mirror omega -> -omega (antithetic), which cancels terms
/// odd in the chart direction.
template <class Fn>
std::vector<IntegralEstimate> integrate_over_ball(const LBall& ball, int outputs, Fn&& fn, const QuadratureConfig& cfg)
{
    BallChart chart(ball);
    const double inv_r = 1.0 / ball.radius();
    auto sampler = [&](const Vec& p, std::span<double> out) {
        ChartPoint pts[2];
        if (!chart.map(p, pts[0]) || !chart.map(p, pts[1], true)) {
            return false;
        }
        std::array<double, 8> buf{};
        std::span<double> tmp(buf.data(), out.size());
        for (const ChartPoint& pt : pts) {
            std::fill(tmp.begin(), tmp.end(), 0.0);
            BallSample s{pt.zeta, pt.kernel * pt.jacobian * inv_r, level_weight(pt.log_rgamma) * pt.jacobian * inv_r};
            fn(s, tmp);
            for (std::size_t j = 0; j < out.size(); ++j) {
                out[j] += 0.5 * tmp[j];
            }
        }
        return true;
    };
    if (outputs < 1 || outputs > 8) {
        throw UsageError("integrate_over_ball supports 1 to 8 outputs");
    }
    return integrate_multi(sampler, outputs, chart.parameter_box(), cfg);
}

/// M_r(u)(x) = (1/r) int_{Omega_r(x)} u K.
inline IntegralEstimate surface_mean_M(const LBall& ball, const ScalarFn& u, const QuadratureConfig& cfg)
{
    return integrate_over_ball(
        ball, 1, [&](const BallSample& s, std::span<double> out) { out[0] = u(s.zeta) * s.m_density; }, cfg)[0];
}

/// N_r(g)(x) = (1/r) int_{Omega_r(x)} g w_r with w_r = r Gamma - 1 - log(r Gamma).
inline IntegralEstimate volume_functional_N(const LBall& ball, const ScalarFn& g, const QuadratureConfig& cfg)
{
    return integrate_over_ball(
        ball, 1, [&](const BallSample& s, std::span<double> out) { out[0] = g(s.zeta) * s.n_density; }, cfg)[0];
}

/// Q_r(x) = N_r(1)(x).  Throws unless the estimate is positive beyond three
/// standard errors.
inline IntegralEstimate q_r(const LBall& ball, const QuadratureConfig& cfg)
{
    IntegralEstimate q = integrate_over_ball(
        ball, 1, [](const BallSample& s, std::span<double> out) { out[0] = s.n_density; }, cfg)[0];
    if (!(q.value > 3.0 * q.std_error)) {
        throw NumericalError("Q_r estimate " + std::to_string(q.value) + " is not positive beyond 3 stderr");
    }
    return q;
}

/// Direct double-integral form of N_r:
///
///     (1/r) int_0^r int_{Omega_rho(x)} (Gamma - 1/rho) g  d zeta d rho.
///
/// The outer integral uses 64 Gauss-Legendre nodes after rho = r s^2 (which
/// smooths the power-law behaviour at rho = 0); each inner integral runs in
/// the chart of Omega_rho with its own seed.  Slow, intended as an oracle.
inline IntegralEstimate volume_functional_N_reference(const LBall& ball, const ScalarFn& g,
                                                      const QuadratureConfig& cfg)
{
    const auto& rule = gauss_legendre_64();
    const double r = ball.radius();
    IntegralEstimate total;
    double var = 0.0;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
        double s = 0.5 * (rule.nodes[k] + 1.0);
        double w = 0.5 * rule.weights[k];
        double rho = r * s * s;
        double outer = w * 2.0 * r * s / r;
        LBall inner(ball.model(), ball.center(), rho);
        BallChart chart(inner);
        auto est = integrate_box(
            [&](const Vec& p) {
                double acc = 0.0;
                for (bool mirror : {false, true}) {
                    ChartPoint pt;
                    if (chart.map(p, pt, mirror)) {
                        acc += 0.5 * std::expm1(pt.log_rgamma) / rho * g(pt.zeta) * pt.jacobian;
                    }
                }
                return acc;
            },
            chart.parameter_box(), cfg.with_seed(mix_seed(cfg.seed, 0x5EED0000ull + k)));
        total.value += outer * est.value;
        var += outer * outer * est.std_error * est.std_error;
        total.samples += est.samples;
        total.hits += est.hits;
        total.flags |= est.flags & ~static_cast<unsigned>(kEmptyRegion);
    }
    total.std_error = std::sqrt(var);
    return total;
}

/// M_r(u), N_r(g), Q_r, M_r(1) and the residual u(x) - M_r(u) + N_r(g) from a
/// single sample set.  The residual is integrated as one integrand so its
/// standard error reflects the correlation between the terms.
struct JointFunctionals {
    IntegralEstimate m_u;
    IntegralEstimate n_g;
    IntegralEstimate q;
    IntegralEstimate m_one;
    IntegralEstimate residual;
    double u_center = 0.0;
};

inline JointFunctionals joint_functionals(const LBall& ball, const ScalarFn& u, double u_center, const ScalarFn& g,
                                          const QuadratureConfig& cfg)
{
    auto est = integrate_over_ball(
        ball, 5,
        [&](const BallSample& s, std::span<double> out) {
            double uv = u(s.zeta);
            double gv = g(s.zeta);
            out[0] = uv * s.m_density;
            out[1] = gv * s.n_density;
            out[2] = s.n_density;
            out[3] = s.m_density;
            out[4] = -uv * s.m_density + gv * s.n_density;
        },
        cfg);
    JointFunctionals j{est[0], est[1], est[2], est[3], est[4], u_center};
    j.residual.value += u_center;
    return j;
}

/// Residual of the representation u(x) = M_r(u)(x) - N_r(Lu)(x) for a C^2 field.
inline JointFunctionals pj1_functionals(const LBall& ball, const SmoothField& u, const QuadratureConfig& cfg)
{
    const OperatorModel& op = ball.op();
    return joint_functionals(
        ball, u.value, u.value(ball.center().coords()),
        [&](const Vec& z) { return op.apply_operator(u, z); }, cfg);
}

// ---------------------------------------------------------------------------
// Built-in polynomial fields.  Coordinates: heat (y_1..y_n, s); Kolmogorov
// (v, x, t).  "y" and "v" are the first coordinate, "s" and "t" the last.

struct BuiltinFieldInfo {
    std::string id;
    std::string expression;
    std::string family;  // "any", "heat" or "kolmogorov"
};

inline const std::vector<BuiltinFieldInfo>& builtin_fields()
{
    static const std::vector<BuiltinFieldInfo> fields{
        {"one", "1", "any"},
        {"y2_plus_2s", "y^2 + 2s", "heat"},
        {"y3_plus_6ys", "y^3 + 6ys", "heat"},
        {"y4", "y^4", "heat"},
        {"y2s", "y^2 s", "heat"},
        {"v", "v", "kolmogorov"},
        {"x_plus_tv", "x + t v", "kolmogorov"},
        {"v2_plus_2t", "v^2 + 2t", "kolmogorov"},
        {"v3_plus_6vt", "v^3 + 6vt", "kolmogorov"},
        {"v4", "v^4", "kolmogorov"},
    };
    return fields;
}

namespace detail {

// Polynomial in (a, b, c) = (z_0, z_1, z_last) with derivatives given on
// those three slots.
struct Poly3 {
    std::function<double(double, double, double)> f;
    std::function<std::array<double, 3>(double, double, double)> grad;
    std::function<std::array<double, 6>(double, double, double)> hess;  // aa ab ac bb bc cc
};

inline SmoothField poly_field(std::string name, int dim, Poly3 p)
{
    const int last = dim - 1;
    SmoothField u;
    u.name = std::move(name);
    u.value = [p, last](const Vec& z) { return p.f(z[0], last > 1 ? z[1] : 0.0, z[last]); };
    u.gradient = [p, last, dim](const Vec& z) {
        auto g = p.grad(z[0], last > 1 ? z[1] : 0.0, z[last]);
        Vec out = Vec::Zero(dim);
        out[0] = g[0];
        if (last > 1) {
            out[1] = g[1];
        }
        out[last] += g[2];
        return out;
    };
    u.hessian = [p, last, dim](const Vec& z) {
        auto h = p.hess(z[0], last > 1 ? z[1] : 0.0, z[last]);
        Mat out = Mat::Zero(dim, dim);
        int idx[3] = {0, last > 1 ? 1 : -1, last};
        const int pairs[6][2] = {{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}};
        for (int k = 0; k < 6; ++k) {
            int i = idx[pairs[k][0]];
            int j = idx[pairs[k][1]];
            if (i < 0 || j < 0) {
                continue;
            }
            out(i, j) += h[static_cast<std::size_t>(k)];
            if (i != j) {
                out(j, i) += h[static_cast<std::size_t>(k)];
            }
        }
        return out;
    };
    return u;
}

}  // namespace detail

/// Builds a built-in field for points of dimension `dim`.
inline SmoothField builtin_field(const std::string& id, int dim)
{
    using detail::Poly3;
    using A3 = std::array<double, 3>;
    using A6 = std::array<double, 6>;
    if (dim < 2 || dim > kMaxDim) {
        throw UsageError("field dimension must be between 2 and 4");
    }
    if (id == "one") {
        return constant_field(1.0, dim);
    }
    bool kolmogorov_field = id == "v" || id == "x_plus_tv" || id == "v2_plus_2t" || id == "v3_plus_6vt" || id == "v4";
    if (kolmogorov_field && dim != 3) {
        throw UsageError("field '" + id + "' needs (v, x, t) coordinates");
    }
    Poly3 p;
    if (id == "y2_plus_2s" || id == "v2_plus_2t") {
        p = {[](double a, double, double c) { return a * a + 2.0 * c; },
             [](double a, double, double) { return A3{2.0 * a, 0.0, 2.0}; },
             [](double, double, double) { return A6{2.0, 0, 0, 0, 0, 0}; }};
    } else if (id == "y3_plus_6ys" || id == "v3_plus_6vt") {
        p = {[](double a, double, double c) { return a * a * a + 6.0 * a * c; },
             [](double a, double, double c) { return A3{3.0 * a * a + 6.0 * c, 0.0, 6.0 * a}; },
             [](double a, double, double) { return A6{6.0 * a, 0, 6.0, 0, 0, 0}; }};
    } else if (id == "y4" || id == "v4") {
        p = {[](double a, double, double) { return a * a * a * a; },
             [](double a, double, double) { return A3{4.0 * a * a * a, 0.0, 0.0}; },
             [](double a, double, double) { return A6{12.0 * a * a, 0, 0, 0, 0, 0}; }};
    } else if (id == "y2s") {
        p = {[](double a, double, double c) { return a * a * c; },
             [](double a, double, double c) { return A3{2.0 * a * c, 0.0, a * a}; },
             [](double a, double, double c) { return A6{2.0 * c, 0, 2.0 * a, 0, 0, 0}; }};
    } else if (id == "v") {
        p = {[](double a, double, double) { return a; }, [](double, double, double) { return A3{1.0, 0.0, 0.0}; },
             [](double, double, double) { return A6{}; }};
    } else if (id == "x_plus_tv") {
        p = {[](double a, double b, double c) { return b + c * a; },
             [](double a, double, double c) { return A3{c, 1.0, a}; },
             [](double, double, double) { return A6{0, 0, 1.0, 0, 0, 0}; }};
    } else {
        throw UsageError("unknown field '" + id + "'");
    }
    return detail::poly_field(id, dim, std::move(p));
}

/// Field ids with Lu = 0 for the model family.
inline std::vector<std::string> caloric_suite(const OperatorModel& op)
{
    if (op.drift_is_zero()) {
        return {"y2_plus_2s", "y3_plus_6ys"};
    }
    return {"v", "x_plus_tv", "v2_plus_2t", "v3_plus_6vt"};
}

/// C^2 fields with Lu != 0.
inline std::vector<std::string> noncaloric_suite(const OperatorModel& op)
{
    if (op.drift_is_zero()) {
        return {"y4", "y2s"};
    }
    return {"v4"};
}

}  // namespace lball
