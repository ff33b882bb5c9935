// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lball/operator_model.hpp"
#include "lball/quadrature.hpp"
#include "lball/types.hpp"

#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <utility>

namespace lball {

/// log g(tau), where g(tau) = sup_y Gamma(z, (y, t - tau)) is the Gaussian peak.
inline double log_peak(const OperatorModel& op, double tau)
{
    Eigen::LLT<Mat> llt(op.covariance(tau).cov);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("covariance not positive definite at lag " + std::to_string(tau));
    }
    Mat l = llt.matrixL();
    return -0.5 * op.spatial_dim() * std::log(2.0 * std::numbers::pi) - l.diagonal().array().log().sum();
}

/// Largest time lag reached by Omega_r(x): the root of r g(tau) = 1.
inline double lag_extent(const OperatorModel& op, double radius)
{
    const double log_r = std::log(radius);
    auto excess = [&](double log_tau) { return log_r + log_peak(op, std::exp(log_tau)); };
    double lo = 0.0;
    double hi = 0.0;
    if (excess(0.0) > 0.0) {
        hi = 1.0;
        while (excess(hi) > 0.0) {
            lo = hi;
            hi += 1.0;
            if (hi > 60.0) {
                throw UsageError("L-ball of radius " + std::to_string(radius) + " for '" + op.id() +
                                 "' is unbounded in time (kernel peak does not decay)");
            }
        }
    } else {
        lo = -1.0;
        while (excess(lo) <= 0.0) {
            hi = lo;
            lo -= 1.0;
            if (lo < -600.0) {
                throw NumericalError("could not bracket the L-ball time extent");
            }
        }
    }
    std::uintmax_t iters = 200;
    auto [a, b] = boost::math::tools::toms748_solve(excess, lo, hi, boost::math::tools::eps_tolerance<double>(52),
                                                    iters);
    // Smaller lag keeps r g(tau) >= 1, so every lag below it belongs to the ball.
    return std::exp(0.5 * (a + b));
}

/// The superlevel set Omega_r(x) = { zeta : Gamma(x, zeta) > 1/r }.
class LBall {
public:
    LBall(ModelPtr op, SpaceTimePoint center, double radius)
        : op_(std::move(op)), center_(std::move(center)), radius_(radius)
    {
        if (!op_) {
            throw UsageError("L-ball needs an operator model");
        }
        if (!(radius_ > 0.0) || !std::isfinite(radius_)) {
            throw UsageError("L-ball radius must be positive and finite");
        }
        op_->check_dim(center_.coords());
        tau_max_ = lag_extent(*op_, radius_);
    }

    const OperatorModel& op() const { return *op_; }
    const ModelPtr& model() const { return op_; }
    const SpaceTimePoint& center() const { return center_; }
    double radius() const { return radius_; }
    double tau_max() const { return tau_max_; }

private:
    ModelPtr op_;
    SpaceTimePoint center_;
    double radius_;
    double tau_max_;
};

/// Membership test by log-space comparison, strict inequality.  The center
/// counts as a member (Gamma blows up there).
inline bool contains(const LBall& ball, const Vec& zeta)
{
    const Vec& x = ball.center().coords();
    if (zeta == x) {
        return true;
    }
    return ball.op().log_gamma(x, zeta) > -std::log(ball.radius());
}

inline bool contains(const LBall& ball, const SpaceTimePoint& zeta) { return contains(ball, zeta.coords()); }

/// A point of Omega_r(x) produced by the ball chart.
struct ChartPoint {
    Vec zeta;
    double jacobian = 0.0;    // d zeta / d(sigma, omega)
    double log_rgamma = 0.0;  // log(r Gamma(x, zeta)) > 0
    double kernel = 0.0;      // <A grad Gamma, grad Gamma> / Gamma^2
};

/// Parametrizes Omega_r(x) by (sigma, omega) in (0,1) x B_1(0):
///
///     tau  = tau_max sigma^2,
///     zeta = (exp(tau B) x + L(tau) rho(tau) omega,  t - tau),
///
/// with L L^T = C(tau) and rho^2 = 2 log(r g(tau)).  Every chart point is a
/// ball member and log(r Gamma) = (rho^2 / 2)(1 - |omega|^2) holds exactly,
/// so weights that vanish on the boundary keep full relative accuracy.  The
/// sigma^2 substitution absorbs the integrable apex singularity of the
/// mean-value kernel.
class BallChart {
public:
    explicit BallChart(const LBall& ball) : ball_(ball), n_(ball.op().spatial_dim())
    {
        x_ = ball.center().space();
        t_ = ball.center().time();
        log_r_ = std::log(ball.radius());
    }

    int dim() const { return n_ + 1; }

    BoundingBox parameter_box() const
    {
        Vec lo = Vec::Constant(n_ + 1, -1.0);
        Vec hi = Vec::Constant(n_ + 1, 1.0);
        lo[0] = 0.0;
        return BoundingBox(lo, hi);
    }

    /// Maps a parameter point; `mirror` negates omega.  Returns false outside
    /// the chart domain.
    bool map(const Vec& param, ChartPoint& out, bool mirror = false) const
    {
        const OperatorModel& op = ball_.op();
        double sigma = param[0];
        Vec omega = param.tail(n_);
        if (mirror) {
            omega = -omega;
        }
        double omega2 = omega.squaredNorm();
        if (!(sigma > 0.0) || omega2 >= 1.0) {
            return false;
        }
        double tau = ball_.tau_max() * sigma * sigma;
        CovarianceValue cv = op.covariance(tau);
        Eigen::LLT<Mat> llt(cv.cov);
        if (llt.info() != Eigen::Success) {
            return false;
        }
        Mat l = llt.matrixL();
        double log_det_half = l.diagonal().array().log().sum();
        double log_rg = log_r_ - 0.5 * n_ * std::log(2.0 * std::numbers::pi) - log_det_half;
        if (!(log_rg > 0.0)) {
            return false;
        }
        double rho = std::sqrt(2.0 * log_rg);
        Vec w = rho * omega;
        out.zeta.resize(n_ + 1);
        out.zeta.head(n_) = op.transport(tau) * x_ + l * w;
        out.zeta[n_] = t_ - tau;
        out.jacobian = std::exp(log_det_half) * std::pow(rho, n_) * 2.0 * ball_.tau_max() * sigma;
        out.log_rgamma = log_rg * (1.0 - omega2);
        Vec p = l.transpose().triangularView<Eigen::Upper>().solve(w);
        out.kernel = p.dot(op.diffusion() * p);
        return true;
    }

private:
    const LBall& ball_;
    int n_;
    Vec x_;
    double t_;
    double log_r_;
};

namespace detail {

/// Golden-section maximization of f on [a, b].
inline double golden_max(const std::function<double(double)>& f, double a, double b)
{
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = f(c);
    double fd = f(d);
    for (int it = 0; it < 200 && (b - a) > 1e-15 * std::max(1.0, std::abs(b)); ++it) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    return std::max({fc, fd, f(a), f(b)});
}

}  // namespace detail

/// Certified box containing Omega_r(x).  Each lag slice is the ellipsoid
/// { y : |L^{-1}(y - m(tau))| < rho(tau) } whose axis extent is
/// m_i +- rho sqrt(C_ii); the box is the envelope over tau in (0, tau_max).
/// Closed form when B = 0, otherwise a dense scan refined by golden section
/// and padded by a relative 1e-6.
inline BoundingBox bounding_box(const LBall& ball)
{
    const OperatorModel& op = ball.op();
    const int n = op.spatial_dim();
    const Vec x = ball.center().space();
    const double t = ball.center().time();
    const double tau_max = ball.tau_max();
    Vec lo(n + 1);
    Vec hi(n + 1);
    lo[n] = t - tau_max;
    hi[n] = t;
    if (op.drift_is_zero()) {
        for (int i = 0; i < n; ++i) {
            double half = std::sqrt(2.0 * op.diffusion()(i, i) * n * tau_max / std::numbers::e);
            lo[i] = x[i] - half;
            hi[i] = x[i] + half;
        }
        return BoundingBox(lo, hi);
    }
    const double log_r = std::log(ball.radius());
    auto extent = [&](double sigma, int axis, double sign) {
        double tau = tau_max * sigma * sigma;
        if (tau <= 0.0) {
            return sign * x[axis];
        }
        double rho2 = 2.0 * (log_r + log_peak(op, tau));
        double rho = rho2 > 0.0 ? std::sqrt(rho2) : 0.0;
        double mean = (op.transport(tau) * x)[axis];
        double sd = std::sqrt(op.covariance(tau).cov(axis, axis));
        return sign * mean + rho * sd;
    };
    const int scan = 4096;
    for (int axis = 0; axis < n; ++axis) {
        for (double sign : {1.0, -1.0}) {
            int best = 0;
            double best_val = -INFINITY;
            for (int k = 1; k < scan; ++k) {
                double v = extent(static_cast<double>(k) / scan, axis, sign);
                if (v > best_val) {
                    best_val = v;
                    best = k;
                }
            }
            double a = static_cast<double>(std::max(best - 1, 0)) / scan;
            double b = static_cast<double>(std::min(best + 1, scan)) / scan;
            double refined = detail::golden_max([&](double s) { return extent(s, axis, sign); }, a, b);
            double m = std::max(best_val, refined);
            double pad = 1e-6 * std::abs(m - sign * x[axis]) + 1e-12;
            if (sign > 0) {
                hi[axis] = m + pad;
            } else {
                lo[axis] = -m - pad;
            }
        }
    }
    return BoundingBox(lo, hi);
}

/// Generic box search for kernels without Gaussian structure: grow each face
/// (doubling) until the sampled face maximum of Gamma stays below
/// 1 / (margin r).  Not certified; callers flag results from it.
inline BoundingBox fallback_bounding_box(const std::function<double(const Vec&)>& log_gamma, const Vec& center,
                                         double radius, double initial_half = 0.1, double margin = 1.1,
                                         int face_points = 17)
{
    const auto dim = static_cast<int>(center.size());
    const double threshold = -std::log(margin * radius);
    Vec lo = center - Vec::Constant(dim, initial_half);
    Vec hi = center + Vec::Constant(dim, initial_half);
    hi[dim - 1] = center[dim - 1];
    auto face_hot = [&](int axis, double value) {
        int others = dim - 1;
        std::uint64_t total = 1;
        for (int k = 0; k < others; ++k) {
            total *= static_cast<std::uint64_t>(face_points);
        }
        Vec p(dim);
        for (std::uint64_t idx = 0; idx < total; ++idx) {
            std::uint64_t rem = idx;
            for (int a = 0, k = 0; a < dim; ++a) {
                if (a == axis) {
                    p[a] = value;
                    continue;
                }
                double frac = static_cast<double>(rem % static_cast<std::uint64_t>(face_points)) / (face_points - 1);
                rem /= static_cast<std::uint64_t>(face_points);
                p[a] = lo[a] + frac * (hi[a] - lo[a]);
                ++k;
            }
            if (p != center && log_gamma(p) > threshold) {
                return true;
            }
        }
        return false;
    };
    for (int iter = 0; iter < 64; ++iter) {
        bool grew = false;
        for (int axis = 0; axis < dim; ++axis) {
            if (face_hot(axis, lo[axis])) {
                lo[axis] = center[axis] - 2.0 * (center[axis] - lo[axis]);
                grew = true;
            }
            if (axis != dim - 1 && face_hot(axis, hi[axis])) {
                hi[axis] = center[axis] + 2.0 * (hi[axis] - center[axis]);
                grew = true;
            }
        }
        if (!grew) {
            return BoundingBox(lo, hi);
        }
    }
    throw NumericalError("fallback bounding box search did not converge");
}

/// Monte Carlo |Omega_r(x)| from the membership indicator over the box.
inline IntegralEstimate estimate_volume(const LBall& ball, const QuadratureConfig& cfg)
{
    BoundingBox box = bounding_box(ball);
    return integrate_region([](const Vec&) { return 1.0; }, [&](const Vec& p) { return contains(ball, p); }, box,
                            cfg);
}

/// Largest distance from x to a corner of `box`.
inline double max_corner_distance(const BoundingBox& box, const Vec& x)
{
    double s = 0.0;
    for (int i = 0; i < box.dim(); ++i) {
        double d = std::max(std::abs(box.lo[i] - x[i]), std::abs(box.hi[i] - x[i]));
        s += d * d;
    }
    return std::sqrt(s);
}

/// A radius r with Omega_r(x) inside the Euclidean ball B(x, R), found by
/// halving from r = 1 and certified through the bounding box.
inline double radius_inside_euclidean_ball(const ModelPtr& op, const SpaceTimePoint& x, double euclid_radius)
{
    if (!(euclid_radius > 0.0)) {
        throw UsageError("Euclidean radius must be positive");
    }
    double r = 1.0;
    for (int it = 0; it < 2000; ++it) {
        if (max_corner_distance(bounding_box(LBall(op, x, r)), x.coords()) <= euclid_radius) {
            return r;
        }
        r *= 0.5;
    }
    throw NumericalError("no admissible L-ball radius found");
}

/// Box containing Omega_r(x) for every x in G.  The mean exp(tau B) x is
/// linear in x, so per-lag extents peak at corners of G and the hull of the
/// corner boxes is exact.
inline BoundingBox union_bounding_box(const ModelPtr& op, const BoundingBox& g, double radius)
{
    const int dim = g.dim();
    op->check_dim(g.lo);
    std::optional<BoundingBox> hull;
    for (std::uint64_t mask = 0; mask < (1ull << dim); ++mask) {
        Vec corner(dim);
        for (int a = 0; a < dim; ++a) {
            corner[a] = (mask >> a) & 1ull ? g.hi[a] : g.lo[a];
        }
        BoundingBox b = bounding_box(LBall(op, SpaceTimePoint(corner), radius));
        hull = hull ? hull->hull(b) : b;
    }
    return *hull;
}

}  // namespace lball
