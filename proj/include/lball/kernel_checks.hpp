// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lball/cubature.hpp"
#include "lball/operator_model.hpp"

#include <cmath>

namespace lball {

/// Box [mean +- k sd] around the spatial Gaussian Gamma(z, (., t - tau)).
inline BoundingBox gaussian_slice_box(const OperatorModel& op, const Vec& z, double tau, double k = 10.0)
{
    const int n = op.spatial_dim();
    Vec mean = op.transport(tau) * z.head(n);
    Vec sd = op.covariance(tau).cov.diagonal().cwiseSqrt();
    return BoundingBox(mean - k * sd, mean + k * sd);
}

inline int cubature_panels(int spatial_dim) { return spatial_dim == 1 ? 8 : (spatial_dim == 2 ? 3 : 1); }

/// Integral of Gamma(z, (y, time(z) - tau)) over y by dense Gauss-Legendre.
inline double spatial_mass(const OperatorModel& op, const Vec& z, double tau)
{
    const int n = op.spatial_dim();
    BoundingBox box = gaussian_slice_box(op, z, tau);
    Vec zeta(n + 1);
    zeta[n] = z[n] - tau;
    return tensor_cubature(
        [&](const Vec& y) {
            zeta.head(n) = y;
            return op.gamma(z, zeta);
        },
        box, cubature_panels(n));
}

/// Relative Chapman-Kolmogorov defect at one triple, by dense cubature over
/// the intermediate slice.  Requires time(z) > mid_time > time(zeta).  The
/// integrand is Gaussian in the intermediate point, so the cubature box is
/// centered on its bridge mean and sized by the bridge covariance.
inline double chapman_kolmogorov_defect(const OperatorModel& op, const Vec& z, double mid_time, const Vec& zeta)
{
    const int n = op.spatial_dim();
    if (!(z[n] > mid_time && mid_time > zeta[n])) {
        throw UsageError("Chapman-Kolmogorov needs time(z) > mid_time > time(zeta)");
    }
    // y ~ N(m1, C1) from z; zeta_y ~ N(E y, C2) given y.
    double tau1 = z[n] - mid_time;
    double tau2 = mid_time - zeta[n];
    Vec m1 = op.transport(tau1) * z.head(n);
    Mat c1_inv = op.covariance(tau1).cov.inverse();
    Mat e = op.transport(tau2);
    Mat c2_inv = op.covariance(tau2).cov.inverse();
    Mat precision = c1_inv + e.transpose() * c2_inv * e;
    Mat post_cov = precision.inverse();
    Vec post_mean = post_cov * (c1_inv * m1 + e.transpose() * c2_inv * zeta.head(n));
    Vec sd = post_cov.diagonal().cwiseSqrt();
    BoundingBox box(post_mean - 10.0 * sd, post_mean + 10.0 * sd);
    Vec mid(n + 1);
    mid[n] = mid_time;
    double composed = tensor_cubature(
        [&](const Vec& y) {
            mid.head(n) = y;
            return op.gamma(z, mid) * op.gamma(mid, zeta);
        },
        box, cubature_panels(n));
    double direct = op.gamma(z, zeta);
    return std::abs(composed - direct) / direct;
}

/// Relative residual of L applied in the first slot to Gamma(., zeta), by
/// Richardson-refined central differences.
inline double caloricity_residual(const OperatorModel& op, const Vec& z, const Vec& zeta)
{
    ScalarFn f = [&](const Vec& p) { return op.gamma(p, zeta); };
    Vec g = fd_gradient(f, z);
    Mat h = fd_hessian(f, z);
    double second = op.coeff_matrix(z).cwiseProduct(h).sum();
    double first = op.drift(z).dot(g);
    double scale = std::abs(second) + std::abs(first);
    if (scale == 0.0) {
        return 0.0;
    }
    return std::abs(second + first) / scale;
}

}  // namespace lball
