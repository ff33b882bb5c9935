// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lball/types.hpp"

#include <functional>
#include <optional>
#include <string>
#include <utility>

namespace lball {

using ScalarFn = std::function<double(const Vec&)>;
using GradientFn = std::function<Vec(const Vec&)>;
using HessianFn = std::function<Mat(const Vec&)>;

/// A scalar field on space-time, optionally with analytic derivatives.
struct SmoothField {
    std::string name;
    ScalarFn value;
    GradientFn gradient;  // may be empty
    HessianFn hessian;    // may be empty
    std::optional<BoundingBox> support;

    double operator()(const Vec& z) const { return value(z); }
};

namespace detail {

inline double fd_step(const Vec& z) { return 1e-4 * (1.0 + z.norm()); }

inline Vec central_gradient(const ScalarFn& f, const Vec& z, double h)
{
    Vec g(z.size());
    Vec p = z;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        p[i] = z[i] + h;
        double fp = f(p);
        p[i] = z[i] - h;
        double fm = f(p);
        p[i] = z[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline Mat central_hessian(const ScalarFn& f, const Vec& z, double h)
{
    const Eigen::Index n = z.size();
    Mat hess(n, n);
    Vec p = z;
    const double f0 = f(z);
    for (Eigen::Index i = 0; i < n; ++i) {
        p[i] = z[i] + h;
        double fp = f(p);
        p[i] = z[i] - h;
        double fm = f(p);
        p[i] = z[i];
        hess(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
        for (Eigen::Index j = i + 1; j < n; ++j) {
            p[i] = z[i] + h;
            p[j] = z[j] + h;
            double fpp = f(p);
            p[j] = z[j] - h;
            double fpm = f(p);
            p[i] = z[i] - h;
            double fmm = f(p);
            p[j] = z[j] + h;
            double fmp = f(p);
            p[i] = z[i];
            p[j] = z[j];
            hess(i, j) = hess(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
        }
    }
    return hess;
}

}  // namespace detail

/// Central differences with step 1e-4 (1 + |z|) and one Richardson step.
inline Vec fd_gradient(const ScalarFn& f, const Vec& z)
{
    double h = detail::fd_step(z);
    Vec coarse = detail::central_gradient(f, z, h);
    Vec fine = detail::central_gradient(f, z, 0.5 * h);
    return (4.0 * fine - coarse) / 3.0;
}

inline Mat fd_hessian(const ScalarFn& f, const Vec& z)
{
    double h = detail::fd_step(z);
    Mat coarse = detail::central_hessian(f, z, h);
    Mat fine = detail::central_hessian(f, z, 0.5 * h);
    return (4.0 * fine - coarse) / 3.0;
}

inline Vec field_gradient(const SmoothField& u, const Vec& z, bool allow_fd = true)
{
    if (u.gradient) {
        return u.gradient(z);
    }
    if (!allow_fd) {
        throw UsageError("field '" + u.name + "' has no analytic gradient and fallback is disabled");
    }
    return fd_gradient(u.value, z);
}

inline Mat field_hessian(const SmoothField& u, const Vec& z, bool allow_fd = true)
{
    if (u.hessian) {
        return u.hessian(z);
    }
    if (!allow_fd) {
        throw UsageError("field '" + u.name + "' has no analytic hessian and fallback is disabled");
    }
    return fd_hessian(u.value, z);
}

inline SmoothField constant_field(double c, int dim)
{
    return SmoothField{
        "const",
        [c](const Vec&) { return c; },
        [dim](const Vec&) { return Vec(Vec::Zero(dim)); },
        [dim](const Vec&) { return Mat(Mat::Zero(dim, dim)); },
        std::nullopt,
    };
}

inline SmoothField scaled_field(SmoothField u, double c)
{
    SmoothField out;
    out.name = std::to_string(c) + "*" + u.name;
    out.value = [u, c](const Vec& z) { return c * u.value(z); };
    if (u.gradient) {
        out.gradient = [u, c](const Vec& z) { return Vec(c * u.gradient(z)); };
    }
    if (u.hessian) {
        out.hessian = [u, c](const Vec& z) { return Mat(c * u.hessian(z)); };
    }
    out.support = u.support;
    return out;
}

inline SmoothField sum_fields(SmoothField a, SmoothField b)
{
    SmoothField out;
    out.name = a.name + "+" + b.name;
    out.value = [a, b](const Vec& z) { return a.value(z) + b.value(z); };
    if (a.gradient && b.gradient) {
        out.gradient = [a, b](const Vec& z) { return Vec(a.gradient(z) + b.gradient(z)); };
    }
    if (a.hessian && b.hessian) {
        out.hessian = [a, b](const Vec& z) { return Mat(a.hessian(z) + b.hessian(z)); };
    }
    return out;
}

/// Normalized offset q_i = (z_i - c_i) / h_i of a point relative to a box.
inline Vec box_offset(const BoundingBox& box, const Vec& z)
{
    Vec center = 0.5 * (box.lo + box.hi);
    Vec half = 0.5 * (box.hi - box.lo);
    return (z - center).cwiseQuotient(half);
}

/// C-infinity bump a * exp(1 - 1/(1 - |q|^2)) supported on `box`.
inline SmoothField bump_field(const BoundingBox& box, double amplitude)
{
    Vec half = 0.5 * (box.hi - box.lo);
    for (Eigen::Index i = 0; i < half.size(); ++i) {
        if (!(half[i] > 0.0)) {
            throw UsageError("bump support box must have positive extent on every axis");
        }
    }
    auto value = [box, amplitude](const Vec& z) {
        Vec q = box_offset(box, z);
        double s = q.squaredNorm();
        if (s >= 1.0) {
            return 0.0;
        }
        return amplitude * std::exp(1.0 - 1.0 / (1.0 - s));
    };
    auto gradient = [box, amplitude, half](const Vec& z) {
        Vec q = box_offset(box, z);
        double s = q.squaredNorm();
        Vec g = Vec::Zero(z.size());
        if (s >= 1.0) {
            return g;
        }
        double f = amplitude * std::exp(1.0 - 1.0 / (1.0 - s));
        double dg = -1.0 / ((1.0 - s) * (1.0 - s));
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            g[i] = f * dg * 2.0 * q[i] / half[i];
        }
        return g;
    };
    auto hessian = [box, amplitude, half](const Vec& z) {
        Vec q = box_offset(box, z);
        double s = q.squaredNorm();
        Mat h = Mat::Zero(z.size(), z.size());
        if (s >= 1.0) {
            return h;
        }
        double f = amplitude * std::exp(1.0 - 1.0 / (1.0 - s));
        double one_minus = 1.0 - s;
        double dg = -1.0 / (one_minus * one_minus);
        double d2g = -2.0 / (one_minus * one_minus * one_minus);
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            for (Eigen::Index j = 0; j < z.size(); ++j) {
                double qq = 4.0 * q[i] * q[j] / (half[i] * half[j]);
                double v = f * (dg * dg + d2g) * qq;
                if (i == j) {
                    v += f * dg * 2.0 / (half[i] * half[i]);
                }
                h(i, j) = v;
            }
        }
        return h;
    };
    return SmoothField{"bump", value, gradient, hessian, box};
}

/// Continuous, non-smooth cone a * max(0, 1 - |q|) supported on `box`.
inline SmoothField tent_field(const BoundingBox& box, double amplitude)
{
    auto value = [box, amplitude](const Vec& z) {
        double s = box_offset(box, z).norm();
        return s >= 1.0 ? 0.0 : amplitude * (1.0 - s);
    };
    return SmoothField{"tent", value, {}, {}, box};
}

}  // namespace lball
