// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>

namespace lball {

/// Largest supported space-time dimension N (spatial dimension n = N - 1).
inline constexpr int kMaxDim = 4;

/// Stack-allocated small vectors and matrices; every hot loop uses these.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller violated a precondition (dimension mismatch, bad parameter).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Kernel evaluated on its diagonal.
class PoleError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, failed factorizations, rejected models.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Malformed files or specs.
class FormatError : public Error {
public:
    using Error::Error;
};

inline std::string format_vec(const Vec& v)
{
    std::ostringstream os;
    os.precision(17);
    os << '(';
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i != 0) {
            os << ", ";
        }
        os << v[i];
    }
    os << ')';
    return os.str();
}

/// A point z in R^N whose final coordinate is time.
class SpaceTimePoint {
public:
    SpaceTimePoint() = default;

    explicit SpaceTimePoint(Vec coords) : coords_(std::move(coords)) { validate(); }

    SpaceTimePoint(std::initializer_list<double> values)
    {
        if (values.size() < 2 || values.size() > static_cast<std::size_t>(kMaxDim)) {
            throw UsageError("space-time point needs between 2 and 4 coordinates");
        }
        coords_.resize(static_cast<Eigen::Index>(values.size()));
        Eigen::Index i = 0;
        for (double v : values) {
            coords_[i++] = v;
        }
        validate();
    }

    int dim() const { return static_cast<int>(coords_.size()); }
    double time() const { return coords_[coords_.size() - 1]; }
    Vec space() const { return coords_.head(coords_.size() - 1); }
    const Vec& coords() const { return coords_; }
    double operator[](int i) const { return coords_[i]; }

    friend bool operator==(const SpaceTimePoint& a, const SpaceTimePoint& b)
    {
        return a.coords_.size() == b.coords_.size() && a.coords_ == b.coords_;
    }

private:
    void validate() const
    {
        if (coords_.size() < 2 || coords_.size() > kMaxDim) {
            throw UsageError("space-time point needs between 2 and 4 coordinates");
        }
        if (!coords_.allFinite()) {
            throw UsageError("space-time point has non-finite coordinates " + format_vec(coords_));
        }
    }

    Vec coords_;
};

/// Axis-aligned closed box [lo_i, hi_i].
struct BoundingBox {
    Vec lo;
    Vec hi;

    BoundingBox() = default;
    BoundingBox(Vec lower, Vec upper) : lo(std::move(lower)), hi(std::move(upper))
    {
        if (lo.size() != hi.size() || lo.size() < 1 || lo.size() > kMaxDim) {
            throw UsageError("bounding box bounds have inconsistent dimensions");
        }
        for (Eigen::Index i = 0; i < lo.size(); ++i) {
            if (!(lo[i] <= hi[i]) || !std::isfinite(lo[i]) || !std::isfinite(hi[i])) {
                throw UsageError("bounding box needs finite lo <= hi on every axis");
            }
        }
    }

    int dim() const { return static_cast<int>(lo.size()); }

    double volume() const
    {
        double v = 1.0;
        for (Eigen::Index i = 0; i < lo.size(); ++i) {
            v *= hi[i] - lo[i];
        }
        return v;
    }

    bool contains(const Vec& p) const
    {
        for (Eigen::Index i = 0; i < lo.size(); ++i) {
            if (p[i] < lo[i] || p[i] > hi[i]) {
                return false;
            }
        }
        return true;
    }

    bool contains(const BoundingBox& other) const
    {
        return contains(other.lo) && contains(other.hi);
    }

    /// Componentwise hull of two boxes.
    BoundingBox hull(const BoundingBox& other) const
    {
        return BoundingBox(lo.cwiseMin(other.lo), hi.cwiseMax(other.hi));
    }

    BoundingBox translated(const Vec& shift) const { return BoundingBox(lo + shift, hi + shift); }

    /// Grow every axis by `margin` on both sides.
    BoundingBox expanded(const Vec& margin) const { return BoundingBox(lo - margin, hi + margin); }
};

inline Vec to_vec(std::initializer_list<double> values)
{
    Vec v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double x : values) {
        v[i++] = x;
    }
    return v;
}

}  // namespace lball
