// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lball/cubature.hpp"
#include "lball/fields.hpp"
#include "lball/types.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lball {

/// Covariance C(tau) of the Gaussian transition density and its derivative.
struct CovarianceValue {
    Mat cov;
    Mat rate;
};

using CovarianceFn = std::function<CovarianceValue(double tau)>;

/// Anisotropic dilation delta_lambda(z) = (lambda^{w_1} z_1, ..., lambda^{w_N} z_N)
/// under which Gamma(0, delta_lambda zeta) = lambda^{degree} Gamma(0, zeta).
struct Dilation {
    std::vector<int> weights;
    double gamma_degree = 0.0;

    double homogeneous_dimension() const
    {
        double q = 0.0;
        for (int w : weights) {
            q += w;
        }
        return q;
    }
};

/// Evolution operator
///
///     L = div(A0 grad_y) + <B y, grad_y> - d/dt     on R^n x R,
///
/// with constant diffusion A0 and linear drift B, together with its Gaussian
/// fundamental solution
///
///     Gamma((x,t), (y,s)) = N(y; exp(tau B) x, C(tau)),   tau = t - s > 0,
///
/// and zero for tau <= 0.  Heat and Kolmogorov operators are members of this
/// family.  Instances are immutable and safe to share between threads.
class OperatorModel {
public:
    OperatorModel(std::string id, Mat diffusion, Mat drift, CovarianceFn covariance,
                  std::optional<Dilation> dilation = std::nullopt)
        : id_(std::move(id)),
          a0_(std::move(diffusion)),
          drift_(std::move(drift)),
          covariance_(std::move(covariance)),
          dilation_(std::move(dilation))
    {
        const auto n = a0_.rows();
        if (n < 1 || n + 1 > kMaxDim || a0_.cols() != n || drift_.rows() != n || drift_.cols() != n) {
            throw UsageError("operator '" + id_ + "': diffusion and drift must be n x n with n <= 3");
        }
        nilpotent_ = is_nilpotent(drift_);
        drift_powers_.push_back(Mat::Identity(n, n));
        for (Eigen::Index k = 1; k < n; ++k) {
            drift_powers_.push_back(drift_powers_.back() * drift_);
        }
    }

    const std::string& id() const { return id_; }
    int spatial_dim() const { return static_cast<int>(a0_.rows()); }
    int total_dim() const { return spatial_dim() + 1; }
    const Mat& diffusion() const { return a0_; }
    const Mat& drift_matrix() const { return drift_; }
    const std::optional<Dilation>& dilation() const { return dilation_; }
    bool drift_is_zero() const { return drift_.isZero(0.0); }

    /// Full N x N coefficient matrix A(z) = diag(A0, 0).
    Mat coeff_matrix(const Vec& /*z*/) const
    {
        const int n = spatial_dim();
        Mat a = Mat::Zero(n + 1, n + 1);
        a.topLeftCorner(n, n) = a0_;
        return a;
    }

    /// First-order coefficients b(z) = (B y, -1).
    Vec drift(const Vec& z) const
    {
        const int n = spatial_dim();
        Vec b(n + 1);
        b.head(n) = drift_ * z.head(n);
        b[n] = -1.0;
        return b;
    }

    /// div b, constant for this family.
    double drift_divergence() const { return drift_.trace(); }

    /// exp(tau B).
    Mat transport(double tau) const
    {
        if (nilpotent_) {
            Mat e = drift_powers_[0];
            double c = 1.0;
            for (std::size_t k = 1; k < drift_powers_.size(); ++k) {
                c *= tau / static_cast<double>(k);
                e += c * drift_powers_[k];
            }
            return e;
        }
        Mat scaled = tau * drift_;
        return scaled.exp();
    }

    CovarianceValue covariance(double tau) const { return covariance_(tau); }

    /// log Gamma(z, zeta); -infinity when time(z) <= time(zeta).
    double log_gamma(const Vec& z, const Vec& zeta) const
    {
        check_pair(z, zeta);
        const int n = spatial_dim();
        double tau = z[n] - zeta[n];
        if (tau <= 0.0) {
            return -std::numeric_limits<double>::infinity();
        }
        Local loc = local(z, zeta, tau);
        return loc.log_gamma;
    }

    double gamma(const Vec& z, const Vec& zeta) const { return std::exp(log_gamma(z, zeta)); }

    /// Gradient of Gamma(z, .) at zeta (all N components).
    Vec grad_gamma_second(const Vec& z, const Vec& zeta) const
    {
        check_pair(z, zeta);
        const int n = spatial_dim();
        double tau = z[n] - zeta[n];
        if (tau <= 0.0) {
            return Vec::Zero(n + 1);
        }
        Local loc = local(z, zeta, tau);
        return std::exp(loc.log_gamma) * grad_log(loc, z, tau);
    }

    /// <A grad_zeta Gamma, grad_zeta Gamma> / Gamma^2.
    double mv_kernel(const Vec& z, const Vec& zeta) const
    {
        check_pair(z, zeta);
        const int n = spatial_dim();
        double tau = z[n] - zeta[n];
        if (tau <= 0.0) {
            throw UsageError("mean-value kernel is undefined where Gamma vanishes");
        }
        Local loc = local(z, zeta, tau);
        Vec g = grad_log(loc, z, tau);
        Vec gs = g.head(n);
        return gs.dot(a0_ * gs);
    }

    /// L u(z) = sum a_ij d_ij u + <b(z), grad u>.
    double apply_operator(const SmoothField& u, const Vec& z, bool allow_fd = true) const
    {
        check_dim(z);
        Vec g = field_gradient(u, z, allow_fd);
        Mat h = field_hessian(u, z, allow_fd);
        return (coeff_matrix(z).cwiseProduct(h)).sum() + drift(z).dot(g);
    }

    /// L* phi(z) = sum d_i(a_ij d_j phi) - sum d_i(b_i phi).
    double apply_adjoint(const SmoothField& phi, const Vec& z, bool allow_fd = true) const
    {
        check_dim(z);
        Vec g = field_gradient(phi, z, allow_fd);
        Mat h = field_hessian(phi, z, allow_fd);
        return (coeff_matrix(z).cwiseProduct(h)).sum() - drift(z).dot(g) - drift_divergence() * phi.value(z);
    }

    void check_dim(const Vec& z) const
    {
        if (z.size() != total_dim()) {
            throw UsageError("operator '" + id_ + "' expects points of dimension " + std::to_string(total_dim()) +
                             ", got " + std::to_string(z.size()));
        }
    }

private:
    struct Local {
        Mat chol;     // lower Cholesky factor of C(tau)
        Mat rate;     // dC/dtau
        Vec offset;   // q = y - exp(tau B) x
        double log_gamma = 0.0;
    };

    void check_pair(const Vec& z, const Vec& zeta) const
    {
        check_dim(z);
        check_dim(zeta);
        if (z == zeta) {
            throw PoleError("Gamma evaluated at its pole " + format_vec(z));
        }
    }

    Local local(const Vec& z, const Vec& zeta, double tau) const
    {
        const int n = spatial_dim();
        CovarianceValue cv = covariance_(tau);
        Eigen::LLT<Mat> llt(cv.cov);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("operator '" + id_ + "': covariance not positive definite at lag " +
                                 std::to_string(tau));
        }
        Local loc;
        loc.chol = llt.matrixL();
        loc.rate = std::move(cv.rate);
        loc.offset = zeta.head(n) - transport(tau) * z.head(n);
        Vec white = loc.chol.triangularView<Eigen::Lower>().solve(loc.offset);
        double log_det_half = loc.chol.diagonal().array().log().sum();
        loc.log_gamma = -0.5 * n * std::log(2.0 * std::numbers::pi) - log_det_half - 0.5 * white.squaredNorm();
        return loc;
    }

    /// grad_zeta log Gamma.  Spatial part -C^{-1} q; time part d/ds = -d/dtau.
    Vec grad_log(const Local& loc, const Vec& z, double tau) const
    {
        const int n = spatial_dim();
        Vec p = loc.chol.triangularView<Eigen::Lower>().solve(loc.offset);
        p = loc.chol.transpose().triangularView<Eigen::Upper>().solve(p);
        Mat cinv_rate = loc.chol.triangularView<Eigen::Lower>().solve(loc.rate);
        cinv_rate = loc.chol.transpose().triangularView<Eigen::Upper>().solve(cinv_rate);
        Vec offset_rate = -(drift_ * transport(tau) * z.head(n));
        double dtau = -0.5 * cinv_rate.trace() - offset_rate.dot(p) + 0.5 * p.dot(loc.rate * p);
        Vec g(n + 1);
        g.head(n) = -p;
        g[n] = -dtau;
        return g;
    }

    static bool is_nilpotent(const Mat& b)
    {
        Mat power = b;
        for (Eigen::Index k = 1; k < b.rows(); ++k) {
            power = power * b;
        }
        return power.isZero(0.0);
    }

    std::string id_;
    Mat a0_;
    Mat drift_;
    CovarianceFn covariance_;
    std::optional<Dilation> dilation_;
    bool nilpotent_ = false;
    std::vector<Mat> drift_powers_;
};

using ModelPtr = std::shared_ptr<const OperatorModel>;

namespace detail {

/// C(tau) = sum_m P_m tau^m for nilpotent B.
inline CovarianceFn polynomial_covariance(const Mat& a0, const Mat& b)
{
    const Eigen::Index n = a0.rows();
    std::vector<Mat> powers{Mat::Identity(n, n)};
    for (Eigen::Index k = 1; k < n; ++k) {
        powers.push_back(powers.back() * b);
    }
    std::vector<Mat> coeff(static_cast<std::size_t>(2 * n), Mat::Zero(n, n));
    std::vector<double> factorial{1.0, 1.0, 2.0, 6.0, 24.0};
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index k = 0; k < n; ++k) {
            auto m = static_cast<std::size_t>(j + k + 1);
            Mat term = powers[static_cast<std::size_t>(j)] * (2.0 * a0) * powers[static_cast<std::size_t>(k)].transpose();
            coeff[m] += term / (factorial[static_cast<std::size_t>(j)] * factorial[static_cast<std::size_t>(k)] *
                                static_cast<double>(m));
        }
    }
    return [coeff, n](double tau) {
        CovarianceValue v{Mat::Zero(n, n), Mat::Zero(n, n)};
        double tp = 1.0;
        for (std::size_t m = 1; m < coeff.size(); ++m) {
            v.rate += static_cast<double>(m) * tp * coeff[m];
            tp *= tau;
            v.cov += tp * coeff[m];
        }
        return v;
    };
}

/// Adaptive Simpson on the matrix integrand exp(sB) 2A0 exp(sB)^T.
inline Mat adaptive_simpson(const std::function<Mat(double)>& f, double a, double b, const Mat& fa, const Mat& fm,
                            const Mat& fb, double tol, int depth)
{
    double m = 0.5 * (a + b);
    Mat flm = f(0.5 * (a + m));
    Mat frm = f(0.5 * (m + b));
    Mat whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    Mat left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    Mat right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    double err = (left + right - whole).cwiseAbs().maxCoeff();
    if (depth <= 0 || err <= 15.0 * tol) {
        return left + right + (left + right - whole) / 15.0;
    }
    return adaptive_simpson(f, a, m, fa, flm, fm, 0.5 * tol, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, 0.5 * tol, depth - 1);
}

inline CovarianceFn quadrature_covariance(const Mat& a0, const Mat& b)
{
    return [a0, b](double tau) {
        auto integrand = [&](double s) {
            Mat e = (s * b).exp();
            return Mat(e * (2.0 * a0) * e.transpose());
        };
        CovarianceValue v;
        v.rate = integrand(tau);
        if (tau <= 0.0) {
            v.cov = Mat::Zero(a0.rows(), a0.rows());
            return v;
        }
        Mat f0 = integrand(0.0);
        Mat fm = integrand(0.5 * tau);
        double scale = std::max(1.0, v.rate.cwiseAbs().maxCoeff()) * tau;
        v.cov = adaptive_simpson(integrand, 0.0, tau, f0, fm, v.rate, 1e-13 * scale, 40);
        return v;
    };
}

}  // namespace detail

}  // namespace lball
