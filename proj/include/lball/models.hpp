// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lball/kernel_checks.hpp"
#include "lball/operator_model.hpp"

#include <memory>
#include <string>
#include <vector>

namespace lball {

struct ModelInfo {
    std::string id;
    int total_dim;
    std::string description;
};

/// Tolerances for the checks every constructed model must pass.
struct BuildChecks {
    double mass_tol = 1e-6;
    double chapman_kolmogorov_tol = 1e-6;
    double caloricity_tol = 1e-3;
};

/// Runs mass, Chapman-Kolmogorov and caloricity checks; throws NumericalError
/// naming the first failure.
inline void verify_kernel(const OperatorModel& op, const BuildChecks& checks = {})
{
    const int n = op.spatial_dim();
    for (double tau : {1e-3, 0.5, 1.0}) {
        Eigen::LLT<Mat> llt(op.covariance(tau).cov);
        if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0)) {
            throw NumericalError("model '" + op.id() + "' rejected: covariance singular at lag " + std::to_string(tau) +
                                 " (operator not hypoelliptic in this representation)");
        }
    }
    Vec z = Vec::Constant(n + 1, 0.1);
    z[n] = 1.0;
    double mass = spatial_mass(op, z, 0.5);
    if (std::abs(mass - 1.0) > checks.mass_tol) {
        throw NumericalError("model '" + op.id() + "' rejected: mass " + std::to_string(mass));
    }
    Vec zeta = Vec::Constant(n + 1, -0.2);
    zeta[n] = 0.0;
    double ck = chapman_kolmogorov_defect(op, z, 0.4, zeta);
    if (ck > checks.chapman_kolmogorov_tol) {
        throw NumericalError("model '" + op.id() + "' rejected: Chapman-Kolmogorov defect " + std::to_string(ck));
    }
    double cal = caloricity_residual(op, z, zeta);
    if (cal > checks.caloricity_tol) {
        throw NumericalError("model '" + op.id() + "' rejected: caloricity residual " + std::to_string(cal));
    }
}

/// Builds L = div(A0 grad) + <B y, grad> - d/dt with its Gaussian kernel.
/// The covariance integral is closed-form for nilpotent B and adaptive
/// quadrature otherwise.  The model is verified before it is returned.
inline ModelPtr make_lp_operator(std::string id, const Mat& diffusion, const Mat& drift,
                                 std::optional<Dilation> dilation = std::nullopt)
{
    const auto n = diffusion.rows();
    if (n < 1 || n > kMaxDim - 1 || diffusion.cols() != n || drift.rows() != n || drift.cols() != n) {
        throw UsageError("make_lp_operator: A0 and B must be square with matching size <= 3");
    }
    if (!diffusion.isApprox(diffusion.transpose(), 0.0)) {
        throw UsageError("make_lp_operator: A0 must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Mat> eig(diffusion);
    if (eig.eigenvalues().minCoeff() < -1e-12) {
        throw UsageError("make_lp_operator: A0 must be positive semidefinite");
    }
    if (!(diffusion(0, 0) > 0.0)) {
        throw UsageError("make_lp_operator: A0(0,0) must be positive");
    }
    Mat power = drift;
    for (Eigen::Index k = 1; k < n; ++k) {
        power = power * drift;
    }
    CovarianceFn cov = power.isZero(0.0) ? detail::polynomial_covariance(diffusion, drift)
                                         : detail::quadrature_covariance(diffusion, drift);
    auto op = std::make_shared<const OperatorModel>(std::move(id), diffusion, drift, std::move(cov),
                                                    std::move(dilation));
    verify_kernel(*op);
    return op;
}

inline ModelPtr make_heat_model(int spatial_dim)
{
    if (spatial_dim < 1 || spatial_dim > kMaxDim - 1) {
        throw UsageError("heat model needs 1 <= n <= 3");
    }
    Mat a0 = Mat::Identity(spatial_dim, spatial_dim);
    Mat b = Mat::Zero(spatial_dim, spatial_dim);
    Dilation d;
    d.weights.assign(static_cast<std::size_t>(spatial_dim), 1);
    d.weights.push_back(2);
    d.gamma_degree = -spatial_dim;
    return make_lp_operator("heat_" + std::to_string(spatial_dim) + "d", a0, b, d);
}

/// d_vv + v d_x - d_t on (v, x, t).
inline ModelPtr make_kolmogorov_model()
{
    Mat a0 = Mat::Zero(2, 2);
    a0(0, 0) = 1.0;
    Mat b = Mat::Zero(2, 2);
    b(1, 0) = 1.0;
    return make_lp_operator("kolmogorov_1d", a0, b, Dilation{{1, 3, 2}, -4.0});
}

/// Negative-control fixture: Kolmogorov coefficients with a wrong kernel
/// covariance [[2t, t^2], [t^2, t^3]].  Still a normalized Gaussian, so mass
/// checks pass, but it is not a fundamental solution.  Bypasses verification.
inline ModelPtr make_corrupted_kolmogorov_model()
{
    Mat a0 = Mat::Zero(2, 2);
    a0(0, 0) = 1.0;
    Mat b = Mat::Zero(2, 2);
    b(1, 0) = 1.0;
    CovarianceFn cov = [](double tau) {
        CovarianceValue v{Mat(2, 2), Mat(2, 2)};
        v.cov << 2.0 * tau, tau * tau, tau * tau, tau * tau * tau;
        v.rate << 2.0, 2.0 * tau, 2.0 * tau, 3.0 * tau * tau;
        return v;
    };
    return std::make_shared<const OperatorModel>("kolmogorov_1d_corrupt", a0, b, std::move(cov),
                                                 Dilation{{1, 3, 2}, -4.0});
}

inline const std::vector<ModelInfo>& list_models()
{
    static const std::vector<ModelInfo> models{
        {"heat_1d", 2, "heat operator d_yy - d_t"},
        {"heat_2d", 3, "heat operator Laplacian_y - d_t"},
        {"heat_3d", 4, "heat operator Laplacian_y - d_t"},
        {"kolmogorov_1d", 3, "Kolmogorov operator d_vv + v d_x - d_t"},
    };
    return models;
}

/// Registry lookup.  Built-in models are constructed once and shared.
inline ModelPtr make_model(const std::string& id)
{
    if (id == "heat_1d") {
        static const ModelPtr m = make_heat_model(1);
        return m;
    }
    if (id == "heat_2d") {
        static const ModelPtr m = make_heat_model(2);
        return m;
    }
    if (id == "heat_3d") {
        static const ModelPtr m = make_heat_model(3);
        return m;
    }
    if (id == "kolmogorov_1d") {
        static const ModelPtr m = make_kolmogorov_model();
        return m;
    }
    if (id == "kolmogorov_1d_corrupt") {
        static const ModelPtr m = make_corrupted_kolmogorov_model();
        return m;
    }
    throw UsageError("unknown operator model '" + id + "'");
}

}  // namespace lball
