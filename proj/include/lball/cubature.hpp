// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lball/types.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <array>
#include <vector>

namespace lball {

/// Nodes and weights of a Gauss-Legendre rule on [-1, 1].
struct GaussLegendreRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

namespace detail {

// Boost stores the non-negative half of the rule; mirror it.
template <unsigned N>
GaussLegendreRule make_gauss_legendre()
{
    using G = boost::math::quadrature::gauss<double, N>;
    GaussLegendreRule r;
    const auto& x = G::abscissa();
    const auto& w = G::weights();
    const std::size_t skip = (N % 2 == 1) ? 1 : 0;
    for (std::size_t i = x.size(); i-- > skip;) {
        r.nodes.push_back(-x[i]);
        r.weights.push_back(w[i]);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        r.nodes.push_back(x[i]);
        r.weights.push_back(w[i]);
    }
    return r;
}

}  // namespace detail

inline const GaussLegendreRule& gauss_legendre_32()
{
    static const GaussLegendreRule rule = detail::make_gauss_legendre<32>();
    return rule;
}

inline const GaussLegendreRule& gauss_legendre_64()
{
    static const GaussLegendreRule rule = detail::make_gauss_legendre<64>();
    return rule;
}

/// Composite tensor Gauss-Legendre cubature: `panels` equal panels per axis,
/// 32 nodes per panel.  Deterministic; used for smooth integrands only.
template <class F>
double tensor_cubature(F&& f, const BoundingBox& box, int panels)
{
    const auto& rule = gauss_legendre_32();
    const int d = box.dim();
    const int per_axis = panels * static_cast<int>(rule.nodes.size());
    std::vector<double> node_coord(static_cast<std::size_t>(d * per_axis));
    std::vector<double> node_weight(static_cast<std::size_t>(d * per_axis));
    for (int a = 0; a < d; ++a) {
        double width = (box.hi[a] - box.lo[a]) / panels;
        for (int p = 0; p < panels; ++p) {
            double mid = box.lo[a] + (p + 0.5) * width;
            for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
                auto idx = static_cast<std::size_t>(a * per_axis + p * static_cast<int>(rule.nodes.size())) + k;
                node_coord[idx] = mid + 0.5 * width * rule.nodes[k];
                node_weight[idx] = 0.5 * width * rule.weights[k];
            }
        }
    }
    std::array<int, kMaxDim> index{};
    Vec point(d);
    double total = 0.0;
    while (true) {
        double weight = 1.0;
        for (int a = 0; a < d; ++a) {
            auto idx = static_cast<std::size_t>(a * per_axis + index[static_cast<std::size_t>(a)]);
            point[a] = node_coord[idx];
            weight *= node_weight[idx];
        }
        total += weight * f(point);
        int a = d - 1;
        while (a >= 0 && ++index[static_cast<std::size_t>(a)] == per_axis) {
            index[static_cast<std::size_t>(a)] = 0;
            --a;
        }
        if (a < 0) {
            break;
        }
    }
    return total;
}

}  // namespace lball
