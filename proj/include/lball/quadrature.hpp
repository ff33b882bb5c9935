// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lball/parallel.hpp"
#include "lball/rng.hpp"
#include "lball/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lball {

enum EstimateFlag : unsigned {
    kBudgetExhausted = 1u << 0,
    kSingularRegionExcluded = 1u << 1,
    kFallbackBox = 1u << 2,
    kEmptyRegion = 1u << 3,
};

inline std::vector<std::string> flag_names(unsigned flags)
{
    std::vector<std::string> names;
    if (flags & kBudgetExhausted) {
        names.emplace_back("budget_exhausted");
    }
    if (flags & kSingularRegionExcluded) {
        names.emplace_back("singular_region_excluded");
    }
    if (flags & kFallbackBox) {
        names.emplace_back("fallback_box");
    }
    if (flags & kEmptyRegion) {
        names.emplace_back("empty_region");
    }
    return names;
}

/// Monte Carlo estimate with its stratified standard error.
struct IntegralEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::uint64_t samples = 0;
    std::uint64_t hits = 0;
    unsigned flags = 0;

    bool has(EstimateFlag f) const { return (flags & f) != 0; }
    double rel_stderr() const { return value != 0.0 ? std_error / std::abs(value) : (std_error == 0.0 ? 0.0 : INFINITY); }
};

struct QuadratureConfig {
    std::uint64_t seed = 42;
    std::uint64_t budget = 1'000'000;
    int strata_per_axis = 0;  // 0 selects a size from budget and dimension
    std::optional<double> target_rel_stderr;
    int max_refinements = 0;
    int workers = 0;  // 0: LBALL_WORKERS or hardware concurrency

    int strata_for(int dim) const
    {
        if (strata_per_axis > 0) {
            return strata_per_axis;
        }
        double per_axis = std::floor(std::pow(static_cast<double>(budget) / 256.0, 1.0 / dim) + 1e-9);
        return static_cast<int>(std::clamp(per_axis, 1.0, 64.0));
    }

    std::uint64_t stratum_count(int dim) const
    {
        std::uint64_t s = 1;
        for (int a = 0; a < dim; ++a) {
            s *= static_cast<std::uint64_t>(strata_for(dim));
        }
        return s;
    }

    void validate(int dim) const
    {
        if (budget == 0 || max_refinements < 0 || strata_per_axis < 0) {
            throw UsageError("quadrature config: budget must be positive and counts non-negative");
        }
        if (target_rel_stderr && !(*target_rel_stderr > 0.0)) {
            throw UsageError("quadrature config: target relative stderr must be positive");
        }
        if (budget < 2 * stratum_count(dim)) {
            throw UsageError("quadrature config: budget " + std::to_string(budget) + " is below two samples per stratum (" +
                             std::to_string(stratum_count(dim)) + " strata)");
        }
    }

    QuadratureConfig with_seed(std::uint64_t s) const
    {
        QuadratureConfig c = *this;
        c.seed = s;
        return c;
    }

    QuadratureConfig with_budget(std::uint64_t b) const
    {
        QuadratureConfig c = *this;
        c.budget = b;
        return c;
    }
};

namespace detail {

struct Stratum {
    Vec lo;  // unit-cube coordinates
    Vec hi;
    std::uint64_t id = 0;
    int depth = 0;
    std::uint64_t samples = 0;
};

struct StratumResult {
    std::vector<double> mean;
    std::vector<double> var;  // unbiased sample variance
    std::uint64_t hits = 0;
};

template <class Sampler>
StratumResult run_stratum(Sampler& sampler, const Stratum& s, int outputs, const BoundingBox& box,
                          std::uint64_t seed)
{
    const int d = box.dim();
    Substream stream(seed, s.id);
    StratumResult res;
    res.mean.assign(static_cast<std::size_t>(outputs), 0.0);
    std::vector<double> m2(static_cast<std::size_t>(outputs), 0.0);
    std::vector<double> out(static_cast<std::size_t>(outputs), 0.0);
    std::array<double, kMaxDim> u{};
    Vec point(d);
    Vec width = box.hi - box.lo;
    for (std::uint64_t i = 0; i < s.samples; ++i) {
        stream.uniforms(i, d, u);
        for (int a = 0; a < d; ++a) {
            double unit = s.lo[a] + u[static_cast<std::size_t>(a)] * (s.hi[a] - s.lo[a]);
            point[a] = box.lo[a] + unit * width[a];
        }
        std::fill(out.begin(), out.end(), 0.0);
        if (sampler(point, std::span<double>(out))) {
            ++res.hits;
        }
        auto count = static_cast<double>(i + 1);
        for (std::size_t j = 0; j < out.size(); ++j) {
            if (!std::isfinite(out[j])) {
                throw NumericalError("non-finite integrand value at " + format_vec(point));
            }
            double delta = out[j] - res.mean[j];
            res.mean[j] += delta / count;
            m2[j] += delta * (out[j] - res.mean[j]);
        }
    }
    res.var.resize(m2.size());
    for (std::size_t j = 0; j < m2.size(); ++j) {
        res.var[j] = s.samples > 1 ? m2[j] / static_cast<double>(s.samples - 1) : 0.0;
    }
    return res;
}

inline std::vector<Stratum> initial_strata(int dim, int per_axis, std::uint64_t samples_each)
{
    std::uint64_t count = 1;
    for (int a = 0; a < dim; ++a) {
        count *= static_cast<std::uint64_t>(per_axis);
    }
    std::vector<Stratum> strata(count);
    const double w = 1.0 / per_axis;
    for (std::uint64_t k = 0; k < count; ++k) {
        Stratum& s = strata[k];
        s.lo.resize(dim);
        s.hi.resize(dim);
        std::uint64_t rem = k;
        for (int a = dim - 1; a >= 0; --a) {
            auto idx = static_cast<double>(rem % static_cast<std::uint64_t>(per_axis));
            rem /= static_cast<std::uint64_t>(per_axis);
            s.lo[a] = idx * w;
            s.hi[a] = (idx + 1.0 == per_axis) ? 1.0 : (idx + 1.0) * w;
        }
        s.id = k;
        s.samples = samples_each;
    }
    return strata;
}

}  // namespace detail

/// Stratified Monte Carlo over a box with `outputs` simultaneous integrands
/// sharing one sample set.  `sampler(point, out)` writes the integrand values
/// into `out` (pre-zeroed) and returns whether the point lies in the region.
///
/// Sample points depend only on (seed, stratum id, sample index), and results
/// are reduced in stratum order, so estimates are bit-identical for every
/// worker count.  Refinement (single output, target set) splits the strata with
/// the largest variance contribution.
template <class Sampler>
std::vector<IntegralEstimate> integrate_multi(Sampler&& sampler, int outputs, const BoundingBox& box,
                                              const QuadratureConfig& cfg)
{
    const int d = box.dim();
    cfg.validate(d);
    if (outputs < 1) {
        throw UsageError("integrate_multi needs at least one output");
    }
    const int per_axis = cfg.strata_for(d);
    const std::uint64_t base_count = cfg.stratum_count(d);
    const std::uint64_t samples_each = cfg.budget / base_count;
    const int workers = resolve_workers(cfg.workers);
    const double volume = box.volume();
    const auto nout = static_cast<std::size_t>(outputs);

    std::vector<detail::Stratum> strata = detail::initial_strata(d, per_axis, samples_each);
    std::uint64_t next_id = base_count;
    std::uint64_t total_samples = 0;

    // Per-stratum summaries of output 0, kept for refinement.
    std::vector<double> mean0;
    std::vector<double> var0;
    std::vector<double> sum_mean(nout, 0.0);
    std::vector<double> sum_var(nout, 0.0);
    std::uint64_t hits = 0;

    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < strata.size(); start += chunk) {
        std::size_t stop = std::min(strata.size(), start + chunk);
        std::vector<detail::StratumResult> results(stop - start);
        parallel_for(stop - start, workers, [&](std::size_t i) {
            results[i] = detail::run_stratum(sampler, strata[start + i], outputs, box, cfg.seed);
        });
        for (std::size_t i = 0; i < results.size(); ++i) {
            const auto& s = strata[start + i];
            const auto& r = results[i];
            double w = std::ldexp(1.0, -s.depth);
            for (std::size_t j = 0; j < nout; ++j) {
                sum_mean[j] += w * r.mean[j];
                sum_var[j] += w * w * r.var[j] / static_cast<double>(s.samples);
            }
            mean0.push_back(r.mean[0]);
            var0.push_back(r.var[0]);
            hits += r.hits;
            total_samples += s.samples;
        }
    }

    // value = volume * (weighted mean sum) / base_count; dividing last keeps
    // constant integrands exact.
    const auto base = static_cast<double>(base_count);
    unsigned flags = 0;
    if (cfg.target_rel_stderr && outputs == 1) {
        auto estimate0 = [&] {
            double m = 0.0;
            double v = 0.0;
            for (std::size_t k = 0; k < strata.size(); ++k) {
                double w = std::ldexp(1.0, -strata[k].depth);
                m += w * mean0[k];
                v += w * w * var0[k] / static_cast<double>(strata[k].samples);
            }
            IntegralEstimate e;
            e.value = volume * m / base;
            e.std_error = volume * std::sqrt(v) / base;
            return e;
        };
        int round = 0;
        while (estimate0().rel_stderr() > *cfg.target_rel_stderr && round < cfg.max_refinements) {
            ++round;
            std::vector<std::size_t> order(strata.size());
            for (std::size_t k = 0; k < order.size(); ++k) {
                order[k] = k;
            }
            auto contribution = [&](std::size_t k) {
                double w = std::ldexp(1.0, -strata[k].depth);
                return w * w * var0[k] / static_cast<double>(strata[k].samples);
            };
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return contribution(a) > contribution(b); });
            std::size_t pick = std::max<std::size_t>(1, strata.size() / 8);
            std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pick));
            std::sort(chosen.begin(), chosen.end());
            std::vector<detail::Stratum> children;
            for (std::size_t k : chosen) {
                const auto& parent = strata[k];
                Eigen::Index axis = 0;
                (parent.hi - parent.lo).maxCoeff(&axis);
                double mid = 0.5 * (parent.lo[axis] + parent.hi[axis]);
                detail::Stratum a = parent;
                detail::Stratum b = parent;
                a.hi[axis] = mid;
                b.lo[axis] = mid;
                a.depth = b.depth = parent.depth + 1;
                a.id = next_id++;
                b.id = next_id++;
                children.push_back(a);
                children.push_back(b);
            }
            std::vector<detail::StratumResult> results(children.size());
            parallel_for(children.size(), workers, [&](std::size_t i) {
                results[i] = detail::run_stratum(sampler, children[i], 1, box, cfg.seed);
            });
            std::vector<detail::Stratum> next_strata;
            std::vector<double> next_mean;
            std::vector<double> next_var;
            std::size_t c = 0;
            std::size_t ci = 0;
            for (std::size_t k = 0; k < strata.size(); ++k) {
                if (ci < chosen.size() && chosen[ci] == k) {
                    for (int side = 0; side < 2; ++side, ++c) {
                        next_strata.push_back(children[c]);
                        next_mean.push_back(results[c].mean[0]);
                        next_var.push_back(results[c].var[0]);
                        hits += results[c].hits;
                        total_samples += children[c].samples;
                    }
                    ++ci;
                } else {
                    next_strata.push_back(strata[k]);
                    next_mean.push_back(mean0[k]);
                    next_var.push_back(var0[k]);
                }
            }
            strata = std::move(next_strata);
            mean0 = std::move(next_mean);
            var0 = std::move(next_var);
        }
        IntegralEstimate e = estimate0();
        sum_mean[0] = 0.0;
        sum_var[0] = 0.0;
        for (std::size_t k = 0; k < strata.size(); ++k) {
            double w = std::ldexp(1.0, -strata[k].depth);
            sum_mean[0] += w * mean0[k];
            sum_var[0] += w * w * var0[k] / static_cast<double>(strata[k].samples);
        }
        if (e.rel_stderr() > *cfg.target_rel_stderr) {
            flags |= kBudgetExhausted;
        }
    } else if (cfg.target_rel_stderr) {
        double rel = sum_mean[0] != 0.0 ? std::sqrt(sum_var[0]) / std::abs(sum_mean[0]) : 0.0;
        if (rel > *cfg.target_rel_stderr) {
            flags |= kBudgetExhausted;
        }
    }

    std::vector<IntegralEstimate> out(nout);
    for (std::size_t j = 0; j < nout; ++j) {
        out[j].value = volume * sum_mean[j] / base;
        out[j].std_error = volume * std::sqrt(sum_var[j]) / base;
        out[j].samples = total_samples;
        out[j].hits = hits;
        out[j].flags = flags;
        if (hits == 0) {
            out[j].value = 0.0;
            out[j].std_error = 0.0;
            out[j].flags |= kEmptyRegion;
        }
    }
    return out;
}

/// Integral of f over a box.
template <class F>
IntegralEstimate integrate_box(F&& f, const BoundingBox& box, const QuadratureConfig& cfg)
{
    auto sampler = [&](const Vec& p, std::span<double> out) {
        out[0] = f(p);
        return true;
    };
    return integrate_multi(sampler, 1, box, cfg)[0];
}

/// Integral of f times the indicator of a region contained in `box`.
template <class F, class Indicator>
IntegralEstimate integrate_region(F&& f, Indicator&& inside, const BoundingBox& box, const QuadratureConfig& cfg)
{
    auto sampler = [&](const Vec& p, std::span<double> out) {
        if (!inside(p)) {
            return false;
        }
        out[0] = f(p);
        return true;
    };
    return integrate_multi(sampler, 1, box, cfg)[0];
}

/// Combined standard error of independent estimates.
inline double combined_stderr(std::initializer_list<double> errs)
{
    double s = 0.0;
    for (double e : errs) {
        s += e * e;
    }
    return std::sqrt(s);
}

}  // namespace lball
