// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lball/geometry.hpp"
#include "lball/meanvalue.hpp"
#include "lball/potential.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lball {

/// r_k = r_max ratio^k, k = 0..count-1.
struct RadiusSchedule {
    double r_max = 1.0;
    double ratio = 0.5;
    int count = 5;

    void validate() const
    {
        if (!(r_max > 0.0) || !(ratio > 0.0 && ratio < 1.0) || count < 1) {
            throw UsageError("schedule needs r_max > 0, 0 < ratio < 1 and count >= 1");
        }
    }

    std::vector<double> radii() const
    {
        validate();
        std::vector<double> r;
        for (int k = 0; k < count; ++k) {
            r.push_back(r_max * std::pow(ratio, k));
        }
        return r;
    }

    /// Parses "r_max:ratio:count".
    static RadiusSchedule parse(const std::string& text)
    {
        RadiusSchedule s;
        auto a = text.find(':');
        auto b = text.find(':', a == std::string::npos ? a : a + 1);
        if (a == std::string::npos || b == std::string::npos) {
            throw UsageError("schedule must look like r_max:ratio:count, got '" + text + "'");
        }
        try {
            s.r_max = std::stod(text.substr(0, a));
            s.ratio = std::stod(text.substr(a + 1, b - a - 1));
            s.count = std::stoi(text.substr(b + 1));
        } catch (const std::exception&) {
            throw UsageError("schedule must look like r_max:ratio:count, got '" + text + "'");
        }
        s.validate();
        return s;
    }
};

/// A field realization for one batch; `keep_alive` owns whatever the
/// function refers to (a tabulated grid, for instance).
struct BatchField {
    ScalarFn u;
    std::shared_ptr<const void> keep_alive;
};

/// Produces the field used by batch `seed` around point z.  Deterministic
/// fields ignore both arguments; tabulated potentials build a fresh grid.
using FieldFactory = std::function<BatchField(const Vec& z, std::uint64_t seed)>;

inline FieldFactory fixed_field(ScalarFn u)
{
    return [u = std::move(u)](const Vec&, std::uint64_t) { return BatchField{u, nullptr}; };
}

/// Grid around z covering the bounding box of Omega_{r_max}(z), `cells`
/// cells across it, plus `margin` cells on every side (the future side
/// included, so z is interior).
inline GridSpec local_grid_spec(const ModelPtr& op, const Vec& z, double r_max, int cells = 24, int margin = 6)
{
    BoundingBox box = bounding_box(LBall(op, SpaceTimePoint(z), r_max));
    const int d = box.dim();
    Vec h = (box.hi - box.lo) / cells;
    GridSpec spec;
    spec.box = box.expanded(margin * h);
    spec.resolution.assign(static_cast<std::size_t>(d), cells + 2 * margin + 1);
    return spec;
}

/// u_f tabulated on a local grid per (point, batch seed).
inline FieldFactory potential_field(ModelPtr op, SourceField src, double r_max, QuadratureConfig grid_cfg,
                                    int cells = 24, int margin = 6)
{
    return [=](const Vec& z, std::uint64_t seed) {
        GridSpec spec = local_grid_spec(op, z, r_max, cells, margin);
        auto grid = std::make_shared<FieldGrid>(tabulate_potential(*op, src, spec, grid_cfg.with_seed(seed)));
        return BatchField{grid->as_function(), grid};
    };
}

/// Adds a deterministic field to every realization of `base`.
inline FieldFactory plus_field(FieldFactory base, ScalarFn extra)
{
    return [=](const Vec& z, std::uint64_t seed) {
        BatchField b = base(z, seed);
        ScalarFn u = [f = b.u, extra](const Vec& p) { return f(p) + extra(p); };
        return BatchField{u, b.keep_alive};
    };
}

/// (M_r(u)(z) - u(z)) / Q_r(z) from one sample set.  The numerator is
/// integrated as M_r(u - u(z)), equal to it because M_r(1) = 1, and the
/// quotient error is propagated to first order:
/// se = sqrt(se_num^2 + ratio^2 se_Q^2) / Q.
inline IntegralEstimate asymptotic_ratio(const LBall& ball, const ScalarFn& u, const QuadratureConfig& cfg)
{
    const double u0 = u(ball.center().coords());
    auto est = integrate_over_ball(
        ball, 2,
        [&](const BallSample& s, std::span<double> out) {
            out[0] = (u(s.zeta) - u0) * s.m_density;
            out[1] = s.n_density;
        },
        cfg);
    const IntegralEstimate& num = est[0];
    const IntegralEstimate& q = est[1];
    if (!(q.value > 3.0 * q.std_error)) {
        throw NumericalError("Q_r is not positive beyond 3 stderr; the asymptotic ratio is undefined");
    }
    IntegralEstimate r = num;
    r.value = num.value / q.value;
    r.std_error = std::sqrt(num.std_error * num.std_error + r.value * r.value * q.std_error * q.std_error) / q.value;
    return r;
}

/// Options for the batch-resampled convergence study.
struct AsymptoticOptions {
    int batches = 10;
    double max_q_rel_error = 0.1;
    double slope_noise_fraction = 0.2;
    int modulus_lattice = 24;  // points per chart axis for the sampled modulus
};

struct ConvergenceEntry {
    double r = 0.0;
    double ratio = 0.0;
    double std_error = 0.0;
    double q = 0.0;
    double q_rel_error = 0.0;
    bool usable = true;
    double modulus = 0.0;
    // Identity ratio = -N_r(f)/Q_r; present when a source is supplied.
    double identity_target = 0.0;
    double identity_target_se = 0.0;
    double identity_diff = 0.0;
    double identity_diff_se = 0.0;
};

struct ConvergenceReport {
    std::vector<ConvergenceEntry> entries;
    std::optional<double> limit;
    double limit_se = 0.0;
    std::optional<double> slope;
    std::string status = "INCONCLUSIVE";  // PASS, FAIL or INCONCLUSIVE
    std::optional<double> target;
    double tolerance = 0.0;
};

/// sup |f - f(z)| over a chart lattice of Omega_r(z), or the source's
/// modulus hint over the ball's bounding box when one is supplied.
inline double sampled_modulus(const LBall& ball, const SourceField& src, int lattice)
{
    const Vec& z = ball.center().coords();
    const double fz = src.f(z);
    if (src.modulus_hint) {
        return src.modulus_hint(z, bounding_box(ball));
    }
    BallChart chart(ball);
    const int n = ball.op().spatial_dim();
    double sup = 0.0;
    std::size_t total = 1;
    for (int a = 0; a < n + 1; ++a) {
        total *= static_cast<std::size_t>(lattice + 1);
    }
    Vec p(n + 1);
    for (std::size_t idx = 0; idx < total; ++idx) {
        std::size_t rem = idx;
        for (int a = 0; a < n + 1; ++a) {
            auto k = static_cast<double>(rem % static_cast<std::size_t>(lattice + 1));
            rem /= static_cast<std::size_t>(lattice + 1);
            p[a] = a == 0 ? std::max(k, 0.5) / lattice : -1.0 + 2.0 * k / lattice;
        }
        // Pull the omega lattice slightly inside the unit ball so boundary points count.
        p.tail(n) *= 0.999999;
        ChartPoint pt;
        if (chart.map(p, pt)) {
            sup = std::max(sup, std::abs(src.f(pt.zeta) - fz));
        }
    }
    return sup;
}

namespace detail {

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

inline MeanSe batch_stats(const std::vector<double>& xs)
{
    MeanSe m;
    const auto n = static_cast<double>(xs.size());
    for (double x : xs) {
        m.mean += x / n;
    }
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) {
            ss += (x - m.mean) * (x - m.mean);
        }
        m.se = std::sqrt(ss / (n - 1.0) / n);
    }
    return m;
}

}  // namespace detail

/// Estimates L_a u(z) = lim (M_r(u) - u)/Q_r along a schedule.
///
/// Errors come from joint resampling: each of `batches` re-estimates draws a
/// fresh field realization and fresh ball samples, and the reported standard
/// error is the spread of the batch ratios.  With a single batch the
/// first-order quotient error is used instead.  Entries whose Q_r relative
/// error exceeds the threshold are reported but not used for extrapolation.
inline ConvergenceReport estimate_La(const ModelPtr& op, const FieldFactory& field, const Vec& z,
                                     const RadiusSchedule& schedule, const QuadratureConfig& cfg,
                                     const SourceField* source = nullptr, const AsymptoticOptions& opt = {})
{
    if (opt.batches < 1) {
        throw UsageError("need at least one batch");
    }
    op->check_dim(z);
    const std::vector<double> radii = schedule.radii();
    const std::size_t nr = radii.size();
    std::vector<std::vector<double>> ratios(nr);
    std::vector<std::vector<double>> targets(nr);
    std::vector<std::vector<double>> diffs(nr);
    std::vector<double> q_sum(nr, 0.0);
    std::vector<double> q_rel(nr, 0.0);
    std::vector<double> single_se(nr, 0.0);
    for (int b = 0; b < opt.batches; ++b) {
        std::uint64_t batch_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(b));
        BatchField bf = field(z, batch_seed);
        const double u0 = bf.u(z);
        for (std::size_t k = 0; k < nr; ++k) {
            LBall ball(op, SpaceTimePoint(z), radii[k]);
            auto est = integrate_over_ball(
                ball, 3,
                [&](const BallSample& s, std::span<double> out) {
                    out[0] = (bf.u(s.zeta) - u0) * s.m_density;
                    out[1] = s.n_density;
                    out[2] = source ? source->f(s.zeta) * s.n_density : 0.0;
                },
                cfg.with_seed(mix_seed(batch_seed, 0xBA11ull + k)));
            const double q = est[1].value;
            if (!(q > 3.0 * est[1].std_error)) {
                throw NumericalError("Q_r is not positive beyond 3 stderr at r = " + std::to_string(radii[k]));
            }
            double ratio = est[0].value / q;
            ratios[k].push_back(ratio);
            targets[k].push_back(-est[2].value / q);
            diffs[k].push_back((est[0].value + est[2].value) / q);
            q_sum[k] += q / opt.batches;
            q_rel[k] = std::max(q_rel[k], est[1].std_error / q);
            single_se[k] = std::sqrt(est[0].std_error * est[0].std_error +
                                     ratio * ratio * est[1].std_error * est[1].std_error) /
                           q;
        }
    }
    ConvergenceReport rep;
    for (std::size_t k = 0; k < nr; ++k) {
        ConvergenceEntry e;
        e.r = radii[k];
        auto rs = detail::batch_stats(ratios[k]);
        auto ts = detail::batch_stats(targets[k]);
        auto ds = detail::batch_stats(diffs[k]);
        e.ratio = rs.mean;
        e.std_error = opt.batches > 1 ? rs.se : single_se[k];
        e.q = q_sum[k];
        e.q_rel_error = q_rel[k];
        e.usable = q_rel[k] <= opt.max_q_rel_error;
        if (source) {
            e.modulus = sampled_modulus(LBall(op, SpaceTimePoint(z), radii[k]), *source, opt.modulus_lattice);
            e.identity_target = ts.mean;
            e.identity_target_se = ts.se;
            e.identity_diff = ds.mean;
            e.identity_diff_se = ds.se;
        }
        rep.entries.push_back(e);
    }
    std::vector<const ConvergenceEntry*> usable;
    for (const auto& e : rep.entries) {
        if (e.usable) {
            usable.push_back(&e);
        }
    }
    if (usable.empty()) {
        return rep;
    }
    if (usable.size() == 1) {
        rep.limit = usable[0]->ratio;
        rep.limit_se = usable[0]->std_error;
    } else {
        const auto* a = usable[usable.size() - 2];
        const auto* b = usable[usable.size() - 1];
        if (a->std_error > 0.0 && b->std_error > 0.0) {
            double wa = 1.0 / (a->std_error * a->std_error);
            double wb = 1.0 / (b->std_error * b->std_error);
            rep.limit = (wa * a->ratio + wb * b->ratio) / (wa + wb);
            rep.limit_se = 1.0 / std::sqrt(wa + wb);
        } else {
            rep.limit = 0.5 * (a->ratio + b->ratio);
            rep.limit_se = 0.5 * std::hypot(a->std_error, b->std_error);
        }
        double lo = INFINITY;
        double hi = -INFINITY;
        for (const auto* e : usable) {
            lo = std::min(lo, e->ratio);
            hi = std::max(hi, e->ratio);
        }
        double spread = hi - lo;
        std::vector<double> xs;
        std::vector<double> ys;
        for (const auto* e : usable) {
            double dev = std::abs(e->ratio - *rep.limit);
            if (e->std_error < opt.slope_noise_fraction * spread && dev > 0.0) {
                xs.push_back(std::log(e->r));
                ys.push_back(std::log(dev));
            }
        }
        if (xs.size() >= 2) {
            double mx = 0.0;
            double my = 0.0;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                mx += xs[i] / static_cast<double>(xs.size());
                my += ys[i] / static_cast<double>(xs.size());
            }
            double sxy = 0.0;
            double sxx = 0.0;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                sxy += (xs[i] - mx) * (ys[i] - my);
                sxx += (xs[i] - mx) * (xs[i] - mx);
            }
            if (sxx > 0.0) {
                rep.slope = sxy / sxx;
            }
        }
    }
    rep.status = "PASS";
    return rep;
}

/// Compares the extrapolated limit with a target: PASS iff
/// |limit - target| <= tolerance + 3 limit_se.  INCONCLUSIVE stays.
inline void judge_limit(ConvergenceReport& rep, double target, double tolerance)
{
    rep.target = target;
    rep.tolerance = tolerance;
    if (!rep.limit) {
        rep.status = "INCONCLUSIVE";
        return;
    }
    rep.status = std::abs(*rep.limit - target) <= tolerance + 3.0 * rep.limit_se ? "PASS" : "FAIL";
}

/// Multiplier on a batch standard error with the same two-sided coverage as
/// `sigma` normal standard deviations, given that the error itself was
/// estimated from `batches` samples (Student t, batches - 1 dof).
inline double batch_coverage_factor(double sigma, int batches)
{
    if (batches < 2) {
        return sigma;
    }
    double p = boost::math::cdf(boost::math::normal_distribution<double>(), sigma);
    return boost::math::quantile(boost::math::students_t_distribution<double>(batches - 1), p);
}

/// Per-point verdict of L_a u = -f.
struct PointVerdict {
    Vec point;
    double f_value = 0.0;
    ConvergenceReport report;
    std::string status;       // final-entry rule
    bool bound_every_r = true;  // |ratio + f| <= modulus + 3 se at every r
    bool identity_every_r = true;
};

struct SolutionCheckOptions {
    AsymptoticOptions asymptotic;
    double identity_abs_tol = 0.0;
    double identity_sigma = 3.0;  // normal-equivalent; see batch_coverage_factor
    double target_sign = -1.0;  // the limit should equal target_sign * f(z)
};

/// At each point: PASS iff the final schedule entry satisfies
/// |ratio + f(z)| <= modulus + 3 stderr; INCONCLUSIVE when that entry's Q_r is
/// too noisy.  Also records the bound at every r and the per-r identity
/// ratio = -N_r(f)/Q_r within the combined batch error scaled to
/// identity_sigma coverage, plus identity_abs_tol.
inline std::vector<PointVerdict> check_asymptotic_solution(const ModelPtr& op, const FieldFactory& field,
                                                           const SourceField& f, const std::vector<Vec>& points,
                                                           const RadiusSchedule& schedule,
                                                           const QuadratureConfig& cfg,
                                                           const SolutionCheckOptions& opt = {})
{
    std::vector<PointVerdict> out;
    const double identity_factor = batch_coverage_factor(opt.identity_sigma, opt.asymptotic.batches);
    for (std::size_t i = 0; i < points.size(); ++i) {
        PointVerdict v;
        v.point = points[i];
        v.f_value = f.f(points[i]);
        QuadratureConfig point_cfg = cfg.with_seed(mix_seed(cfg.seed, 0x9017ull + i));
        v.report = estimate_La(op, field, points[i], schedule, point_cfg, &f, opt.asymptotic);
        const double target = opt.target_sign * v.f_value;
        for (const auto& e : v.report.entries) {
            if (std::abs(e.ratio - target) > e.modulus + 3.0 * e.std_error) {
                v.bound_every_r = false;
            }
            double combined = std::hypot(e.std_error, e.identity_target_se);
            if (std::abs(e.ratio - e.identity_target) > identity_factor * combined + opt.identity_abs_tol) {
                v.identity_every_r = false;
            }
        }
        const auto& last = v.report.entries.back();
        if (!last.usable) {
            v.status = "INCONCLUSIVE";
        } else {
            v.status = std::abs(last.ratio - target) <= last.modulus + 3.0 * last.std_error ? "PASS" : "FAIL";
        }
        v.report.target = target;
        v.report.tolerance = last.modulus;
        v.report.status = v.status;
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace lball
