// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lball/fields.hpp"
#include "lball/operator_model.hpp"
#include "lball/quadrature.hpp"
#include "lball/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace lball {

/// Compactly supported continuous source f for Gamma-potentials.
struct SourceField {
    std::string kind;  // "bump", "tent", "zero" or "custom"
    double amplitude = 0.0;
    BoundingBox support;
    ScalarFn f;
    // Optional certified bound of sup |f - f(x)| over a box, used in place of
    // the sampled modulus when present.
    std::function<double(const Vec&, const BoundingBox&)> modulus_hint;

    double operator()(const Vec& z) const { return f(z); }
};

inline SourceField make_source(const std::string& kind, const BoundingBox& support, double amplitude)
{
    SourceField s;
    s.kind = kind;
    s.amplitude = amplitude;
    s.support = support;
    if (kind == "bump") {
        s.f = bump_field(support, amplitude).value;
    } else if (kind == "tent") {
        s.f = tent_field(support, amplitude).value;
    } else if (kind == "zero") {
        s.amplitude = 0.0;
        s.f = [](const Vec&) { return 0.0; };
    } else {
        throw UsageError("unknown source type '" + kind + "' (expected bump, tent or zero)");
    }
    return s;
}

inline SourceField scaled_source(const SourceField& src, double c)
{
    SourceField s = src;
    s.kind = "custom";
    s.amplitude = c * src.amplitude;
    s.f = [f = src.f, c](const Vec& z) { return c * f(z); };
    s.modulus_hint = nullptr;
    return s;
}

inline nlohmann::json box_to_json(const BoundingBox& b)
{
    return {{"lo", std::vector<double>(b.lo.data(), b.lo.data() + b.lo.size())},
            {"hi", std::vector<double>(b.hi.data(), b.hi.data() + b.hi.size())}};
}

inline BoundingBox box_from_json(const nlohmann::json& j)
{
    auto lo = j.at("lo").get<std::vector<double>>();
    auto hi = j.at("hi").get<std::vector<double>>();
    if (lo.size() != hi.size() || lo.empty() || lo.size() > static_cast<std::size_t>(kMaxDim)) {
        throw UsageError("box needs lo and hi arrays of equal length 1..4");
    }
    return BoundingBox(Eigen::Map<const Vec>(lo.data(), static_cast<Eigen::Index>(lo.size())),
                       Eigen::Map<const Vec>(hi.data(), static_cast<Eigen::Index>(hi.size())));
}

/// Source spec: {"type": "bump"|"tent"|"zero", "amplitude": a, "support": {"lo": [...], "hi": [...]}}.
inline SourceField source_from_json(const nlohmann::json& j)
{
    try {
        return make_source(j.at("type").get<std::string>(), box_from_json(j.at("support")),
                           j.value("amplitude", 1.0));
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("invalid source spec: ") + e.what());
    }
}

inline nlohmann::json source_to_json(const SourceField& s)
{
    return {{"type", s.kind}, {"amplitude", s.amplitude}, {"support", box_to_json(s.support)}};
}

/// Spot checks: f vanishes on a shell around the support box, and f has no
/// jump discontinuities along random segments (bisection on the larger
/// difference must drive it to zero).  Throws UsageError on failure.
inline void validate_source(const SourceField& src, std::uint64_t seed = 1)
{
    const int d = src.support.dim();
    Substream stream(seed, 0xF1E1Dull);
    std::array<double, 2 * kMaxDim + 1> u{};
    Vec width = src.support.hi - src.support.lo;
    double scale = 0.0;
    for (std::uint64_t k = 0; k < 4000; ++k) {
        stream.uniforms(k, d + 2, u);
        Vec p = src.support.lo + width.cwiseProduct(Eigen::Map<const Vec>(u.data(), d));
        scale = std::max(scale, std::abs(src.f(p)));
        // Push one coordinate onto a face, or slightly past it.
        auto axis = static_cast<int>(u[static_cast<std::size_t>(d)] * d) % d;
        double push = u[static_cast<std::size_t>(d + 1)];
        Vec q = p;
        double beyond = (k % 2 == 0) ? 0.0 : 0.01 * width[axis] * push;
        q[axis] = (push < 0.5) ? src.support.lo[axis] - beyond : src.support.hi[axis] + beyond;
        double v = src.f(q);
        if (v != 0.0) {
            throw UsageError("source '" + src.kind + "' is nonzero (" + std::to_string(v) + ") at " + format_vec(q) +
                             " on or outside its support box");
        }
    }
    if (scale == 0.0) {
        return;
    }
    const double threshold = 1e-6 * scale;
    for (std::uint64_t k = 0; k < 64; ++k) {
        stream.uniforms(10000 + 2 * k, d, u);
        Vec a = src.support.lo + width.cwiseProduct(Eigen::Map<const Vec>(u.data(), d));
        stream.uniforms(10001 + 2 * k, d, u);
        Vec b = src.support.lo + width.cwiseProduct(Eigen::Map<const Vec>(u.data(), d));
        double fa = src.f(a);
        double fb = src.f(b);
        for (int it = 0; it < 48 && std::abs(fa - fb) > threshold; ++it) {
            Vec m = 0.5 * (a + b);
            double fm = src.f(m);
            if (std::abs(fm - fa) >= std::abs(fb - fm)) {
                b = m;
                fb = fm;
            } else {
                a = m;
                fa = fm;
            }
        }
        if (std::abs(fa - fb) > threshold) {
            throw UsageError("source '" + src.kind + "' appears discontinuous near " + format_vec(a));
        }
    }
}

/// CRN estimates of u_f(z) = int Gamma(z, zeta) f(zeta) d zeta at many nodes.
///
/// Each node is written as an integral over (lag, Gaussian quantile):
///
///     u_f(x, t) = int_{tau_lo}^{tau_hi} E[f(exp(tau B) x + L(tau) xi, t - tau)] d tau,
///
/// with tau_lo = max(0, t - s_hi), tau_hi = t - s_lo from the support's time
/// range.  The integrand is bounded, so the pole needs no special handling.
/// All nodes reuse one sample set (sigma, u) with tau = tau_lo + sigma (tau_hi -
/// tau_lo) and xi = Phi^{-1}(u), paired antithetically with -xi; the estimates
/// are therefore smooth functions of the node, and nodes sharing a time
/// coordinate share the covariance factorization.
inline std::vector<IntegralEstimate> potential_at_nodes(const OperatorModel& op, const SourceField& src,
                                                        std::span<const Vec> nodes, const QuadratureConfig& cfg)
{
    const int n = op.spatial_dim();
    if (src.support.dim() != n + 1) {
        throw UsageError("source support dimension does not match operator '" + op.id() + "'");
    }
    for (const Vec& z : nodes) {
        op.check_dim(z);
    }
    std::vector<IntegralEstimate> out(nodes.size());
    if (src.kind == "zero" || nodes.empty()) {
        return out;
    }
    const double s_lo = src.support.lo[n];
    const double s_hi = src.support.hi[n];

    struct TimeGroup {
        double tau_lo;
        double tau_hi;
        double t;
        std::vector<std::size_t> members;
    };
    std::map<double, TimeGroup> by_time;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        double t = nodes[i][n];
        if (t <= s_lo) {
            continue;  // the whole support lies in the future of this node
        }
        auto& g = by_time[t];
        g.t = t;
        g.tau_lo = std::max(0.0, t - s_hi);
        g.tau_hi = t - s_lo;
        g.members.push_back(i);
    }
    if (by_time.empty()) {
        return out;
    }
    std::vector<TimeGroup> groups;
    std::vector<std::size_t> active;
    for (auto& [t, g] : by_time) {
        groups.push_back(g);
        active.insert(active.end(), g.members.begin(), g.members.end());
    }
    std::vector<std::size_t> slot(nodes.size(), 0);
    for (std::size_t k = 0; k < active.size(); ++k) {
        slot[active[k]] = k;
    }

    BoundingBox unit(Vec::Zero(n + 1), Vec::Ones(n + 1));
    auto sampler = [&](const Vec& p, std::span<double> values) {
        Vec xi(n);
        for (int i = 0; i < n; ++i) {
            xi[i] = normal_quantile(p[i + 1]);
        }
        Vec zeta(n + 1);
        for (const TimeGroup& g : groups) {
            double len = g.tau_hi - g.tau_lo;
            double tau = g.tau_lo + p[0] * len;
            Eigen::LLT<Mat> llt(op.covariance(tau).cov);
            Mat l = llt.matrixL();
            Vec shift = l * xi;
            Mat e = op.transport(tau);
            zeta[n] = g.t - tau;
            for (std::size_t idx : g.members) {
                Vec mean = e * nodes[idx].head(n);
                zeta.head(n) = mean + shift;
                double a = src.f(zeta);
                zeta.head(n) = mean - shift;
                double b = src.f(zeta);
                values[slot[idx]] = 0.5 * len * (a + b);
            }
        }
        return true;
    };
    auto est = integrate_multi(sampler, static_cast<int>(active.size()), unit, cfg);
    for (std::size_t k = 0; k < active.size(); ++k) {
        out[active[k]] = est[k];
        out[active[k]].flags &= ~static_cast<unsigned>(kEmptyRegion);
    }
    return out;
}

/// u_f(z) at a single point.
inline IntegralEstimate gamma_potential(const OperatorModel& op, const SourceField& src, const SpaceTimePoint& z,
                                        const QuadratureConfig& cfg)
{
    std::vector<Vec> nodes{z.coords()};
    return potential_at_nodes(op, src, nodes, cfg)[0];
}

// ---------------------------------------------------------------------------
// Tabulated fields.

enum class Interpolation { Multilinear, CubicSpline };

inline std::string interpolation_name(Interpolation i) { return i == Interpolation::CubicSpline ? "cubic" : "linear"; }

inline Interpolation interpolation_from_name(const std::string& s)
{
    if (s == "cubic") {
        return Interpolation::CubicSpline;
    }
    if (s == "linear") {
        return Interpolation::Multilinear;
    }
    throw UsageError("unknown interpolation '" + s + "' (expected cubic or linear)");
}

struct GridMetadata {
    std::string model;
    std::uint64_t seed = 0;
    std::uint64_t budget = 0;
    nlohmann::json source;  // echo of the source spec, may be null
};

/// Values on a regular tensor grid (nodes include the box faces), stored
/// row-major with the last (time) axis fastest, plus per-node standard errors.
class FieldGrid {
public:
    FieldGrid() = default;

    FieldGrid(BoundingBox box, std::vector<int> resolution, std::vector<double> values, std::vector<double> errors,
              Interpolation interp, GridMetadata meta)
        : box_(std::move(box)),
          resolution_(std::move(resolution)),
          values_(std::move(values)),
          errors_(std::move(errors)),
          interp_(interp),
          meta_(std::move(meta))
    {
        validate();
        if (interp_ == Interpolation::CubicSpline) {
            build_spline();
        }
    }

    const BoundingBox& box() const { return box_; }
    const std::vector<int>& resolution() const { return resolution_; }
    const std::vector<double>& values() const { return values_; }
    const std::vector<double>& errors() const { return errors_; }
    Interpolation interpolation() const { return interp_; }
    const GridMetadata& metadata() const { return meta_; }
    int dim() const { return box_.dim(); }
    std::size_t size() const { return values_.size(); }

    double spacing(int axis) const
    {
        return (box_.hi[axis] - box_.lo[axis]) / (resolution_[static_cast<std::size_t>(axis)] - 1);
    }

    Vec node(std::size_t flat) const
    {
        Vec p(dim());
        for (int a = dim() - 1; a >= 0; --a) {
            auto na = static_cast<std::size_t>(resolution_[static_cast<std::size_t>(a)]);
            p[a] = box_.lo[a] + static_cast<double>(flat % na) * spacing(a);
            flat /= na;
        }
        return p;
    }

    double max_error() const
    {
        double m = 0.0;
        for (double e : errors_) {
            m = std::max(m, e);
        }
        return m;
    }

    /// Interpolated value; throws outside the box.
    double operator()(const Vec& z) const
    {
        if (z.size() != dim()) {
            throw UsageError("grid lookup dimension mismatch");
        }
        std::array<int, kMaxDim> cell{};
        std::array<double, kMaxDim> frac{};
        for (int a = 0; a < dim(); ++a) {
            double u = (z[a] - box_.lo[a]) / spacing(a);
            int last = resolution_[static_cast<std::size_t>(a)] - 1;
            if (!(u >= -1e-9) || !(u <= last + 1e-9)) {
                throw UsageError("point " + format_vec(z) + " lies outside the tabulated grid");
            }
            int i = std::clamp(static_cast<int>(std::floor(u)), 0, last - 1);
            cell[static_cast<std::size_t>(a)] = i;
            frac[static_cast<std::size_t>(a)] = u - i;
        }
        return interp_ == Interpolation::CubicSpline ? eval_spline(cell, frac) : eval_linear(cell, frac);
    }

    ScalarFn as_function() const
    {
        return [this](const Vec& z) { return (*this)(z); };
    }

private:
    void validate() const
    {
        if (static_cast<int>(resolution_.size()) != box_.dim()) {
            throw FormatError("grid resolution has " + std::to_string(resolution_.size()) + " axes, box has " +
                              std::to_string(box_.dim()));
        }
        std::size_t count = 1;
        for (int r : resolution_) {
            if (r < 2) {
                throw FormatError("grid needs at least two nodes per axis");
            }
            count *= static_cast<std::size_t>(r);
        }
        if (values_.size() != count || errors_.size() != count) {
            throw FormatError("grid holds " + std::to_string(values_.size()) + " values, expected " +
                              std::to_string(count));
        }
        for (double v : values_) {
            if (!std::isfinite(v)) {
                throw FormatError("grid contains non-finite values");
            }
        }
        for (int a = 0; a < box_.dim(); ++a) {
            if (!(box_.hi[a] > box_.lo[a])) {
                throw FormatError("grid box must have positive extent on every axis");
            }
        }
    }

    double eval_linear(const std::array<int, kMaxDim>& cell, const std::array<double, kMaxDim>& frac) const
    {
        const int d = dim();
        double total = 0.0;
        for (int corner = 0; corner < (1 << d); ++corner) {
            double w = 1.0;
            std::size_t flat = 0;
            for (int a = 0; a < d; ++a) {
                int bit = (corner >> a) & 1;
                auto ua = static_cast<std::size_t>(a);
                w *= bit ? frac[ua] : 1.0 - frac[ua];
                flat = flat * static_cast<std::size_t>(resolution_[ua]) + static_cast<std::size_t>(cell[ua] + bit);
            }
            total += w * values_[flat];
        }
        return total;
    }

    // Natural cubic B-spline: per axis, coefficients c_{-1..N} with
    // (c_{i-1} + 4 c_i + c_{i+1}) / 6 = v_i and zero second derivative at
    // both ends, stored on an extended (N+2)-per-axis array.
    void build_spline()
    {
        std::vector<double> data = values_;
        std::vector<int> shape = resolution_;
        for (int axis = 0; axis < dim(); ++axis) {
            auto ua = static_cast<std::size_t>(axis);
            const int len = shape[ua];
            std::size_t outer = 1;
            std::size_t inner = 1;
            for (int a = 0; a < axis; ++a) {
                outer *= static_cast<std::size_t>(shape[static_cast<std::size_t>(a)]);
            }
            for (int a = axis + 1; a < dim(); ++a) {
                inner *= static_cast<std::size_t>(shape[static_cast<std::size_t>(a)]);
            }
            std::vector<int> next_shape = shape;
            next_shape[ua] = len + 2;
            std::vector<double> next(outer * static_cast<std::size_t>(len + 2) * inner);
            std::vector<double> line(static_cast<std::size_t>(len));
            std::vector<double> coef(static_cast<std::size_t>(len));
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    for (int i = 0; i < len; ++i) {
                        line[static_cast<std::size_t>(i)] =
                            data[(o * static_cast<std::size_t>(len) + static_cast<std::size_t>(i)) * inner + in];
                    }
                    solve_natural(line, coef);
                    auto put = [&](int i, double v) {
                        next[(o * static_cast<std::size_t>(len + 2) + static_cast<std::size_t>(i + 1)) * inner + in] = v;
                    };
                    for (int i = 0; i < len; ++i) {
                        put(i, coef[static_cast<std::size_t>(i)]);
                    }
                    put(-1, 2.0 * coef[0] - coef[1]);
                    put(len, 2.0 * coef[static_cast<std::size_t>(len - 1)] - coef[static_cast<std::size_t>(len - 2)]);
                }
            }
            data = std::move(next);
            shape = std::move(next_shape);
        }
        spline_ = std::move(data);
    }

    static void solve_natural(const std::vector<double>& v, std::vector<double>& c)
    {
        const std::size_t n = v.size();
        c = v;
        if (n <= 2) {
            return;
        }
        // Interior rows c_{i-1} + 4 c_i + c_{i+1} = 6 v_i with c_0 = v_0 and c_{n-1} = v_{n-1}.
        std::size_t m = n - 2;
        std::vector<double> diag(m, 4.0);
        std::vector<double> rhs(m);
        for (std::size_t i = 0; i < m; ++i) {
            rhs[i] = 6.0 * v[i + 1];
        }
        rhs[0] -= v[0];
        rhs[m - 1] -= v[n - 1];
        for (std::size_t i = 1; i < m; ++i) {
            double w = 1.0 / diag[i - 1];
            diag[i] -= w;
            rhs[i] -= w * rhs[i - 1];
        }
        c[m] = rhs[m - 1] / diag[m - 1];
        for (std::size_t i = m - 1; i-- > 0;) {
            c[i + 1] = (rhs[i] - c[i + 2]) / diag[i];
        }
    }

    double eval_spline(const std::array<int, kMaxDim>& cell, const std::array<double, kMaxDim>& frac) const
    {
        const int d = dim();
        std::array<std::array<double, 4>, kMaxDim> w{};
        for (int a = 0; a < d; ++a) {
            double t = frac[static_cast<std::size_t>(a)];
            double s = 1.0 - t;
            w[static_cast<std::size_t>(a)] = {s * s * s / 6.0, (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0,
                                              (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0,
                                              t * t * t / 6.0};
        }
        double total = 0.0;
        const int combos = 1 << (2 * d);
        for (int k = 0; k < combos; ++k) {
            double weight = 1.0;
            std::size_t flat = 0;
            for (int a = 0; a < d; ++a) {
                auto ua = static_cast<std::size_t>(a);
                int off = (k >> (2 * a)) & 3;
                weight *= w[ua][static_cast<std::size_t>(off)];
                // Extended index: node i sits at i + 1, so the stencil i-1..i+2 maps to i..i+3.
                flat = flat * static_cast<std::size_t>(resolution_[ua] + 2) + static_cast<std::size_t>(cell[ua] + off);
            }
            total += weight * spline_[flat];
        }
        return total;
    }

    BoundingBox box_;
    std::vector<int> resolution_;
    std::vector<double> values_;
    std::vector<double> errors_;
    Interpolation interp_ = Interpolation::CubicSpline;
    GridMetadata meta_;
    std::vector<double> spline_;
};

struct GridSpec {
    BoundingBox box;
    std::vector<int> resolution;
    Interpolation interpolation = Interpolation::CubicSpline;
    int probes = 20;  // midpoint probes for the interpolation check; 0 disables
};

/// Result of the midpoint probe check.
struct ProbeReport {
    std::vector<Vec> points;
    std::vector<double> interpolated;
    std::vector<IntegralEstimate> direct;
    bool passed = true;
};

/// Tabulates u_f on the grid.  Interpolation error is then checked at cell
/// midpoints against direct estimates drawn from the same sample set: with
/// common random numbers the Monte Carlo noise cancels in the difference, so
/// the comparison isolates interpolation error, which must stay below the
/// probe's standard error or the grid's largest one, whichever is larger.
/// Throws NumericalError when it does not.
inline FieldGrid tabulate_potential(const OperatorModel& op, const SourceField& src, const GridSpec& spec,
                                    const QuadratureConfig& cfg, ProbeReport* probes_out = nullptr)
{
    const int d = spec.box.dim();
    op.check_dim(spec.box.lo);
    if (static_cast<int>(spec.resolution.size()) != d) {
        throw UsageError("grid resolution needs one entry per axis");
    }
    std::size_t count = 1;
    for (int r : spec.resolution) {
        if (r < 2) {
            throw UsageError("grid resolution must be at least 2 per axis");
        }
        count *= static_cast<std::size_t>(r);
    }
    GridMetadata meta{op.id(), cfg.seed, cfg.budget, source_to_json(src)};
    FieldGrid shape(spec.box, spec.resolution, std::vector<double>(count, 0.0), std::vector<double>(count, 0.0),
                    Interpolation::Multilinear, meta);
    std::vector<Vec> nodes(count);
    for (std::size_t i = 0; i < count; ++i) {
        nodes[i] = shape.node(i);
    }
    auto est = potential_at_nodes(op, src, nodes, cfg);
    std::vector<double> values(count);
    std::vector<double> errors(count);
    for (std::size_t i = 0; i < count; ++i) {
        values[i] = est[i].value;
        errors[i] = est[i].std_error;
    }
    FieldGrid grid(spec.box, spec.resolution, std::move(values), std::move(errors), spec.interpolation, meta);
    if (spec.probes > 0 && src.kind != "zero") {
        ProbeReport report;
        Substream stream(mix_seed(cfg.seed, 0x9B0BEull), 0);
        std::array<double, kMaxDim> u{};
        for (int k = 0; k < spec.probes; ++k) {
            stream.uniforms(static_cast<std::uint64_t>(k), d, u);
            Vec p(d);
            for (int a = 0; a < d; ++a) {
                int cells = spec.resolution[static_cast<std::size_t>(a)] - 1;
                int c = std::min(cells - 1, static_cast<int>(u[static_cast<std::size_t>(a)] * cells));
                p[a] = spec.box.lo[a] + (c + 0.5) * grid.spacing(a);
            }
            report.points.push_back(p);
            report.interpolated.push_back(grid(p));
        }
        report.direct = potential_at_nodes(op, src, report.points, cfg);
        // Where u_f is nearly zero its local stderr vanishes too, so the
        // grid's largest stderr serves as the floor.
        const double floor = grid.max_error();
        for (std::size_t k = 0; k < report.points.size(); ++k) {
            double diff = std::abs(report.interpolated[k] - report.direct[k].value);
            if (diff > std::max(report.direct[k].std_error, floor)) {
                report.passed = false;
            }
        }
        if (probes_out) {
            *probes_out = report;
        }
        if (!report.passed) {
            throw NumericalError("grid interpolation error exceeds the Monte Carlo standard error at a midpoint "
                                 "probe; use a finer grid");
        }
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Persistence: "LBGRID01", u64 header length, JSON header, then values and
// standard errors as little-endian float64, row-major.

inline constexpr char kGridMagic[8] = {'L', 'B', 'G', 'R', 'I', 'D', '0', '1'};
inline constexpr int kGridFormatVersion = 1;

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v)
{
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<unsigned char>(v >> (8 * i));
    }
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is)
{
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) {
        throw FormatError("grid file truncated");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    }
    return v;
}

}  // namespace detail

inline void save_grid(const FieldGrid& grid, const std::string& path)
{
    nlohmann::json header{
        {"format", "lball-grid"},
        {"version", kGridFormatVersion},
        {"model", grid.metadata().model},
        {"box", box_to_json(grid.box())},
        {"resolution", grid.resolution()},
        {"seed", grid.metadata().seed},
        {"budget", grid.metadata().budget},
        {"interpolation", interpolation_name(grid.interpolation())},
        {"source", grid.metadata().source},
        {"count", grid.size()},
    };
    std::string text = header.dump();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw Error("cannot open '" + path + "' for writing");
    }
    os.write(kGridMagic, sizeof(kGridMagic));
    detail::write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* arr : {&grid.values(), &grid.errors()}) {
        for (double v : *arr) {
            detail::write_u64(os, std::bit_cast<std::uint64_t>(v));
        }
    }
    if (!os) {
        throw Error("failed writing grid to '" + path + "'");
    }
}

/// Loads a grid; when `expected_model` is non-empty the stored model id must match.
inline FieldGrid load_grid(const std::string& path, const std::string& expected_model = "")
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error("cannot open grid file '" + path + "'");
    }
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kGridMagic, 8) != 0) {
        throw FormatError("'" + path + "' is not a grid file (bad magic)");
    }
    std::uint64_t len = detail::read_u64(is);
    if (len > (1u << 24)) {
        throw FormatError("grid header length " + std::to_string(len) + " is implausible");
    }
    std::string text(len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(len))) {
        throw FormatError("grid file truncated in header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("grid header is not valid JSON: ") + e.what());
    }
    try {
        if (header.at("format").get<std::string>() != "lball-grid") {
            throw FormatError("unexpected grid format tag");
        }
        int version = header.at("version").get<int>();
        if (version != kGridFormatVersion) {
            throw FormatError("unsupported grid format version " + std::to_string(version));
        }
        GridMetadata meta;
        meta.model = header.at("model").get<std::string>();
        meta.seed = header.at("seed").get<std::uint64_t>();
        meta.budget = header.at("budget").get<std::uint64_t>();
        meta.source = header.value("source", nlohmann::json());
        if (!expected_model.empty() && meta.model != expected_model) {
            throw FormatError("grid was built for model '" + meta.model + "', not '" + expected_model + "'");
        }
        BoundingBox box = box_from_json(header.at("box"));
        auto resolution = header.at("resolution").get<std::vector<int>>();
        auto count = header.at("count").get<std::uint64_t>();
        if (resolution.size() != static_cast<std::size_t>(box.dim())) {
            throw FormatError("grid resolution and box dimensions disagree");
        }
        std::uint64_t expected = 1;
        for (int r : resolution) {
            if (r < 2 || r > (1 << 20)) {
                throw FormatError("grid resolution entry out of range");
            }
            expected *= static_cast<std::uint64_t>(r);
        }
        if (expected != count) {
            throw FormatError("grid count does not match its resolution");
        }
        std::vector<double> values(count);
        std::vector<double> errors(count);
        for (auto* arr : {&values, &errors}) {
            for (auto& v : *arr) {
                v = std::bit_cast<double>(detail::read_u64(is));
            }
        }
        if (is.peek() != std::char_traits<char>::eof()) {
            throw FormatError("grid file has trailing bytes");
        }
        return FieldGrid(std::move(box), std::move(resolution), std::move(values), std::move(errors),
                         interpolation_from_name(header.at("interpolation").get<std::string>()), std::move(meta));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("grid header is malformed: ") + e.what());
    } catch (const UsageError& e) {
        throw FormatError(std::string("grid header is malformed: ") + e.what());
    }
}

}  // namespace lball
