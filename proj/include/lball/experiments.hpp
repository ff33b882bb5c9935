// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lball/asymptotic.hpp"
#include "lball/geometry.hpp"
#include "lball/kernel_checks.hpp"
#include "lball/meanvalue.hpp"
#include "lball/models.hpp"
#include "lball/potential.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace lball {

using nlohmann::json;

inline constexpr const char* kReportSchema = "lball-report/1";

// ---------------------------------------------------------------------------
// Specs

inline const std::vector<std::string>& experiment_ids()
{
    static const std::vector<std::string> ids{"selfcheck", "geometry", "pj1", "pizzetti", "weakform"};
    return ids;
}

namespace detail {

inline json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vec json_vec(const json& j)
{
    auto xs = j.get<std::vector<double>>();
    if (xs.empty() || xs.size() > static_cast<std::size_t>(kMaxDim)) {
        throw UsageError("points need 1 to 4 coordinates");
    }
    return Eigen::Map<const Vec>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

inline json points_json(const std::vector<Vec>& pts)
{
    json a = json::array();
    for (const auto& p : pts) {
        a.push_back(vec_json(p));
    }
    return a;
}

/// [-1, 1]^n x [-1, 0].
inline BoundingBox default_support(int n)
{
    Vec lo = Vec::Constant(n + 1, -1.0);
    Vec hi = Vec::Constant(n + 1, 1.0);
    hi[n] = 0.0;
    return BoundingBox(lo, hi);
}

/// Point m + delta (.) h of a box, with one spatial offset shared by all
/// spatial axes and a separate time offset.
inline Vec box_point(const BoundingBox& b, double ds, double dt)
{
    Vec m = 0.5 * (b.lo + b.hi);
    Vec h = 0.5 * (b.hi - b.lo);
    Vec p = m;
    const int n = b.dim() - 1;
    for (int i = 0; i < n; ++i) {
        p[i] += ((i % 2 == 0) ? ds : -ds) * h[i];
    }
    p[n] += dt * h[n];
    return p;
}

inline std::vector<Vec> default_centers(int dim)
{
    std::vector<Vec> out;
    for (int k = 0; k < 5; ++k) {
        Vec c(dim);
        for (int i = 0; i < dim; ++i) {
            c[i] = std::round(1000.0 * std::sin(1.3 * k + 0.7 * i + 0.5)) / 1000.0;
        }
        out.push_back(c);
    }
    return out;
}

inline std::vector<double> schedule_radii(double lo, double hi, int count)
{
    std::vector<double> r;
    for (int k = 0; k < count; ++k) {
        r.push_back(lo * std::pow(hi / lo, static_cast<double>(k) / (count - 1)));
    }
    return r;
}

}  // namespace detail

/// Defaults for every spec key, given experiment and model.  Tolerances and
/// knobs documented in the README.
inline json experiment_defaults(const std::string& experiment, const std::string& model_id)
{
    ModelPtr op = make_model(model_id);
    const int n = op->spatial_dim();
    const int dim = n + 1;
    const bool kolmogorov = !op->drift_is_zero();
    BoundingBox support = detail::default_support(n);
    json d;
    d["experiment"] = experiment;
    d["model"] = model_id;
    d["seed"] = 42;
    d["quadrature"] = {{"budget", 1000000}, {"strata_per_axis", 0}, {"target_rel_stderr", nullptr},
                       {"max_refinements", 0}};
    d["negative_control"] = false;
    d["output"] = {{"json", ""}, {"csv", ""}};
    json src = source_to_json(make_source("bump", support, 1.0));
    if (experiment == "selfcheck") {
        Vec kernel_point = Vec::Constant(dim, 0.3);
        kernel_point[n] = 1.0;
        Vec id_point(dim);
        for (int i = 0; i < n; ++i) {
            id_point[i] = 0.2 / (i + 1);
        }
        id_point[n] = -0.4;
        d["points"] = detail::points_json({kernel_point});
        d["identity_points"] = detail::points_json({id_point});
        d["phi_support"] = box_to_json(support);
        d["lags"] = {0.1, 0.5, 2.0};
        d["tolerances"] = {{"mass", 1e-3},    {"chapman_kolmogorov", 1e-2}, {"caloricity", 1e-3},
                           {"decay", 1e-2},   {"pole_log10", 4.0},          {"distributional", 2e-2}};
        d["params"] = {{"decay_radius", 1e4}, {"decay_box", 1.0}, {"decay_lattice", 21}, {"pole_lag", 1e-10}};
    } else if (experiment == "geometry") {
        d["points"] = detail::points_json({Vec::Constant(dim, 0.2)});
        d["radii"] = detail::schedule_radii(0.1, 1.0, 4);
        double q = op->dilation() ? op->dilation()->homogeneous_dimension() : n + 2.0;
        d["tolerances"] = {{"volume_slope", 0.1},  {"q_slope", kolmogorov ? 0.05 : 0.1}, {"shrink", 0.1},
                           {"containment", 0.0},   {"single_point", 1e-12}};
        d["params"] = {{"volume_slope_target", q / (q - 2.0)},
                       {"q_slope_target", 2.0 / (q - 2.0)},
                       {"shrink_radii", {1.0, 1e-2, 1e-4, 1e-6}},
                       {"euclid_radii", {0.5, 0.1}},
                       {"union_half_width", 0.3},
                       {"lattice", 12},
                       {"control_shrink", 0.8}};
    } else if (experiment == "pj1") {
        d["points"] = detail::points_json(detail::default_centers(dim));
        d["radii"] = {0.25, 0.5, 1.0, 2.0};
        std::vector<std::string> fields = caloric_suite(*op);
        for (const auto& f : noncaloric_suite(*op)) {
            fields.push_back(f);
        }
        d["fields"] = fields;
        d["tolerances"] = {{"sigma", 3.0},     {"m_one_stderr", 5e-3}, {"residual_abs", 1e-3},
                           {"caloric_lu", 1e-10}, {"reference_sigma", 3.0}};
        d["params"] = {{"reference_cases", 10}, {"reference_budget", 20000}, {"control_scale", 2.0}};
    } else if (experiment == "pizzetti") {
        d["sources"] = json::array({src, source_to_json(make_source("tent", support, 1.0))});
        std::vector<Vec> interior{detail::box_point(support, 0.0, 0.0), detail::box_point(support, 0.3, 0.2),
                                  detail::box_point(support, -0.4, -0.2), detail::box_point(support, 0.5, 0.4),
                                  detail::box_point(support, -0.2, -0.4)};
        std::vector<Vec> exterior{detail::box_point(support, 0.0, 2.0), detail::box_point(support, 1.5, 0.0)};
        d["points"] = detail::points_json(interior);
        d["exterior_points"] = detail::points_json(exterior);
        d["schedule"] = kolmogorov ? json{{"r_max", 0.05}, {"ratio", 0.25}, {"count", 4}}
                                   : json{{"r_max", 1.0}, {"ratio", 0.5}, {"count", 5}};
        d["tolerances"] = {{"sigma", 3.0}, {"identity_sigma", 3.0}, {"identity_abs", 0.0},
                           {"imp_sigma", 3.0}, {"imp_abs", 1e-3}};
        const bool wide = dim >= 3;
        d["params"] = {{"batches", 10},
                       {"grid_cells", wide ? 10 : 16},
                       {"grid_margin", wide ? 3 : 4},
                       {"grid_budget", wide ? 5000 : 20000},
                       {"ball_budget", 20000},
                       {"modulus_lattice", 24},
                       {"max_q_rel_error", 0.1}};
    } else if (experiment == "weakform") {
        d["sources"] = json::array({src});
        json phis = json::array();
        const double offsets[5][2] = {{0.0, 0.0}, {0.4, 0.0}, {-0.4, -0.3}, {0.3, 0.3}, {0.0, 0.45}};
        for (const auto& o : offsets) {
            Vec c = detail::box_point(support, o[0], o[1]);
            Vec h = 0.25 * (support.hi - support.lo);
            phis.push_back(box_to_json(BoundingBox(c - h, c + h)));
        }
        d["test_functions"] = phis;
        d["tolerances"] = {{"relative", 5e-2}, {"zero_abs", 1e-12}, {"converse_sigma", 3.0}};
        d["params"] = {{"grid_cells", n == 1 ? 40 : 20},
                       {"grid_budget", n == 1 ? 40000 : 20000},
                       {"cubature_panels", n == 1 ? 2 : 1},
                       {"converse", true},
                       {"converse_batches", 4},
                       {"converse_grid_cells", n == 1 ? 16 : 12},
                       {"converse_grid_margin", n == 1 ? 4 : 3},
                       {"converse_ball_budget", 20000},
                       {"converse_schedule", kolmogorov ? json{{"r_max", 0.05}, {"ratio", 0.25}, {"count", 3}}
                                                        : json{{"r_max", 0.5}, {"ratio", 0.5}, {"count", 3}}}};
    } else {
        throw UsageError("unknown experiment '" + experiment + "'");
    }
    return d;
}

/// A fully resolved experiment spec.  Every key has a value, so the echo
/// reproduces the run exactly.  `workers` only affects execution.
struct ExperimentSpec {
    json data;
    int workers = 0;

    const std::string experiment() const { return data.at("experiment").get<std::string>(); }
    const std::string model() const { return data.at("model").get<std::string>(); }
    std::uint64_t seed() const { return data.at("seed").get<std::uint64_t>(); }
    bool negative_control() const { return data.at("negative_control").get<bool>(); }
    double tol(const std::string& key) const { return data.at("tolerances").at(key).get<double>(); }
    const json& param(const std::string& key) const { return data.at("params").at(key); }

    std::vector<Vec> points(const std::string& key = "points") const
    {
        std::vector<Vec> out;
        for (const auto& p : data.at(key)) {
            out.push_back(detail::json_vec(p));
        }
        return out;
    }

    QuadratureConfig quadrature() const
    {
        const json& q = data.at("quadrature");
        QuadratureConfig cfg;
        cfg.seed = seed();
        cfg.budget = q.at("budget").get<std::uint64_t>();
        cfg.strata_per_axis = q.at("strata_per_axis").get<int>();
        if (!q.at("target_rel_stderr").is_null()) {
            cfg.target_rel_stderr = q.at("target_rel_stderr").get<double>();
        }
        cfg.max_refinements = q.at("max_refinements").get<int>();
        cfg.workers = workers;
        return cfg;
    }

    std::vector<SourceField> sources() const
    {
        std::vector<SourceField> out;
        for (const auto& s : data.at("sources")) {
            out.push_back(source_from_json(s));
        }
        return out;
    }

    /// Resolves a user spec against the defaults.  Objects merge key by
    /// key; arrays and scalars replace.  Unknown top-level keys are errors.
    static ExperimentSpec from_json(const json& user)
    {
        if (!user.is_object()) {
            throw UsageError("experiment spec must be a JSON object");
        }
        if (!user.contains("experiment") || !user.contains("model")) {
            throw UsageError("experiment spec needs 'experiment' and 'model'");
        }
        json d;
        try {
            d = experiment_defaults(user.at("experiment").get<std::string>(), user.at("model").get<std::string>());
        } catch (const json::exception& e) {
            throw UsageError(std::string("invalid experiment spec: ") + e.what());
        }
        for (auto it = user.begin(); it != user.end(); ++it) {
            if (it.key() == "workers") {
                continue;
            }
            if (!d.contains(it.key())) {
                throw UsageError("unknown key '" + it.key() + "' for experiment '" + d["experiment"].get<std::string>() +
                                 "'");
            }
            if (d[it.key()].is_object() && it.value().is_object()) {
                for (auto jt = it.value().begin(); jt != it.value().end(); ++jt) {
                    if (!d[it.key()].contains(jt.key())) {
                        throw UsageError("unknown key '" + it.key() + "." + jt.key() + "'");
                    }
                    d[it.key()][jt.key()] = jt.value();
                }
            } else {
                d[it.key()] = it.value();
            }
        }
        ExperimentSpec s;
        s.data = d;
        if (user.contains("workers")) {
            s.workers = user.at("workers").get<int>();
        }
        s.validate();
        return s;
    }

    static ExperimentSpec defaults(const std::string& experiment, const std::string& model)
    {
        return from_json(json{{"experiment", experiment}, {"model", model}});
    }

    void validate() const
    {
        try {
            ModelPtr op = make_model(model());
            const int dim = op->total_dim();
            for (const char* key : {"points", "exterior_points", "identity_points"}) {
                if (data.contains(key)) {
                    for (const Vec& p : points(key)) {
                        op->check_dim(p);
                    }
                }
            }
            if (data.contains("sources")) {
                for (const auto& s : sources()) {
                    if (s.support.dim() != dim) {
                        throw UsageError("source support dimension does not match model '" + model() + "'");
                    }
                }
            }
            if (data.contains("fields")) {
                for (const auto& f : data.at("fields")) {
                    builtin_field(f.get<std::string>(), dim);
                }
            }
            if (data.contains("schedule")) {
                schedule().validate();
            }
            quadrature().validate(dim);
            seed();
        } catch (const json::exception& e) {
            throw UsageError(std::string("invalid experiment spec: ") + e.what());
        }
    }

    RadiusSchedule schedule(const std::string& key = "schedule") const
    {
        const json& j = key == "schedule" ? data.at(key) : data.at("params").at(key);
        return RadiusSchedule{j.at("r_max").get<double>(), j.at("ratio").get<double>(), j.at("count").get<int>()};
    }
};

/// LBALL_SEED overrides the experiment spec's seed; the echo records the value used.
inline void apply_env_overrides(ExperimentSpec& spec)
{
    if (const char* s = std::getenv("LBALL_SEED")) {
        try {
            spec.data["seed"] = std::stoull(s);
        } catch (const std::exception&) {
            throw UsageError(std::string("LBALL_SEED is not an unsigned integer: ") + s);
        }
    }
}

// ---------------------------------------------------------------------------
// Reports

/// relation: "abs_le" passes iff |measured - target| <= tolerance; "le" iff
/// measured <= target + tolerance; "ge" iff measured >= target - tolerance;
/// "info" always passes.
struct CheckRow {
    std::string name;
    double measured = 0.0;
    double target = 0.0;
    double tolerance = 0.0;
    std::string relation = "abs_le";
    std::string status = "PASS";  // PASS, FAIL or INCONCLUSIVE

    bool pass() const { return status == "PASS"; }
};

struct ExperimentReport {
    json spec;
    std::vector<CheckRow> rows;
    json tables = json::object();
    double wall_clock_seconds = 0.0;
    int workers = 0;

    bool pass() const
    {
        for (const auto& r : rows) {
            if (!r.pass()) {
                return false;
            }
        }
        return !rows.empty();
    }

    CheckRow& add(std::string name, double measured, double target, double tolerance,
                  const std::string& relation = "abs_le")
    {
        CheckRow r{std::move(name), measured, target, tolerance, relation, "FAIL"};
        bool ok = false;
        if (relation == "abs_le") {
            ok = std::abs(measured - target) <= tolerance;
        } else if (relation == "le") {
            ok = measured <= target + tolerance;
        } else if (relation == "ge") {
            ok = measured >= target - tolerance;
        } else if (relation == "info") {
            ok = true;
        }
        r.status = ok ? "PASS" : "FAIL";
        rows.push_back(r);
        return rows.back();
    }

    std::size_t failures() const
    {
        std::size_t n = 0;
        for (const auto& r : rows) {
            n += r.pass() ? 0 : 1;
        }
        return n;
    }

    const CheckRow* find(const std::string& name) const
    {
        for (const auto& r : rows) {
            if (r.name == name) {
                return &r;
            }
        }
        return nullptr;
    }

    /// With `execution` false the output depends only on the experiment spec: wall-clock
    /// and worker count are left out.
    json to_json(bool execution = true) const
    {
        json j;
        j["schema"] = kReportSchema;
        j["spec"] = spec;
        json rs = json::array();
        for (const auto& r : rows) {
            rs.push_back({{"name", r.name},
                          {"measured", r.measured},
                          {"target", r.target},
                          {"tolerance", r.tolerance},
                          {"relation", r.relation},
                          {"status", r.status},
                          {"pass", r.pass()}});
        }
        j["rows"] = rs;
        j["tables"] = tables;
        j["pass"] = pass();
        j["status"] = pass() ? "PASS" : "FAIL";
        if (execution) {
            j["execution"] = {{"wall_clock_seconds", wall_clock_seconds}, {"workers", resolve_workers(workers)}};
        }
        return j;
    }

    std::string canonical() const { return to_json(false).dump(); }
};

namespace detail {

inline std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\r\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        out += c;
        if (c == '"') {
            out += '"';
        }
    }
    return out + "\"";
}

inline std::string csv_number(double x)
{
    if (std::isnan(x)) {
        return "nan";
    }
    if (std::isinf(x)) {
        return x > 0 ? "inf" : "-inf";
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace detail

inline const std::vector<std::string>& report_csv_columns()
{
    static const std::vector<std::string> cols{"schema",    "experiment", "model",    "check",  "measured",
                                               "target",    "tolerance",  "relation", "status", "pass"};
    return cols;
}

/// RFC 4180: CRLF line ends, quoted fields where needed, fixed header.
inline std::string report_to_csv(const ExperimentReport& rep)
{
    std::ostringstream os;
    const auto& cols = report_csv_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) {
        os << (i ? "," : "") << cols[i];
    }
    os << "\r\n";
    std::string experiment = rep.spec.value("experiment", "");
    std::string model = rep.spec.value("model", "");
    for (const auto& r : rep.rows) {
        os << kReportSchema << ',' << detail::csv_field(experiment) << ',' << detail::csv_field(model) << ','
           << detail::csv_field(r.name) << ',' << detail::csv_number(r.measured) << ','
           << detail::csv_number(r.target) << ',' << detail::csv_number(r.tolerance) << ',' << r.relation << ','
           << r.status << ',' << (r.pass() ? "true" : "false") << "\r\n";
    }
    return os.str();
}

/// A table (array of flat objects with identical keys) as CSV.
inline std::string table_to_csv(const json& table)
{
    std::ostringstream os;
    if (!table.is_array() || table.empty()) {
        return "";
    }
    std::vector<std::string> keys;
    for (auto it = table[0].begin(); it != table[0].end(); ++it) {
        keys.push_back(it.key());
    }
    for (std::size_t i = 0; i < keys.size(); ++i) {
        os << (i ? "," : "") << detail::csv_field(keys[i]);
    }
    os << "\r\n";
    for (const auto& row : table) {
        for (std::size_t i = 0; i < keys.size(); ++i) {
            const json& v = row.at(keys[i]);
            std::string cell;
            if (v.is_number()) {
                cell = detail::csv_number(v.get<double>());
            } else if (v.is_string()) {
                cell = detail::csv_field(v.get<std::string>());
            } else if (v.is_null()) {
                cell = "";
            } else {
                cell = detail::csv_field(v.dump());
            }
            os << (i ? "," : "") << cell;
        }
        os << "\r\n";
    }
    return os.str();
}

inline void write_text(const std::string& path, const std::string& text)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw Error("cannot open '" + path + "' for writing");
    }
    os << text;
    if (!os) {
        throw Error("failed writing '" + path + "'");
    }
}

namespace detail {

inline std::string fmt(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

inline std::string pt_name(const Vec& p)
{
    std::string s = "(";
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        s += (i ? "," : "") + fmt(p[i]);
    }
    return s + ")";
}

/// Lattice of chart points of Omega_r(x): `m` points per axis.
inline std::vector<Vec> chart_lattice(const LBall& ball, int m)
{
    BallChart chart(ball);
    const int d = chart.dim();
    std::vector<Vec> out;
    std::size_t total = 1;
    for (int a = 0; a < d; ++a) {
        total *= static_cast<std::size_t>(m);
    }
    Vec p(d);
    for (std::size_t idx = 0; idx < total; ++idx) {
        std::size_t rem = idx;
        for (int a = 0; a < d; ++a) {
            double k = static_cast<double>(rem % static_cast<std::size_t>(m)) + 0.5;
            rem /= static_cast<std::size_t>(m);
            p[a] = a == 0 ? k / m : -1.0 + 2.0 * k / m;
        }
        ChartPoint pt;
        if (chart.map(p, pt)) {
            out.push_back(pt.zeta);
        }
    }
    return out;
}

inline double slope_fit(const std::vector<double>& x, const std::vector<double>& y)
{
    double mx = 0.0;
    double my = 0.0;
    const auto n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]) / n;
        my += std::log(y[i]) / n;
    }
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
        sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    }
    return sxy / sxx;
}

/// Source equal to L phi, for which u_f = -phi.
inline SourceField operator_source(const ModelPtr& op, const SmoothField& phi, const BoundingBox& support)
{
    SourceField s;
    s.kind = "custom";
    s.amplitude = 1.0;
    s.support = support;
    s.f = [op, phi](const Vec& z) { return op->apply_operator(phi, z, false); };
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiments

/// Kernel axioms: mass, Chapman-Kolmogorov, caloricity, decay, pole and the
/// distributional identity with a bump.
inline ExperimentReport run_kernel_selfchecks(const ExperimentSpec& spec)
{
    ExperimentReport rep;
    rep.spec = spec.data;
    rep.workers = spec.workers;
    std::string id = spec.model();
    if (spec.negative_control()) {
        if (id != "kolmogorov_1d") {
            throw UsageError("the selfcheck negative control exists for kolmogorov_1d only");
        }
        id = "kolmogorov_1d_corrupt";
    }
    ModelPtr op = make_model(id);
    const int n = op->spatial_dim();
    const QuadratureConfig cfg = spec.quadrature();
    const auto lags = spec.data.at("lags").get<std::vector<double>>();

    for (const Vec& z : spec.points()) {
        const std::string pz = detail::pt_name(z);
        for (double tau : lags) {
            rep.add("mass" + pz + "[lag=" + detail::fmt(tau) + "]", spatial_mass(*op, z, tau), 1.0, spec.tol("mass"));
        }
        // Chapman-Kolmogorov across the middle of each lag, ending near the mean.
        for (double tau : lags) {
            Vec zeta(n + 1);
            zeta.head(n) = op->transport(tau) * z.head(n) + Vec::Constant(n, 0.1 * std::sqrt(tau));
            zeta[n] = z[n] - tau;
            double defect = chapman_kolmogorov_defect(*op, z, z[n] - 0.5 * tau, zeta);
            rep.add("chapman_kolmogorov" + pz + "[lag=" + detail::fmt(tau) + "]", defect, 0.0,
                    spec.tol("chapman_kolmogorov"));
        }
        for (double tau : lags) {
            if (tau < 0.1) {
                continue;
            }
            Vec zeta(n + 1);
            zeta.head(n) = z.head(n) - Vec::Constant(n, 0.2 * std::sqrt(tau));
            zeta[n] = z[n] - tau;
            rep.add("caloricity" + pz + "[lag=" + detail::fmt(tau) + "]", caloricity_residual(*op, z, zeta), 0.0,
                    spec.tol("caloricity"));
        }
    }

    // Decay: sup of Gamma over a box of half-width M against a partner at
    // distance R along every coordinate direction, in either slot.
    {
        const double big = spec.param("decay_radius").get<double>();
        const double half = spec.param("decay_box").get<double>();
        const int m = spec.param("decay_lattice").get<int>();
        const int dim = n + 1;
        std::vector<Vec> lattice;
        std::size_t total = 1;
        for (int a = 0; a < dim; ++a) {
            total *= static_cast<std::size_t>(m);
        }
        for (std::size_t idx = 0; idx < total; ++idx) {
            std::size_t rem = idx;
            Vec p(dim);
            for (int a = 0; a < dim; ++a) {
                p[a] = -half + 2.0 * half * static_cast<double>(rem % static_cast<std::size_t>(m)) / (m - 1);
                rem /= static_cast<std::size_t>(m);
            }
            lattice.push_back(p);
        }
        double sup_first = 0.0;
        double sup_second = 0.0;
        for (int a = 0; a < dim; ++a) {
            for (double sgn : {-1.0, 1.0}) {
                Vec far = Vec::Zero(dim);
                far[a] = sgn * big;
                for (const Vec& p : lattice) {
                    sup_first = std::max(sup_first, op->gamma(far, p));
                    sup_second = std::max(sup_second, op->gamma(p, far));
                }
            }
        }
        rep.add("decay[first slot far]", sup_first, 0.0, spec.tol("decay"));
        rep.add("decay[second slot far]", sup_second, 0.0, spec.tol("decay"));
    }

    // Pole: along zeta = (exp(eps B) x, t - eps), and symmetrically with
    // the first point moving, Gamma grows without bound.
    {
        const double eps_min = spec.param("pole_lag").get<double>();
        const Vec z = spec.points().front();
        Vec x = z.head(n);
        double last_first = -INFINITY;
        double last_second = -INFINITY;
        bool increasing = true;
        for (double eps = 1e-2; eps >= eps_min * 0.999; eps *= 0.1) {
            Vec zeta(n + 1);
            zeta.head(n) = op->transport(eps) * x;
            zeta[n] = z[n] - eps;
            double a = op->log_gamma(z, zeta) / std::log(10.0);
            Vec moving(n + 1);
            moving.head(n) = op->transport(-eps) * x;
            moving[n] = z[n] + eps;
            double b = op->log_gamma(moving, z) / std::log(10.0);
            increasing = increasing && a > last_first && b > last_second;
            last_first = a;
            last_second = b;
        }
        double nan = std::numeric_limits<double>::quiet_NaN();
        rep.add("pole[second point approaches]", increasing ? last_first : nan, spec.tol("pole_log10"), 0.0, "ge");
        rep.add("pole[first point approaches]", increasing ? last_second : nan, spec.tol("pole_log10"), 0.0, "ge");
    }

    // int Gamma(z, zeta) L phi(zeta) d zeta = -phi(z).
    {
        BoundingBox box = box_from_json(spec.data.at("phi_support"));
        SmoothField phi = bump_field(box, 1.0);
        SourceField src = detail::operator_source(op, phi, box);
        int k = 0;
        for (const Vec& z : spec.points("identity_points")) {
            auto e = gamma_potential(*op, src, SpaceTimePoint(z), cfg.with_seed(mix_seed(cfg.seed, 0xD15 + k++)));
            double target = -phi.value(z);
            rep.add("distributional" + detail::pt_name(z), std::abs(e.value - target) / std::abs(target), 0.0,
                    spec.tol("distributional"));
        }
    }
    return rep;
}

/// Nesting, shrinking, volume and Q_r slopes, Euclidean radius and union boxes.
inline ExperimentReport run_geometry_experiment(const ExperimentSpec& spec)
{
    ExperimentReport rep;
    rep.spec = spec.data;
    rep.workers = spec.workers;
    ModelPtr op = make_model(spec.model());
    const QuadratureConfig cfg = spec.quadrature();
    auto radii = spec.data.at("radii").get<std::vector<double>>();
    std::sort(radii.begin(), radii.end());
    const int m = spec.param("lattice").get<int>();
    json table = json::array();
    int seq = 0;
    for (const Vec& x : spec.points()) {
        const std::string px = detail::pt_name(x);
        SpaceTimePoint c(x);
        std::vector<double> vols;
        std::vector<double> qs;
        for (double r : radii) {
            LBall ball(op, c, r);
            auto v = estimate_volume(ball, cfg.with_seed(mix_seed(cfg.seed, 0x701 + seq)));
            auto q = q_r(ball, cfg.with_seed(mix_seed(cfg.seed, 0x702 + seq)));
            ++seq;
            vols.push_back(v.value);
            qs.push_back(q.value);
            table.push_back({{"point", px},
                             {"r", r},
                             {"volume", v.value},
                             {"volume_se", v.std_error},
                             {"q", q.value},
                             {"q_se", q.std_error}});
        }
        rep.add("volume_slope" + px, detail::slope_fit(radii, vols), spec.param("volume_slope_target").get<double>(),
                spec.tol("volume_slope"));
        rep.add("q_slope" + px, detail::slope_fit(radii, qs), spec.param("q_slope_target").get<double>(),
                spec.tol("q_slope"));

        // Nesting: lattice points of the smaller ball lie in the larger one.
        for (std::size_t k = 0; k + 1 < radii.size(); ++k) {
            LBall small(op, c, radii[k]);
            LBall large(op, c, radii[k + 1]);
            double outside = 0.0;
            for (const Vec& p : detail::chart_lattice(small, m)) {
                outside += contains(large, p) ? 0.0 : 1.0;
            }
            rep.add("nesting" + px + "[r=" + detail::fmt(radii[k]) + "<" + detail::fmt(radii[k + 1]) + "]", outside,
                    0.0, 0.0);
        }

        // Shrinking: box diameters decrease to zero and always hold the center.
        {
            auto shrink = spec.param("shrink_radii").get<std::vector<double>>();
            std::sort(shrink.rbegin(), shrink.rend());
            double first = 0.0;
            double prev = INFINITY;
            bool monotone = true;
            bool holds_center = true;
            double ratio = 0.0;
            for (double r : shrink) {
                BoundingBox b = bounding_box(LBall(op, c, r));
                double diam = (b.hi - b.lo).norm();
                holds_center = holds_center && b.contains(x);
                monotone = monotone && diam < prev;
                prev = diam;
                if (first == 0.0) {
                    first = diam;
                }
                ratio = diam / first;
            }
            double nan = std::numeric_limits<double>::quiet_NaN();
            rep.add("shrinking" + px, monotone && holds_center ? ratio : nan, 0.0, spec.tol("shrink"), "le");
        }

        // Omega_r(x) inside B(x, R).
        for (double big_r : spec.param("euclid_radii").get<std::vector<double>>()) {
            double r = radius_inside_euclidean_ball(op, c, big_r);
            double worst = 0.0;
            for (const Vec& p : detail::chart_lattice(LBall(op, c, r), m)) {
                worst = std::max(worst, (p - x).norm() / big_r);
            }
            worst = std::max(worst, max_corner_distance(bounding_box(LBall(op, c, r)), x) / big_r);
            rep.add("euclidean_radius" + px + "[R=" + detail::fmt(big_r) + ",r=" + detail::fmt(r) + "]", worst, 1.0,
                    0.0, "le");
        }

        // Union box over G contains every Omega_r(y), y in G.  The control
        // shrinks the box about its center.
        {
            const double hw = spec.param("union_half_width").get<double>();
            const double r = radii.back();
            BoundingBox g(x - Vec::Constant(x.size(), hw), x + Vec::Constant(x.size(), hw));
            BoundingBox u = union_bounding_box(op, g, r);
            if (spec.negative_control()) {
                Vec mid = 0.5 * (u.lo + u.hi);
                Vec half = 0.5 * (u.hi - u.lo) * spec.param("control_shrink").get<double>();
                u = BoundingBox(mid - half, mid + half);
            }
            const int gm = 4;
            double excess = 0.0;
            const int dim = static_cast<int>(x.size());
            std::size_t total = 1;
            for (int a = 0; a < dim; ++a) {
                total *= gm;
            }
            for (std::size_t idx = 0; idx < total; ++idx) {
                std::size_t rem = idx;
                Vec y(dim);
                for (int a = 0; a < dim; ++a) {
                    y[a] = g.lo[a] + (g.hi[a] - g.lo[a]) * static_cast<double>(rem % gm) / (gm - 1);
                    rem /= gm;
                }
                for (const Vec& p : detail::chart_lattice(LBall(op, SpaceTimePoint(y), r), m / 2 + 2)) {
                    for (int a = 0; a < dim; ++a) {
                        double w = u.hi[a] - u.lo[a];
                        excess = std::max(excess, std::max(u.lo[a] - p[a], p[a] - u.hi[a]) / w);
                    }
                }
            }
            rep.add("union_box" + px + "[r=" + detail::fmt(r) + "]", excess, 0.0, spec.tol("containment"), "le");

            BoundingBox single = union_bounding_box(op, BoundingBox(x, x), r);
            BoundingBox direct = bounding_box(LBall(op, c, r));
            double diff = std::max((single.lo - direct.lo).cwiseAbs().maxCoeff(),
                                   (single.hi - direct.hi).cwiseAbs().maxCoeff());
            rep.add("union_box_single_point" + px, diff, 0.0, spec.tol("single_point"));
        }
    }
    rep.tables["volumes"] = table;
    return rep;
}

/// Representation formula over a field x center x radius panel, M_r(1) = 1,
/// the mean-value property, and fast against reference N_r.
inline ExperimentReport run_pj1_experiment(const ExperimentSpec& spec)
{
    ExperimentReport rep;
    rep.spec = spec.data;
    rep.workers = spec.workers;
    ModelPtr op = make_model(spec.model());
    const int dim = op->total_dim();
    const QuadratureConfig cfg = spec.quadrature();
    const auto radii = spec.data.at("radii").get<std::vector<double>>();
    const auto centers = spec.points();
    const double sigma = spec.tol("sigma");
    const double scale = spec.negative_control() ? spec.param("control_scale").get<double>() : 1.0;
    std::uint64_t seq = 0;
    auto next_cfg = [&]() { return cfg.with_seed(mix_seed(cfg.seed, 0x1000 + seq++)); };

    for (const Vec& c : centers) {
        for (double r : radii) {
            LBall ball(op, SpaceTimePoint(c), r);
            auto m = surface_mean_M(ball, [](const Vec&) { return 1.0; }, next_cfg());
            std::string tag = detail::pt_name(c) + "[r=" + detail::fmt(r) + "]";
            rep.add("m_one" + tag, m.value, 1.0, sigma * m.std_error);
            rep.add("m_one_stderr" + tag, m.std_error, 0.0, spec.tol("m_one_stderr"), "le");
        }
    }

    json table = json::array();
    for (const auto& fj : spec.data.at("fields")) {
        const std::string fid = fj.get<std::string>();
        SmoothField u = builtin_field(fid, dim);
        // Classify by L u at the centers and a few extra points.
        double max_lu = 0.0;
        for (const Vec& c : centers) {
            max_lu = std::max(max_lu, std::abs(op->apply_operator(u, c, false)));
            max_lu = std::max(max_lu, std::abs(op->apply_operator(u, 0.5 * c, false)));
        }
        const bool caloric = max_lu <= spec.tol("caloric_lu");
        rep.add("classify[" + fid + "]", max_lu, 0.0, spec.tol("caloric_lu"), caloric ? "abs_le" : "info");
        for (const Vec& c : centers) {
            for (double r : radii) {
                LBall ball(op, SpaceTimePoint(c), r);
                std::string tag = "[" + fid + "]" + detail::pt_name(c) + "[r=" + detail::fmt(r) + "]";
                const double uc = u.value(c);
                if (caloric && scale == 1.0) {
                    auto m = surface_mean_M(ball, u.value, next_cfg());
                    rep.add("mean_value" + tag, m.value, uc, sigma * m.std_error + 1e-12 * std::max(1.0, std::abs(uc)));
                    table.push_back({{"field", fid}, {"center", detail::pt_name(c)}, {"r", r}, {"m_u", m.value},
                                     {"m_u_se", m.std_error}, {"n_lu", 0.0}, {"n_lu_se", 0.0},
                                     {"residual", m.value - uc}, {"residual_se", m.std_error}});
                } else {
                    auto j = joint_functionals(
                        ball, u.value, uc, [&](const Vec& z) { return scale * op->apply_operator(u, z); }, next_cfg());
                    double tol = sigma * j.residual.std_error + spec.tol("residual_abs") * std::max(1.0, std::abs(uc));
                    rep.add("residual" + tag, j.residual.value, 0.0, tol);
                    table.push_back({{"field", fid}, {"center", detail::pt_name(c)}, {"r", r}, {"m_u", j.m_u.value},
                                     {"m_u_se", j.m_u.std_error}, {"n_lu", j.n_g.value}, {"n_lu_se", j.n_g.std_error},
                                     {"residual", j.residual.value}, {"residual_se", j.residual.std_error}});
                }
            }
        }
    }
    rep.tables["functionals"] = table;

    // Randomized fast-vs-reference N_r cases, drawn from the experiment spec's seed.
    const int cases = spec.param("reference_cases").get<int>();
    const auto ref_budget = spec.param("reference_budget").get<std::uint64_t>();
    Substream stream(mix_seed(cfg.seed, 0x4EF), 0);
    std::array<double, kMaxDim> u{};
    for (int k = 0; k < cases; ++k) {
        Vec c(dim);
        stream.uniforms(static_cast<std::uint64_t>(k) * 2, dim, u);
        for (int i = 0; i < dim; ++i) {
            c[i] = 2.0 * u[static_cast<std::size_t>(i)] - 1.0;
        }
        stream.uniforms(static_cast<std::uint64_t>(k) * 2 + 1, 3, u);
        double r = std::exp(1.5 * (2.0 * u[0] - 1.0));
        double a = 2.0 * u[1] - 1.0;
        double b = 2.0 * u[2] - 1.0;
        auto g = [a, b](const Vec& z) { return 1.0 + a * z[0] + b * std::cos(3.0 * z[z.size() - 1]); };
        LBall ball(op, SpaceTimePoint(c), r);
        auto fast = volume_functional_N(ball, g, next_cfg());
        auto ref = volume_functional_N_reference(ball, g, next_cfg().with_budget(ref_budget));
        rep.add("n_reference[" + std::to_string(k) + "]" + detail::pt_name(c) + "[r=" + detail::fmt(r) + "]",
                fast.value, ref.value, spec.tol("reference_sigma") * std::hypot(fast.std_error, ref.std_error));
    }
    return rep;
}

namespace detail {

inline json convergence_rows(const std::string& source, const PointVerdict& v)
{
    json rows = json::array();
    for (const auto& e : v.report.entries) {
        rows.push_back({{"source", source},
                        {"point", pt_name(v.point)},
                        {"r", e.r},
                        {"ratio", e.ratio},
                        {"std_error", e.std_error},
                        {"f", v.f_value},
                        {"modulus", e.modulus},
                        {"q", e.q},
                        {"q_rel_error", e.q_rel_error},
                        {"usable", e.usable},
                        {"identity_target", e.identity_target},
                        {"identity_target_se", e.identity_target_se},
                        {"imp_residual", e.identity_diff * e.q},
                        {"imp_residual_se", e.identity_diff_se * e.q},
                        {"limit", v.report.limit ? json(*v.report.limit) : json(nullptr)},
                        {"limit_se", v.report.limit_se},
                        {"slope", v.report.slope ? json(*v.report.slope) : json(nullptr)}});
    }
    return rows;
}

}  // namespace detail

/// Asymptotic-solution check of u_f at interior and exterior points, with
/// the representation residual and the per-radius identity.
inline ExperimentReport run_pizzetti_experiment(const ExperimentSpec& spec)
{
    ExperimentReport rep;
    rep.spec = spec.data;
    rep.workers = spec.workers;
    ModelPtr op = make_model(spec.model());
    const QuadratureConfig cfg = spec.quadrature();
    const RadiusSchedule sched = spec.schedule();
    std::vector<Vec> points = spec.points();
    for (const Vec& p : spec.points("exterior_points")) {
        points.push_back(p);
    }
    QuadratureConfig grid_cfg = cfg.with_budget(spec.param("grid_budget").get<std::uint64_t>());
    grid_cfg.target_rel_stderr.reset();
    QuadratureConfig ball_cfg = cfg.with_budget(spec.param("ball_budget").get<std::uint64_t>());
    ball_cfg.target_rel_stderr.reset();
    SolutionCheckOptions opt;
    opt.asymptotic.batches = spec.param("batches").get<int>();
    opt.asymptotic.modulus_lattice = spec.param("modulus_lattice").get<int>();
    opt.asymptotic.max_q_rel_error = spec.param("max_q_rel_error").get<double>();
    opt.identity_abs_tol = spec.tol("identity_abs");
    opt.identity_sigma = spec.tol("identity_sigma");
    const double identity_factor = batch_coverage_factor(opt.identity_sigma, opt.asymptotic.batches);
    opt.target_sign = spec.negative_control() ? 1.0 : -1.0;
    const double sigma = spec.tol("sigma");
    json table = json::array();
    int si = 0;
    for (const auto& src : spec.sources()) {
        validate_source(src, spec.seed());
        const std::string sname = src.kind + "#" + std::to_string(si);
        FieldFactory field =
            potential_field(op, src, sched.r_max, grid_cfg.with_seed(mix_seed(cfg.seed, 0x6B1D + si)),
                            spec.param("grid_cells").get<int>(), spec.param("grid_margin").get<int>());
        auto verdicts =
            check_asymptotic_solution(op, field, src, points, sched, ball_cfg.with_seed(mix_seed(cfg.seed, si)), opt);
        for (const auto& v : verdicts) {
            const std::string tag = "[" + sname + "]" + detail::pt_name(v.point);
            const auto& last = v.report.entries.back();
            const double target = opt.target_sign * v.f_value;
            CheckRow& row = rep.add("pizzetti" + tag, last.ratio, target, last.modulus + sigma * last.std_error);
            if (v.status == "INCONCLUSIVE") {
                row.status = "INCONCLUSIVE";
            }
            for (const auto& e : v.report.entries) {
                const std::string rt = tag + "[r=" + detail::fmt(e.r) + "]";
                rep.add("identity" + rt, e.ratio, e.identity_target,
                        identity_factor * std::hypot(e.std_error, e.identity_target_se) +
                            spec.tol("identity_abs"));
            }
            // u(z) = M_r(u)(z) + N_r(f)(z) at the largest radius.
            const auto& first = v.report.entries.front();
            rep.add("imp_residual" + tag + "[r=" + detail::fmt(first.r) + "]", first.identity_diff * first.q, 0.0,
                    spec.tol("imp_sigma") * first.identity_diff_se * first.q + spec.tol("imp_abs"));
            for (auto& row_json : detail::convergence_rows(sname, v)) {
                table.push_back(row_json);
            }
        }
        ++si;
    }
    rep.tables["convergence"] = table;
    return rep;
}

/// Weak form: int u_f L*phi = -int f phi for bump test functions, and the
/// asymptotic check on the same u_f at the first test function's center.
inline ExperimentReport run_weakform_experiment(const ExperimentSpec& spec)
{
    ExperimentReport rep;
    rep.spec = spec.data;
    rep.workers = spec.workers;
    ModelPtr op = make_model(spec.model());
    const int dim = op->total_dim();
    const QuadratureConfig cfg = spec.quadrature();
    std::vector<BoundingBox> phis;
    for (const auto& b : spec.data.at("test_functions")) {
        phis.push_back(box_from_json(b));
        if (phis.back().dim() != dim) {
            throw UsageError("test function support dimension does not match model");
        }
    }
    if (phis.empty()) {
        throw UsageError("weakform needs at least one test function");
    }
    BoundingBox hull = phis.front();
    for (const auto& b : phis) {
        hull = hull.hull(b);
    }
    const int cells = spec.param("grid_cells").get<int>();
    const int panels = spec.param("cubature_panels").get<int>();
    const double sign = spec.negative_control() ? -1.0 : 1.0;
    QuadratureConfig grid_cfg = cfg.with_budget(spec.param("grid_budget").get<std::uint64_t>());
    grid_cfg.target_rel_stderr.reset();
    json table = json::array();
    int si = 0;
    for (const auto& src : spec.sources()) {
        validate_source(src, spec.seed());
        const std::string sname = src.kind + "#" + std::to_string(si);
        GridSpec gs;
        Vec h = (hull.hi - hull.lo) / cells;
        gs.box = hull.expanded(h);
        gs.resolution.assign(static_cast<std::size_t>(dim), cells + 3);
        FieldGrid grid = tabulate_potential(*op, src, gs, grid_cfg.with_seed(mix_seed(cfg.seed, 0x3EA + si)));
        int k = 0;
        for (const auto& box : phis) {
            SmoothField phi = bump_field(box, 1.0);
            double lhs = tensor_cubature([&](const Vec& z) { return grid(z) * op->apply_adjoint(phi, z, false); }, box,
                                         panels);
            double rhs = tensor_cubature([&](const Vec& z) { return src.f(z) * phi.value(z); }, box, panels);
            const std::string tag = "[" + sname + "][phi" + std::to_string(k++) + "]";
            if (src.kind == "zero") {
                rep.add("weak_zero" + tag, std::abs(lhs) + std::abs(rhs), 0.0, spec.tol("zero_abs"));
            } else {
                rep.add("weak" + tag, lhs + sign * rhs, 0.0, spec.tol("relative") * std::abs(rhs));
            }
            table.push_back({{"source", sname}, {"phi", k - 1}, {"int_u_adjoint_phi", lhs}, {"int_f_phi", rhs}});
        }

        if (spec.param("converse").get<bool>() && src.kind != "zero") {
            const RadiusSchedule sched = spec.schedule("converse_schedule");
            Vec z = 0.5 * (phis.front().lo + phis.front().hi);
            FieldFactory field =
                potential_field(op, src, sched.r_max, grid_cfg.with_seed(mix_seed(cfg.seed, 0xC0 + si)),
                                spec.param("converse_grid_cells").get<int>(), spec.param("converse_grid_margin").get<int>());
            SolutionCheckOptions opt;
            opt.asymptotic.batches = spec.param("converse_batches").get<int>();
            opt.target_sign = spec.negative_control() ? 1.0 : -1.0;
            QuadratureConfig ball_cfg = cfg.with_budget(spec.param("converse_ball_budget").get<std::uint64_t>());
            ball_cfg.target_rel_stderr.reset();
            auto v = check_asymptotic_solution(op, field, src, {z}, sched, ball_cfg.with_seed(mix_seed(cfg.seed, 0xC1)),
                                               opt);
            const auto& last = v[0].report.entries.back();
            CheckRow& row = rep.add("converse[" + sname + "]" + detail::pt_name(z), last.ratio,
                                    opt.target_sign * v[0].f_value,
                                    last.modulus + spec.tol("converse_sigma") * last.std_error);
            if (v[0].status == "INCONCLUSIVE") {
                row.status = "INCONCLUSIVE";
            }
        }
        ++si;
    }
    rep.tables["weak_form"] = table;
    return rep;
}

/// Dispatches on the experiment id and stamps the wall-clock.
inline ExperimentReport run_experiment(const ExperimentSpec& spec)
{
    auto start = std::chrono::steady_clock::now();
    const std::string e = spec.experiment();
    ExperimentReport rep;
    if (e == "selfcheck") {
        rep = run_kernel_selfchecks(spec);
    } else if (e == "geometry") {
        rep = run_geometry_experiment(spec);
    } else if (e == "pj1") {
        rep = run_pj1_experiment(spec);
    } else if (e == "pizzetti") {
        rep = run_pizzetti_experiment(spec);
    } else if (e == "weakform") {
        rep = run_weakform_experiment(spec);
    } else {
        throw UsageError("unknown experiment '" + e + "'");
    }
    rep.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

/// Writes the JSON and CSV reports named in the experiment spec (empty paths skip).
/// Tables go next to the CSV as <stem>.<table>.csv.
inline void write_report(const ExperimentReport& rep, const std::string& json_path, const std::string& csv_path)
{
    if (!json_path.empty()) {
        write_text(json_path, rep.to_json().dump(2) + "\n");
    }
    if (!csv_path.empty()) {
        write_text(csv_path, report_to_csv(rep));
        std::string stem = csv_path;
        if (stem.size() > 4 && stem.substr(stem.size() - 4) == ".csv") {
            stem.resize(stem.size() - 4);
        }
        for (auto it = rep.tables.begin(); it != rep.tables.end(); ++it) {
            if (it.value().is_array() && !it.value().empty()) {
                write_text(stem + "." + it.key() + ".csv", table_to_csv(it.value()));
            }
        }
    }
}

inline ExperimentSpec load_spec(const std::string& path)
{
    std::ifstream is(path);
    if (!is) {
        throw Error("cannot open spec file '" + path + "'");
    }
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw FormatError("spec file '" + path + "' is not valid JSON: " + e.what());
    }
    return ExperimentSpec::from_json(j);
}

}  // namespace lball
