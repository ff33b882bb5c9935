// SPDX-License-Identifier: Apache-2.0
#include "lball/lball.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace lball;

namespace {

enum ExitCode { kOk = 0, kChecksFailed = 1, kUsage = 2, kFailure = 3 };

struct Globals {
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> samples;
    std::optional<int> workers;
    std::optional<int> strata;
    std::optional<double> target_rse;
    std::string out;
    std::string format = "json";
};

Vec parse_point(const std::string& text)
{
    std::vector<double> xs;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            xs.push_back(std::stod(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception&) {
            throw UsageError("cannot parse coordinate '" + item + "' in '" + text + "'");
        }
    }
    if (xs.size() < 2 || xs.size() > static_cast<std::size_t>(kMaxDim)) {
        throw UsageError("point '" + text + "' needs 2 to 4 comma-separated coordinates");
    }
    return Eigen::Map<const Vec>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

void apply_globals(ExperimentSpec& spec, const Globals& g)
{
    apply_env_overrides(spec);
    if (g.seed) {
        spec.data["seed"] = *g.seed;
    }
    if (g.samples) {
        spec.data["quadrature"]["budget"] = *g.samples;
    }
    if (g.strata) {
        spec.data["quadrature"]["strata_per_axis"] = *g.strata;
    }
    if (g.target_rse) {
        spec.data["quadrature"]["target_rel_stderr"] = *g.target_rse;
        if (spec.data["quadrature"]["max_refinements"].get<int>() == 0) {
            spec.data["quadrature"]["max_refinements"] = 8;
        }
    }
    if (g.workers) {
        spec.workers = *g.workers;
    }
    spec.validate();
}

QuadratureConfig quadrature_from(const Globals& g)
{
    ExperimentSpec spec = ExperimentSpec::defaults("selfcheck", "heat_1d");
    apply_globals(spec, g);
    return spec.quadrature();
}

/// Writes the report where asked (--out, else the experiment spec's output paths, else
/// stdout) and returns the exit code.
int emit(const ExperimentReport& rep, const Globals& g)
{
    std::string json_path;
    std::string csv_path;
    if (!g.out.empty()) {
        (g.format == "csv" ? csv_path : json_path) = g.out;
    } else if (rep.spec.contains("output")) {
        json_path = rep.spec["output"].value("json", "");
        csv_path = rep.spec["output"].value("csv", "");
    }
    if (json_path.empty() && csv_path.empty()) {
        if (g.format == "csv") {
            std::cout << report_to_csv(rep);
        } else {
            std::cout << rep.to_json().dump(2) << "\n";
        }
    } else {
        write_report(rep, json_path, csv_path);
    }
    std::string name = rep.spec.value("experiment", rep.spec.value("command", "report"));
    std::fprintf(stderr, "%s: %s (%zu rows, %zu not passing, %.2f s)\n", name.c_str(), rep.pass() ? "PASS" : "FAIL",
                 rep.rows.size(), rep.failures(), rep.wall_clock_seconds);
    return rep.pass() ? kOk : kChecksFailed;
}

ExperimentReport info_report(const std::string& command)
{
    ExperimentReport rep;
    rep.spec = {{"command", command}};
    return rep;
}

int cmd_ops_list(const Globals& g)
{
    ExperimentReport rep = info_report("ops list");
    json models = json::array();
    for (const auto& m : list_models()) {
        ModelPtr op = make_model(m.id);
        models.push_back({{"id", m.id},
                          {"dim", m.total_dim},
                          {"description", m.description},
                          {"homogeneous_dimension", op->dilation() ? op->dilation()->homogeneous_dimension() : 0.0}});
        rep.add("model[" + m.id + "]", m.total_dim, m.total_dim, 0.0, "info");
    }
    json fields = json::array();
    for (const auto& f : builtin_fields()) {
        fields.push_back({{"id", f.id}, {"expression", f.expression}, {"family", f.family}});
    }
    rep.tables["models"] = models;
    rep.tables["fields"] = fields;
    rep.tables["experiments"] = experiment_ids();
    return emit(rep, g);
}

int cmd_ball_info(const Globals& g, const std::string& model, const std::string& point, double radius)
{
    ModelPtr op = make_model(model);
    SpaceTimePoint z(parse_point(point));
    LBall ball(op, z, radius);
    QuadratureConfig cfg = quadrature_from(g);
    ExperimentReport rep = info_report("ball info");
    rep.spec["model"] = model;
    rep.spec["point"] = std::vector<double>(z.coords().data(), z.coords().data() + z.dim());
    rep.spec["radius"] = radius;
    rep.spec["seed"] = cfg.seed;
    rep.spec["budget"] = cfg.budget;
    BoundingBox box = bounding_box(ball);
    auto vol = estimate_volume(ball, cfg);
    auto q = q_r(ball, cfg.with_seed(mix_seed(cfg.seed, 1)));
    rep.add("tau_max", ball.tau_max(), ball.tau_max(), 0.0, "info");
    rep.add("volume", vol.value, vol.value, vol.std_error, "info");
    rep.add("q_r", q.value, q.value, q.std_error, "info");
    rep.add("contains_center", contains(ball, z.coords()) ? 1.0 : 0.0, 1.0, 0.0);
    rep.tables["bounding_box"] = box_to_json(box);
    return emit(rep, g);
}

int cmd_mean(const Globals& g, const std::string& model, const std::string& field, const std::string& point,
             double radius)
{
    ModelPtr op = make_model(model);
    SmoothField u = builtin_field(field, op->total_dim());
    Vec z = parse_point(point);
    op->check_dim(z);
    QuadratureConfig cfg = quadrature_from(g);
    LBall ball(op, SpaceTimePoint(z), radius);
    auto j = pj1_functionals(ball, u, cfg);
    ExperimentReport rep = info_report("mean");
    rep.spec["model"] = model;
    rep.spec["field"] = field;
    rep.spec["point"] = std::vector<double>(z.data(), z.data() + z.size());
    rep.spec["radius"] = radius;
    rep.spec["seed"] = cfg.seed;
    rep.spec["budget"] = cfg.budget;
    rep.add("u(center)", j.u_center, j.u_center, 0.0, "info");
    rep.add("M_r(u)", j.m_u.value, j.m_u.value, j.m_u.std_error, "info");
    rep.add("N_r(Lu)", j.n_g.value, j.n_g.value, j.n_g.std_error, "info");
    rep.add("Q_r", j.q.value, j.q.value, j.q.std_error, "info");
    rep.add("M_r(1)", j.m_one.value, 1.0, 3.0 * j.m_one.std_error);
    rep.add("residual", j.residual.value, 0.0,
            3.0 * j.residual.std_error + 1e-3 * std::max(1.0, std::abs(j.u_center)));
    return emit(rep, g);
}

int cmd_potential(const Globals& g, const std::string& model, const std::string& type, double amplitude,
                  const std::vector<std::string>& points, const std::string& grid_path, int resolution)
{
    ModelPtr op = make_model(model);
    SourceField src = make_source(type, detail::default_support(op->spatial_dim()), amplitude);
    QuadratureConfig cfg = quadrature_from(g);
    validate_source(src, cfg.seed);
    ExperimentReport rep = info_report("potential");
    rep.spec["model"] = model;
    rep.spec["source"] = source_to_json(src);
    rep.spec["seed"] = cfg.seed;
    rep.spec["budget"] = cfg.budget;
    std::vector<Vec> nodes;
    for (const auto& p : points) {
        nodes.push_back(parse_point(p));
    }
    rep.spec["points"] = detail::points_json(nodes);
    auto est = potential_at_nodes(*op, src, nodes, cfg);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        rep.add("u_f" + detail::pt_name(nodes[i]), est[i].value, est[i].value, est[i].std_error, "info");
    }
    if (!grid_path.empty()) {
        GridSpec spec;
        Vec margin = 0.25 * (src.support.hi - src.support.lo);
        spec.box = src.support.expanded(margin);
        spec.resolution.assign(static_cast<std::size_t>(op->total_dim()), resolution);
        ProbeReport probes;
        rep.spec["grid"] = {{"path", grid_path}, {"box", box_to_json(spec.box)}, {"resolution", resolution}};
        try {
            FieldGrid grid = tabulate_potential(*op, src, spec, cfg, &probes);
            save_grid(grid, grid_path);
            rep.add("grid.max_stderr", grid.max_error(), grid.max_error(), 0.0, "info");
        } catch (const NumericalError& e) {
            std::fprintf(stderr, "%s\n", e.what());
        }
        double worst = 0.0;
        for (std::size_t k = 0; k < probes.points.size(); ++k) {
            worst = std::max(worst, std::abs(probes.interpolated[k] - probes.direct[k].value));
        }
        rep.add("grid.probe", worst, 0.0, 0.0, "info").status = probes.passed ? "PASS" : "FAIL";
    }
    return emit(rep, g);
}

int cmd_experiment(const Globals& g, const std::string& experiment, const std::string& model, bool control)
{
    json user{{"experiment", experiment}, {"model", model}, {"negative_control", control}};
    ExperimentSpec spec = ExperimentSpec::from_json(user);
    apply_globals(spec, g);
    return emit(run_experiment(spec), g);
}

int cmd_run(const Globals& g, const std::string& path)
{
    ExperimentSpec spec = load_spec(path);
    apply_globals(spec, g);
    return emit(run_experiment(spec), g);
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"L-ball mean values, Gamma-potentials and verification experiments"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "master seed (default 42, or LBALL_SEED)");
    app.add_option("--samples", g.samples, "samples per region integral");
    app.add_option("--workers", g.workers, "worker threads (default LBALL_WORKERS or all cores)")
        ->check(CLI::PositiveNumber);
    app.add_option("--strata", g.strata, "strata per axis (0 picks from the budget)")->check(CLI::NonNegativeNumber);
    app.add_option("--target-rse", g.target_rse, "target relative stderr for refinement")
        ->check(CLI::PositiveNumber);
    app.add_option("--out", g.out, "report path (default: stdout or the experiment spec's output paths)");
    app.add_option("--format", g.format, "report format")->check(CLI::IsMember({"json", "csv"}));

    std::function<int()> action;

    auto* ops = app.add_subcommand("ops", "operator models");
    ops->require_subcommand(1);
    ops->add_subcommand("list", "list registered models and fields")->callback([&] {
        action = [&] { return cmd_ops_list(g); };
    });

    std::string model = "heat_1d";
    std::string point;
    double radius = 1.0;
    auto* ball = app.add_subcommand("ball", "L-ball queries");
    ball->require_subcommand(1);
    auto* info = ball->add_subcommand("info", "bounding box, volume and Q_r of one ball");
    info->add_option("--model", model, "model id")->capture_default_str();
    info->add_option("--point", point, "center, comma separated")->required();
    info->add_option("--radius", radius, "radius r")->check(CLI::PositiveNumber)->capture_default_str();
    info->callback([&] { action = [&] { return cmd_ball_info(g, model, point, radius); }; });

    std::string field = "y4";
    auto* mean = app.add_subcommand("mean", "M_r(u), N_r(Lu) and the representation residual");
    mean->add_option("--model", model, "model id")->capture_default_str();
    mean->add_option("--field", field, "built-in field id")->capture_default_str();
    mean->add_option("--point", point, "center, comma separated")->required();
    mean->add_option("--radius", radius, "radius r")->check(CLI::PositiveNumber)->capture_default_str();
    mean->callback([&] { action = [&] { return cmd_mean(g, model, field, point, radius); }; });

    std::string source_type = "bump";
    double amplitude = 1.0;
    std::vector<std::string> points;
    std::string grid_path;
    int resolution = 33;
    auto* pot = app.add_subcommand("potential", "Gamma-potential of a source on [-1,1]^n x [-1,0]");
    pot->add_option("--model", model, "model id")->capture_default_str();
    pot->add_option("--source", source_type, "bump, tent or zero")->capture_default_str();
    pot->add_option("--amplitude", amplitude, "source amplitude")->capture_default_str();
    pot->add_option("--point", points, "evaluation point (repeatable)");
    pot->add_option("--grid", grid_path, "also tabulate a grid and save it here");
    pot->add_option("--resolution", resolution, "grid nodes per axis")->check(CLI::Range(2, 512))->capture_default_str();
    pot->callback([&] {
        action = [&] { return cmd_potential(g, model, source_type, amplitude, points, grid_path, resolution); };
    });

    bool control = false;
    for (const std::string& e : experiment_ids()) {
        auto* sub = app.add_subcommand(e, "run the " + e + " experiment with default settings");
        sub->add_option("--model", model, "model id")->capture_default_str();
        sub->add_flag("--control", control, "run the negative-control fixture (expected to fail)");
        sub->callback([&, e] { action = [&, e] { return cmd_experiment(g, e, model, control); }; });
    }

    std::string spec_path;
    auto* run = app.add_subcommand("run", "run an experiment spec file");
    run->add_option("spec", spec_path, "JSON spec file")->required();
    run->callback([&] { action = [&] { return cmd_run(g, spec_path); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }
    try {
        return action();
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
}
