// SPDX-License-Identifier: Apache-2.0
#include "lball/experiments.hpp"

#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace lball;

namespace {

// Small budgets keep these fast; the acceptance binary runs the defaults.
ExperimentSpec light(const std::string& experiment, const std::string& model, json extra = json::object())
{
    json j{{"experiment", experiment}, {"model", model}};
    if (experiment == "pj1") {
        j["quadrature"] = {{"budget", 20000}};
        j["radii"] = {0.5, 1.0};
        auto centers = detail::default_centers(make_model(model)->total_dim());
        j["points"] = detail::points_json({centers[0], centers[1]});
        j["params"] = {{"reference_cases", 2}, {"reference_budget", 2000}};
        j["tolerances"] = {{"m_one_stderr", 0.05}};
    } else if (experiment == "geometry") {
        j["quadrature"] = {{"budget", 20000}};
    } else if (experiment == "pizzetti") {
        j["quadrature"] = {{"budget", 20000}};
        j["points"] = json::array({json::array({0.0, -0.5})});
        j["exterior_points"] = json::array({json::array({0.0, 0.5})});
        j["sources"] = json::array({source_to_json(make_source("bump", detail::default_support(1), 1.0))});
        j["schedule"] = {{"r_max", 0.5}, {"ratio", 0.5}, {"count", 2}};
        j["params"] = {{"batches", 3}, {"grid_budget", 4000}, {"ball_budget", 4000}, {"grid_cells", 12},
                       {"grid_margin", 3}};
    } else if (experiment == "weakform") {
        j["quadrature"] = {{"budget", 20000}};
        j["params"] = {{"grid_cells", 24}, {"grid_budget", 10000}, {"converse", false}};
    } else if (experiment == "selfcheck") {
        j["quadrature"] = {{"budget", 100000}};
    }
    for (auto it = extra.begin(); it != extra.end(); ++it) {
        j[it.key()] = it.value();
    }
    return ExperimentSpec::from_json(j);
}

std::string read_file(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string temp_path(const std::string& name)
{
    return (std::filesystem::temp_directory_path() / ("lball_exp_" + name)).string();
}

}  // namespace

TEST_CASE("spec resolution fills every key and rejects unknown ones")
{
    auto s = ExperimentSpec::defaults("pizzetti", "heat_1d");
    CHECK(s.seed() == 42);
    CHECK(s.data.at("quadrature").at("budget") == 1000000);
    CHECK(s.points().size() == 5);
    CHECK(s.points("exterior_points").size() == 2);
    CHECK(s.points()[1] == to_vec({0.3, -0.4}));
    CHECK(s.points("exterior_points")[0] == to_vec({0.0, 0.5}));
    CHECK(s.points("exterior_points")[1] == to_vec({1.5, -0.5}));
    CHECK(s.tol("sigma") == 3.0);

    // nested objects merge key by key
    auto t = ExperimentSpec::from_json({{"experiment", "pj1"}, {"model", "heat_1d"}, {"tolerances", {{"sigma", 4.0}}}});
    CHECK(t.tol("sigma") == 4.0);
    CHECK(t.tol("residual_abs") == 1e-3);

    CHECK_THROWS_AS(ExperimentSpec::from_json({{"experiment", "pj1"}, {"model", "heat_1d"}, {"bogus", 1}}), UsageError);
    CHECK_THROWS_AS(
        ExperimentSpec::from_json({{"experiment", "pj1"}, {"model", "heat_1d"}, {"tolerances", {{"bogus", 1}}}}),
        UsageError);
    CHECK_THROWS_AS(ExperimentSpec::from_json({{"experiment", "nope"}, {"model", "heat_1d"}}), UsageError);
    CHECK_THROWS_AS(ExperimentSpec::from_json({{"experiment", "pj1"}, {"model", "nope"}}), UsageError);
    CHECK_THROWS_AS(ExperimentSpec::from_json({{"model", "heat_1d"}}), UsageError);
    CHECK_THROWS_AS(ExperimentSpec::from_json(json::array()), UsageError);
    CHECK_THROWS_AS(
        ExperimentSpec::from_json({{"experiment", "pj1"}, {"model", "heat_1d"}, {"points", {{0.1, 0.2, 0.3}}}}),
        UsageError);
    CHECK_THROWS_AS(ExperimentSpec::from_json({{"experiment", "pj1"}, {"model", "heat_1d"}, {"fields", {"v4"}}}),
                    UsageError);
    CHECK_THROWS_AS(
        ExperimentSpec::from_json({{"experiment", "pj1"}, {"model", "heat_1d"}, {"quadrature", {{"budget", 1}}}}),
        UsageError);
    CHECK_THROWS_AS(ExperimentSpec::from_json(
                        {{"experiment", "pizzetti"}, {"model", "heat_1d"}, {"schedule", {{"ratio", 2.0}}}}),
                    UsageError);
    for (const auto& e : experiment_ids()) {
        for (const auto& m : list_models()) {
            CHECK_NOTHROW(ExperimentSpec::defaults(e, m.id));
        }
    }
}

TEST_CASE("seed override from the environment is echoed")
{
    auto s = ExperimentSpec::defaults("geometry", "heat_1d");
    ::setenv("LBALL_SEED", "1234", 1);
    apply_env_overrides(s);
    ::unsetenv("LBALL_SEED");
    CHECK(s.seed() == 1234);
    CHECK(s.quadrature().seed == 1234);
    ::setenv("LBALL_SEED", "abc", 1);
    CHECK_THROWS_AS(apply_env_overrides(s), UsageError);
    ::unsetenv("LBALL_SEED");
}

TEST_CASE("report rows and overall status")
{
    ExperimentReport rep;
    CHECK_FALSE(rep.pass());
    rep.add("a", 1.0, 1.05, 0.1);
    rep.add("b", 2.0, 1.0, 0.5, "ge");
    rep.add("c", 0.4, 0.5, 0.0, "le");
    rep.add("d", 99.0, 0.0, 0.0, "info");
    CHECK(rep.pass());
    rep.add("e", std::nan(""), 0.0, 1.0);
    CHECK_FALSE(rep.pass());
    CHECK(rep.failures() == 1);
    CHECK(rep.find("e")->status == "FAIL");
    rep.rows.back().status = "INCONCLUSIVE";
    CHECK_FALSE(rep.pass());
    auto j = rep.to_json();
    CHECK(j.contains("execution"));
    CHECK_FALSE(rep.to_json(false).contains("execution"));
    CHECK(j["rows"].size() == 5);
    CHECK(j["pass"] == false);
}

TEST_CASE("CSV output follows RFC 4180")
{
    ExperimentReport rep;
    rep.spec = {{"experiment", "x,y"}, {"model", "heat_1d"}};
    rep.add("has \"quote\", comma", 0.1, 0.0, 1.0);
    std::string csv = report_to_csv(rep);
    CHECK(csv.rfind("schema,experiment,model,check,measured,target,tolerance,relation,status,pass\r\n", 0) == 0);
    CHECK(csv.find("\"x,y\"") != std::string::npos);
    CHECK(csv.find("\"has \"\"quote\"\", comma\"") != std::string::npos);
    CHECK(csv.find("0.10000000000000001") != std::string::npos);
    CHECK(csv.substr(csv.size() - 2) == "\r\n");

    json table = json::array({{{"a", 1.5}, {"b", "p,q"}}, {{"a", 2.0}, {"b", nullptr}}});
    std::string t = table_to_csv(table);
    CHECK(t == "a,b\r\n1.5,\"p,q\"\r\n2,\r\n");
}

TEST_CASE("reports are bit-identical across worker counts and re-runs from the echo")
{
    for (const auto& spec0 : {light("geometry", "heat_1d"), light("pj1", "kolmogorov_1d"),
                              light("pizzetti", "heat_1d"), light("weakform", "heat_1d")}) {
        ExperimentSpec a = spec0;
        a.workers = 1;
        std::string base = run_experiment(a).canonical();
        for (int w : {2, 8}) {
            ExperimentSpec b = spec0;
            b.workers = w;
            CHECK(run_experiment(b).canonical() == base);
        }
        ExperimentReport first = run_experiment(a);
        ExperimentSpec echo = ExperimentSpec::from_json(first.to_json()["spec"]);
        CHECK(run_experiment(echo).canonical() == base);
    }
}

TEST_CASE("light experiments pass")
{
    for (const auto& spec : {light("selfcheck", "heat_1d"), light("selfcheck", "kolmogorov_1d"),
                             light("geometry", "kolmogorov_1d"), light("pj1", "heat_1d"),
                             light("weakform", "heat_1d")}) {
        auto rep = run_experiment(spec);
        for (const auto& r : rep.rows) {
            INFO(spec.experiment() << " " << r.name << " " << r.measured << " " << r.target << " " << r.tolerance);
            CHECK(r.pass());
        }
        CHECK(rep.pass());
        CHECK(rep.wall_clock_seconds >= 0.0);
    }
}

TEST_CASE("negative controls fail where designed")
{
    auto has_failing = [](const ExperimentReport& rep, const std::string& prefix) {
        for (const auto& r : rep.rows) {
            if (r.name.rfind(prefix, 0) == 0 && !r.pass()) {
                return true;
            }
        }
        return false;
    };
    json ctl{{"negative_control", true}};
    auto sc = run_experiment(light("selfcheck", "kolmogorov_1d", ctl));
    CHECK_FALSE(sc.pass());
    CHECK(has_failing(sc, "chapman_kolmogorov"));
    for (const auto& r : sc.rows) {
        if (r.name.rfind("mass", 0) == 0) {
            CHECK(r.pass());
        }
    }
    CHECK_THROWS_AS(run_experiment(light("selfcheck", "heat_1d", ctl)), UsageError);

    auto geo = run_experiment(light("geometry", "heat_1d", ctl));
    CHECK(has_failing(geo, "union_box("));

    auto pj1 = run_experiment(light("pj1", "heat_1d", ctl));
    CHECK(has_failing(pj1, "residual"));

    auto piz = run_experiment(light("pizzetti", "heat_1d", ctl));
    CHECK(has_failing(piz, "pizzetti[bump#0](0,-0.5)"));

    auto weak = run_experiment(light("weakform", "heat_1d", ctl));
    CHECK(has_failing(weak, "weak["));
}

TEST_CASE("trivial sources")
{
    json zero = source_to_json(make_source("zero", detail::default_support(1), 0.0));
    auto weak = run_experiment(light("weakform", "heat_1d", {{"sources", json::array({zero})}}));
    REQUIRE(weak.rows.size() == 5);
    for (const auto& r : weak.rows) {
        CHECK(r.name.rfind("weak_zero", 0) == 0);
        CHECK(r.measured == 0.0);
        CHECK(r.pass());
    }
    auto piz = run_experiment(light("pizzetti", "heat_1d", {{"sources", json::array({zero})}}));
    CHECK(piz.pass());
    for (const auto& row : piz.tables["convergence"]) {
        CHECK(row["ratio"] == 0.0);
    }
}

TEST_CASE("weak form sides scale linearly with the source")
{
    auto one = run_experiment(light("weakform", "heat_1d"));
    json doubled = source_to_json(make_source("bump", detail::default_support(1), 2.0));
    auto two = run_experiment(light("weakform", "heat_1d", {{"sources", json::array({doubled})}}));
    REQUIRE(one.tables["weak_form"].size() == two.tables["weak_form"].size());
    for (std::size_t k = 0; k < one.tables["weak_form"].size(); ++k) {
        double a = one.tables["weak_form"][k]["int_f_phi"];
        double b = two.tables["weak_form"][k]["int_f_phi"];
        double la = one.tables["weak_form"][k]["int_u_adjoint_phi"];
        double lb = two.tables["weak_form"][k]["int_u_adjoint_phi"];
        CHECK(b == Catch::Approx(2.0 * a).epsilon(1e-12));
        CHECK(lb == Catch::Approx(2.0 * la).epsilon(1e-9));
    }
}

TEST_CASE("report files")
{
    auto rep = run_experiment(light("geometry", "heat_1d"));
    std::string js = temp_path("geo.json");
    std::string cs = temp_path("geo.csv");
    write_report(rep, js, cs);
    json back = json::parse(read_file(js));
    CHECK(back["schema"] == kReportSchema);
    CHECK(back["rows"].size() == rep.rows.size());
    CHECK(back["spec"] == rep.spec);
    std::string csv = read_file(cs);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(rep.rows.size() + 1));
    CHECK(std::filesystem::exists(temp_path("geo.volumes.csv")));
    CHECK_THROWS_AS(write_report(rep, "/nonexistent/dir/x.json", ""), Error);
    std::filesystem::remove(js);
    std::filesystem::remove(cs);
    std::filesystem::remove(temp_path("geo.volumes.csv"));

    std::string spec_path = temp_path("spec.json");
    {
        std::ofstream os(spec_path);
        os << "{\"experiment\": \"geometry\", \"model\": \"heat_1d\"";
    }
    CHECK_THROWS_AS(load_spec(spec_path), FormatError);
    CHECK_THROWS_AS(load_spec(temp_path("missing.json")), Error);
    std::filesystem::remove(spec_path);
}
