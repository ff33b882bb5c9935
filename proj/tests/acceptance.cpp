// SPDX-License-Identifier: Apache-2.0
// Runs the acceptance panel at default budgets and prints one line per
// criterion.  Reports land in the directory given as argv[1] if present.
#include "lball/experiments.hpp"

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>

#ifndef LBALL_SPEC_DIR
#define LBALL_SPEC_DIR "specs"
#endif

using namespace lball;

namespace {

struct Outcome {
    bool pass = true;
    std::size_t checked = 0;
    std::vector<std::string> notes;

    void need(bool ok, const std::string& what)
    {
        if (!ok) {
            pass = false;
            notes.push_back(what);
        }
    }
};

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

// All rows whose name starts with prefix must pass; at least min_rows of them.
void rows_pass(Outcome& out, const ExperimentReport& rep, const std::string& prefix, std::size_t min_rows)
{
    std::size_t n = 0;
    for (const auto& r : rep.rows) {
        if (!starts_with(r.name, prefix)) {
            continue;
        }
        ++n;
        if (!r.pass()) {
            char buf[512];
            std::snprintf(buf, sizeof buf, "%s/%s %s: %s measured %.6g target %.6g tol %.3g",
                          rep.spec["experiment"].get<std::string>().c_str(),
                          rep.spec["model"].get<std::string>().c_str(), r.name.c_str(), r.status.c_str(), r.measured,
                          r.target, r.tolerance);
            out.need(false, buf);
        }
    }
    out.checked += n;
    out.need(n >= min_rows, rep.spec["model"].get<std::string>() + ": expected at least " + std::to_string(min_rows) +
                                " '" + prefix + "' rows, found " + std::to_string(n));
}

bool any_fails(const ExperimentReport& rep, const std::string& prefix)
{
    for (const auto& r : rep.rows) {
        if (starts_with(r.name, prefix) && !r.pass()) {
            return true;
        }
    }
    return false;
}

}  // namespace

int main(int argc, char** argv)
{
    const std::string out_dir = argc > 1 ? argv[1] : "";
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
    }
    std::map<std::string, ExperimentReport> reports;
    std::vector<std::string> order;
    auto run = [&](const std::string& exp, const std::string& model) -> const ExperimentReport& {
        const std::string key = exp + "_" + model;
        ExperimentSpec spec = ExperimentSpec::defaults(exp, model);
        spec.workers = 1;
        ExperimentReport rep = run_experiment(spec);
        std::fprintf(stderr, "  ran %-24s %4zu rows, %zu not passing, %.1f s\n", key.c_str(), rep.rows.size(),
                     rep.failures(), rep.wall_clock_seconds);
        if (!out_dir.empty()) {
            write_report(rep, out_dir + "/" + key + ".json", out_dir + "/" + key + ".csv");
        }
        order.push_back(key);
        return reports[key] = std::move(rep);
    };

    std::vector<std::pair<std::string, Outcome>> results;

    {
        Outcome o;
        for (const char* m : {"heat_1d", "heat_2d", "kolmogorov_1d"}) {
            const auto& rep = run("selfcheck", m);
            rows_pass(o, rep, "mass", 3);
            rows_pass(o, rep, "chapman_kolmogorov", 3);
            rows_pass(o, rep, "caloricity", 3);
            rows_pass(o, rep, "distributional", 1);
        }
        results.emplace_back("1 kernel self-checks (heat_1d, heat_2d, kolmogorov_1d)", o);
    }

    const auto& pj_heat = run("pj1", "heat_1d");
    const auto& pj_kol = run("pj1", "kolmogorov_1d");
    {
        Outcome o;
        for (const auto* rep : {&pj_heat, &pj_kol}) {
            rows_pass(o, *rep, "m_one(", 20);
            rows_pass(o, *rep, "m_one_stderr(", 20);
        }
        results.emplace_back("2 M_r(1) = 1 with stderr < 5e-3 (4 radii, 5 centers, two models)", o);
    }
    {
        Outcome o;
        const std::map<std::string, std::set<std::string>> required{{"heat_1d", {"y2_plus_2s", "y3_plus_6ys"}},
                                                                    {"kolmogorov_1d", {"v", "x_plus_tv"}}};
        for (const auto* rep : {&pj_heat, &pj_kol}) {
            const std::string model = rep->spec["model"];
            for (const auto& f : required.at(model)) {
                const CheckRow* c = rep->find("classify[" + f + "]");
                o.need(c && c->relation == "abs_le" && c->pass(), model + ": " + f + " not verified caloric");
            }
            for (const auto& r : rep->rows) {
                if (starts_with(r.name, "classify[") && r.relation == "abs_le") {
                    o.need(r.pass(), model + ": " + r.name + " failed");
                }
            }
            rows_pass(o, *rep, "mean_value[", 40);
        }
        results.emplace_back("3 mean-value property on the caloric suites", o);
    }
    {
        Outcome o;
        rows_pass(o, pj_heat, "residual[", 40);
        rows_pass(o, pj_kol, "residual[", 20);
        results.emplace_back("4 representation residual on the non-caloric suites", o);
    }
    {
        Outcome o;
        rows_pass(o, pj_heat, "n_reference[", 10);
        rows_pass(o, pj_kol, "n_reference[", 10);
        results.emplace_back("5 N_r fast vs reference on 10 randomized cases per model", o);
    }
    {
        Outcome o;
        for (const char* m : {"heat_1d", "kolmogorov_1d"}) {
            const auto& rep = run("geometry", m);
            rows_pass(o, rep, "volume_slope", 1);
            rows_pass(o, rep, "q_slope", 1);
        }
        results.emplace_back("6 volume and Q_r scaling slopes", o);
    }
    {
        Outcome o;
        const auto& rep = run("pizzetti", "heat_1d");
        rows_pass(o, rep, "pizzetti[", 14);
        rows_pass(o, rep, "identity[", 14);
        results.emplace_back("7 Pizzetti limit and per-radius identity (bump and tent, 7 points)", o);
    }
    {
        Outcome o;
        for (const char* m : {"heat_1d", "kolmogorov_1d"}) {
            const auto& rep = run("weakform", m);
            rows_pass(o, rep, "weak[", 5);
        }
        results.emplace_back("8 weak-form consistency for 5 test functions", o);
    }
    {
        Outcome o;
        for (const auto& key : order) {
            const ExperimentReport& base = reports.at(key);
            const std::string canon = base.canonical();
            for (int w : {2, 8}) {
                ExperimentSpec spec = ExperimentSpec::from_json(base.spec);
                spec.workers = w;
                const bool same = run_experiment(spec).canonical() == canon;
                o.need(same, key + " differs at " + std::to_string(w) + " workers");
                ++o.checked;
            }
            std::fprintf(stderr, "  replayed %s at 2 and 8 workers\n", key.c_str());
        }
        const std::string dir = LBALL_SPEC_DIR;
        const std::vector<std::pair<std::string, std::string>> controls{
            {"control_selfcheck_corrupt_kernel.json", "chapman_kolmogorov"},
            {"control_geometry_shrunk_box.json", "union_box("},
            {"control_pj1_scaled_source.json", "residual["},
            {"control_pizzetti_flipped_sign.json", "pizzetti["},
            {"control_weakform_flipped_sign.json", "weak["}};
        for (const auto& [file, prefix] : controls) {
            ExperimentSpec spec = load_spec(dir + "/" + file);
            spec.workers = 1;
            o.need(spec.negative_control(), file + " is not a negative control");
            ExperimentReport rep = run_experiment(spec);
            o.need(!rep.pass() && any_fails(rep, prefix), file + ": no failing '" + prefix + "' row");
            ++o.checked;
        }
        ExperimentSpec corrupt = load_spec(dir + "/control_selfcheck_corrupt_kernel.json");
        rows_pass(o, run_experiment(corrupt), "mass", 3);
        results.emplace_back("9 bit-identical reports at 1/2/8 workers; negative controls fail as designed", o);
    }

    bool all = true;
    for (const auto& [title, o] : results) {
        std::printf("[%s] criterion %s (%zu checks)\n", o.pass ? "PASS" : "FAIL", title.c_str(), o.checked);
        for (const auto& n : o.notes) {
            std::printf("       %s\n", n.c_str());
        }
        all = all && o.pass;
    }
    std::printf("acceptance: %s\n", all ? "PASS" : "FAIL");
    return all ? 0 : 1;
}
