#include "dopf/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "json.hpp"

#include "dopf/admm.hpp"
#include "dopf/distflow.hpp"
#include "dopf/errors.hpp"
#include "dopf/fleet.hpp"
#include "dopf/netmodel.hpp"
#include "dopf/opf.hpp"
#include "dopf/policies.hpp"
#include "dopf/qpcore.hpp"
#include "dopf/uncertainty.hpp"

namespace dopf::runtime {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);  // binary keeps LF endings everywhere
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    for (size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << '\n';
    }
}

std::string manifest_serialize(const RunOptions& opts) {
    json j;
    j["tool"] = tool_name;
    j["version"] = tool_version;
    j["command"] = opts.command;
    j["case"] = opts.case_path;
    j["pv"] = opts.pv_path;
    j["pv_sweep"] = opts.pv_sweep_path;
    j["policy"] = opts.policy;
    j["droop"] = opts.droop;
    j["eps"] = opts.eps;
    j["rho"] = opts.rho;
    j["samples"] = opts.samples;
    j["seed"] = opts.seed;
    j["out"] = opts.out;
    j["mode"] = opts.mode;
    j["variant"] = opts.variant;
    j["qref"] = opts.qref;
    j["workers"] = opts.workers;
    j["max_iters"] = opts.max_iters;
    j["solution_dir"] = opts.solution_dir;
    j["policy_rows"] = opts.policy_rows;
    return j.dump(2) + "\n";
}

RunOptions manifest_parse(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("manifest is not valid JSON: ") + e.what(), 0);
    }
    if (!j.contains("command"))
        throw ParseError("manifest lacks a 'command' field", 0);
    RunOptions o;
    o.command = j.value("command", "");
    o.case_path = j.value("case", "");
    o.pv_path = j.value("pv", "");
    o.pv_sweep_path = j.value("pv_sweep", "");
    o.policy = j.value("policy", o.policy);
    o.droop = j.value("droop", o.droop);
    o.eps = j.value("eps", std::vector<double>{});
    o.rho = j.value("rho", 0.0);
    o.samples = j.value("samples", o.samples);
    o.seed = j.value("seed", static_cast<std::uint64_t>(1));
    o.out = j.value("out", o.out);
    o.mode = j.value("mode", o.mode);
    o.variant = j.value("variant", o.variant);
    o.qref = j.value("qref", o.qref);
    o.workers = j.value("workers", o.workers);
    o.max_iters = j.value("max_iters", o.max_iters);
    o.solution_dir = j.value("solution_dir", "");
    o.policy_rows = j.value("policy_rows", false);
    return o;
}

RunOptions manifest_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open manifest '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return manifest_parse(ss.str());
}

void manifest_write(const RunOptions& opts, const std::string& dir) {
    fs::create_directories(dir);
    const std::string path = dir + "/manifest.json";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    out << manifest_serialize(opts);
}

std::vector<double> parse_droop_grid(const std::string& text) {
    double lo = 0, hi = 0, step = 0;
    char extra = 0;
    if (std::sscanf(text.c_str(), "%lf:%lf:%lf%c", &lo, &hi, &step, &extra) != 3)
        throw InputError("droop grid '" + text + "' is not LO:HI:STEP");
    if (step <= 0) throw InputError("droop step must be positive");
    if (hi < lo) throw InputError("droop grid upper bound is below the lower bound");
    std::vector<double> grid;
    for (double k = lo; k <= hi + 1e-9; k += step) grid.push_back(k);
    return grid;
}

namespace {

policies::PolicyKind policy_from_name(const std::string& name) {
    if (name == "none") return policies::PolicyKind::none;
    if (name == "constant-pf") return policies::PolicyKind::constant_pf;
    if (name == "voltage") return policies::PolicyKind::voltage_sigmoid;
    if (name == "loss-min") return policies::PolicyKind::loss_min;
    if (name == "hybrid") return policies::PolicyKind::hybrid;
    if (name == "flow-q") return policies::PolicyKind::flow_reactive;
    if (name == "flow-pq") return policies::PolicyKind::flow_active_reactive;
    throw InputError("unknown policy '" + name +
                     "' (expected none, constant-pf, voltage, loss-min, hybrid, "
                     "flow-q or flow-pq)");
}

std::map<int, double> variant_factors(const std::string& variant) {
    if (variant == "none" || variant.empty()) return {};
    if (variant == "I") return {{5, 1.5}};
    if (variant == "II") return {{33, 1.5}};
    throw InputError("unknown case variant '" + variant + "' (expected I, II or none)");
}

double checked_eps(const std::vector<double>& eps_list) {
    if (eps_list.empty()) return 0.0;
    const double e = eps_list.front();
    if (!(e > 0.0 && e < 0.5))
        throw InputError("eps " + fmt_g(e) + " is outside (0, 0.5)");
    return e;
}

struct LoadedCase {
    netmodel::RadialNetwork net;
    std::vector<fleet::PvUnit> units;
    std::vector<policies::InverterSpec> specs;
};

LoadedCase load_case(const RunOptions& opts, bool pv_required) {
    if (opts.case_path.empty()) throw InputError("no --case given");
    LoadedCase lc{netmodel::parse_case_file(opts.case_path), {}, {}};
    if (!opts.pv_path.empty()) {
        lc.units = fleet::parse_pv_config_file(opts.pv_path);
        lc.specs = policies::specs_from_fleet(lc.units, lc.net.base_mva());
    } else if (pv_required) {
        throw InputError("this command needs a --pv inverter config");
    }
    return lc;
}

double total_fleet_q(const distflow::InjectionSet& inj) {
    double q = 0.0;
    for (const auto& [node, val] : inj.q) q += val;
    return q;
}

void write_solution_csvs(const std::string& dir, const netmodel::RadialNetwork& net,
                         const std::vector<policies::InverterSpec>& specs,
                         const std::optional<uncertainty::UncertaintyModel>& model,
                         const opf::OpfSolution& sol) {
    const double base = net.base_mva();
    std::vector<std::vector<std::string>> rows;
    for (const policies::InverterSpec& s : specs) {
        const double p = sol.injections.p_at(s.node);
        const double q = sol.injections.q_at(s.node);
        const double cap = model ? uncertainty::tightened_pf_cap(s.node, *model)
                                 : policies::capability_q(s, s.p_ref);
        rows.push_back({std::to_string(s.node), fmt_g(p), fmt_g(q), fmt_g(p * base),
                        fmt_g(q * base), fmt_g(cap)});
    }
    write_csv(dir + "/injections.csv",
              {"node", "p_pu", "q_pu", "p_mw", "q_mvar", "cap_pu"}, rows);

    rows.clear();
    for (const netmodel::Bus& b : net.buses()) {
        const double u = sol.state.u_at(b.id);
        rows.push_back({std::to_string(b.id), fmt_g(u), fmt_g(std::sqrt(std::max(u, 0.0)))});
    }
    write_csv(dir + "/bus.csv", {"bus", "u_pu", "v_pu"}, rows);

    rows.clear();
    for (size_t e = 0; e < net.branches().size(); ++e) {
        const netmodel::Branch& br = net.branches()[e];
        const double p = sol.state.branch_p[e];
        const double q = sol.state.branch_q[e];
        rows.push_back({std::to_string(br.from), std::to_string(br.to), fmt_g(br.r),
                        fmt_g(br.x), fmt_g(p), fmt_g(q), fmt_g(p * base), fmt_g(q * base)});
    }
    write_csv(dir + "/edge.csv",
              {"from", "to", "r_pu", "x_pu", "p_pu", "q_pu", "p_mw", "q_mvar"}, rows);
}

void write_admm_trace(const std::string& dir, const admm::AdmmRun& run) {
    std::vector<std::vector<std::string>> rows;
    for (const admm::TraceRow& t : run.trace)
        rows.push_back({std::to_string(t.iter), fmt_g(t.primal), fmt_g(t.dual),
                        fmt_g(t.total_q), fmt_g(t.losses)});
    write_csv(dir + "/trace.csv", {"iter", "primal", "dual", "total_q_pu", "losses_pu"},
              rows);

    rows.clear();
    for (const admm::Message& m : run.messages)
        rows.push_back({std::to_string(m.round), std::to_string(m.from),
                        std::to_string(m.to), m.kind, fmt_g(m.value)});
    write_csv(dir + "/messages.csv", {"round", "from", "to", "kind", "value"}, rows);
}

void write_profiles(const std::string& path, const netmodel::RadialNetwork& net,
                    const distflow::PowerFlowState& state) {
    std::vector<std::vector<std::string>> rows;
    for (int leaf : net.leaves()) {
        const auto profile = distflow::branch_voltage_profile(net, state, leaf);
        for (size_t i = 0; i < profile.size(); ++i)
            rows.push_back({std::to_string(leaf), std::to_string(i),
                            std::to_string(profile[i].first), fmt_g(profile[i].second)});
    }
    write_csv(path, {"leaf", "position", "bus", "v_pu"}, rows);
}

struct SweepSeries {
    std::string policy;
    std::vector<double> grid;
    std::vector<bool> diverged;
    std::vector<double> losses;   // pu; NaN when diverged
    std::vector<double> total_q;  // pu
    std::vector<int> iterations;
    std::vector<distflow::InjectionSet> injections;
    int breakpoint_index = -1;  // first grid index of the saturated tail
};

// The saturated tail starts at the first index from which every later
// injection set is identical (1e-12 pu) and no row diverged.
int find_breakpoint(const SweepSeries& s) {
    const int n = static_cast<int>(s.grid.size());
    auto same = [&](const distflow::InjectionSet& a, const distflow::InjectionSet& b) {
        for (const auto& [node, val] : a.p)
            if (std::abs(val - b.p_at(node)) > 1e-12) return false;
        for (const auto& [node, val] : a.q)
            if (std::abs(val - b.q_at(node)) > 1e-12) return false;
        return true;
    };
    int start = n - 1;
    if (s.diverged[static_cast<size_t>(start)]) return -1;
    for (int i = n - 2; i >= 0; --i) {
        if (s.diverged[static_cast<size_t>(i)]) break;
        if (!same(s.injections[static_cast<size_t>(i)],
                  s.injections[static_cast<size_t>(start)]))
            break;
        start = i;
    }
    return start;
}

SweepSeries run_sweep_series(const netmodel::RadialNetwork& net,
                             const std::vector<policies::InverterSpec>& refs,
                             const std::map<int, double>& factors,
                             const std::string& policy_name,
                             const std::vector<double>& grid) {
    SweepSeries series;
    series.policy = policy_name;
    series.grid = grid;
    policies::PolicyParams params;
    params.kind = policy_from_name(policy_name);
    const bool joint = params.kind == policies::PolicyKind::flow_active_reactive;
    for (double k : grid) {
        std::vector<policies::InverterSpec> specs = refs;
        for (policies::InverterSpec& s : specs) {
            s.droop_q = k;
            s.droop_p = joint ? k : 0.0;
        }
        bool diverged = false;
        double losses = std::numeric_limits<double>::quiet_NaN();
        double tq = std::numeric_limits<double>::quiet_NaN();
        int iters = 0;
        distflow::InjectionSet inj;
        try {
            const policies::ClosedLoopResult r =
                policies::closed_loop_simulate(net, specs, params, factors);
            losses = r.losses;
            tq = total_fleet_q(r.injections);
            iters = r.iterations;
            inj = r.injections;
        } catch (const ConvergenceError&) {
            diverged = true;
        }
        series.diverged.push_back(diverged);
        series.losses.push_back(losses);
        series.total_q.push_back(tq);
        series.iterations.push_back(iters);
        series.injections.push_back(inj);
    }
    series.breakpoint_index = find_breakpoint(series);
    return series;
}

opf::OpfSolution solve_opf_centralized(const LoadedCase& lc, double eps) {
    std::optional<uncertainty::UncertaintyModel> model;
    if (eps > 0.0)
        model = uncertainty::model_from_fleet(lc.units, lc.net.base_mva(), eps);
    return opf::solve_centralized(lc.net, lc.specs, model);
}

admm::AdmmRun solve_opf_admm(const LoadedCase& lc, double eps, const RunOptions& opts) {
    std::optional<uncertainty::UncertaintyModel> model;
    if (eps > 0.0)
        model = uncertainty::model_from_fleet(lc.units, lc.net.base_mva(), eps);
    admm::AdmmConfig cfg;
    cfg.rho = opts.rho;
    cfg.max_iters = opts.max_iters;
    cfg.workers = opts.workers;
    cfg.policy_rows = opts.policy_rows;
    return admm::run_admm(lc.net, lc.specs, model, cfg);
}

}  // namespace

int cmd_powerflow(const RunOptions& opts) {
    const LoadedCase lc = load_case(opts, false);
    const double base = lc.net.base_mva();
    distflow::InjectionSet inj;
    for (const policies::InverterSpec& s : lc.specs) {
        inj.p[s.node] = s.p_ref;
        inj.q[s.node] = 0.0;
    }
    const distflow::PowerFlowState state = distflow::solve_lindistflow(lc.net, inj);

    std::vector<std::vector<std::string>> rows;
    double vmin = std::numeric_limits<double>::infinity(), vmax = 0.0;
    for (const netmodel::Bus& b : lc.net.buses()) {
        const double u = state.u_at(b.id);
        const double v = std::sqrt(std::max(u, 0.0));
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
        rows.push_back({std::to_string(b.id), fmt_g(v), fmt_g(u), fmt_g(b.load_p),
                        fmt_g(b.load_q), fmt_g(b.load_p * base), fmt_g(b.load_q * base),
                        fmt_g(inj.p_at(b.id)), fmt_g(inj.q_at(b.id))});
    }
    write_csv(opts.out + "/bus.csv",
              {"bus", "v_pu", "u_pu", "load_p_pu", "load_q_pu", "load_p_mw",
               "load_q_mvar", "inj_p_pu", "inj_q_pu"},
              rows);

    rows.clear();
    for (size_t e = 0; e < lc.net.branches().size(); ++e) {
        const netmodel::Branch& br = lc.net.branches()[e];
        const double p = state.branch_p[e];
        const double q = state.branch_q[e];
        const double vn = lc.net.bus(br.from).v_nom;
        const double loss = br.r * (p * p + q * q) / (vn * vn);
        rows.push_back({std::to_string(br.from), std::to_string(br.to), fmt_g(br.r),
                        fmt_g(br.x), fmt_g(p), fmt_g(q), fmt_g(p * base), fmt_g(q * base),
                        fmt_g(loss), fmt_g(loss * base)});
    }
    write_csv(opts.out + "/edge.csv",
              {"from", "to", "r_pu", "x_pu", "p_pu", "q_pu", "p_mw", "q_mvar", "loss_pu",
               "loss_mw"},
              rows);

    const double losses = distflow::total_losses(lc.net, state);
    write_csv(opts.out + "/summary.csv",
              {"buses", "branches", "losses_pu", "losses_mw", "min_v_pu", "max_v_pu"},
              {{std::to_string(lc.net.bus_count()), std::to_string(lc.net.branch_count()),
                fmt_g(losses), fmt_g(losses * base), fmt_g(vmin), fmt_g(vmax)}});
    manifest_write(opts, opts.out);
    std::cout << "losses_pu=" << fmt_g(losses) << " min_v_pu=" << fmt_g(vmin)
              << " max_v_pu=" << fmt_g(vmax) << "\n";
    return 0;
}

int cmd_policy_sweep(const RunOptions& opts) {
    const LoadedCase lc = load_case(opts, true);
    const double base = lc.net.base_mva();
    const std::vector<double> grid = parse_droop_grid(opts.droop);
    const std::map<int, double> factors = variant_factors(opts.variant);

    std::vector<policies::InverterSpec> refs;
    if (opts.qref == "unperturbed") {
        policies::PolicyParams none;
        const policies::ClosedLoopResult r =
            policies::closed_loop_simulate(lc.net, lc.specs, none, {});
        refs = policies::apply_references(lc.specs, lc.net, r.state, r.injections);
    } else if (opts.qref == "opf") {
        const netmodel::RadialNetwork pert = policies::perturb_loads(lc.net, factors);
        const opf::OpfSolution sol = opf::solve_centralized(pert, lc.specs, std::nullopt);
        refs = opf::reference_setpoints(sol, pert, lc.specs);
    } else {
        throw InputError("unknown --qref '" + opts.qref + "' (expected unperturbed or opf)");
    }

    std::vector<std::string> series_names;
    if (opts.policy == "all")
        series_names = {"none", "flow-q", "flow-pq", "loss-min"};
    else
        series_names = {opts.policy};

    std::vector<std::vector<std::string>> rows;
    std::vector<std::vector<std::string>> bp_rows;
    for (const std::string& name : series_names) {
        const SweepSeries s = run_sweep_series(lc.net, refs, factors, name, grid);
        for (size_t i = 0; i < s.grid.size(); ++i) {
            const bool saturated =
                s.breakpoint_index >= 0 && static_cast<int>(i) >= s.breakpoint_index;
            rows.push_back({name, fmt_g(s.grid[i]), fmt_g(s.losses[i]),
                            fmt_g(s.losses[i] * base), fmt_g(s.total_q[i]),
                            std::to_string(s.iterations[i]),
                            s.diverged[i] ? "1" : "0", saturated ? "1" : "0"});
        }
        bp_rows.push_back({name,
                           s.breakpoint_index >= 0
                               ? fmt_g(s.grid[static_cast<size_t>(s.breakpoint_index)])
                               : "nan",
                           std::to_string(s.breakpoint_index)});
    }
    write_csv(opts.out + "/sweep.csv",
              {"policy", "k", "losses_pu", "losses_mw", "total_q_pu", "iterations",
               "diverged", "saturated"},
              rows);
    write_csv(opts.out + "/breakpoints.csv", {"policy", "k_star", "grid_index"}, bp_rows);
    manifest_write(opts, opts.out);
    std::cout << "wrote " << rows.size() << " sweep rows to " << opts.out << "\n";
    return 0;
}

int cmd_opf(const RunOptions& opts) {
    const LoadedCase lc = load_case(opts, true);
    const double base = lc.net.base_mva();
    const double eps = checked_eps(opts.eps);
    std::optional<uncertainty::UncertaintyModel> model;
    if (eps > 0.0) model = uncertainty::model_from_fleet(lc.units, base, eps);

    opf::OpfSolution sol;
    int iterations = 0;
    double rho_used = 0.0;
    if (opts.mode == "centralized") {
        sol = opf::solve_centralized(lc.net, lc.specs, model);
        if (sol.status == opf::SolveStatus::infeasible) {
            for (const std::string& row : sol.infeasible_rows)
                std::cerr << "infeasible: " << row << "\n";
        }
    } else if (opts.mode == "admm") {
        admm::AdmmConfig cfg;
        cfg.rho = opts.rho;
        cfg.max_iters = opts.max_iters;
        cfg.workers = opts.workers;
        cfg.policy_rows = opts.policy_rows;
        const admm::AdmmRun run = admm::run_admm(lc.net, lc.specs, model, cfg);
        sol = run.solution;
        iterations = run.iterations;
        const netmodel::Bus& root = lc.net.bus(lc.net.root());
        rho_used = opts.rho > 0 ? opts.rho : 1.0 / (root.v_nom * root.v_nom);
        write_admm_trace(opts.out, run);
    } else {
        throw InputError("unknown --mode '" + opts.mode +
                         "' (expected centralized or admm)");
    }

    write_solution_csvs(opts.out, lc.net, lc.specs, model, sol);
    const double tq = total_fleet_q(sol.injections);
    const bool converged = sol.status == opf::SolveStatus::optimal;
    write_csv(opts.out + "/summary.csv",
              {"mode", "eps", "rho", "iterations", "converged", "losses_pu", "losses_mw",
               "total_q_pu", "total_q_mvar"},
              {{opts.mode, fmt_g(eps), fmt_g(rho_used), std::to_string(iterations),
                converged ? "1" : "0", fmt_g(sol.losses), fmt_g(sol.losses * base),
                fmt_g(tq), fmt_g(tq * base)}});
    manifest_write(opts, opts.out);
    std::cout << "mode=" << opts.mode << " losses_pu=" << fmt_g(sol.losses)
              << " total_q_pu=" << fmt_g(tq) << " iterations=" << iterations
              << (converged ? "" : " (not converged)") << "\n";
    return converged ? 0 : 3;
}

int cmd_validate_cc(const RunOptions& opts) {
    if (opts.solution_dir.empty()) throw InputError("no solution directory given");
    const RunOptions src = manifest_load(opts.solution_dir + "/manifest.json");
    RunOptions loader = src;
    const LoadedCase lc = load_case(loader, true);
    const double eps = src.eps.empty() ? 0.05 : src.eps.front();
    const uncertainty::UncertaintyModel model =
        uncertainty::model_from_fleet(lc.units, lc.net.base_mva(), eps);

    const std::string inj_path = opts.solution_dir + "/injections.csv";
    std::ifstream in(inj_path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + inj_path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty injections file", 1);
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string cell;
        while (std::getline(ss, cell, ',')) out.push_back(cell);
        return out;
    };
    const std::vector<std::string> header = split(line);
    int col_node = -1, col_p = -1, col_q = -1;
    for (size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "node") col_node = static_cast<int>(i);
        if (header[i] == "p_pu") col_p = static_cast<int>(i);
        if (header[i] == "q_pu") col_q = static_cast<int>(i);
    }
    if (col_node < 0 || col_p < 0 || col_q < 0)
        throw ParseError("injections.csv lacks node/p_pu/q_pu columns", 1);
    distflow::InjectionSet inj;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::vector<std::string> cells = split(line);
        if (static_cast<int>(cells.size()) <= std::max({col_node, col_p, col_q}))
            throw ParseError("short row in injections.csv", lineno);
        const int node = std::stoi(cells[static_cast<size_t>(col_node)]);
        inj.p[node] = std::stod(cells[static_cast<size_t>(col_p)]);
        inj.q[node] = std::stod(cells[static_cast<size_t>(col_q)]);
    }

    const std::vector<uncertainty::ConstraintRate> rates = uncertainty::monte_carlo_violation(
        lc.net, model, inj, opts.samples, opts.seed, opts.workers);

    const double bound = eps + 0.01;
    const double z = uncertainty::inv_norm_cdf(0.975);
    bool pass = true;
    std::vector<std::vector<std::string>> rows;
    for (const uncertainty::ConstraintRate& r : rates) {
        const double half =
            z * std::sqrt(std::max(r.rate * (1.0 - r.rate), 0.0) / opts.samples);
        const bool row_ok = r.informational || r.rate <= bound;
        if (!row_ok) pass = false;
        rows.push_back({r.label, std::to_string(r.node), fmt_g(r.rate),
                        fmt_g(std::max(0.0, r.rate - half)),
                        fmt_g(std::min(1.0, r.rate + half)), fmt_g(bound),
                        r.informational ? "1" : "0", row_ok ? "1" : "0"});
    }
    write_csv(opts.out + "/validation.csv",
              {"constraint", "node", "rate", "ci_lo", "ci_hi", "bound", "informational",
               "pass"},
              rows);
    manifest_write(opts, opts.out);
    std::cout << (pass ? "PASS" : "FAIL") << ": " << rows.size()
              << " constraint rates at eps=" << fmt_g(eps) << " bound=" << fmt_g(bound)
              << "\n";
    return pass ? 0 : 1;
}

int cmd_figs(const RunOptions& opts) {
    RunOptions base_opts = opts;
    if (base_opts.eps.empty()) base_opts.eps = {0.01, 0.05, 0.1, 0.2};
    std::vector<std::vector<std::string>> failures;
    auto attempt = [&](const std::string& label, const std::function<void()>& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            failures.push_back({label, e.what()});
            std::cerr << label << " failed: " << e.what() << "\n";
        }
    };

    // Droop sweeps under both load perturbations.
    for (const std::string variant : {"I", "II"}) {
        attempt(std::string("fig3-case") + variant, [&] {
            RunOptions sub = base_opts;
            sub.command = "policy-sweep";
            sub.pv_path = base_opts.pv_sweep_path;
            sub.policy = "all";
            sub.variant = variant;
            sub.qref = "unperturbed";
            sub.out = base_opts.out + "/fig3/case" + variant;
            cmd_policy_sweep(sub);
        });
    }

    const LoadedCase lc = load_case(base_opts, true);
    const double base = lc.net.base_mva();

    // Convergence traces per eps plus the deterministic centralized
    // reference level (the flat line the traces are compared against).
    std::map<double, admm::AdmmRun> admm_runs;
    attempt("fig4", [&] {
        const std::string dir = base_opts.out + "/fig4";
        for (double eps : base_opts.eps) {
            if (!(eps > 0.0 && eps < 0.5))
                throw InputError("eps " + fmt_g(eps) + " is outside (0, 0.5)");
            const admm::AdmmRun run = solve_opf_admm(lc, eps, base_opts);
            std::vector<std::vector<std::string>> rows;
            for (const admm::TraceRow& t : run.trace)
                rows.push_back({std::to_string(t.iter), fmt_g(t.primal), fmt_g(t.dual),
                                fmt_g(t.total_q), fmt_g(t.losses)});
            write_csv(dir + "/trace_eps" + fmt_g(eps) + ".csv",
                      {"iter", "primal", "dual", "total_q_pu", "losses_pu"}, rows);
            admm_runs.emplace(eps, run);
        }
        const opf::OpfSolution ref = solve_opf_centralized(lc, 0.0);
        const double tq = total_fleet_q(ref.injections);
        write_csv(dir + "/centralized_reference.csv",
                  {"losses_pu", "losses_mw", "total_q_pu", "total_q_mvar"},
                  {{fmt_g(ref.losses), fmt_g(ref.losses * base), fmt_g(tq),
                    fmt_g(tq * base)}});
        manifest_write(base_opts, dir);
    });

    // Feeder and fleet description tables.
    attempt("fig5", [&] {
        const std::string dir = base_opts.out + "/fig5";
        std::vector<std::vector<std::string>> rows;
        for (const netmodel::Branch& br : lc.net.branches())
            rows.push_back({std::to_string(br.from), std::to_string(br.to), fmt_g(br.r),
                            fmt_g(br.x)});
        write_csv(dir + "/network.csv", {"from", "to", "r_pu", "x_pu"}, rows);
        rows.clear();
        for (const fleet::PvUnit& u : lc.units)
            rows.push_back({std::to_string(u.node), fmt_g(u.p_mw), fmt_g(u.s_mva),
                            fmt_g(u.sigma()), fmt_g(u.p_mw / base), fmt_g(u.sigma() / base),
                            fmt_g(u.cospf)});
        write_csv(dir + "/fleet.csv",
                  {"node", "p_mw", "s_mva", "sigma_mw", "mu_pu", "sigma_pu", "cospf"},
                  rows);
        manifest_write(base_opts, dir);
    });

    // Voltage profiles: deterministic centralized baseline vs the
    // decentralized chance-constrained run at eps = 0.05.
    const double eps_profile = 0.05;
    std::optional<opf::OpfSolution> central;
    attempt("fig6", [&] {
        const std::string dir = base_opts.out + "/fig6";
        central = solve_opf_centralized(lc, 0.0);
        if (central->status != opf::SolveStatus::optimal)
            throw ConvergenceError("centralized reference did not solve");
        write_profiles(dir + "/profiles_centralized.csv", lc.net, central->state);
        manifest_write(base_opts, dir);
    });

    std::optional<opf::OpfSolution> decentral;
    attempt("fig7", [&] {
        const std::string dir = base_opts.out + "/fig7";
        auto it = admm_runs.find(eps_profile);
        if (it == admm_runs.end()) {
            admm_runs.emplace(eps_profile, solve_opf_admm(lc, eps_profile, base_opts));
            it = admm_runs.find(eps_profile);
        }
        decentral = it->second.solution;
        if (decentral->status != opf::SolveStatus::optimal)
            throw ConvergenceError("decentralized run did not converge");
        write_profiles(dir + "/profiles_admm.csv", lc.net, decentral->state);
        manifest_write(base_opts, dir);
    });

    // Per-inverter dispatch, both solvers side by side.
    attempt("fig8", [&] {
        const std::string dir = base_opts.out + "/fig8";
        if (!central || !decentral)
            throw ConvergenceError("fig8 needs the fig6 and fig7 solutions");
        std::vector<std::vector<std::string>> rows;
        for (const policies::InverterSpec& s : lc.specs) {
            const double qc = central->injections.q_at(s.node);
            const double qd = decentral->injections.q_at(s.node);
            rows.push_back({std::to_string(s.node), fmt_g(qc), fmt_g(qc * base),
                            fmt_g(qd), fmt_g(qd * base)});
        }
        write_csv(dir + "/inverter_q.csv",
                  {"node", "q_centralized_pu", "q_centralized_mvar", "q_admm_pu",
                   "q_admm_mvar"},
                  rows);
        manifest_write(base_opts, dir);
    });

    if (!failures.empty())
        write_csv(base_opts.out + "/failures.csv", {"figure", "error"}, failures);
    manifest_write(base_opts, base_opts.out);
    std::cout << "figure data written to " << base_opts.out << " ("
              << failures.size() << " sub-run failures)\n";
    return failures.empty() ? 0 : 1;
}

int run_command(const RunOptions& opts) {
    if (opts.command == "powerflow") return cmd_powerflow(opts);
    if (opts.command == "policy-sweep") return cmd_policy_sweep(opts);
    if (opts.command == "opf") return cmd_opf(opts);
    if (opts.command == "validate-cc") return cmd_validate_cc(opts);
    if (opts.command == "figs") return cmd_figs(opts);
    throw InputError("unknown command '" + opts.command + "'");
}

}  // namespace dopf::runtime
