#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "dopf/errors.hpp"
#include "dopf/runtime.hpp"

namespace {

using dopf::runtime::RunOptions;

void add_case_flags(CLI::App* cmd, RunOptions& o) {
    cmd->add_option("--case", o.case_path, "feeder case file (Matpower-style .m)");
    cmd->add_option("--pv", o.pv_path, "inverter fleet config");
    cmd->add_option("--out", o.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"radial feeder loss-minimizing reactive dispatch toolkit"};
    app.set_version_flag("--version", std::string(dopf::runtime::tool_name) + " " +
                                          dopf::runtime::tool_version);
    app.require_subcommand(1);

    RunOptions o;
    std::string manifest_path;
    std::string rerun_out;

    CLI::App* pf = app.add_subcommand("powerflow", "solve one linearized power flow");
    add_case_flags(pf, o);

    CLI::App* sweep =
        app.add_subcommand("policy-sweep", "loss-vs-droop curves for local policies");
    add_case_flags(sweep, o);
    sweep->add_option("--policy", o.policy,
                      "none|constant-pf|voltage|loss-min|hybrid|flow-q|flow-pq|all");
    sweep->add_option("--droop", o.droop, "droop grid LO:HI:STEP");
    sweep->add_option("--variant", o.variant, "load perturbation: I, II or none");
    sweep->add_option("--qref", o.qref, "reference source: unperturbed or opf");

    CLI::App* opf = app.add_subcommand("opf", "loss-minimizing reactive dispatch");
    add_case_flags(opf, o);
    opf->add_option("--mode", o.mode, "centralized or admm");
    opf->add_option("--eps", o.eps, "chance tolerance(s); omit for deterministic caps");
    opf->add_option("--rho", o.rho, "consensus penalty (<=0 selects 1/v_nom(root)^2)");
    opf->add_option("--max-iters", o.max_iters, "consensus round cap");
    opf->add_option("--workers", o.workers, "threads for local minimizations");
    opf->add_flag("--policy-rows", o.policy_rows,
                  "encode droop equalities in the local problems");

    CLI::App* val =
        app.add_subcommand("validate-cc", "Monte Carlo check of a solved dispatch");
    val->add_option("--solution", o.solution_dir, "directory of a solved opf run")
        ->required();
    val->add_option("--samples", o.samples, "Monte Carlo sample count");
    val->add_option("--seed", o.seed, "sampling seed");
    val->add_option("--workers", o.workers, "sampling threads");
    val->add_option("--out", o.out, "output directory");

    CLI::App* figs = app.add_subcommand("figs", "all experiment tables in one tree");
    add_case_flags(figs, o);
    figs->add_option("--pv-sweep", o.pv_sweep_path, "inverter config for the droop sweeps");
    figs->add_option("--droop", o.droop, "droop grid LO:HI:STEP");
    figs->add_option("--eps", o.eps, "chance tolerance grid");
    figs->add_option("--rho", o.rho, "consensus penalty (<=0 selects 1/v_nom(root)^2)");
    figs->add_option("--max-iters", o.max_iters, "consensus round cap");
    figs->add_option("--workers", o.workers, "threads");
    figs->add_option("--samples", o.samples, "Monte Carlo sample count");
    figs->add_option("--seed", o.seed, "sampling seed");

    CLI::App* rerun = app.add_subcommand("rerun", "repeat a run from its manifest");
    rerun->add_option("--manifest", manifest_path, "manifest.json of a previous run")
        ->required();
    rerun->add_option("--out", rerun_out, "redirect outputs (default: manifest's dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (pf->parsed()) o.command = "powerflow";
        if (sweep->parsed()) o.command = "policy-sweep";
        if (opf->parsed()) o.command = "opf";
        if (val->parsed()) o.command = "validate-cc";
        if (figs->parsed()) o.command = "figs";
        if (rerun->parsed()) {
            o = dopf::runtime::manifest_load(manifest_path);
            if (!rerun_out.empty()) o.out = rerun_out;
        }
        return dopf::runtime::run_command(o);
    } catch (const dopf::ConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const dopf::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const dopf::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const dopf::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
