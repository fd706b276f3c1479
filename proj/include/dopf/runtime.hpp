#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dopf::runtime {

inline constexpr const char* tool_name = "dopf";
inline constexpr const char* tool_version = "0.1.0";

// Everything a command needs, capturing the full flag surface. The
// manifest written next to every output set is exactly this struct, so
// loading a manifest and dispatching again reproduces the run.
struct RunOptions {
    std::string command;  // powerflow | policy-sweep | opf | validate-cc | figs
    std::string case_path;
    std::string pv_path;           // empty = no inverters
    std::string pv_sweep_path;     // figs only: config for the droop sweeps
    std::string policy = "all";    // none|constant-pf|voltage|loss-min|hybrid|flow-q|flow-pq|all
    std::string droop = "0:30:1";  // LO:HI:STEP
    std::vector<double> eps;       // empty = deterministic rating caps
    double rho = 0.0;              // <= 0 selects 1 / v_nom(root)^2
    int samples = 100000;
    std::uint64_t seed = 1;
    std::string out = "out";
    std::string mode = "centralized";  // centralized | admm
    std::string variant = "none";      // I | II | none (load perturbation)
    std::string qref = "unperturbed";  // unperturbed | opf (sweep references)
    int workers = 1;
    int max_iters = 500;
    std::string solution_dir;  // validate-cc: directory of a solved run
    bool policy_rows = false;  // admm: droop equality rows in local problems
};

// Formats with %.12g; the single number format used in every CSV cell.
std::string fmt_g(double v);

// Writes rows as CSV with LF endings; creates parent directories.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

std::string manifest_serialize(const RunOptions& opts);
RunOptions manifest_parse(const std::string& text);
RunOptions manifest_load(const std::string& path);
// Writes <dir>/manifest.json.
void manifest_write(const RunOptions& opts, const std::string& dir);

// LO:HI:STEP -> {LO, LO+STEP, ...} up to HI inclusive. Throws InputError
// on malformed text, STEP <= 0 or HI < LO.
std::vector<double> parse_droop_grid(const std::string& text);

// Dispatch by opts.command; returns the process exit code (0 success,
// 1 validation report failed, 3 solver non-convergence). Input problems
// throw (ParseError / InputError / ValidationError), which main maps to
// exit code 2.
int run_command(const RunOptions& opts);

int cmd_powerflow(const RunOptions& opts);
int cmd_policy_sweep(const RunOptions& opts);
int cmd_opf(const RunOptions& opts);
int cmd_validate_cc(const RunOptions& opts);
int cmd_figs(const RunOptions& opts);

}  // namespace dopf::runtime
