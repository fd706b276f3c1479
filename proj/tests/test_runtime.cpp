#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dopf/errors.hpp"
#include "dopf/runtime.hpp"

using namespace dopf;
using namespace dopf::runtime;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& leaf) {
    fs::path dir = fs::temp_directory_path() / "dopf_rt" / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream all(slurp(path));
    std::string line;
    while (std::getline(all, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

// Runs the installed CLI binary; returns its exit code.
int run_cli(const std::string& args) {
    const std::string cmd = std::string(DOPF_BIN) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    return WEXITSTATUS(rc);
}

// Silences stdout/stderr while library-level commands run in-process.
struct Quiet {
    std::ostringstream sink;
    std::streambuf* out;
    std::streambuf* err;
    Quiet() : out(std::cout.rdbuf(sink.rdbuf())), err(std::cerr.rdbuf(sink.rdbuf())) {}
    ~Quiet() {
        std::cout.rdbuf(out);
        std::cerr.rdbuf(err);
    }
};

const std::string kData = DOPF_DATA_DIR;

}  // namespace

TEST_CASE("fmt_g prints shortest %.12g text") {
    CHECK(fmt_g(0.0) == "0");
    CHECK(fmt_g(1.0) == "1");
    CHECK(fmt_g(-2.5) == "-2.5");
    CHECK(fmt_g(0.05) == "0.05");
    CHECK(fmt_g(0.996) == "0.996");
    CHECK(fmt_g(1e-12) == "1e-12");
    CHECK(fmt_g(1.0 / 3.0) == "0.333333333333");
    CHECK(fmt_g(123456789012345.0) == "1.23456789012e+14");
    // Round trip: 12 digits keep these doubles distinguishable at 1e-12.
    CHECK(std::stod(fmt_g(0.0613917412345)) == doctest::Approx(0.0613917412345).epsilon(1e-12));
}

TEST_CASE("write_csv emits LF rows and creates parent directories") {
    const fs::path dir = fresh_dir("csv");
    const fs::path path = dir / "deep" / "nested" / "table.csv";
    write_csv(path.string(), {"a", "b"}, {{"1", "2"}, {"3", "4"}});
    const std::string text = slurp(path);
    CHECK(text == "a,b\n1,2\n3,4\n");
    CHECK(text.find('\r') == std::string::npos);

    // Header-only files still carry the header row.
    const fs::path empty = dir / "empty.csv";
    write_csv(empty.string(), {"x"}, {});
    CHECK(slurp(empty) == "x\n");

    // Unwritable target (the path is an existing directory).
    CHECK_THROWS_AS(write_csv(dir.string(), {"x"}, {}), InputError);
}

TEST_CASE("manifest survives serialize, parse and file round trips") {
    RunOptions o;
    o.command = "opf";
    o.case_path = "data/case33bw.m";
    o.pv_path = "data/pv_fleet33.cfg";
    o.pv_sweep_path = "data/pv_case5.cfg";
    o.policy = "flow-q";
    o.droop = "0:10:0.5";
    o.eps = {0.01, 0.05};
    o.rho = 2.5;
    o.samples = 4321;
    o.seed = 99;
    o.out = "somewhere/else";
    o.mode = "admm";
    o.variant = "II";
    o.qref = "opf";
    o.workers = 3;
    o.max_iters = 77;
    o.solution_dir = "prev/run";
    o.policy_rows = true;

    const std::string text = manifest_serialize(o);
    const auto j = nlohmann::json::parse(text);
    CHECK(j.at("tool") == "dopf");
    CHECK(j.at("version") == "0.1.0");

    auto check_fields = [&](const RunOptions& r) {
        CHECK(r.command == o.command);
        CHECK(r.case_path == o.case_path);
        CHECK(r.pv_path == o.pv_path);
        CHECK(r.pv_sweep_path == o.pv_sweep_path);
        CHECK(r.policy == o.policy);
        CHECK(r.droop == o.droop);
        CHECK(r.eps == o.eps);
        CHECK(r.rho == doctest::Approx(o.rho));
        CHECK(r.samples == o.samples);
        CHECK(r.seed == o.seed);
        CHECK(r.out == o.out);
        CHECK(r.mode == o.mode);
        CHECK(r.variant == o.variant);
        CHECK(r.qref == o.qref);
        CHECK(r.workers == o.workers);
        CHECK(r.max_iters == o.max_iters);
        CHECK(r.solution_dir == o.solution_dir);
        CHECK(r.policy_rows == o.policy_rows);
    };
    check_fields(manifest_parse(text));

    const fs::path dir = fresh_dir("manifest");
    manifest_write(o, dir.string());
    check_fields(manifest_load((dir / "manifest.json").string()));
    CHECK(slurp(dir / "manifest.json") == text);
}

TEST_CASE("manifest parser rejects bad JSON, missing command and missing files") {
    CHECK_THROWS_AS(manifest_parse("not json at all"), ParseError);
    CHECK_THROWS_AS(manifest_parse("{\"tool\": \"dopf\"}"), ParseError);
    CHECK_THROWS_AS(manifest_load("/nonexistent/manifest.json"), InputError);

    // Unlisted fields fall back to defaults.
    const RunOptions r = manifest_parse("{\"command\": \"powerflow\"}");
    CHECK(r.command == "powerflow");
    CHECK(r.policy == "all");
    CHECK(r.droop == "0:30:1");
    CHECK(r.samples == 100000);
    CHECK(r.mode == "centralized");
    CHECK(r.eps.empty());
}

TEST_CASE("droop grids parse inclusively and reject malformed text") {
    const std::vector<double> whole = parse_droop_grid("0:30:1");
    REQUIRE(whole.size() == 31);
    CHECK(whole.front() == doctest::Approx(0.0));
    CHECK(whole.back() == doctest::Approx(30.0));

    // Fractional steps reach the upper endpoint despite accumulation error.
    const std::vector<double> fine = parse_droop_grid("0:1:0.1");
    REQUIRE(fine.size() == 11);
    CHECK(fine.back() == doctest::Approx(1.0));

    const std::vector<double> single = parse_droop_grid("5:5:1");
    REQUIRE(single.size() == 1);
    CHECK(single.front() == doctest::Approx(5.0));

    CHECK_THROWS_AS(parse_droop_grid("abc"), InputError);
    CHECK_THROWS_AS(parse_droop_grid("1:2"), InputError);
    CHECK_THROWS_AS(parse_droop_grid("1:2:3:4"), InputError);
    CHECK_THROWS_AS(parse_droop_grid("0:10:0"), InputError);
    CHECK_THROWS_AS(parse_droop_grid("0:10:-1"), InputError);
    CHECK_THROWS_AS(parse_droop_grid("10:0:1"), InputError);
}

TEST_CASE("run_command rejects unknown commands and missing inputs") {
    RunOptions o;
    o.command = "frobnicate";
    CHECK_THROWS_AS(run_command(o), InputError);

    o.command = "powerflow";
    o.case_path = "";
    CHECK_THROWS_AS(run_command(o), InputError);

    o.command = "opf";
    o.case_path = kData + "/case2.m";
    o.pv_path = "";
    CHECK_THROWS_AS(run_command(o), InputError);  // opf needs an inverter config
}

TEST_CASE("powerflow on the two-bus case writes hand-checked tables") {
    const fs::path dir = fresh_dir("pf2");
    RunOptions o;
    o.command = "powerflow";
    o.case_path = kData + "/case2.m";
    o.out = dir.string();
    int rc = -1;
    {
        Quiet q;
        rc = run_command(o);
    }
    CHECK(rc == 0);

    const auto bus = read_csv(dir / "bus.csv");
    REQUIRE(bus.size() == 3);
    CHECK(bus[0][0] == "bus");
    CHECK(bus[1][0] == "1");
    CHECK(std::stod(bus[1][1]) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(bus[2][0] == "2");
    CHECK(std::stod(bus[2][1]) == doctest::Approx(std::sqrt(0.996)).epsilon(1e-12));
    CHECK(std::stod(bus[2][2]) == doctest::Approx(0.996).epsilon(1e-12));
    CHECK(std::stod(bus[2][3]) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(std::stod(bus[2][4]) == doctest::Approx(0.05).epsilon(1e-12));

    const auto edge = read_csv(dir / "edge.csv");
    REQUIRE(edge.size() == 2);
    CHECK(std::stod(edge[1][4]) == doctest::Approx(0.1).epsilon(1e-12));   // p_pu
    CHECK(std::stod(edge[1][5]) == doctest::Approx(0.05).epsilon(1e-12));  // q_pu
    CHECK(std::stod(edge[1][8]) == doctest::Approx(1.25e-4).epsilon(1e-12));

    const auto summary = read_csv(dir / "summary.csv");
    REQUIRE(summary.size() == 2);
    CHECK(summary[1][0] == "2");  // buses
    CHECK(summary[1][1] == "1");  // branches
    CHECK(std::stod(summary[1][2]) == doctest::Approx(1.25e-4).epsilon(1e-12));
    CHECK(std::stod(summary[1][4]) == doctest::Approx(std::sqrt(0.996)).epsilon(1e-12));

    // Every table ends with LF and carries no CR.
    for (const char* name : {"bus.csv", "edge.csv", "summary.csv"}) {
        const std::string text = slurp(dir / name);
        CHECK(text.find('\r') == std::string::npos);
        CHECK(text.back() == '\n');
    }

    // The manifest loads back to the options that produced the run.
    const RunOptions back = manifest_load((dir / "manifest.json").string());
    CHECK(back.command == "powerflow");
    CHECK(back.case_path == o.case_path);
    CHECK(back.out == o.out);
}

TEST_CASE("policy sweep writes one row per policy and grid point") {
    const fs::path pv = fresh_dir("sweepcfg") / "pv2.cfg";
    {
        std::ofstream out(pv);
        out << "pv node=2 s_mva=0.5 p_mw=0.3 sigma_frac=0.10 cospf=0.95\n";
    }
    const fs::path dir = fresh_dir("sweep2");
    RunOptions o;
    o.command = "policy-sweep";
    o.case_path = kData + "/case2.m";
    o.pv_path = pv.string();
    o.policy = "loss-min";
    o.droop = "0:2:1";
    o.out = dir.string();
    int rc = -1;
    {
        Quiet q;
        rc = run_command(o);
    }
    CHECK(rc == 0);

    const auto sweep = read_csv(dir / "sweep.csv");
    REQUIRE(sweep.size() == 4);  // header + 3 grid points
    CHECK(sweep[0][0] == "policy");
    for (int i = 1; i <= 3; ++i) {
        CHECK(sweep[static_cast<size_t>(i)][0] == "loss-min");
        CHECK(sweep[static_cast<size_t>(i)][6] == "0");  // none diverged
    }
    const auto bp = read_csv(dir / "breakpoints.csv");
    REQUIRE(bp.size() == 2);
    CHECK(bp[1][0] == "loss-min");
}

TEST_CASE("centralized opf reruns are byte-identical") {
    auto run_into = [&](const fs::path& dir) {
        RunOptions o;
        o.command = "opf";
        o.case_path = kData + "/case33bw.m";
        o.pv_path = kData + "/pv_fleet33.cfg";
        o.eps = {0.05};
        o.out = dir.string();
        Quiet q;
        return run_command(o);
    };
    const fs::path a = fresh_dir("opf_a");
    const fs::path b = fresh_dir("opf_b");
    CHECK(run_into(a) == 0);
    CHECK(run_into(b) == 0);
    for (const char* name : {"injections.csv", "bus.csv", "edge.csv", "summary.csv"})
        CHECK(slurp(a / name) == slurp(b / name));

    const auto inj = read_csv(a / "injections.csv");
    REQUIRE(inj.size() == 8);  // header + 7 inverters
    CHECK(inj[0][0] == "node");
}

TEST_CASE("command line maps argument and solver failures to exit codes") {
    const fs::path dir = fresh_dir("cli");
    CHECK(run_cli("--version") == 0);
    CHECK(run_cli("") == 2);         // a subcommand is required
    CHECK(run_cli("badcmd") == 2);   // unknown subcommand
    CHECK(run_cli("powerflow --case /nonexistent/feeder.m --out " +
                  (dir / "x").string()) == 2);
    CHECK(run_cli("opf --case " + kData + "/case33bw.m --pv " + kData +
                  "/pv_fleet33.cfg --eps 0.7 --out " + (dir / "eps").string()) == 2);
    CHECK(run_cli("opf --case " + kData + "/case33bw.m --pv " + kData +
                  "/pv_fleet33.cfg --mode admm --max-iters 3 --out " +
                  (dir / "short").string()) == 3);
    CHECK(run_cli("rerun --manifest /nonexistent/manifest.json") == 2);
}

TEST_CASE("rerun from a manifest reproduces byte-identical tables") {
    const fs::path a = fresh_dir("rerun_a");
    const fs::path b = fresh_dir("rerun_b");
    CHECK(run_cli("powerflow --case " + kData + "/case2.m --out " + a.string()) == 0);
    CHECK(run_cli("rerun --manifest " + (a / "manifest.json").string() + " --out " +
                  b.string()) == 0);
    for (const char* name : {"bus.csv", "edge.csv", "summary.csv"})
        CHECK(slurp(a / name) == slurp(b / name));
}

TEST_CASE("validate-cc passes a solved dispatch and fails a corrupted one") {
    const fs::path sol = fresh_dir("vcc_sol");
    CHECK(run_cli("opf --case " + kData + "/case33bw.m --pv " + kData +
                  "/pv_fleet33.cfg --eps 0.05 --out " + sol.string()) == 0);

    const fs::path report = fresh_dir("vcc_report");
    CHECK(run_cli("validate-cc --solution " + sol.string() +
                  " --samples 20000 --workers 2 --out " + report.string()) == 0);
    const auto rows = read_csv(report / "validation.csv");
    REQUIRE(rows.size() > 1);
    CHECK(rows[0][0] == "constraint");
    for (size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 8);
        CHECK(rows[i][7] == "1");  // every row passes
        const double rate = std::stod(rows[i][2]);
        if (rows[i][6] == "0") CHECK(rate <= 0.06);
    }

    // A dispatch far beyond its capability must be caught.
    const fs::path bad = fresh_dir("vcc_bad");
    RunOptions src;
    src.command = "opf";
    src.case_path = kData + "/case33bw.m";
    src.pv_path = kData + "/pv_fleet33.cfg";
    src.eps = {0.05};
    src.out = bad.string();
    manifest_write(src, bad.string());
    write_csv((bad / "injections.csv").string(), {"node", "p_pu", "q_pu"},
              {{"2", "0.0085", "1.0"}});
    const fs::path bad_report = fresh_dir("vcc_bad_report");
    CHECK(run_cli("validate-cc --solution " + bad.string() +
                  " --samples 2000 --out " + bad_report.string()) == 1);
}
