#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>

#include "dopf/errors.hpp"
#include "dopf/fleet.hpp"

using namespace dopf;
using namespace dopf::fleet;

TEST_CASE("single-unit config parses every field") {
    auto units = parse_pv_config_file(std::string(DOPF_DATA_DIR) + "/pv_case5.cfg");
    REQUIRE(units.size() == 1);
    const auto& u = units[0];
    CHECK(u.node == 5);
    CHECK(u.s_mva == doctest::Approx(0.5));
    CHECK(u.p_mw == doctest::Approx(0.3));
    CHECK(u.sigma_frac == doctest::Approx(0.10));
    CHECK(u.cospf == doctest::Approx(0.95));
    CHECK(u.lo_frac == doctest::Approx(0.7));
    CHECK(u.hi_frac == doctest::Approx(1.3));
    CHECK(u.kq == doctest::Approx(0.0));
    CHECK(u.kp == doctest::Approx(0.0));
    CHECK(u.headroom_mw == doctest::Approx(0.1));
    CHECK(u.sigma() == doctest::Approx(0.03));  // 0.10 * 0.3 MW
}

TEST_CASE("33-bus fleet config holds seven units") {
    auto units = parse_pv_config_file(std::string(DOPF_DATA_DIR) + "/pv_fleet33.cfg");
    REQUIRE(units.size() == 7);
    std::vector<int> nodes;
    for (const auto& u : units) nodes.push_back(u.node);
    CHECK(nodes == std::vector<int>{2, 3, 6, 18, 21, 25, 32});
    for (const auto& u : units) {
        CHECK(u.s_mva > u.p_mw);  // every unit keeps a reactive band
        CHECK(u.cospf == doctest::Approx(0.95));
        CHECK(u.sigma() == doctest::Approx(0.10 * u.p_mw));
    }
}

TEST_CASE("explicit sigma overrides the fraction") {
    auto units = parse_pv_config("pv node=3 s_mva=1.0 p_mw=0.5 sigma_mw=0.02\n");
    REQUIRE(units.size() == 1);
    CHECK(units[0].sigma() == doctest::Approx(0.02));
    auto frac = parse_pv_config("pv node=3 s_mva=1.0 p_mw=0.5 sigma_frac=0.2\n");
    CHECK(frac[0].sigma() == doctest::Approx(0.1));
}

TEST_CASE("comments and blank lines are ignored") {
    auto units = parse_pv_config(
        "# fleet header\n"
        "\n"
        "pv node=2 s_mva=0.4 p_mw=0.2   # trailing comment\n"
        "pv node=7 s_mva=0.6 p_mw=0.3\n");
    REQUIRE(units.size() == 2);
    CHECK(units[0].node == 2);
    CHECK(units[1].node == 7);
}

TEST_CASE("serialize and reparse round trips") {
    auto units = parse_pv_config_file(std::string(DOPF_DATA_DIR) + "/pv_fleet33.cfg");
    auto text = serialize_pv_config(units);
    auto back = parse_pv_config(text);
    REQUIRE(back.size() == units.size());
    for (std::size_t i = 0; i < units.size(); ++i) {
        CHECK(back[i].node == units[i].node);
        CHECK(back[i].s_mva == doctest::Approx(units[i].s_mva).epsilon(1e-12));
        CHECK(back[i].p_mw == doctest::Approx(units[i].p_mw).epsilon(1e-12));
        CHECK(back[i].sigma() == doctest::Approx(units[i].sigma()).epsilon(1e-12));
        CHECK(back[i].cospf == doctest::Approx(units[i].cospf).epsilon(1e-12));
        CHECK(back[i].lo_frac == doctest::Approx(units[i].lo_frac).epsilon(1e-12));
        CHECK(back[i].hi_frac == doctest::Approx(units[i].hi_frac).epsilon(1e-12));
    }
    CHECK(serialize_pv_config(back) == text);
}

TEST_CASE("malformed configs name the offending line") {
    auto expect_line = [](const std::string& text, int line) {
        try {
            parse_pv_config(text);
            FAIL_CHECK("expected ParseError for: " << text);
        } catch (const ParseError& e) {
            CHECK(e.line() == line);
        }
    };
    expect_line("pv node=1 s_mva=0.5\n", 1);                             // missing p_mw
    expect_line("pv node=1 s_mva=0.5 p_mw=0.6\n", 1);                    // p above rating
    expect_line("pv node=0 s_mva=0.5 p_mw=0.3\n", 1);                    // bad node id
    expect_line("pv node=1 s_mva=0.5 p_mw=0.3 cospf=1.5\n", 1);          // bad power factor
    expect_line("pv node=1 s_mva=0.5 p_mw=0.3 lo_frac=1.1\n", 1);        // range excludes mean
    expect_line("# ok\npv node=1 s_mva=0.5 p_mw=0.3 junk\n", 2);         // not key=value
    expect_line("pv node=1 s_mva=0.5 p_mw=0.3 what=1\n", 1);             // unknown key
    expect_line("solar node=1 s_mva=0.5 p_mw=0.3\n", 1);                 // unknown directive
    expect_line("pv node=1 s_mva=0.5 p_mw=0.3 kq=-1\n", 1);              // negative droop
    expect_line(
        "pv node=1 s_mva=0.5 p_mw=0.3\n"
        "pv node=1 s_mva=0.4 p_mw=0.2\n",
        2);  // duplicate node
}

TEST_CASE("missing file raises an input error naming the path") {
    try {
        parse_pv_config_file("/nonexistent/fleet.cfg");
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("/nonexistent/fleet.cfg") != std::string::npos);
    }
}
