#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "dopf/distflow.hpp"
#include "dopf/netmodel.hpp"
#include "test_support.hpp"

using namespace dopf;
using namespace dopf::distflow;

TEST_CASE("two-bus hand values") {
    auto net = testsup::two_bus();
    auto state = solve_lindistflow(net, {});
    // u2 = 1 - 2*(0.01*0.1 + 0.02*0.05) = 0.996 exactly.
    CHECK(state.u_at(1) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(state.u_at(2) == doctest::Approx(0.996).epsilon(1e-12));
    CHECK(state.branch_p[0] == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(state.branch_q[0] == doctest::Approx(0.05).epsilon(1e-12));

    // Loss on the single edge: r*(p^2 + q^2)/v_nom^2 = 1.25e-4.
    CHECK(total_losses(net, state) == doctest::Approx(1.25e-4).epsilon(1e-10));

    auto profile = branch_voltage_profile(net, state, 2);
    REQUIRE(profile.size() == 2);
    CHECK(profile[0].first == 1);
    CHECK(profile[0].second == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(profile[1].first == 2);
    CHECK(profile[1].second == doctest::Approx(std::sqrt(0.996)).epsilon(1e-12));
    CHECK(profile[1].second == doctest::Approx(0.99800).epsilon(1e-5));
}

TEST_CASE("injection at the load bus cancels the flow") {
    auto net = testsup::two_bus();
    InjectionSet inj;
    inj.p[2] = 0.1;
    inj.q[2] = 0.05;
    auto state = solve_lindistflow(net, inj);
    CHECK(state.branch_p[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(state.branch_q[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(state.u_at(2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(total_losses(net, state) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("injection accessors default to zero") {
    InjectionSet inj;
    inj.p[3] = 0.2;
    CHECK(inj.p_at(3) == doctest::Approx(0.2));
    CHECK(inj.p_at(4) == doctest::Approx(0.0));
    CHECK(inj.q_at(3) == doctest::Approx(0.0));
}

TEST_CASE("sweep matches the dense linear solve on random feeders") {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 30; ++trial) {
        std::uniform_int_distribution<int> size(2, 40);
        auto net = testsup::random_feeder(rng, size(rng));
        auto inj = testsup::random_injections(rng, net);
        auto sweep = solve_lindistflow(net, inj);
        auto dense = solve_lindistflow_dense(net, inj);
        REQUIRE(sweep.u.size() == dense.u.size());
        REQUIRE(sweep.branch_p.size() == dense.branch_p.size());
        for (std::size_t i = 0; i < sweep.u.size(); ++i)
            CHECK(sweep.u[i] == doctest::Approx(dense.u[i]).epsilon(1e-12));
        for (std::size_t i = 0; i < sweep.branch_p.size(); ++i) {
            CHECK(sweep.branch_p[i] == doctest::Approx(dense.branch_p[i]).epsilon(1e-12));
            CHECK(sweep.branch_q[i] == doctest::Approx(dense.branch_q[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("state is affine in the injections") {
    std::mt19937_64 rng(103);
    for (int trial = 0; trial < 10; ++trial) {
        auto net = testsup::random_feeder(rng, 20);
        auto inj_a = testsup::random_injections(rng, net);
        auto inj_b = testsup::random_injections(rng, net);
        double alpha = 0.3;
        InjectionSet mix;
        for (const auto& [bus, v] : inj_a.p) mix.p[bus] = alpha * v + (1 - alpha) * inj_b.p_at(bus);
        for (const auto& [bus, v] : inj_a.q) mix.q[bus] = alpha * v + (1 - alpha) * inj_b.q_at(bus);
        auto sa = solve_lindistflow(net, inj_a);
        auto sb = solve_lindistflow(net, inj_b);
        auto sm = solve_lindistflow(net, mix);
        for (const auto& b : net.buses()) {
            double expect = alpha * sa.u_at(b.id) + (1 - alpha) * sb.u_at(b.id);
            CHECK(sm.u_at(b.id) == doctest::Approx(expect).epsilon(1e-12));
        }
        for (std::size_t i = 0; i < sm.branch_p.size(); ++i) {
            CHECK(sm.branch_p[i] ==
                  doctest::Approx(alpha * sa.branch_p[i] + (1 - alpha) * sb.branch_p[i])
                      .epsilon(1e-12));
            CHECK(sm.branch_q[i] ==
                  doctest::Approx(alpha * sa.branch_q[i] + (1 - alpha) * sb.branch_q[i])
                      .epsilon(1e-12));
        }
    }
}

TEST_CASE("flow balance holds at every bus and the root supplies the net demand") {
    std::mt19937_64 rng(107);
    for (int trial = 0; trial < 10; ++trial) {
        auto net = testsup::random_feeder(rng, 30);
        auto inj = testsup::random_injections(rng, net);
        auto state = solve_lindistflow(net, inj);

        for (const auto& b : net.buses()) {
            if (b.id == net.root()) continue;
            double child_p = 0.0, child_q = 0.0;
            for (int c : net.children(b.id)) {
                child_p += state.branch_p[static_cast<std::size_t>(net.parent_branch(c))];
                child_q += state.branch_q[static_cast<std::size_t>(net.parent_branch(c))];
            }
            int pb = net.parent_branch(b.id);
            CHECK(state.branch_p[static_cast<std::size_t>(pb)] ==
                  doctest::Approx(b.load_p - inj.p_at(b.id) + child_p).epsilon(1e-12));
            CHECK(state.branch_q[static_cast<std::size_t>(pb)] ==
                  doctest::Approx(b.load_q - inj.q_at(b.id) + child_q).epsilon(1e-12));
        }

        double net_demand = 0.0, root_out = 0.0;
        for (const auto& b : net.buses())
            if (b.id != net.root()) net_demand += b.load_p - inj.p_at(b.id);
        for (int c : net.children(net.root()))
            root_out += state.branch_p[static_cast<std::size_t>(net.parent_branch(c))];
        CHECK(root_out == doctest::Approx(net_demand).epsilon(1e-12));
    }
}

TEST_CASE("root voltage is pinned to nominal squared") {
    std::mt19937_64 rng(109);
    auto net = testsup::random_feeder(rng, 15);
    auto inj = testsup::random_injections(rng, net);
    auto state = solve_lindistflow(net, inj);
    double unom = net.bus(net.root()).v_nom * net.bus(net.root()).v_nom;
    CHECK(state.u_at(net.root()) == doctest::Approx(unom).epsilon(1e-15));
}

TEST_CASE("33-bus feeder without PV sags toward the end of the main feeder") {
    auto net = netmodel::parse_case_file(std::string(DOPF_DATA_DIR) + "/case33bw.m");
    auto state = solve_lindistflow(net, {});
    int argmin = 0;
    double umin = 1e9;
    for (const auto& b : net.buses()) {
        if (state.u_at(b.id) < umin) {
            umin = state.u_at(b.id);
            argmin = b.id;
        }
    }
    CHECK(argmin == 18);
    CHECK(std::sqrt(umin) > 0.89);
    CHECK(std::sqrt(umin) < 0.96);

    // With loads only, voltage is monotone nonincreasing along every path.
    for (int leaf : net.leaves()) {
        auto profile = branch_voltage_profile(net, state, leaf);
        for (std::size_t i = 1; i < profile.size(); ++i)
            CHECK(profile[i].second <= profile[i - 1].second + 1e-12);
    }

    CHECK(total_losses(net, state) > 0.0);
}
