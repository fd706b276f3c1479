#pragma once

#include <map>
#include <vector>

#include "dopf/netmodel.hpp"

namespace dopf::distflow {

// Controllable nodal injections layered on top of the fixed loads.
// Positive values inject into the bus. Keyed by bus id.
struct InjectionSet {
    std::map<int, double> p;
    std::map<int, double> q;

    double p_at(int bus) const {
        auto it = p.find(bus);
        return it == p.end() ? 0.0 : it->second;
    }
    double q_at(int bus) const {
        auto it = q.find(bus);
        return it == q.end() ? 0.0 : it->second;
    }
};

// Linearized branch-flow solution. Branch arrays are indexed like
// RadialNetwork::branches(); u is squared voltage magnitude by bus id-1.
struct PowerFlowState {
    std::vector<double> branch_p;
    std::vector<double> branch_q;
    std::vector<double> u;

    double u_at(int bus) const { return u[static_cast<size_t>(bus - 1)]; }
};

// Linearized radial power flow. Flows come from a leaf-to-root sweep of
// the conservation equations (branch flow = downstream load minus
// downstream injection), voltages from a root-to-leaf sweep of
// u_child = u_parent - 2 (r p + x q). The root holds u = v_nom^2.
// Throws InputError when injections reference unknown buses.
PowerFlowState solve_lindistflow(const netmodel::RadialNetwork& net,
                                 const InjectionSet& inj);

// Same equations assembled as one dense linear system and solved by
// elimination. Exists as an independent cross-check for the sweeps.
PowerFlowState solve_lindistflow_dense(const netmodel::RadialNetwork& net,
                                       const InjectionSet& inj);

// Sum over branches of r (p^2 + q^2) / v_nom(from)^2.
double total_losses(const netmodel::RadialNetwork& net, const PowerFlowState& state);

// (bus id, |v|) pairs along the root -> leaf path.
std::vector<std::pair<int, double>> branch_voltage_profile(const netmodel::RadialNetwork& net,
                                                           const PowerFlowState& state,
                                                           int leaf);

}  // namespace dopf::distflow
