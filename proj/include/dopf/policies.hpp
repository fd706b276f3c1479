#pragma once

#include <map>
#include <utility>
#include <vector>

#include "dopf/distflow.hpp"
#include "dopf/fleet.hpp"
#include "dopf/netmodel.hpp"

namespace dopf::policies {

// One PV inverter's ratings, references and droop gains, per unit.
struct InverterSpec {
    int node = 0;
    double s_rated = 0.0;  // apparent power rating
    double p_ref = 0.0;    // reference (forecast) active output
    double q_ref = 0.0;    // reference reactive output
    // Reference flows on edges leaving the node, keyed by child bus id:
    // child -> (p_ref_edge, q_ref_edge).
    std::map<int, std::pair<double, double>> flow_refs;
    double droop_p = 0.0;     // active flow droop gain
    double droop_q = 0.0;     // reactive flow droop gain
    double pf = 0.95;         // power factor for the constant-pf policy
    double p_headroom = 0.0;  // active power available above p_ref
};

std::vector<InverterSpec> specs_from_fleet(const std::vector<fleet::PvUnit>& units,
                                           double base_mva);

enum class PolicyKind {
    none,                  // inverter injects (p_ref, 0); no feedback
    constant_pf,           // reactive tracks local active imbalance at fixed pf
    voltage_sigmoid,       // reactive from a smooth local-voltage deadband
    loss_min,              // match local reactive demand within capability
    hybrid,                // weighted loss_min + voltage_sigmoid
    flow_reactive,         // droop on measured child reactive flows
    flow_active_reactive,  // droop on child active and reactive flows
};

struct PolicyParams {
    PolicyKind kind = PolicyKind::none;
    double delta = 0.05;  // sigmoid width, pu
    double k_v = 0.5;     // hybrid weight on the voltage policy
    double k_l = 0.5;     // hybrid weight on the loss policy
    // Droop activation: false follows the stated intent (respond when the
    // measured flow exceeds its reference); true flips to the literal
    // written gate (respond when it is below).
    bool literal_gate = false;
};

// What one inverter can observe locally.
struct LocalMeasurement {
    double v = 1.0;      // own voltage magnitude, pu
    double v_nom = 1.0;  // nominal voltage at the node, pu
    double load_p = 0.0;
    double load_q = 0.0;
    // Measured flows on edges leaving the node, keyed by child bus id.
    std::map<int, std::pair<double, double>> child_flows;
};

// Builds the measurement an inverter at `node` would take from a solved
// state (child edge flows, own voltage, own load).
LocalMeasurement measurement_at(const netmodel::RadialNetwork& net,
                                const distflow::PowerFlowState& state, int node);

// Reactive range sqrt(s_rated^2 - p_actual^2); throws InputError when
// p_actual lies outside [0, s_rated].
double capability_q(const InverterSpec& spec, double p_actual);

double policy_constant_pf(const InverterSpec& spec, const LocalMeasurement& meas);
double policy_voltage(const InverterSpec& spec, const LocalMeasurement& meas,
                      const PolicyParams& params);
double policy_loss_min(const InverterSpec& spec, const LocalMeasurement& meas);
double policy_hybrid(const InverterSpec& spec, const LocalMeasurement& meas,
                     const PolicyParams& params);
double policy_flow_reactive(const InverterSpec& spec, const LocalMeasurement& meas,
                            const PolicyParams& params);
// Returns (p, q) meeting p <= p_ref + p_headroom and p^2 + q^2 <= s^2
// (q is shrunk toward zero first, then p toward p_ref).
std::pair<double, double> policy_flow_active_reactive(const InverterSpec& spec,
                                                      const LocalMeasurement& meas,
                                                      const PolicyParams& params);

// Network copy with per-node load factors applied to both P and Q.
netmodel::RadialNetwork perturb_loads(const netmodel::RadialNetwork& net,
                                      const std::map<int, double>& factor);

// Copies of the specs with q_ref and flow_refs taken from a solved
// operating point (injections supply q_ref; the state supplies edge
// reference flows).
std::vector<InverterSpec> apply_references(std::vector<InverterSpec> specs,
                                           const netmodel::RadialNetwork& net,
                                           const distflow::PowerFlowState& state,
                                           const distflow::InjectionSet& inj);

struct ClosedLoopResult {
    distflow::PowerFlowState state;
    distflow::InjectionSet injections;
    int iterations = 0;
    double losses = 0.0;
};

// Synchronous fixed-point iteration of measure -> policy -> power flow,
// optionally with per-node load perturbation factors applied first.
// Stops when no injection moves by 1e-8 pu or more between rounds;
// throws ConvergenceError with the tail of the iteration trace after
// 1000 rounds without a fixed point.
ClosedLoopResult closed_loop_simulate(const netmodel::RadialNetwork& net,
                                      const std::vector<InverterSpec>& specs,
                                      const PolicyParams& params,
                                      const std::map<int, double>& load_factor = {});

}  // namespace dopf::policies
