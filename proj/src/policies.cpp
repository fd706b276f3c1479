#include "dopf/policies.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <sstream>

#include "dopf/errors.hpp"

namespace dopf::policies {

namespace {

double clip(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

// Aggregate measured-minus-reference flow over the node's child edges.
// component 0 = active, 1 = reactive. Every measured edge must carry a
// reference.
double flow_excess(const InverterSpec& spec, const LocalMeasurement& meas, int component) {
    double excess = 0.0;
    for (const auto& [child, flows] : meas.child_flows) {
        const auto ref = spec.flow_refs.find(child);
        if (ref == spec.flow_refs.end())
            throw InputError("inverter at node " + std::to_string(spec.node) +
                             " has no flow reference for child edge to " +
                             std::to_string(child));
        if (component == 0)
            excess += flows.first - ref->second.first;
        else
            excess += flows.second - ref->second.second;
    }
    return excess;
}

bool gate_open(double excess, const PolicyParams& params) {
    return params.literal_gate ? excess <= 0.0 : excess >= 0.0;
}

}  // namespace

std::vector<InverterSpec> specs_from_fleet(const std::vector<fleet::PvUnit>& units,
                                           double base_mva) {
    if (base_mva <= 0) throw InputError("base_mva must be positive");
    std::vector<InverterSpec> specs;
    specs.reserve(units.size());
    for (const fleet::PvUnit& u : units) {
        InverterSpec s;
        s.node = u.node;
        s.s_rated = u.s_mva / base_mva;
        s.p_ref = u.p_mw / base_mva;
        s.droop_p = u.kp;
        s.droop_q = u.kq;
        s.pf = u.cospf;
        s.p_headroom = u.headroom_mw / base_mva;
        specs.push_back(s);
    }
    return specs;
}

LocalMeasurement measurement_at(const netmodel::RadialNetwork& net,
                                const distflow::PowerFlowState& state, int node) {
    if (node < 1 || node > net.bus_count())
        throw InputError("measurement requested at unknown bus " + std::to_string(node));
    const netmodel::Bus& bus = net.bus(node);
    LocalMeasurement meas;
    meas.v = std::sqrt(state.u_at(node));
    meas.v_nom = bus.v_nom;
    meas.load_p = bus.load_p;
    meas.load_q = bus.load_q;
    for (int child : net.children(node)) {
        const int e = net.parent_branch(child);
        meas.child_flows[child] = {state.branch_p[static_cast<size_t>(e)],
                                   state.branch_q[static_cast<size_t>(e)]};
    }
    return meas;
}

double capability_q(const InverterSpec& spec, double p_actual) {
    if (p_actual < -1e-12 || p_actual > spec.s_rated + 1e-12)
        throw InputError("active output " + std::to_string(p_actual) +
                         " outside [0, s_rated] at node " + std::to_string(spec.node));
    const double p = clip(p_actual, 0.0, spec.s_rated);
    return std::sqrt(std::max(0.0, spec.s_rated * spec.s_rated - p * p));
}

double policy_constant_pf(const InverterSpec& spec, const LocalMeasurement& meas) {
    if (!(spec.pf > 0.0 && spec.pf <= 1.0))
        throw InputError("power factor must lie in (0, 1]");
    const double tan_phi = std::sqrt(1.0 - spec.pf * spec.pf) / spec.pf;
    const double cap = capability_q(spec, spec.p_ref);
    return clip((spec.p_ref - meas.load_p) * tan_phi, -cap, cap);
}

double policy_voltage(const InverterSpec& spec, const LocalMeasurement& meas,
                      const PolicyParams& params) {
    if (!(params.delta > 0.0)) throw InputError("sigmoid width delta must be positive");
    const double cap = capability_q(spec, spec.p_ref);
    const double sig = std::tanh((meas.v_nom - meas.v) / params.delta);
    return clip(std::min(meas.load_q, cap * sig), -cap, cap);
}

double policy_loss_min(const InverterSpec& spec, const LocalMeasurement& meas) {
    const double cap = capability_q(spec, spec.p_ref);
    return clip(meas.load_q, -cap, cap);
}

double policy_hybrid(const InverterSpec& spec, const LocalMeasurement& meas,
                     const PolicyParams& params) {
    if (params.k_l < 0 || params.k_v < 0) throw InputError("hybrid weights must be >= 0");
    const double cap = capability_q(spec, spec.p_ref);
    const double mix = params.k_l * policy_loss_min(spec, meas) +
                       params.k_v * policy_voltage(spec, meas, params);
    return clip(mix, -cap, cap);
}

double policy_flow_reactive(const InverterSpec& spec, const LocalMeasurement& meas,
                            const PolicyParams& params) {
    const double cap = capability_q(spec, spec.p_ref);
    const double excess = flow_excess(spec, meas, 1);
    double q = spec.q_ref;
    if (gate_open(excess, params)) q += spec.droop_q * excess;
    return clip(q, -cap, cap);
}

std::pair<double, double> policy_flow_active_reactive(const InverterSpec& spec,
                                                      const LocalMeasurement& meas,
                                                      const PolicyParams& params) {
    const double excess_q = flow_excess(spec, meas, 1);
    const double excess_p = flow_excess(spec, meas, 0);
    double q = spec.q_ref;
    if (gate_open(excess_q, params)) q += spec.droop_q * excess_q;
    double p = spec.p_ref;
    if (gate_open(excess_p, params)) p += spec.droop_p * excess_p;
    p = clip(p, 0.0, std::min(spec.p_ref + spec.p_headroom, spec.s_rated));

    // Joint rating: give active output priority, shrink reactive first.
    const double s2 = spec.s_rated * spec.s_rated;
    if (p * p + q * q > s2) {
        const double q_max = std::sqrt(std::max(0.0, s2 - p * p));
        q = clip(q, -q_max, q_max);
    }
    return {p, q};
}

netmodel::RadialNetwork perturb_loads(const netmodel::RadialNetwork& net,
                                      const std::map<int, double>& factor) {
    std::vector<netmodel::Bus> buses = net.buses();
    for (const auto& [node, f] : factor) {
        if (node < 1 || node > net.bus_count())
            throw InputError("load perturbation names unknown bus " + std::to_string(node));
        if (f < 0) throw InputError("load perturbation factor must be >= 0");
        buses[static_cast<size_t>(node - 1)].load_p *= f;
        buses[static_cast<size_t>(node - 1)].load_q *= f;
    }
    return netmodel::RadialNetwork::build(std::move(buses), net.branches(), net.root(),
                                          net.base_mva());
}

ClosedLoopResult closed_loop_simulate(const netmodel::RadialNetwork& net,
                                      const std::vector<InverterSpec>& specs,
                                      const PolicyParams& params,
                                      const std::map<int, double>& load_factor) {
    const netmodel::RadialNetwork sim_net =
        load_factor.empty() ? net : perturb_loads(net, load_factor);

    constexpr double tol = 1e-8;
    constexpr int max_iters = 1000;

    distflow::InjectionSet inj;
    for (const InverterSpec& s : specs) {
        inj.p[s.node] = s.p_ref;
        inj.q[s.node] = params.kind == PolicyKind::none ? 0.0 : s.q_ref;
    }

    std::deque<std::string> trail;
    for (int iter = 1; iter <= max_iters; ++iter) {
        const distflow::PowerFlowState state = distflow::solve_lindistflow(sim_net, inj);
        distflow::InjectionSet next = inj;
        if (params.kind != PolicyKind::none) {
            for (const InverterSpec& s : specs) {
                const LocalMeasurement meas = measurement_at(sim_net, state, s.node);
                double p = s.p_ref;
                double q = 0.0;
                switch (params.kind) {
                    case PolicyKind::constant_pf:
                        q = policy_constant_pf(s, meas);
                        break;
                    case PolicyKind::voltage_sigmoid:
                        q = policy_voltage(s, meas, params);
                        break;
                    case PolicyKind::loss_min:
                        q = policy_loss_min(s, meas);
                        break;
                    case PolicyKind::hybrid:
                        q = policy_hybrid(s, meas, params);
                        break;
                    case PolicyKind::flow_reactive:
                        q = policy_flow_reactive(s, meas, params);
                        break;
                    case PolicyKind::flow_active_reactive: {
                        const auto pq = policy_flow_active_reactive(s, meas, params);
                        p = pq.first;
                        q = pq.second;
                        break;
                    }
                    case PolicyKind::none:
                        break;
                }
                next.p[s.node] = p;
                next.q[s.node] = q;
            }
        }

        double delta = 0.0;
        for (const InverterSpec& s : specs) {
            delta = std::max(delta, std::abs(next.p[s.node] - inj.p[s.node]));
            delta = std::max(delta, std::abs(next.q[s.node] - inj.q[s.node]));
        }

        {
            std::ostringstream row;
            row << "iter " << iter;
            char buf[64];
            for (const InverterSpec& s : specs) {
                std::snprintf(buf, sizeof(buf), " n%d p=%.9g q=%.9g", s.node,
                              next.p[s.node], next.q[s.node]);
                row << buf;
            }
            trail.push_back(row.str());
            if (trail.size() > 8) trail.pop_front();
        }

        inj = next;
        if (delta < tol) {
            ClosedLoopResult result;
            result.state = distflow::solve_lindistflow(sim_net, inj);
            result.injections = inj;
            result.iterations = iter;
            result.losses = distflow::total_losses(sim_net, result.state);
            return result;
        }
    }

    std::ostringstream msg;
    msg << "closed loop found no fixed point in " << max_iters
        << " iterations; recent injections:";
    for (const std::string& row : trail) msg << "\n  " << row;
    throw ConvergenceError(msg.str());
}

std::vector<InverterSpec> apply_references(std::vector<InverterSpec> specs,
                                           const netmodel::RadialNetwork& net,
                                           const distflow::PowerFlowState& state,
                                           const distflow::InjectionSet& inj) {
    for (InverterSpec& s : specs) {
        s.q_ref = inj.q_at(s.node);
        s.flow_refs.clear();
        for (int child : net.children(s.node)) {
            const int e = net.parent_branch(child);
            s.flow_refs[child] = {state.branch_p[static_cast<size_t>(e)],
                                  state.branch_q[static_cast<size_t>(e)]};
        }
    }
    return specs;
}

}  // namespace dopf::policies
