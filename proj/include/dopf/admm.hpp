#pragma once

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "dopf/distflow.hpp"
#include "dopf/netmodel.hpp"
#include "dopf/opf.hpp"
#include "dopf/policies.hpp"
#include "dopf/qpcore.hpp"
#include "dopf/uncertainty.hpp"

namespace dopf::admm {

struct AdmmConfig {
    // Consensus penalty weight; values <= 0 select 1 / v_nom(root)^2.
    double rho = 0.0;
    int max_iters = 500;
    double tol_primal = 1e-4;  // max |local - global|, pu
    double tol_dual = 1e-4;    // max rho |global_k+1 - global_k|, pu
    // When > 0 and a model is present, overrides the model's epsilon.
    double epsilon = 0.0;
    // Thread count for the local-minimization phase. Results are
    // identical for any value.
    int workers = 1;
    // Adds the linear droop relation of each inverter as an equality row
    // of its local problem (replacing the capability inequalities).
    bool policy_rows = false;
};

// One agent's local copies, duals and latest neighbor messages.
// q_plus mirrors the aggregate reactive flow into the node's children;
// q_minus mirrors the node's parent-edge reactive flow; u_plus its own
// squared voltage; u_minus the parent's squared voltage.
struct AdmmNodeState {
    int node = 0;
    double q_plus = 0.0, q_minus = 0.0, u_plus = 0.0, u_minus = 0.0;
    double lam_q_plus = 0.0, lam_q_minus = 0.0, lam_u_plus = 0.0, lam_u_minus = 0.0;

    // Consensus targets this agent tracks: its own aggregate/voltage
    // globals plus the parent-held globals it received.
    double tgt_q_agg = 0.0;   // global aggregate child reactive flow
    double tgt_u_self = 0.0;  // global own squared voltage
    double tgt_f_pe = 0.0;    // global parent-edge reactive flow
    double tgt_u_par = 0.0;   // global parent squared voltage

    // Latest messages from children, keyed by child bus id.
    std::map<int, double> in_q_child;  // child q_minus copies
    std::map<int, double> in_u_child;  // child u_minus copies

    std::vector<int> warm_active;  // local QP warm start
};

// Consensus variables: q_node holds each node's aggregate child reactive
// flow, q_edge the per-edge reactive flow keyed by child endpoint,
// u_node the squared voltage.
struct ConsensusGlobals {
    std::map<int, double> q_node;
    std::map<int, double> q_edge;
    std::map<int, double> u_node;
};

struct TraceRow {
    int iter = 0;
    double primal = 0.0;
    double dual = 0.0;
    double total_q = 0.0;  // recovered fleet reactive injection, pu
    double losses = 0.0;   // pu
};
using ConvergenceTrace = std::vector<TraceRow>;

struct Message {
    int round = 0;
    int from = 0;
    int to = 0;
    const char* kind = "";  // "q_up" | "u_up" | "f_down" | "u_down"
    double value = 0.0;
};

// In-process synchronous message fabric. Every send is validated against
// the network adjacency and recorded; sending beyond one hop throws
// ProtocolError after recording the attempt.
class MessageBus {
public:
    explicit MessageBus(const netmodel::RadialNetwork& net);

    void begin_round(int round);
    void send(int from, int to, const char* kind, double value);
    // Throws ProtocolError naming the edge when the message is absent.
    double fetch(int from, int to, const char* kind) const;

    const std::vector<Message>& log() const { return log_; }
    int round() const { return round_; }

private:
    bool adjacent(int a, int b) const;

    int bus_count_;
    std::vector<std::pair<int, int>> edges_;  // parent, child
    std::vector<Message> log_;
    std::map<std::tuple<int, int, std::string>, double> current_;
    int round_ = 0;
};

// Messages violating one-hop adjacency (0 for a conforming run).
int audit_neighbor_only(const std::vector<Message>& log,
                        const netmodel::RadialNetwork& net);

// Decentralized reactive dispatch: one agent per bus, synchronous rounds
// of local minimization, neighbor-only averaging and dual updates.
class AdmmSolver {
public:
    AdmmSolver(const netmodel::RadialNetwork& net,
               const std::vector<policies::InverterSpec>& specs,
               const std::optional<uncertainty::UncertaintyModel>& model,
               const AdmmConfig& cfg);

    // One full round; returns (primal residual, dual residual).
    std::pair<double, double> iterate();

    // Round phases, callable separately.
    void local_minimize_all();
    void exchange_and_average();
    void dual_update();

    const std::vector<AdmmNodeState>& agents() const { return agents_; }
    std::vector<AdmmNodeState>& mutable_agents() { return agents_; }
    ConsensusGlobals globals() const;
    const MessageBus& bus() const { return bus_; }
    double rho() const { return rho_; }

    // Net inverter reactive outputs q_plus - q_minus + load_q from the
    // current local copies; active outputs at the forecast.
    distflow::InjectionSet recover_injections() const;

    // Operating point assembled from the consensus globals, with active
    // flows frozen at the forecast state.
    opf::OpfSolution solution(bool converged) const;

private:
    qp::QuadProgram local_problem(const AdmmNodeState& agent) const;
    void local_minimize_one(AdmmNodeState& agent);

    const netmodel::RadialNetwork& net_;
    std::optional<uncertainty::UncertaintyModel> model_;
    AdmmConfig cfg_;
    double rho_;
    std::map<int, const policies::InverterSpec*> spec_at_;
    std::vector<policies::InverterSpec> specs_;
    std::vector<AdmmNodeState> agents_;  // by bus id - 1
    std::vector<double> p_edge_fixed_;   // forecast active flows by branch index
    std::vector<double> prev_f_;         // previous per-edge globals, by branch index
    std::vector<double> prev_u_;         // previous per-node globals, by bus id - 1
    MessageBus bus_;
    int round_ = 0;
    double primal_res_ = 0.0, dual_res_ = 0.0;
};

struct AdmmRun {
    opf::OpfSolution solution;
    ConvergenceTrace trace;
    std::vector<Message> messages;  // complete bus log for the audit
    int iterations = 0;
};

// Runs rounds until both residuals drop below the configured tolerances
// or max_iters is reached; the returned solution carries not_converged
// status in the latter case. Deterministic for fixed inputs regardless
// of cfg.workers. Throws ConvergenceError when an agent's local problem
// is infeasible (message names the bus).
AdmmRun run_admm(const netmodel::RadialNetwork& net,
                 const std::vector<policies::InverterSpec>& specs,
                 const std::optional<uncertainty::UncertaintyModel>& model,
                 const AdmmConfig& cfg);

}  // namespace dopf::admm
