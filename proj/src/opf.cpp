#include "dopf/opf.hpp"

#include <cmath>
#include <map>

#include "dopf/errors.hpp"
#include "dopf/qpcore.hpp"

namespace dopf::opf {

namespace {

// Variable layout: [q_pv (ascending node) | p_edge | q_edge | u (by bus id)].
struct Layout {
    std::map<int, int> q_pv;  // node -> variable index
    int p_edge0 = 0;
    int q_edge0 = 0;
    int u0 = 0;
    int dim = 0;

    int p_edge(int e) const { return p_edge0 + e; }
    int q_edge(int e) const { return q_edge0 + e; }
    int u(int bus) const { return u0 + bus - 1; }
};

Layout make_layout(const netmodel::RadialNetwork& net,
                   const std::vector<policies::InverterSpec>& specs) {
    Layout ly;
    int next = 0;
    for (const auto& s : specs) {
        if (ly.q_pv.count(s.node))
            throw InputError("duplicate inverter at node " + std::to_string(s.node));
        ly.q_pv[s.node] = 0;
    }
    for (auto& [node, idx] : ly.q_pv) idx = next++;
    ly.p_edge0 = next;
    ly.q_edge0 = ly.p_edge0 + net.branch_count();
    ly.u0 = ly.q_edge0 + net.branch_count();
    ly.dim = ly.u0 + net.bus_count();
    return ly;
}

}  // namespace

OpfSolution solve_centralized(const netmodel::RadialNetwork& net,
                              const std::vector<policies::InverterSpec>& specs,
                              const std::optional<uncertainty::UncertaintyModel>& model) {
    const Layout ly = make_layout(net, specs);
    const int n_edge = net.branch_count();
    const int n_bus = net.bus_count();

    std::map<int, double> p_fixed;  // PV active output, pinned
    for (const auto& s : specs) {
        if (s.node < 1 || s.node > n_bus)
            throw InputError("inverter at unknown bus " + std::to_string(s.node));
        p_fixed[s.node] = model ? model->mean_at(s.node) : s.p_ref;
    }

    auto var_name = [&](int j) -> std::string {
        for (const auto& [node, idx] : ly.q_pv)
            if (idx == j) return "q_pv at bus " + std::to_string(node);
        if (j < ly.q_edge0) {
            const auto& br = net.branches()[static_cast<size_t>(j - ly.p_edge0)];
            return "p flow " + std::to_string(br.from) + "-" + std::to_string(br.to);
        }
        if (j < ly.u0) {
            const auto& br = net.branches()[static_cast<size_t>(j - ly.q_edge0)];
            return "q flow " + std::to_string(br.from) + "-" + std::to_string(br.to);
        }
        return "u at bus " + std::to_string(j - ly.u0 + 1);
    };

    qp::QuadProgram prog = qp::QuadProgram::sized(ly.dim);

    // Objective: sum over edges of r (p^2 + q^2) / v_nom(from)^2.
    for (int e = 0; e < n_edge; ++e) {
        const netmodel::Branch& br = net.branches()[static_cast<size_t>(e)];
        const double vf = net.bus(br.from).v_nom;
        const double w = 2.0 * br.r / (vf * vf);
        prog.Q(ly.p_edge(e), ly.p_edge(e)) += w;
        prog.Q(ly.q_edge(e), ly.q_edge(e)) += w;
    }

    // Equality rows: per-bus conservation (non-root), per-edge voltage
    // drop, root voltage pin.
    const int n_eq = 2 * (n_bus - 1) + n_edge + 1;
    prog.a_eq = Eigen::MatrixXd::Zero(n_eq, ly.dim);
    prog.b_eq = Eigen::VectorXd::Zero(n_eq);
    int row = 0;
    for (int bus = 1; bus <= n_bus; ++bus) {
        if (bus == net.root()) continue;
        const int pe = net.parent_branch(bus);
        const netmodel::Bus& b = net.bus(bus);
        // Active: p_parent - sum child p = P - p_pv (pinned constant).
        prog.a_eq(row, ly.p_edge(pe)) = 1.0;
        for (int child : net.children(bus))
            prog.a_eq(row, ly.p_edge(net.parent_branch(child))) = -1.0;
        double p_inj = 0.0;
        if (const auto it = p_fixed.find(bus); it != p_fixed.end()) p_inj = it->second;
        prog.b_eq(row) = b.load_p - p_inj;
        ++row;
        // Reactive: q_parent - sum child q + q_pv = Q.
        prog.a_eq(row, ly.q_edge(pe)) = 1.0;
        for (int child : net.children(bus))
            prog.a_eq(row, ly.q_edge(net.parent_branch(child))) = -1.0;
        if (const auto it = ly.q_pv.find(bus); it != ly.q_pv.end())
            prog.a_eq(row, it->second) = 1.0;
        prog.b_eq(row) = b.load_q;
        ++row;
    }
    for (int e = 0; e < n_edge; ++e) {
        const netmodel::Branch& br = net.branches()[static_cast<size_t>(e)];
        prog.a_eq(row, ly.u(br.to)) = 1.0;
        prog.a_eq(row, ly.u(br.from)) = -1.0;
        prog.a_eq(row, ly.p_edge(e)) = 2.0 * br.r;
        prog.a_eq(row, ly.q_edge(e)) = 2.0 * br.x;
        ++row;
    }
    {
        const netmodel::Bus& rb = net.bus(net.root());
        prog.a_eq(row, ly.u(net.root())) = 1.0;
        prog.b_eq(row) = rb.v_nom * rb.v_nom;
        ++row;
    }

    // Bounds: voltage band on every non-root bus; inverter caps on q_pv.
    for (int bus = 1; bus <= n_bus; ++bus) {
        if (bus == net.root()) continue;
        const netmodel::Bus& b = net.bus(bus);
        prog.lo(ly.u(bus)) = b.v_min * b.v_min;
        prog.hi(ly.u(bus)) = b.v_max * b.v_max;
    }
    for (const auto& s : specs) {
        const double cap = model ? uncertainty::tightened_pf_cap(s.node, *model)
                                 : policies::capability_q(s, s.p_ref);
        const int j = ly.q_pv.at(s.node);
        prog.lo(j) = -cap;
        prog.hi(j) = cap;
    }

    const qp::QpSolution qs = qp::solve_qp(prog);

    OpfSolution sol;
    if (qs.status == qp::QpStatus::iteration_limit) {
        sol.status = SolveStatus::iteration_limit;
        return sol;
    }
    if (qs.status == qp::QpStatus::infeasible) {
        sol.status = SolveStatus::infeasible;
        // Internal inequality rows: hi bounds then lo bounds, each in
        // variable-index order (this assembly adds no user rows).
        std::vector<int> his, los;
        for (int j = 0; j < ly.dim; ++j)
            if (std::isfinite(prog.hi(j))) his.push_back(j);
        for (int j = 0; j < ly.dim; ++j)
            if (std::isfinite(prog.lo(j))) los.push_back(j);
        for (int r : qs.conflict_rows) {
            if (r < static_cast<int>(his.size()))
                sol.infeasible_rows.push_back("upper bound on " +
                                              var_name(his[static_cast<size_t>(r)]));
            else
                sol.infeasible_rows.push_back(
                    "lower bound on " +
                    var_name(los[static_cast<size_t>(r) - his.size()]));
        }
        if (sol.infeasible_rows.empty())
            sol.infeasible_rows.push_back("equality system inconsistent");
        return sol;
    }

    sol.status = SolveStatus::optimal;
    sol.state.branch_p.resize(static_cast<size_t>(n_edge));
    sol.state.branch_q.resize(static_cast<size_t>(n_edge));
    sol.state.u.resize(static_cast<size_t>(n_bus));
    for (int e = 0; e < n_edge; ++e) {
        sol.state.branch_p[static_cast<size_t>(e)] = qs.x(ly.p_edge(e));
        sol.state.branch_q[static_cast<size_t>(e)] = qs.x(ly.q_edge(e));
    }
    for (int bus = 1; bus <= n_bus; ++bus)
        sol.state.u[static_cast<size_t>(bus - 1)] = qs.x(ly.u(bus));
    for (const auto& s : specs) {
        sol.injections.p[s.node] = p_fixed.at(s.node);
        sol.injections.q[s.node] = qs.x(ly.q_pv.at(s.node));
    }
    sol.losses = distflow::total_losses(net, sol.state);
    return sol;
}

std::vector<policies::InverterSpec> reference_setpoints(
    const OpfSolution& sol, const netmodel::RadialNetwork& net,
    const std::vector<policies::InverterSpec>& specs) {
    if (sol.status != SolveStatus::optimal)
        throw ValidationError("reference extraction requires an optimal solution");
    return policies::apply_references(specs, net, sol.state, sol.injections);
}

}  // namespace dopf::opf
