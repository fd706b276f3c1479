#include "dopf/distflow.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "dopf/errors.hpp"

namespace dopf::distflow {

namespace {

void check_injection_buses(const netmodel::RadialNetwork& net, const InjectionSet& inj) {
    for (const auto& [bus, v] : inj.p) {
        (void)v;
        if (bus < 1 || bus > net.bus_count())
            throw InputError("injection references unknown bus " + std::to_string(bus));
    }
    for (const auto& [bus, v] : inj.q) {
        (void)v;
        if (bus < 1 || bus > net.bus_count())
            throw InputError("injection references unknown bus " + std::to_string(bus));
    }
}

}  // namespace

PowerFlowState solve_lindistflow(const netmodel::RadialNetwork& net, const InjectionSet& inj) {
    check_injection_buses(net, inj);
    const int n = net.bus_count();

    PowerFlowState st;
    st.branch_p.assign(static_cast<size_t>(net.branch_count()), 0.0);
    st.branch_q.assign(static_cast<size_t>(net.branch_count()), 0.0);
    st.u.assign(static_cast<size_t>(n), 0.0);

    const std::vector<int> order = net.subtree_order();

    // Leaf-to-root: the branch into a bus carries that bus's net demand
    // plus everything already accumulated on its child branches.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const int bus = *it;
        const int pb = net.parent_branch(bus);
        if (pb < 0) continue;
        const netmodel::Bus& b = net.bus(bus);
        double p = b.load_p - inj.p_at(bus);
        double q = b.load_q - inj.q_at(bus);
        for (int child : net.children(bus)) {
            const int cb = net.parent_branch(child);
            p += st.branch_p[static_cast<size_t>(cb)];
            q += st.branch_q[static_cast<size_t>(cb)];
        }
        st.branch_p[static_cast<size_t>(pb)] = p;
        st.branch_q[static_cast<size_t>(pb)] = q;
    }

    // Root-to-leaf voltage propagation.
    st.u[static_cast<size_t>(net.root() - 1)] =
        net.bus(net.root()).v_nom * net.bus(net.root()).v_nom;
    for (int bus : order) {
        const int pb = net.parent_branch(bus);
        if (pb < 0) continue;
        const netmodel::Branch& br = net.branch(pb);
        st.u[static_cast<size_t>(bus - 1)] =
            st.u[static_cast<size_t>(br.from - 1)] -
            2.0 * (br.r * st.branch_p[static_cast<size_t>(pb)] +
                   br.x * st.branch_q[static_cast<size_t>(pb)]);
    }
    return st;
}

PowerFlowState solve_lindistflow_dense(const netmodel::RadialNetwork& net,
                                       const InjectionSet& inj) {
    check_injection_buses(net, inj);
    const int n = net.bus_count();
    const int e = net.branch_count();
    // Unknowns: [branch_p (e), branch_q (e), u (n)].
    const int dim = 2 * e + n;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);

    int row = 0;
    // Conservation at every non-root bus, once per flow direction.
    for (const netmodel::Bus& b : net.buses()) {
        if (b.id == net.root()) continue;
        const int pb = net.parent_branch(b.id);
        A(row, pb) = 1.0;
        A(row + 1, e + pb) = 1.0;
        for (int child : net.children(b.id)) {
            const int cb = net.parent_branch(child);
            A(row, cb) = -1.0;
            A(row + 1, e + cb) = -1.0;
        }
        rhs(row) = b.load_p - inj.p_at(b.id);
        rhs(row + 1) = b.load_q - inj.q_at(b.id);
        row += 2;
    }
    // Voltage drop along every branch.
    for (int bi = 0; bi < e; ++bi) {
        const netmodel::Branch& br = net.branch(bi);
        A(row, 2 * e + br.to - 1) = 1.0;
        A(row, 2 * e + br.from - 1) = -1.0;
        A(row, bi) = 2.0 * br.r;
        A(row, e + bi) = 2.0 * br.x;
        rhs(row) = 0.0;
        ++row;
    }
    // Root voltage reference.
    A(row, 2 * e + net.root() - 1) = 1.0;
    rhs(row) = net.bus(net.root()).v_nom * net.bus(net.root()).v_nom;
    ++row;

    Eigen::VectorXd sol = A.colPivHouseholderQr().solve(rhs);

    PowerFlowState st;
    st.branch_p.assign(static_cast<size_t>(e), 0.0);
    st.branch_q.assign(static_cast<size_t>(e), 0.0);
    st.u.assign(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < e; ++i) {
        st.branch_p[static_cast<size_t>(i)] = sol(i);
        st.branch_q[static_cast<size_t>(i)] = sol(e + i);
    }
    for (int i = 0; i < n; ++i) st.u[static_cast<size_t>(i)] = sol(2 * e + i);
    return st;
}

double total_losses(const netmodel::RadialNetwork& net, const PowerFlowState& state) {
    double loss = 0.0;
    for (int bi = 0; bi < net.branch_count(); ++bi) {
        const netmodel::Branch& br = net.branch(bi);
        const double vn = net.bus(br.from).v_nom;
        loss += br.r *
                (state.branch_p[static_cast<size_t>(bi)] * state.branch_p[static_cast<size_t>(bi)] +
                 state.branch_q[static_cast<size_t>(bi)] * state.branch_q[static_cast<size_t>(bi)]) /
                (vn * vn);
    }
    return loss;
}

std::vector<std::pair<int, double>> branch_voltage_profile(const netmodel::RadialNetwork& net,
                                                           const PowerFlowState& state,
                                                           int leaf) {
    std::vector<std::pair<int, double>> profile;
    for (int bus : net.path_from_root(leaf))
        profile.push_back({bus, std::sqrt(state.u_at(bus))});
    return profile;
}

}  // namespace dopf::distflow
