#include "dopf/admm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include "dopf/errors.hpp"

namespace dopf::admm {

MessageBus::MessageBus(const netmodel::RadialNetwork& net)
    : bus_count_(net.bus_count()) {
    for (const netmodel::Branch& br : net.branches()) edges_.emplace_back(br.from, br.to);
}

bool MessageBus::adjacent(int a, int b) const {
    for (const auto& [p, c] : edges_)
        if ((p == a && c == b) || (p == b && c == a)) return true;
    return false;
}

void MessageBus::begin_round(int round) {
    round_ = round;
    current_.clear();
}

void MessageBus::send(int from, int to, const char* kind, double value) {
    log_.push_back({round_, from, to, kind, value});
    if (!adjacent(from, to))
        throw ProtocolError("message from bus " + std::to_string(from) + " to bus " +
                            std::to_string(to) + " crosses more than one hop");
    const auto key = std::make_tuple(from, to, std::string(kind));
    if (current_.count(key))
        throw ProtocolError("duplicate '" + std::string(kind) + "' message from bus " +
                            std::to_string(from) + " to bus " + std::to_string(to) +
                            " in round " + std::to_string(round_));
    current_[key] = value;
}

double MessageBus::fetch(int from, int to, const char* kind) const {
    const auto it = current_.find(std::make_tuple(from, to, std::string(kind)));
    if (it == current_.end())
        throw ProtocolError("round " + std::to_string(round_) + " stalled: no '" +
                            std::string(kind) + "' message on edge " + std::to_string(from) +
                            "-" + std::to_string(to));
    return it->second;
}

int audit_neighbor_only(const std::vector<Message>& log,
                        const netmodel::RadialNetwork& net) {
    int violations = 0;
    for (const Message& m : log) {
        bool ok = false;
        if (m.from >= 1 && m.from <= net.bus_count() && m.from != net.root())
            ok = net.parent(m.from) == m.to;
        if (!ok && m.to >= 1 && m.to <= net.bus_count() && m.to != net.root())
            ok = ok || net.parent(m.to) == m.from;
        if (!ok) ++violations;
    }
    return violations;
}

AdmmSolver::AdmmSolver(const netmodel::RadialNetwork& net,
                       const std::vector<policies::InverterSpec>& specs,
                       const std::optional<uncertainty::UncertaintyModel>& model,
                       const AdmmConfig& cfg)
    : net_(net), model_(model), cfg_(cfg), specs_(specs), bus_(net) {
    const netmodel::Bus& root = net.bus(net.root());
    rho_ = cfg.rho > 0 ? cfg.rho : 1.0 / (root.v_nom * root.v_nom);
    if (model_ && cfg_.epsilon > 0) model_->epsilon = cfg_.epsilon;

    for (const policies::InverterSpec& s : specs_) {
        if (s.node == net.root())
            throw InputError("an inverter at the root bus is not supported");
        if (!spec_at_.emplace(s.node, &s).second)
            throw InputError("duplicate inverter at node " + std::to_string(s.node));
    }

    // Flat start from the forecast operating point: PV at forecast active
    // output, zero reactive.
    distflow::InjectionSet forecast;
    for (const policies::InverterSpec& s : specs_) {
        forecast.p[s.node] = model_ ? model_->mean_at(s.node) : s.p_ref;
        forecast.q[s.node] = 0.0;
    }
    const distflow::PowerFlowState state = distflow::solve_lindistflow(net_, forecast);
    p_edge_fixed_ = state.branch_p;

    agents_.resize(static_cast<size_t>(net_.bus_count()));
    prev_f_.assign(static_cast<size_t>(net_.branch_count()), 0.0);
    prev_u_.assign(static_cast<size_t>(net_.bus_count()), 0.0);
    for (int bus = 1; bus <= net_.bus_count(); ++bus) {
        AdmmNodeState& a = agents_[static_cast<size_t>(bus - 1)];
        a.node = bus;
        a.u_plus = state.u_at(bus);
        a.tgt_u_self = a.u_plus;
        double agg = 0.0;
        for (int child : net_.children(bus)) {
            const int e = net_.parent_branch(child);
            agg += state.branch_q[static_cast<size_t>(e)];
        }
        a.q_plus = agg;
        a.tgt_q_agg = agg;
        if (bus != net_.root()) {
            const int pe = net_.parent_branch(bus);
            a.q_minus = state.branch_q[static_cast<size_t>(pe)];
            a.tgt_f_pe = a.q_minus;
            a.u_minus = state.u_at(net_.parent(bus));
            a.tgt_u_par = a.u_minus;
            prev_f_[static_cast<size_t>(pe)] = a.q_minus;
        }
        for (int child : net_.children(bus)) {
            const int e = net_.parent_branch(child);
            a.in_q_child[child] = state.branch_q[static_cast<size_t>(e)];
            a.in_u_child[child] = state.u_at(bus);
        }
        prev_u_[static_cast<size_t>(bus - 1)] = a.u_plus;
    }
}

qp::QuadProgram AdmmSolver::local_problem(const AdmmNodeState& agent) const {
    const int bus = agent.node;
    const bool is_root = bus == net_.root();
    const bool is_leaf = net_.children(bus).empty();
    const netmodel::Bus& b = net_.bus(bus);
    const policies::InverterSpec* spec = nullptr;
    if (const auto it = spec_at_.find(bus); it != spec_at_.end()) spec = it->second;

    // Variables: root [q_plus, u_plus]; otherwise
    // [q_plus, q_minus, u_plus, u_minus].
    const int n = is_root ? 2 : 4;
    const int iqp = 0;
    const int iqm = 1;
    const int iup = is_root ? 1 : 2;
    const int ium = 3;

    qp::QuadProgram prog = qp::QuadProgram::sized(n);
    prog.Q(iqp, iqp) += rho_;
    prog.c(iqp) += agent.lam_q_plus - rho_ * agent.tgt_q_agg;
    prog.Q(iup, iup) += rho_;
    prog.c(iup) += agent.lam_u_plus - rho_ * agent.tgt_u_self;

    std::vector<std::pair<Eigen::RowVectorXd, double>> eqs;
    auto add_eq = [&](const Eigen::RowVectorXd& a, double rhs) { eqs.emplace_back(a, rhs); };

    if (is_root) {
        add_eq(Eigen::RowVectorXd::Unit(n, iup), b.v_nom * b.v_nom);
    } else {
        const int pe = net_.parent_branch(bus);
        const netmodel::Branch& br = net_.branches()[static_cast<size_t>(pe)];
        const double vf = net_.bus(br.from).v_nom;

        // Parent-edge loss share plus the two parent-side consensus terms.
        prog.Q(iqm, iqm) += 2.0 * br.r / (vf * vf) + rho_;
        prog.c(iqm) += agent.lam_q_minus - rho_ * agent.tgt_f_pe;
        prog.Q(ium, ium) += rho_;
        prog.c(ium) += agent.lam_u_minus - rho_ * agent.tgt_u_par;

        // u_plus = u_minus - 2 (r p_fixed + x q_minus).
        Eigen::RowVectorXd volt = Eigen::RowVectorXd::Zero(n);
        volt(iup) = 1.0;
        volt(ium) = -1.0;
        volt(iqm) = 2.0 * br.x;
        add_eq(volt, -2.0 * br.r * p_edge_fixed_[static_cast<size_t>(pe)]);

        prog.lo(iup) = b.v_min * b.v_min;
        prog.hi(iup) = b.v_max * b.v_max;
    }

    if (is_leaf) add_eq(Eigen::RowVectorXd::Unit(n, iqp), 0.0);

    // Net inverter output d = q_plus - q_minus + Q_i; the reactive
    // balance pins d to zero at passive buses and keeps it inside the
    // (possibly chance-tightened) cap at PV buses.
    Eigen::RowVectorXd drow = Eigen::RowVectorXd::Zero(n);
    drow(iqp) = 1.0;
    if (!is_root) drow(iqm) = -1.0;
    if (spec == nullptr) {
        if (!is_root) add_eq(drow, -b.load_q);
    } else if (cfg_.policy_rows) {
        // Droop relation d = q_ref + droop_q (q_plus - ref_agg).
        double ref_agg = 0.0;
        for (const auto& [child, pq] : spec->flow_refs) ref_agg += pq.second;
        Eigen::RowVectorXd droop = drow;
        droop(iqp) -= spec->droop_q;
        add_eq(droop, spec->q_ref - spec->droop_q * ref_agg - b.load_q);
    } else {
        const double cap = model_ ? uncertainty::tightened_pf_cap(bus, *model_)
                                  : policies::capability_q(*spec, spec->p_ref);
        prog.a_in = Eigen::MatrixXd::Zero(2, n);
        prog.b_in = Eigen::VectorXd::Zero(2);
        prog.a_in.row(0) = drow;
        prog.b_in(0) = cap - b.load_q;
        prog.a_in.row(1) = -drow;
        prog.b_in(1) = cap + b.load_q;
    }

    prog.a_eq = Eigen::MatrixXd::Zero(static_cast<int>(eqs.size()), n);
    prog.b_eq = Eigen::VectorXd::Zero(static_cast<int>(eqs.size()));
    for (int r = 0; r < static_cast<int>(eqs.size()); ++r) {
        prog.a_eq.row(r) = eqs[static_cast<size_t>(r)].first;
        prog.b_eq(r) = eqs[static_cast<size_t>(r)].second;
    }
    return prog;
}

void AdmmSolver::local_minimize_one(AdmmNodeState& agent) {
    const qp::QuadProgram prog = local_problem(agent);
    qp::QpOptions opts;
    opts.warm_active = agent.warm_active;
    const qp::QpSolution sol = qp::solve_qp(prog, opts);
    if (sol.status != qp::QpStatus::optimal) {
        std::ostringstream msg;
        msg << "agent at bus " << agent.node << ": local problem "
            << (sol.status == qp::QpStatus::infeasible ? "infeasible" : "hit iteration limit");
        if (!sol.conflict_rows.empty()) {
            msg << " (conflicting rows:";
            for (int r : sol.conflict_rows) msg << ' ' << r;
            msg << ')';
        }
        throw ConvergenceError(msg.str());
    }
    const bool is_root = agent.node == net_.root();
    agent.q_plus = sol.x(0);
    if (is_root) {
        agent.u_plus = sol.x(1);
    } else {
        agent.q_minus = sol.x(1);
        agent.u_plus = sol.x(2);
        agent.u_minus = sol.x(3);
    }
    agent.warm_active = sol.active_set;
}

void AdmmSolver::local_minimize_all() {
    const int workers = std::max(1, cfg_.workers);
    if (workers == 1 || agents_.size() < 2) {
        for (AdmmNodeState& a : agents_) local_minimize_one(a);
        return;
    }
    // Agents only touch their own state; any partition gives the same
    // result.
    std::vector<std::thread> pool;
    const int n = static_cast<int>(agents_.size());
    const int chunk = (n + workers - 1) / workers;
    std::vector<std::string> faults(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        const int lo = w * chunk;
        const int hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([this, w, lo, hi, &faults] {
            try {
                for (int i = lo; i < hi; ++i)
                    local_minimize_one(agents_[static_cast<size_t>(i)]);
            } catch (const std::exception& e) {
                faults[static_cast<size_t>(w)] = e.what();
            }
        });
    }
    for (std::thread& t : pool) t.join();
    for (const std::string& f : faults)
        if (!f.empty()) throw ConvergenceError(f);
}

void AdmmSolver::exchange_and_average() {
    ++round_;
    bus_.begin_round(round_);

    // Children publish their parent-edge copies one hop up.
    for (const AdmmNodeState& a : agents_) {
        if (a.node == net_.root()) continue;
        const int parent = net_.parent(a.node);
        bus_.send(a.node, parent, "q_up", a.q_minus);
        bus_.send(a.node, parent, "u_up", a.u_minus);
    }
    for (AdmmNodeState& a : agents_) {
        for (int child : net_.children(a.node)) {
            a.in_q_child[child] = bus_.fetch(child, a.node, "q_up");
            a.in_u_child[child] = bus_.fetch(child, a.node, "u_up");
        }
    }

    double primal = 0.0;
    double dual = 0.0;

    // Every node averages the copies of its own globals and hands the
    // per-edge results one hop down. The root's voltage global stays
    // pinned at v_nom^2: it is the reference, not a free variable.
    for (AdmmNodeState& a : agents_) {
        const auto& kids = net_.children(a.node);
        const int m = static_cast<int>(kids.size());
        double sum_q = 0.0, sum_u = 0.0;
        for (int child : kids) {
            sum_q += a.in_q_child.at(child);
            sum_u += a.in_u_child.at(child);
        }
        const double agg = (m * a.q_plus + sum_q) / (1.0 + m);
        double u_avg = (a.u_plus + sum_u) / (1.0 + m);
        if (a.node == net_.root()) {
            const double vn = net_.bus(a.node).v_nom;
            u_avg = vn * vn;
        }
        const double shift = (a.q_plus - sum_q) / (1.0 + m);
        a.tgt_q_agg = agg;
        a.tgt_u_self = u_avg;

        primal = std::max(primal, std::abs(a.q_plus - agg));
        primal = std::max(primal, std::abs(a.u_plus - u_avg));
        dual = std::max(dual,
                        rho_ * std::abs(u_avg - prev_u_[static_cast<size_t>(a.node - 1)]));
        prev_u_[static_cast<size_t>(a.node - 1)] = u_avg;

        for (int child : kids) {
            const double f = a.in_q_child.at(child) + shift;
            bus_.send(a.node, child, "f_down", f);
            bus_.send(a.node, child, "u_down", u_avg);
            const int e = net_.parent_branch(child);
            dual = std::max(dual,
                            rho_ * std::abs(f - prev_f_[static_cast<size_t>(e)]));
            prev_f_[static_cast<size_t>(e)] = f;
        }
    }

    for (AdmmNodeState& a : agents_) {
        if (a.node == net_.root()) continue;
        const int parent = net_.parent(a.node);
        a.tgt_f_pe = bus_.fetch(parent, a.node, "f_down");
        a.tgt_u_par = bus_.fetch(parent, a.node, "u_down");
        primal = std::max(primal, std::abs(a.q_minus - a.tgt_f_pe));
        primal = std::max(primal, std::abs(a.u_minus - a.tgt_u_par));
    }

    primal_res_ = primal;
    dual_res_ = dual;
}

void AdmmSolver::dual_update() {
    for (AdmmNodeState& a : agents_) {
        a.lam_q_plus += rho_ * (a.q_plus - a.tgt_q_agg);
        a.lam_u_plus += rho_ * (a.u_plus - a.tgt_u_self);
        if (a.node != net_.root()) {
            a.lam_q_minus += rho_ * (a.q_minus - a.tgt_f_pe);
            a.lam_u_minus += rho_ * (a.u_minus - a.tgt_u_par);
        }
    }
}

std::pair<double, double> AdmmSolver::iterate() {
    local_minimize_all();
    exchange_and_average();
    dual_update();
    return {primal_res_, dual_res_};
}

ConsensusGlobals AdmmSolver::globals() const {
    ConsensusGlobals g;
    for (const AdmmNodeState& a : agents_) {
        g.q_node[a.node] = a.tgt_q_agg;
        g.u_node[a.node] = a.tgt_u_self;
        if (a.node != net_.root()) g.q_edge[a.node] = a.tgt_f_pe;
    }
    return g;
}

distflow::InjectionSet AdmmSolver::recover_injections() const {
    distflow::InjectionSet inj;
    for (const policies::InverterSpec& s : specs_) {
        const AdmmNodeState& a = agents_[static_cast<size_t>(s.node - 1)];
        inj.p[s.node] = model_ ? model_->mean_at(s.node) : s.p_ref;
        inj.q[s.node] = a.q_plus - a.q_minus + net_.bus(s.node).load_q;
    }
    return inj;
}

opf::OpfSolution AdmmSolver::solution(bool converged) const {
    opf::OpfSolution sol;
    sol.status = converged ? opf::SolveStatus::optimal : opf::SolveStatus::not_converged;
    const int n_edge = net_.branch_count();
    sol.state.branch_p = p_edge_fixed_;
    sol.state.branch_q.assign(static_cast<size_t>(n_edge), 0.0);
    sol.state.u.assign(static_cast<size_t>(net_.bus_count()), 0.0);
    for (const AdmmNodeState& a : agents_) {
        sol.state.u[static_cast<size_t>(a.node - 1)] = a.tgt_u_self;
        if (a.node != net_.root()) {
            const int e = net_.parent_branch(a.node);
            sol.state.branch_q[static_cast<size_t>(e)] = a.tgt_f_pe;
        }
    }
    sol.injections = recover_injections();
    sol.losses = distflow::total_losses(net_, sol.state);
    return sol;
}

AdmmRun run_admm(const netmodel::RadialNetwork& net,
                 const std::vector<policies::InverterSpec>& specs,
                 const std::optional<uncertainty::UncertaintyModel>& model,
                 const AdmmConfig& cfg) {
    AdmmSolver solver(net, specs, model, cfg);
    AdmmRun run;
    bool converged = false;
    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        const auto [primal, dual] = solver.iterate();
        const distflow::InjectionSet inj = solver.recover_injections();
        double total_q = 0.0;
        for (const auto& [node, q] : inj.q) total_q += q;
        const opf::OpfSolution snap = solver.solution(false);
        run.trace.push_back({iter, primal, dual, total_q, snap.losses});
        run.iterations = iter;
        if (primal < cfg.tol_primal && dual < cfg.tol_dual) {
            converged = true;
            break;
        }
    }
    run.solution = solver.solution(converged);
    run.messages = solver.bus().log();
    return run;
}

}  // namespace dopf::admm
