#include "dopf/qpcore.hpp"

#include <algorithm>
#include <cmath>

#include "dopf/errors.hpp"

namespace dopf::qp {

namespace {

constexpr double kReg = 1e-10;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Internal inequality system rows: user rows, then hi bounds, then lo
// bounds, each kept in index order so tie-breaking is stable.
struct IneqSystem {
    Eigen::MatrixXd g;
    Eigen::VectorXd h;
    std::vector<int> user_row;  // -1 for bound rows
    std::vector<int> hi_var;    // variable index or -1
    std::vector<int> lo_var;
};

IneqSystem build_ineq(const QuadProgram& prog) {
    const int n = prog.dim();
    const int m_user = static_cast<int>(prog.a_in.rows());
    std::vector<int> his, los;
    for (int j = 0; j < n; ++j)
        if (prog.hi(j) < kInf) his.push_back(j);
    for (int j = 0; j < n; ++j)
        if (prog.lo(j) > -kInf) los.push_back(j);

    IneqSystem sys;
    const int m = m_user + static_cast<int>(his.size() + los.size());
    sys.g = Eigen::MatrixXd::Zero(m, n);
    sys.h = Eigen::VectorXd::Zero(m);
    sys.user_row.assign(static_cast<size_t>(m), -1);
    sys.hi_var.assign(static_cast<size_t>(m), -1);
    sys.lo_var.assign(static_cast<size_t>(m), -1);
    int r = 0;
    for (int i = 0; i < m_user; ++i, ++r) {
        sys.g.row(r) = prog.a_in.row(i);
        sys.h(r) = prog.b_in(i);
        sys.user_row[static_cast<size_t>(r)] = i;
    }
    for (int j : his) {
        sys.g(r, j) = 1.0;
        sys.h(r) = prog.hi(j);
        sys.hi_var[static_cast<size_t>(r)] = j;
        ++r;
    }
    for (int j : los) {
        sys.g(r, j) = -1.0;
        sys.h(r) = -prog.lo(j);
        sys.lo_var[static_cast<size_t>(r)] = j;
        ++r;
    }
    return sys;
}

struct Reduction {
    bool consistent = true;
    Eigen::VectorXd x_part;  // particular equality solution
    Eigen::MatrixXd z;       // nullspace basis (n x k)
};

Reduction reduce_equalities(const QuadProgram& prog) {
    const int n = prog.dim();
    Reduction red;
    if (prog.a_eq.rows() == 0) {
        red.x_part = Eigen::VectorXd::Zero(n);
        red.z = Eigen::MatrixXd::Identity(n, n);
        return red;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_a(prog.a_eq);
    red.x_part = qr_a.solve(prog.b_eq);
    const double resid = (prog.a_eq * red.x_part - prog.b_eq).lpNorm<Eigen::Infinity>();
    if (resid > 1e-9 * (1.0 + prog.b_eq.lpNorm<Eigen::Infinity>())) {
        red.consistent = false;
        return red;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_at(prog.a_eq.transpose());
    const int rank = static_cast<int>(qr_at.rank());
    Eigen::MatrixXd q_full = qr_at.householderQ();
    red.z = q_full.rightCols(n - rank);
    return red;
}

}  // namespace

double KktResiduals::max() const {
    return std::max({stationarity, feasibility, complementarity});
}

QpSolution solve_qp(const QuadProgram& prog, const QpOptions& opts) {
    const int n = prog.dim();
    if (prog.c.size() != n || prog.Q.cols() != n)
        throw InputError("quadratic program has inconsistent dimensions");
    if (prog.a_eq.rows() != prog.b_eq.size() || prog.a_in.rows() != prog.b_in.size())
        throw InputError("constraint matrix and rhs sizes disagree");

    QpSolution sol;
    sol.eq_duals = Eigen::VectorXd::Zero(prog.a_eq.rows());
    sol.in_duals = Eigen::VectorXd::Zero(prog.a_in.rows());
    sol.lo_duals = Eigen::VectorXd::Zero(n);
    sol.hi_duals = Eigen::VectorXd::Zero(n);

    const Reduction red = reduce_equalities(prog);
    if (!red.consistent) {
        sol.status = QpStatus::infeasible;
        return sol;
    }

    const IneqSystem sys = build_ineq(prog);
    const int m = static_cast<int>(sys.g.rows());
    const int k = static_cast<int>(red.z.cols());

    // Reduced objective over x = x_part + Z y.
    Eigen::MatrixXd p_red = red.z.transpose() * prog.Q * red.z;
    p_red = 0.5 * (p_red + p_red.transpose());
    p_red.diagonal().array() += kReg;
    const Eigen::VectorXd d_red = red.z.transpose() * (prog.Q * red.x_part + prog.c);
    const Eigen::MatrixXd g_red = sys.g * red.z;
    const Eigen::VectorXd h_red = sys.h - sys.g * red.x_part;

    Eigen::VectorXd y;
    std::vector<int> active;
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(0);
    const int max_iters = opts.iter_factor * std::max(1, n);
    int iters = 0;
    bool hit_limit = false;

    if (k > 0) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(p_red);
        y = ldlt.solve(-d_red);
    } else {
        y = Eigen::VectorXd::Zero(0);
    }

    // Violated warm-start rows are tried before the global scan.
    std::vector<int> warm = opts.warm_active;
    warm.erase(std::remove_if(warm.begin(), warm.end(),
                              [m](int r) { return r < 0 || r >= m; }),
               warm.end());

    auto pick_entering = [&](void) -> int {
        for (size_t wi = 0; wi < warm.size(); ++wi) {
            int r = warm[wi];
            if (r >= 0 && g_red.row(r).dot(y) - h_red(r) > opts.feas_tol) {
                warm[wi] = -1;
                return r;
            }
        }
        int best = -1;
        double best_v = opts.feas_tol;
        for (int r = 0; r < m; ++r) {
            const double v = g_red.row(r).dot(y) - h_red(r);
            if (v > best_v) {
                best_v = v;
                best = r;
            }
        }
        return best;
    };

    if (k == 0) {
        // Fully determined by equalities; inequality rows are checks only.
        for (int r = 0; r < m; ++r)
            if (-h_red(r) > opts.feas_tol) sol.conflict_rows.push_back(r);
        if (!sol.conflict_rows.empty()) {
            sol.status = QpStatus::infeasible;
            return sol;
        }
    }

    // One-shot equality solve of the current active set. The stepping path
    // can traverse huge excursions when Q is semidefinite (the regularized
    // unconstrained start lies ~1/kReg out along null directions), leaving
    // 1e-6-scale float drift in y and mu; re-solving the final KKT system
    // directly restores working precision.
    auto refine_current = [&](void) {
        const int na = static_cast<int>(active.size());
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(k + na, k + na);
        kkt.topLeftCorner(k, k) = p_red;
        for (int a = 0; a < na; ++a) {
            kkt.block(0, k + a, k, 1) = g_red.row(active[static_cast<size_t>(a)]).transpose();
            kkt.block(k + a, 0, 1, k) = g_red.row(active[static_cast<size_t>(a)]);
        }
        Eigen::VectorXd rhs(k + na);
        rhs.head(k) = -d_red;
        for (int a = 0; a < na; ++a) rhs(k + a) = h_red(active[static_cast<size_t>(a)]);
        const Eigen::VectorXd s = Eigen::FullPivLU<Eigen::MatrixXd>(kkt).solve(rhs);
        y = s.head(k);
        mu = s.tail(na);
    };

    bool refined = false;
    while (k > 0) {
        const int p = pick_entering();
        if (p < 0) {
            if (refined) break;  // primal feasible at a refined point => optimal
            refine_current();
            // A refined dual can come out negative when drift parked the
            // iterate on a row the true optimum has left; drop and redo.
            while (true) {
                int worst = -1;
                double worst_v = -1e-12;
                for (int a = 0; a < static_cast<int>(active.size()); ++a) {
                    if (mu(a) < worst_v) {
                        worst_v = mu(a);
                        worst = a;
                    }
                }
                if (worst < 0) break;
                if (++iters > max_iters) {
                    hit_limit = true;
                    break;
                }
                active.erase(active.begin() + worst);
                Eigen::VectorXd mu2(mu.size() - 1);
                for (int a = 0, w = 0; a < static_cast<int>(mu.size()); ++a)
                    if (a != worst) mu2(w++) = mu(a);
                mu = mu2;
                refine_current();
            }
            if (hit_limit) break;
            refined = true;
            continue;  // rescan every row against the refined point
        }
        refined = false;

        // Bring row p into the active set, trading against blocking duals.
        // Its multiplier accumulates across every partial step below; the
        // stored duals must always equal the implicit stationarity weights
        // or later drop tests fire at the wrong time.
        double mu_p = 0.0;
        while (true) {
            if (++iters > max_iters) {
                hit_limit = true;
                break;
            }
            const int na = static_cast<int>(active.size());
            Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(k + na, k + na);
            kkt.topLeftCorner(k, k) = p_red;
            for (int a = 0; a < na; ++a) {
                kkt.block(0, k + a, k, 1) = g_red.row(active[static_cast<size_t>(a)]).transpose();
                kkt.block(k + a, 0, 1, k) = g_red.row(active[static_cast<size_t>(a)]);
            }
            Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k + na);
            rhs.head(k) = -g_red.row(p).transpose();
            Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
            const Eigen::VectorXd step = lu.solve(rhs);
            const Eigen::VectorXd dy = step.head(k);
            const Eigen::VectorXd dmu = step.tail(na);

            const double curvature = -g_red.row(p).dot(dy);  // = dy'P dy >= 0
            const double viol = g_red.row(p).dot(y) - h_red(p);

            double t_full = kInf;
            if (curvature > 1e-14) t_full = viol / curvature;

            double t_block = kInf;
            int block_at = -1;
            for (int a = 0; a < na; ++a) {
                if (dmu(a) < -1e-14) {
                    const double t = -mu(a) / dmu(a);
                    if (t < t_block - 1e-15) {
                        t_block = t;
                        block_at = a;
                    }
                }
            }

            const double t = std::min(t_full, t_block);
            if (t == kInf) {
                // No curvature and no dual to trade: row p contradicts the
                // active rows (plus equalities).
                sol.status = QpStatus::infeasible;
                sol.conflict_rows.push_back(p);
                for (int a : active) sol.conflict_rows.push_back(a);
                sol.x = red.x_part + red.z * y;
                sol.iterations = iters;
                return sol;
            }

            y += t * dy;
            for (int a = 0; a < na; ++a) mu(a) += t * dmu(a);
            mu_p += t;

            if (t_full <= t_block) {
                active.push_back(p);
                Eigen::VectorXd mu2(na + 1);
                mu2.head(na) = mu;
                mu2(na) = mu_p;
                mu = mu2;
                break;  // row p is tight and dual-feasible
            }
            // Drop the blocking row and keep working on p.
            active.erase(active.begin() + block_at);
            Eigen::VectorXd mu2(na - 1);
            for (int a = 0, w = 0; a < na; ++a)
                if (a != block_at) mu2(w++) = mu(a);
            mu = mu2;
        }
        if (hit_limit) break;
    }

    sol.x = red.x_part + red.z * y;
    sol.iterations = iters;
    sol.active_set = active;
    sol.status = hit_limit ? QpStatus::iteration_limit : QpStatus::optimal;
    sol.objective = 0.5 * sol.x.dot(prog.Q * sol.x) + prog.c.dot(sol.x);

    // Scatter inequality duals back to their reporting slots.
    for (size_t a = 0; a < active.size(); ++a) {
        const int r = active[a];
        const double v = mu(static_cast<int>(a));
        if (sys.user_row[static_cast<size_t>(r)] >= 0)
            sol.in_duals(sys.user_row[static_cast<size_t>(r)]) = v;
        else if (sys.hi_var[static_cast<size_t>(r)] >= 0)
            sol.hi_duals(sys.hi_var[static_cast<size_t>(r)]) = v;
        else
            sol.lo_duals(sys.lo_var[static_cast<size_t>(r)]) = v;
    }

    // Equality duals from stationarity restricted to range(a_eq').
    if (prog.a_eq.rows() > 0) {
        Eigen::VectorXd grad = prog.Q * sol.x + prog.c;
        grad += prog.a_in.transpose() * sol.in_duals;
        grad += sol.hi_duals;
        grad -= sol.lo_duals;
        sol.eq_duals = prog.a_eq.transpose().colPivHouseholderQr().solve(-grad);
    }
    return sol;
}

KktResiduals kkt_residuals(const QuadProgram& prog, const QpSolution& sol) {
    KktResiduals res;
    const int n = prog.dim();
    Eigen::VectorXd grad = prog.Q * sol.x + prog.c;
    if (prog.a_eq.rows() > 0) grad += prog.a_eq.transpose() * sol.eq_duals;
    if (prog.a_in.rows() > 0) grad += prog.a_in.transpose() * sol.in_duals;
    grad += sol.hi_duals;
    grad -= sol.lo_duals;
    res.stationarity = grad.lpNorm<Eigen::Infinity>();

    double feas = 0.0;
    if (prog.a_eq.rows() > 0)
        feas = std::max(feas, (prog.a_eq * sol.x - prog.b_eq).lpNorm<Eigen::Infinity>());
    double comp = 0.0;
    for (int i = 0; i < prog.a_in.rows(); ++i) {
        const double slack = prog.b_in(i) - prog.a_in.row(i).dot(sol.x);
        feas = std::max(feas, -slack);
        comp = std::max(comp, std::abs(sol.in_duals(i) * slack));
        feas = std::max(feas, -sol.in_duals(i));  // dual feasibility
    }
    for (int j = 0; j < n; ++j) {
        if (prog.hi(j) < kInf) {
            const double slack = prog.hi(j) - sol.x(j);
            feas = std::max(feas, -slack);
            comp = std::max(comp, std::abs(sol.hi_duals(j) * slack));
        }
        if (prog.lo(j) > -kInf) {
            const double slack = sol.x(j) - prog.lo(j);
            feas = std::max(feas, -slack);
            comp = std::max(comp, std::abs(sol.lo_duals(j) * slack));
        }
    }
    res.feasibility = feas;
    res.complementarity = comp;
    return res;
}

}  // namespace dopf::qp
