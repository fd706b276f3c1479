#pragma once

#include <Eigen/Dense>
#include <limits>
#include <vector>

namespace dopf::qp {

// min 0.5 x'Qx + c'x  s.t.  a_eq x = b_eq, a_in x <= b_in, lo <= x <= hi.
// Q must be symmetric positive semidefinite; a tiny diagonal shift is
// applied internally so semidefinite inputs stay solvable.
struct QuadProgram {
    Eigen::MatrixXd Q;
    Eigen::VectorXd c;
    Eigen::MatrixXd a_eq;  // may have 0 rows
    Eigen::VectorXd b_eq;
    Eigen::MatrixXd a_in;  // may have 0 rows
    Eigen::VectorXd b_in;
    Eigen::VectorXd lo;    // -inf when absent
    Eigen::VectorXd hi;    // +inf when absent

    static QuadProgram sized(int n) {
        QuadProgram p;
        p.Q = Eigen::MatrixXd::Zero(n, n);
        p.c = Eigen::VectorXd::Zero(n);
        p.a_eq = Eigen::MatrixXd::Zero(0, n);
        p.b_eq = Eigen::VectorXd::Zero(0);
        p.a_in = Eigen::MatrixXd::Zero(0, n);
        p.b_in = Eigen::VectorXd::Zero(0);
        p.lo = Eigen::VectorXd::Constant(n, -std::numeric_limits<double>::infinity());
        p.hi = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
        return p;
    }
    int dim() const { return static_cast<int>(Q.rows()); }
};

enum class QpStatus { optimal, infeasible, iteration_limit };

struct QpSolution {
    QpStatus status = QpStatus::infeasible;
    Eigen::VectorXd x;
    double objective = 0.0;
    Eigen::VectorXd eq_duals;    // one per equality row
    Eigen::VectorXd in_duals;    // one per user inequality row, >= 0
    Eigen::VectorXd lo_duals;    // one per variable, >= 0
    Eigen::VectorXd hi_duals;    // one per variable, >= 0
    int iterations = 0;
    // Active internal inequality rows at exit (user rows first, then hi
    // bounds, then lo bounds). Reusable as a warm start.
    std::vector<int> active_set;
    // On infeasible exit: internal rows proven mutually unsatisfiable,
    // when the failure is localized to a constraint subset.
    std::vector<int> conflict_rows;
};

struct QpOptions {
    // Hard cap on active-set changes is iter_factor * max(1, dim).
    int iter_factor = 50;
    // A row counts as violated beyond this absolute slack.
    double feas_tol = 1e-10;
    // Internal inequality rows tried first while they are violated.
    std::vector<int> warm_active;
};

// Dual active-set method. Equalities are removed by a nullspace
// reduction first; inconsistent equalities report infeasible. The
// entering rule scans violations in row order and picks the largest
// (ties keep the lowest index), so runs are deterministic.
QpSolution solve_qp(const QuadProgram& prog, const QpOptions& opts = {});

struct KktResiduals {
    double stationarity = 0.0;   // |Qx + c + A'l + G'm| inf-norm
    double feasibility = 0.0;    // largest constraint violation
    double complementarity = 0.0;// largest |m_i * slack_i|
    double max() const;
};

// Residuals of a solution against its program; used by tests and by the
// solvers' internal self-checks.
KktResiduals kkt_residuals(const QuadProgram& prog, const QpSolution& sol);

}  // namespace dopf::qp
