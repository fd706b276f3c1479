#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dopf/distflow.hpp"
#include "dopf/netmodel.hpp"
#include "dopf/policies.hpp"
#include "dopf/uncertainty.hpp"

namespace dopf::opf {

enum class SolveStatus { optimal, infeasible, iteration_limit, not_converged };

struct OpfSolution {
    SolveStatus status = SolveStatus::infeasible;
    distflow::PowerFlowState state;
    distflow::InjectionSet injections;  // PV active fixed at forecast, reactive solved
    double losses = 0.0;                // pu, from the loss objective
    // When infeasible and the failure is localized: human-readable
    // descriptions of a mutually unsatisfiable constraint subset.
    std::vector<std::string> infeasible_rows;
};

// Loss-minimizing reactive dispatch on the linearized branch-flow model.
// Decision variables are per-PV reactive outputs, all edge flows and all
// squared voltage magnitudes; PV active output is pined at its forecast.
// Without a model the inverter cap is the rating disc sqrt(s^2 - p_ref^2);
// with a model the cap is the chance-tightened power-factor coupling
// cospf * (mu - quantile(1-eps) * sigma), applied to the net output
// q_i (identical rows to the decentralized solver's).
OpfSolution solve_centralized(const netmodel::RadialNetwork& net,
                              const std::vector<policies::InverterSpec>& specs,
                              const std::optional<uncertainty::UncertaintyModel>& model);

// Copies of the specs with q_ref / flow_refs taken from the optimum, for
// driving the local control policies. Throws ValidationError unless the
// solution is optimal.
std::vector<policies::InverterSpec> reference_setpoints(
    const OpfSolution& sol, const netmodel::RadialNetwork& net,
    const std::vector<policies::InverterSpec>& specs);

}  // namespace dopf::opf
