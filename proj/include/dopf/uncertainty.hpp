#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dopf/distflow.hpp"
#include "dopf/fleet.hpp"
#include "dopf/netmodel.hpp"

namespace dopf::uncertainty {

// Standard normal CDF, Phi(x) = 0.5 * erfc(-x / sqrt(2)).
double norm_cdf(double x);

// Standard normal quantile, absolute error <= 1e-8 on (0, 1).
// Rational initial guess refined by one Halley step against norm_cdf.
double inv_norm_cdf(double p);

// Margin of the Gaussian chance constraint P(coeff * xi <= bound) >= 1 - eps
// with xi ~ N(mu, sigma^2): bound - coeff*mu - quantile(1-eps)*|coeff|*sigma.
// The constraint holds iff the returned margin is >= 0.
double tighten_scalar(double coeff, double mu, double sigma, double bound, double epsilon);

// Per-PV-node Gaussian forecast description, all in per-unit.
struct UncertaintyModel {
    std::map<int, double> mean;         // forecast mean active output
    std::map<int, double> sigma;        // forecast stddev
    std::map<int, double> forecast_lo;  // physical range lower bound
    std::map<int, double> forecast_hi;  // physical range upper bound
    std::map<int, double> cospf;        // power-factor coupling coefficient
    double epsilon = 0.05;              // violation tolerance, in (0, 0.5]

    std::vector<int> nodes() const;
    double mean_at(int node) const;
    double sigma_at(int node) const;
    double cospf_at(int node) const;
};

// Builds the per-unit model from a physical-unit fleet description.
UncertaintyModel model_from_fleet(const std::vector<fleet::PvUnit>& units, double base_mva,
                                  double epsilon);

struct RangeCheckItem {
    int node = 0;
    bool ok = true;
    double hi_margin = 0.0;  // forecast_hi - (mu + quantile * sigma)
    double lo_margin = 0.0;  // (mu - quantile * sigma) - forecast_lo
};

// Verifies that mu_i +/- quantile(1-eps) * sigma_i stays inside the
// per-node forecast range.
std::vector<RangeCheckItem> forecast_range_check(const UncertaintyModel& model);

// Tightened symmetric cap on the inverter's net reactive output:
// cospf * (mu - quantile(1-eps) * sigma). May be negative when sigma is
// large relative to mu, which makes the coupled constraints infeasible.
double tightened_pf_cap(int node, const UncertaintyModel& model);

struct PfCouplingMargins {
    double margin_upper = 0.0;  // cap - d
    double margin_lower = 0.0;  // d + cap
    double cap = 0.0;           // tightened_pf_cap
};

// Margins of the two chance constraints coupling the inverter's net
// reactive output d = q_plus - q_minus + load_q to its uncertain active
// output. Both margins >= 0 iff both constraints hold.
PfCouplingMargins tighten_pf_coupling(int node, const UncertaintyModel& model,
                                      double q_plus, double q_minus, double load_q);

// Deterministic counter-based uniform in (0, 1): the value depends only
// on (seed, sample, stream), never on call order or thread layout.
double counter_u01(std::uint64_t seed, std::uint64_t sample, std::uint64_t stream);

// Empirical P(coeff * xi > bound) over n_samples Gaussian draws.
double mc_scalar_violation(double coeff, double mu, double sigma, double bound,
                           int n_samples, std::uint64_t seed);

struct ConstraintRate {
    std::string label;  // "pf_upper" | "pf_lower" | "range_hi" | "range_lo" | "voltage_band"
    int node = 0;
    double rate = 0.0;
    bool informational = false;  // voltage rows: reported, not chance-tightened
};

// Samples PV active outputs from the model, holds the solved reactive
// injections fixed, and reports per-constraint empirical violation rates.
// Deterministic given the seed and independent of the worker count.
std::vector<ConstraintRate> monte_carlo_violation(const netmodel::RadialNetwork& net,
                                                  const UncertaintyModel& model,
                                                  const distflow::InjectionSet& injections,
                                                  int n_samples, std::uint64_t seed,
                                                  int workers = 1);

}  // namespace dopf::uncertainty
