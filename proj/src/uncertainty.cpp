#include "dopf/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "dopf/errors.hpp"

namespace dopf::uncertainty {

namespace {

constexpr double kSqrt2Pi = 2.5066282746310002;

double norm_pdf(double x) { return std::exp(-0.5 * x * x) / kSqrt2Pi; }

// Rational approximation of the standard normal quantile (central
// region plus symmetric tail branches), accurate to ~1.15e-9 before
// refinement.
double quantile_guess(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - p_low) {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

std::uint64_t splitmix_finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double map_at(const std::map<int, double>& m, int node, const char* what) {
    const auto it = m.find(node);
    if (it == m.end())
        throw InputError(std::string("uncertainty model has no ") + what + " for node " +
                         std::to_string(node));
    return it->second;
}

}  // namespace

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double inv_norm_cdf(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw InputError("inv_norm_cdf requires a probability strictly inside (0, 1)");
    double x = quantile_guess(p);
    // One Halley step against the erfc-based CDF.
    const double e = norm_cdf(x) - p;
    const double u = e / norm_pdf(x);
    x -= u / (1.0 + 0.5 * x * u);
    return x;
}

double tighten_scalar(double coeff, double mu, double sigma, double bound, double epsilon) {
    if (sigma < 0) throw InputError("sigma must be >= 0");
    const double quant = (epsilon == 0.5) ? 0.0 : inv_norm_cdf(1.0 - epsilon);
    return bound - coeff * mu - quant * std::abs(coeff) * sigma;
}

std::vector<int> UncertaintyModel::nodes() const {
    std::vector<int> out;
    out.reserve(mean.size());
    for (const auto& [node, value] : mean) out.push_back(node);
    return out;
}

double UncertaintyModel::mean_at(int node) const { return map_at(mean, node, "mean"); }
double UncertaintyModel::sigma_at(int node) const { return map_at(sigma, node, "sigma"); }
double UncertaintyModel::cospf_at(int node) const { return map_at(cospf, node, "cospf"); }

UncertaintyModel model_from_fleet(const std::vector<fleet::PvUnit>& units, double base_mva,
                                  double epsilon) {
    if (base_mva <= 0) throw InputError("base_mva must be positive");
    if (!(epsilon > 0.0 && epsilon <= 0.5))
        throw InputError("epsilon must lie in (0, 0.5]");
    UncertaintyModel model;
    model.epsilon = epsilon;
    for (const fleet::PvUnit& u : units) {
        model.mean[u.node] = u.p_mw / base_mva;
        model.sigma[u.node] = u.sigma() / base_mva;
        model.forecast_lo[u.node] = u.lo_frac * u.p_mw / base_mva;
        model.forecast_hi[u.node] = u.hi_frac * u.p_mw / base_mva;
        model.cospf[u.node] = u.cospf;
    }
    return model;
}

std::vector<RangeCheckItem> forecast_range_check(const UncertaintyModel& model) {
    const double quant = (model.epsilon == 0.5) ? 0.0 : inv_norm_cdf(1.0 - model.epsilon);
    std::vector<RangeCheckItem> out;
    for (const auto& [node, mu] : model.mean) {
        const double sg = model.sigma_at(node);
        RangeCheckItem item;
        item.node = node;
        item.hi_margin = map_at(model.forecast_hi, node, "forecast_hi") - (mu + quant * sg);
        item.lo_margin = (mu - quant * sg) - map_at(model.forecast_lo, node, "forecast_lo");
        item.ok = item.hi_margin >= 0.0 && item.lo_margin >= 0.0;
        out.push_back(item);
    }
    return out;
}

double tightened_pf_cap(int node, const UncertaintyModel& model) {
    const double quant = (model.epsilon == 0.5) ? 0.0 : inv_norm_cdf(1.0 - model.epsilon);
    const double pf = model.cospf_at(node);
    return pf * model.mean_at(node) - quant * pf * model.sigma_at(node);
}

PfCouplingMargins tighten_pf_coupling(int node, const UncertaintyModel& model,
                                      double q_plus, double q_minus, double load_q) {
    PfCouplingMargins m;
    m.cap = tightened_pf_cap(node, model);
    const double d = q_plus - q_minus + load_q;
    m.margin_upper = m.cap - d;
    m.margin_lower = d + m.cap;
    return m;
}

double counter_u01(std::uint64_t seed, std::uint64_t sample, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (sample + 1);
    z = splitmix_finalize(z);
    z += 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = splitmix_finalize(z);
    // 53 random bits plus a half-step keep the value strictly inside (0, 1).
    return (static_cast<double>(z >> 11) + 0.5) * 0x1.0p-53;
}

double mc_scalar_violation(double coeff, double mu, double sigma, double bound,
                           int n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw InputError("n_samples must be >= 1");
    long long hits = 0;
    for (int s = 0; s < n_samples; ++s) {
        const double xi =
            mu + sigma * inv_norm_cdf(counter_u01(seed, static_cast<std::uint64_t>(s), 0));
        if (coeff * xi > bound) ++hits;
    }
    return static_cast<double>(hits) / n_samples;
}

std::vector<ConstraintRate> monte_carlo_violation(const netmodel::RadialNetwork& net,
                                                  const UncertaintyModel& model,
                                                  const distflow::InjectionSet& injections,
                                                  int n_samples, std::uint64_t seed,
                                                  int workers) {
    if (n_samples < 1) throw InputError("n_samples must be >= 1");
    if (workers < 1) workers = 1;
    const std::vector<int> pv = model.nodes();
    const int n_pv = static_cast<int>(pv.size());
    const int n_bus = net.bus_count();

    // Violation counters: 4 chance rows per PV node, then one voltage-band
    // row per bus (informational).
    const int n_rows = 4 * n_pv + n_bus;
    std::vector<std::vector<long long>> counts(
        static_cast<size_t>(workers), std::vector<long long>(static_cast<size_t>(n_rows), 0));

    auto run_chunk = [&](int worker, int lo, int hi) {
        std::vector<long long>& c = counts[static_cast<size_t>(worker)];
        distflow::InjectionSet actual = injections;
        for (int s = lo; s < hi; ++s) {
            for (int k = 0; k < n_pv; ++k) {
                const int node = pv[static_cast<size_t>(k)];
                const double mu = model.mean_at(node);
                const double sg = model.sigma_at(node);
                const double p_act =
                    mu + sg * inv_norm_cdf(counter_u01(seed, static_cast<std::uint64_t>(s),
                                                       static_cast<std::uint64_t>(node)));
                actual.p[node] = p_act;
                const double d = injections.q_at(node);
                const double pf = model.cospf_at(node);
                if (d > pf * p_act) ++c[static_cast<size_t>(4 * k + 0)];
                if (-d > pf * p_act) ++c[static_cast<size_t>(4 * k + 1)];
                if (p_act > model.forecast_hi.at(node)) ++c[static_cast<size_t>(4 * k + 2)];
                if (p_act < model.forecast_lo.at(node)) ++c[static_cast<size_t>(4 * k + 3)];
            }
            const distflow::PowerFlowState state = distflow::solve_lindistflow(net, actual);
            for (int b = 1; b <= n_bus; ++b) {
                const netmodel::Bus& bus = net.bus(b);
                const double u = state.u_at(b);
                if (u < bus.v_min * bus.v_min - 1e-12 || u > bus.v_max * bus.v_max + 1e-12)
                    ++c[static_cast<size_t>(4 * n_pv + (b - 1))];
            }
        }
    };

    if (workers == 1) {
        run_chunk(0, 0, n_samples);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (n_samples + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const int lo = w * chunk;
            const int hi = std::min(n_samples, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(run_chunk, w, lo, hi);
        }
        for (std::thread& t : pool) t.join();
    }

    std::vector<long long> total(static_cast<size_t>(n_rows), 0);
    for (const auto& c : counts)
        for (int r = 0; r < n_rows; ++r) total[static_cast<size_t>(r)] += c[static_cast<size_t>(r)];

    std::vector<ConstraintRate> out;
    const char* labels[4] = {"pf_upper", "pf_lower", "range_hi", "range_lo"};
    for (int k = 0; k < n_pv; ++k) {
        for (int j = 0; j < 4; ++j) {
            ConstraintRate row;
            row.label = labels[static_cast<size_t>(j)];
            row.node = pv[static_cast<size_t>(k)];
            row.rate = static_cast<double>(total[static_cast<size_t>(4 * k + j)]) / n_samples;
            out.push_back(row);
        }
    }
    for (int b = 1; b <= n_bus; ++b) {
        ConstraintRate row;
        row.label = "voltage_band";
        row.node = b;
        row.rate =
            static_cast<double>(total[static_cast<size_t>(4 * n_pv + (b - 1))]) / n_samples;
        row.informational = true;
        out.push_back(row);
    }
    return out;
}

}  // namespace dopf::uncertainty
