#pragma once

#include <string>
#include <vector>

namespace dopf::fleet {

// One PV inverter as described by a fleet config file. Physical units
// (MW / MVA / MVAr); conversion to per-unit happens against a case base.
struct PvUnit {
    int node = 0;
    double s_mva = 0.0;        // apparent power rating
    double p_mw = 0.0;         // forecast mean active output
    double sigma_frac = 0.10;  // stddev as a fraction of p_mw
    double sigma_mw = -1.0;    // explicit stddev override when >= 0
    double cospf = 0.95;       // power-factor coupling coefficient
    double lo_frac = 0.7;      // forecast range lower bound, fraction of p_mw
    double hi_frac = 1.3;      // forecast range upper bound, fraction of p_mw
    double kq = 0.0;           // reactive flow droop gain
    double kp = 0.0;           // active flow droop gain
    double headroom_mw = 0.0;  // active power available above p_mw

    double sigma() const { return sigma_mw >= 0.0 ? sigma_mw : sigma_frac * p_mw; }
};

// Line-oriented key-value format: each "pv" line declares one unit,
//   pv node=5 s_mva=0.5 p_mw=0.3 sigma_frac=0.10 cospf=0.95 ...
// '#' starts a comment; blank lines are skipped.
std::vector<PvUnit> parse_pv_config(const std::string& text);
std::vector<PvUnit> parse_pv_config_file(const std::string& path);

std::string serialize_pv_config(const std::vector<PvUnit>& units);

}  // namespace dopf::fleet
