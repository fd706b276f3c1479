#include "dopf/fleet.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "dopf/errors.hpp"

namespace dopf::fleet {

namespace {

double parse_num(const std::string& value, const std::string& key, int line_no) {
    try {
        size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size())
            throw ParseError("trailing characters in value for '" + key + "'", line_no);
        return v;
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception&) {
        throw ParseError("bad numeric value '" + value + "' for '" + key + "'", line_no);
    }
}

}  // namespace

std::vector<PvUnit> parse_pv_config(const std::string& text) {
    std::vector<PvUnit> units;
    std::set<int> seen;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream row(line);
        std::string head;
        if (!(row >> head)) continue;
        if (head != "pv") throw ParseError("unknown directive '" + head + "'", line_no);

        PvUnit unit;
        bool have_node = false, have_s = false, have_p = false;
        std::string tok;
        while (row >> tok) {
            const size_t eq = tok.find('=');
            if (eq == std::string::npos)
                throw ParseError("expected key=value, got '" + tok + "'", line_no);
            const std::string key = tok.substr(0, eq);
            const std::string val = tok.substr(eq + 1);
            const double num = parse_num(val, key, line_no);
            if (key == "node") {
                unit.node = static_cast<int>(num);
                if (unit.node <= 0 || num != unit.node)
                    throw ParseError("node must be a positive integer", line_no);
                have_node = true;
            } else if (key == "s_mva") {
                unit.s_mva = num;
                have_s = true;
            } else if (key == "p_mw") {
                unit.p_mw = num;
                have_p = true;
            } else if (key == "sigma_frac") {
                unit.sigma_frac = num;
            } else if (key == "sigma_mw") {
                unit.sigma_mw = num;
            } else if (key == "cospf") {
                unit.cospf = num;
            } else if (key == "lo_frac") {
                unit.lo_frac = num;
            } else if (key == "hi_frac") {
                unit.hi_frac = num;
            } else if (key == "kq") {
                unit.kq = num;
            } else if (key == "kp") {
                unit.kp = num;
            } else if (key == "headroom_mw") {
                unit.headroom_mw = num;
            } else {
                throw ParseError("unknown key '" + key + "'", line_no);
            }
        }
        if (!have_node || !have_s || !have_p)
            throw ParseError("pv line needs node=, s_mva= and p_mw=", line_no);
        if (unit.s_mva <= 0 || unit.p_mw < 0 || unit.p_mw > unit.s_mva)
            throw ParseError("need 0 <= p_mw <= s_mva and s_mva > 0", line_no);
        if (unit.cospf <= 0 || unit.cospf > 1)
            throw ParseError("cospf must lie in (0, 1]", line_no);
        if (unit.sigma() < 0) throw ParseError("sigma must be >= 0", line_no);
        if (unit.lo_frac > 1.0 || unit.hi_frac < 1.0)
            throw ParseError("forecast range must contain the mean (lo_frac <= 1 <= hi_frac)",
                             line_no);
        if (unit.kq < 0 || unit.kp < 0)
            throw ParseError("droop gains must be >= 0", line_no);
        if (unit.headroom_mw < 0) throw ParseError("headroom_mw must be >= 0", line_no);
        if (!seen.insert(unit.node).second)
            throw ParseError("duplicate pv entry for node " + std::to_string(unit.node),
                             line_no);
        units.push_back(unit);
    }
    std::sort(units.begin(), units.end(),
              [](const PvUnit& a, const PvUnit& b) { return a.node < b.node; });
    return units;
}

std::vector<PvUnit> parse_pv_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open pv config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_pv_config(buf.str());
}

std::string serialize_pv_config(const std::vector<PvUnit>& units) {
    std::ostringstream out;
    char buf[512];
    for (const PvUnit& u : units) {
        std::snprintf(buf, sizeof(buf),
                      "pv node=%d s_mva=%.17g p_mw=%.17g sigma_frac=%.17g cospf=%.17g "
                      "lo_frac=%.17g hi_frac=%.17g kq=%.17g kp=%.17g headroom_mw=%.17g",
                      u.node, u.s_mva, u.p_mw, u.sigma_frac, u.cospf, u.lo_frac, u.hi_frac,
                      u.kq, u.kp, u.headroom_mw);
        out << buf;
        if (u.sigma_mw >= 0) {
            std::snprintf(buf, sizeof(buf), " sigma_mw=%.17g", u.sigma_mw);
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace dopf::fleet
