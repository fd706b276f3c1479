#include "dopf/netmodel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dopf/errors.hpp"

namespace dopf::netmodel {

namespace {

struct RawBranch {
    int from = 0, to = 0;
    double r = 0.0, x = 0.0;
    bool in_service = true;
};

// One numeric matrix row; tracks the source line for error messages.
struct Row {
    std::vector<double> vals;
    int line = 0;
};

std::string strip_comment(const std::string& s) {
    auto pos = s.find('%');
    return pos == std::string::npos ? s : s.substr(0, pos);
}

bool parse_number(const std::string& tok, double& out) {
    try {
        size_t used = 0;
        out = std::stod(tok, &used);
        return used == tok.size();
    } catch (...) {
        return false;
    }
}

// Collects rows of "num num ... ;" until the closing "];".
std::vector<Row> read_matrix(std::istream& in, int& line_no, const std::string& block) {
    std::vector<Row> rows;
    std::string line;
    Row cur;
    while (std::getline(in, line)) {
        ++line_no;
        std::string body = strip_comment(line);
        bool closes = body.find("];") != std::string::npos;
        if (closes) body = body.substr(0, body.find("];"));
        std::istringstream ls(body);
        std::string tok;
        while (ls >> tok) {
            bool ends_row = false;
            if (!tok.empty() && tok.back() == ';') {
                tok.pop_back();
                ends_row = true;
            }
            if (!tok.empty()) {
                double v;
                if (!parse_number(tok, v))
                    throw ParseError("bad numeric token '" + tok + "' in " + block, line_no);
                cur.vals.push_back(v);
                cur.line = line_no;
            }
            if (ends_row && !cur.vals.empty()) {
                rows.push_back(cur);
                cur = Row{};
            }
        }
        if (closes) {
            if (!cur.vals.empty()) rows.push_back(cur);
            return rows;
        }
        // newline also ends a row when no ';' was used
        if (!cur.vals.empty()) {
            rows.push_back(cur);
            cur = Row{};
        }
    }
    throw ParseError("unterminated " + block + " block (missing '];')", line_no);
}

}  // namespace

RadialNetwork RadialNetwork::build(std::vector<Bus> buses,
                                   std::vector<Branch> branches,
                                   int root_id, double base_mva) {
    const int n = static_cast<int>(buses.size());
    if (n == 0) throw ValidationError("network has no buses");
    if (base_mva <= 0.0) throw ValidationError("base MVA must be positive");

    std::sort(buses.begin(), buses.end(), [](const Bus& a, const Bus& b) { return a.id < b.id; });
    for (int i = 0; i < n; ++i) {
        if (buses[static_cast<size_t>(i)].id != i + 1)
            throw ValidationError("bus ids must be the set 1..N (missing or duplicate id near " +
                                  std::to_string(i + 1) + ")");
    }
    if (root_id < 1 || root_id > n) throw ValidationError("root bus id not present");

    for (const Bus& b : buses) {
        if (!(b.v_min > 0.0) || !(b.v_min < b.v_nom) || !(b.v_nom <= b.v_max))
            throw ValidationError("bus " + std::to_string(b.id) +
                                  ": voltage band must satisfy 0 < v_min < v_nom <= v_max");
        if (b.load_p < 0.0 || b.load_q < 0.0)
            throw ValidationError("bus " + std::to_string(b.id) + ": negative load");
    }

    if (static_cast<int>(branches.size()) != n - 1)
        throw ValidationError("a radial network with " + std::to_string(n) + " buses needs " +
                              std::to_string(n - 1) + " in-service branches, got " +
                              std::to_string(branches.size()));

    std::set<std::pair<int, int>> seen;
    std::vector<std::vector<std::pair<int, int>>> adj(static_cast<size_t>(n) + 1);
    for (int bi = 0; bi < static_cast<int>(branches.size()); ++bi) {
        const Branch& br = branches[static_cast<size_t>(bi)];
        if (br.from < 1 || br.from > n || br.to < 1 || br.to > n)
            throw ValidationError("branch references unknown bus " +
                                  std::to_string(br.from) + "-" + std::to_string(br.to));
        if (br.from == br.to)
            throw ValidationError("self-loop at bus " + std::to_string(br.from));
        if (br.r < 0.0 || br.x < 0.0)
            throw ValidationError("branch " + std::to_string(br.from) + "-" +
                                  std::to_string(br.to) + ": negative impedance");
        auto key = std::minmax(br.from, br.to);
        if (!seen.insert(key).second)
            throw ValidationError("duplicate branch between " + std::to_string(key.first) +
                                  " and " + std::to_string(key.second));
        adj[static_cast<size_t>(br.from)].push_back({br.to, bi});
        adj[static_cast<size_t>(br.to)].push_back({br.from, bi});
    }

    // BFS from the root orients every branch parent -> child and proves
    // connectivity; with exactly N-1 edges that also rules out cycles.
    std::vector<int> parent(static_cast<size_t>(n), 0);
    std::vector<int> parent_branch(static_cast<size_t>(n), -1);
    std::vector<char> visited(static_cast<size_t>(n) + 1, 0);
    std::deque<int> queue{root_id};
    visited[static_cast<size_t>(root_id)] = 1;
    int reached = 1;
    while (!queue.empty()) {
        int u = queue.front();
        queue.pop_front();
        for (auto [v, bi] : adj[static_cast<size_t>(u)]) {
            if (visited[static_cast<size_t>(v)]) continue;
            visited[static_cast<size_t>(v)] = 1;
            ++reached;
            parent[static_cast<size_t>(v - 1)] = u;
            parent_branch[static_cast<size_t>(v - 1)] = bi;
            Branch& br = branches[static_cast<size_t>(bi)];
            if (br.from != u) std::swap(br.from, br.to);
            queue.push_back(v);
        }
    }
    if (reached != n)
        throw ValidationError("network is disconnected: only " + std::to_string(reached) +
                              " of " + std::to_string(n) + " buses reachable from the root");

    std::vector<std::vector<int>> children(static_cast<size_t>(n));
    for (const Branch& br : branches) children[static_cast<size_t>(br.from - 1)].push_back(br.to);
    for (auto& c : children) std::sort(c.begin(), c.end());

    RadialNetwork net;
    net.root_id_ = root_id;
    net.base_mva_ = base_mva;
    net.buses_ = std::move(buses);
    net.branches_ = std::move(branches);
    net.parent_ = std::move(parent);
    net.parent_branch_ = std::move(parent_branch);
    net.children_ = std::move(children);
    return net;
}

std::vector<int> RadialNetwork::subtree_order() const {
    std::vector<int> order;
    order.reserve(buses_.size());
    std::vector<int> stack{root_id_};
    while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        order.push_back(u);
        const auto& kids = children(u);
        for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
    }
    return order;
}

std::vector<int> RadialNetwork::leaves() const {
    std::vector<int> out;
    for (const Bus& b : buses_)
        if (children(b.id).empty()) out.push_back(b.id);
    return out;
}

std::vector<int> RadialNetwork::path_from_root(int leaf) const {
    if (leaf < 1 || leaf > bus_count())
        throw InputError("unknown bus id " + std::to_string(leaf));
    std::vector<int> path;
    for (int u = leaf; u != 0; u = parent(u)) path.push_back(u);
    std::reverse(path.begin(), path.end());
    return path;
}

RadialNetwork parse_case(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    double base_mva = 0.0;
    bool saw_base = false;
    std::vector<Row> bus_rows, branch_rows;

    while (std::getline(in, line)) {
        ++line_no;
        std::string body = strip_comment(line);
        if (body.find("baseMVA") != std::string::npos) {
            auto eq = body.find('=');
            if (eq == std::string::npos) throw ParseError("baseMVA line missing '='", line_no);
            std::string rhs = body.substr(eq + 1);
            rhs.erase(std::remove_if(rhs.begin(), rhs.end(),
                                     [](char c) { return c == ';' || std::isspace(static_cast<unsigned char>(c)); }),
                      rhs.end());
            if (!parse_number(rhs, base_mva))
                throw ParseError("bad baseMVA value '" + rhs + "'", line_no);
            saw_base = true;
        } else if (body.find("mpc.bus") != std::string::npos &&
                   body.find("mpc.bus_name") == std::string::npos &&
                   body.find('[') != std::string::npos) {
            bus_rows = read_matrix(in, line_no, "mpc.bus");
        } else if (body.find("mpc.branch") != std::string::npos &&
                   body.find('[') != std::string::npos) {
            branch_rows = read_matrix(in, line_no, "mpc.branch");
        }
        // gen, gencost and any other blocks are intentionally skipped
    }

    if (!saw_base) throw ParseError("no baseMVA declaration found");
    if (base_mva <= 0.0) throw ParseError("baseMVA must be positive");
    if (bus_rows.empty()) throw ParseError("no mpc.bus block found");
    if (branch_rows.empty()) throw ParseError("no mpc.branch block found");

    std::vector<Bus> buses;
    int root_id = 0;
    for (const Row& row : bus_rows) {
        if (row.vals.size() < 13)
            throw ParseError("bus row needs 13 columns, got " + std::to_string(row.vals.size()),
                             row.line);
        Bus b;
        b.id = static_cast<int>(row.vals[0]);
        int type = static_cast<int>(row.vals[1]);
        b.load_p = row.vals[2] / base_mva;
        b.load_q = row.vals[3] / base_mva;
        b.base_kv = row.vals[9];
        double vm = row.vals[7];
        b.v_nom = vm > 0.0 ? vm : 1.0;
        b.v_max = row.vals[11] > 0.0 ? row.vals[11] : 1.1;
        b.v_min = row.vals[12] > 0.0 ? row.vals[12] : 0.9;
        if (type == 3) {
            if (root_id != 0)
                throw ParseError("more than one reference-type bus (" + std::to_string(root_id) +
                                     " and " + std::to_string(b.id) + ")",
                                 row.line);
            root_id = b.id;
        }
        buses.push_back(b);
    }
    if (root_id == 0) throw ParseError("no reference-type (type 3) bus found");

    std::vector<Branch> branches;
    for (const Row& row : branch_rows) {
        if (row.vals.size() < 11)
            throw ParseError("branch row needs at least 11 columns, got " +
                                 std::to_string(row.vals.size()),
                             row.line);
        if (row.vals[10] == 0.0) continue;  // out of service
        Branch br;
        br.from = static_cast<int>(row.vals[0]);
        br.to = static_cast<int>(row.vals[1]);
        br.r = row.vals[2];
        br.x = row.vals[3];
        branches.push_back(br);
    }

    return RadialNetwork::build(std::move(buses), std::move(branches), root_id, base_mva);
}

RadialNetwork parse_case_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open case file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_case(ss.str());
}

std::string serialize_network(const RadialNetwork& net) {
    std::ostringstream out;
    out.precision(17);
    out << "radial v1 base_mva " << net.base_mva() << " root " << net.root() << "\n";
    for (const Bus& b : net.buses())
        out << "bus " << b.id << " " << b.load_p << " " << b.load_q << " " << b.v_nom << " "
            << b.v_min << " " << b.v_max << " " << b.base_kv << "\n";
    for (const Branch& br : net.branches())
        out << "branch " << br.from << " " << br.to << " " << br.r << " " << br.x << "\n";
    return out.str();
}

RadialNetwork parse_canonical(const std::string& text) {
    std::istringstream in(text);
    std::string kind;
    double base_mva = 0.0;
    int root_id = 0;
    std::string v1, key1, key2;
    if (!(in >> kind >> v1 >> key1 >> base_mva >> key2 >> root_id) || kind != "radial" ||
        v1 != "v1" || key1 != "base_mva" || key2 != "root")
        throw ParseError("bad canonical header", 1);
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    int line_no = 1;
    while (in >> kind) {
        ++line_no;
        if (kind == "bus") {
            Bus b;
            if (!(in >> b.id >> b.load_p >> b.load_q >> b.v_nom >> b.v_min >> b.v_max >> b.base_kv))
                throw ParseError("bad bus record", line_no);
            buses.push_back(b);
        } else if (kind == "branch") {
            Branch br;
            if (!(in >> br.from >> br.to >> br.r >> br.x))
                throw ParseError("bad branch record", line_no);
            branches.push_back(br);
        } else {
            throw ParseError("unknown record '" + kind + "'", line_no);
        }
    }
    return RadialNetwork::build(std::move(buses), std::move(branches), root_id, base_mva);
}

ValidationReport validate_radial(const RadialNetwork& net) {
    ValidationReport rep;
    try {
        RadialNetwork::build(net.buses(), net.branches(), net.root(), net.base_mva());
        rep.ok = true;
    } catch (const ValidationError& e) {
        rep.ok = false;
        rep.problems.push_back(e.what());
    }
    // Orientation invariant: every non-root bus is fed by exactly one branch.
    std::vector<int> fed(static_cast<size_t>(net.bus_count()) + 1, 0);
    for (const Branch& br : net.branches()) ++fed[static_cast<size_t>(br.to)];
    for (const Bus& b : net.buses()) {
        int expect = b.id == net.root() ? 0 : 1;
        if (fed[static_cast<size_t>(b.id)] != expect) {
            rep.ok = false;
            rep.problems.push_back("bus " + std::to_string(b.id) + " fed by " +
                                   std::to_string(fed[static_cast<size_t>(b.id)]) + " branches");
        }
    }
    return rep;
}

}  // namespace dopf::netmodel
