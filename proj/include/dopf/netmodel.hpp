#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dopf::netmodel {

// All quantities are per unit on the network's MVA base unless a field
// name says otherwise. Bus ids are 1..N with the root among them.

struct Bus {
    int id = 0;
    double load_p = 0.0;   // active demand, pu
    double load_q = 0.0;   // reactive demand, pu
    double v_nom = 1.0;    // nominal voltage magnitude, pu
    double v_min = 0.9;    // lower band on |v|, pu
    double v_max = 1.1;    // upper band on |v|, pu
    double base_kv = 0.0;  // informational
};

// Directed parent -> child after orientation.
struct Branch {
    int from = 0;
    int to = 0;
    double r = 0.0;  // pu
    double x = 0.0;  // pu
};

struct ValidationReport {
    bool ok = false;
    std::vector<std::string> problems;
};

// Radial feeder: a rooted tree with every branch oriented away from the
// root. Immutable once built; all mutating paths go through build().
class RadialNetwork {
public:
    // Validates and orients the raw data. Throws ValidationError when the
    // in-service graph is not a tree spanning all buses, ids are not a
    // permutation of 1..N, impedances are negative, or a voltage band is
    // inverted.
    static RadialNetwork build(std::vector<Bus> buses,
                               std::vector<Branch> branches,
                               int root_id, double base_mva);

    int root() const { return root_id_; }
    double base_mva() const { return base_mva_; }
    int bus_count() const { return static_cast<int>(buses_.size()); }
    int branch_count() const { return static_cast<int>(branches_.size()); }

    const std::vector<Bus>& buses() const { return buses_; }
    const std::vector<Branch>& branches() const { return branches_; }

    const Bus& bus(int id) const { return buses_[static_cast<size_t>(id - 1)]; }

    // Parent bus id; root has none (returns 0).
    int parent(int id) const { return parent_[static_cast<size_t>(id - 1)]; }
    // Children in ascending id order.
    const std::vector<int>& children(int id) const {
        return children_[static_cast<size_t>(id - 1)];
    }
    // Index into branches() of the branch feeding `id`; -1 for the root.
    int parent_branch(int id) const { return parent_branch_[static_cast<size_t>(id - 1)]; }
    const Branch& branch(int idx) const { return branches_[static_cast<size_t>(idx)]; }

    // Buses such that every parent precedes all of its children; children
    // visited in ascending id order, so the order is deterministic.
    std::vector<int> subtree_order() const;

    // Leaf bus ids ascending.
    std::vector<int> leaves() const;

    // Buses on the unique root -> leaf path, root first.
    std::vector<int> path_from_root(int leaf) const;

private:
    RadialNetwork() = default;

    int root_id_ = 0;
    double base_mva_ = 0.0;
    std::vector<Bus> buses_;              // indexed by id-1
    std::vector<Branch> branches_;        // oriented, arbitrary stable order
    std::vector<int> parent_;             // by id-1, 0 for root
    std::vector<int> parent_branch_;      // by id-1, -1 for root
    std::vector<std::vector<int>> children_;
};

// Reads Matpower-style case text: function header, baseMVA scalar and
// bus/branch matrix blocks, '%' comments, ';' row terminators. Loads are
// converted from MW/MVAr to pu; branch impedances are taken as pu on the
// declared base. Out-of-service branches (status 0) are dropped and the
// remaining graph is oriented away from the reference-type bus.
// Vmax/Vmin entries of 0 fall back to 1.1/0.9. Throws ParseError with a
// line number on malformed text and ValidationError on structural
// problems.
RadialNetwork parse_case(const std::string& text);
RadialNetwork parse_case_file(const std::string& path);

// Line-oriented canonical dump and its inverse. serialize -> parse is an
// exact round trip for any built network.
std::string serialize_network(const RadialNetwork& net);
RadialNetwork parse_canonical(const std::string& text);

// Re-runs the structural checks on an already built network.
ValidationReport validate_radial(const RadialNetwork& net);

}  // namespace dopf::netmodel
