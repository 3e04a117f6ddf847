#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fragnn/molio.hpp"

namespace fragnn {

using Mask = uint64_t;  // heavy-atom bitmask; also the node id

struct FragNode {
    Mask mask = 0;
    Formula formula;       // heavy atoms only, no hydrogen
    int h_attached = 0;    // hydrogens bound to the subgraph in the parent molecule
    std::set<int> depth_set;
    int iso_class = -1;
    int num_heavy = 0;
};

struct FragDag {
    std::map<Mask, FragNode> nodes;        // keyed by mask == node id
    std::set<std::pair<Mask, Mask>> edges; // parent -> child, strict subset
    Mask root = 0;
    int depth = 0;
    int hydrogen_tol = 0;

    int num_nodes() const { return static_cast<int>(nodes.size()); }
    int num_edges() const { return static_cast<int>(edges.size()); }
    std::vector<Mask> node_ids() const;  // ascending
};

// Recursive bond-removal enumeration of connected heavy-atom subgraphs up to
// depth d. Breaking a ring bond keeps the same node but consumes a depth
// level; the would-be self-edge is suppressed.
FragDag rec_frag(const MolGraph& skeleton, int d, size_t node_cap = 200000);

// Brute force over all 2^n masks; skeleton limited to 12 heavy atoms.
std::set<Mask> exhaustive_oracle(const MolGraph& skeleton);

// Valid hydrogen offsets i in [-j, j]: h+i >= 0 and h+i <= 2*heavy+2.
std::vector<int> valid_hydrogen_offsets(const FragNode& node, int j);

// Total formula (heavy + adjusted hydrogens) for a given offset.
Formula offset_formula(const FragNode& node, int offset);

std::vector<double> mass_set(const FragDag& dag, int j, AdductMode mode,
                             const ElementTable& table = ElementTable::builtin());

// Weisfeiler-Lehman classes over induced labeled subgraphs; writes iso_class
// into each node. Class ids are dense, representative is the lowest mask.
void assign_iso_classes(FragDag& dag, const MolGraph& skeleton);

// Brute-force labeled isomorphism between two induced subgraphs (<= 8 atoms).
bool subgraphs_isomorphic(const MolGraph& skeleton, Mask a, Mask b);

// Debug/golden dump: JSONL nodes then edges.
std::string dag_to_jsonl(const FragDag& dag);

}  // namespace fragnn
