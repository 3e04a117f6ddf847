#include "fragnn/fragdag.hpp"

#include <algorithm>
#include <bit>
#include <functional>
#include <sstream>
#include <tuple>

#include "json.hpp"

namespace fragnn {

std::vector<Mask> FragDag::node_ids() const {
    std::vector<Mask> ids;
    ids.reserve(nodes.size());
    for (const auto& [m, n] : nodes) ids.push_back(m);
    return ids;
}

namespace {

using EdgeSet = uint64_t;  // bitset over skeleton bond indices

struct BondEnds { int u, v; };

// Connected component of `start` within `mask` using only edges in `edges`.
// Returns (component mask, component edge set).
std::pair<Mask, EdgeSet> bfs_component(int start, Mask mask, EdgeSet edges,
                                       const std::vector<BondEnds>& bonds,
                                       const std::vector<std::vector<int>>& incident) {
    Mask comp = 0;
    std::vector<int> stack{start};
    comp |= Mask(1) << start;
    while (!stack.empty()) {
        int a = stack.back();
        stack.pop_back();
        for (int bi : incident[a]) {
            if (!(edges & (EdgeSet(1) << bi))) continue;
            int other = bonds[bi].u == a ? bonds[bi].v : bonds[bi].u;
            if (!(mask & (Mask(1) << other))) continue;
            if (!(comp & (Mask(1) << other))) {
                comp |= Mask(1) << other;
                stack.push_back(other);
            }
        }
    }
    EdgeSet comp_edges = 0;
    for (int bi = 0; bi < static_cast<int>(bonds.size()); ++bi) {
        if (!(edges & (EdgeSet(1) << bi))) continue;
        if ((comp & (Mask(1) << bonds[bi].u)) && (comp & (Mask(1) << bonds[bi].v)))
            comp_edges |= EdgeSet(1) << bi;
    }
    return {comp, comp_edges};
}

}  // namespace

FragDag rec_frag(const MolGraph& skeleton, int d, size_t node_cap) {
    skeleton.validate();
    int n = skeleton.num_atoms();
    if (n == 0) throw ValidationError("empty skeleton");
    if (n > 63) throw ValidationError("skeleton too large for bitmask representation");
    if (skeleton.num_bonds() > 63) throw ValidationError("too many bonds for edge bitset");
    if (d < 1) throw ValidationError("fragmentation depth must be >= 1");

    std::vector<BondEnds> bonds;
    std::vector<std::vector<int>> incident(n);
    for (int i = 0; i < skeleton.num_bonds(); ++i) {
        bonds.push_back({skeleton.bonds[i].a, skeleton.bonds[i].b});
        incident[skeleton.bonds[i].a].push_back(i);
        incident[skeleton.bonds[i].b].push_back(i);
    }

    FragDag dag;
    dag.depth = d;
    dag.root = (n == 63) ? ~Mask(0) >> 1 : (Mask(1) << n) - 1;

    auto make_node = [&](Mask mask) -> FragNode& {
        auto it = dag.nodes.find(mask);
        if (it != dag.nodes.end()) return it->second;
        if (dag.nodes.size() >= node_cap)
            throw ValidationError("fragmentation DAG exceeds node cap (" +
                                  std::to_string(node_cap) + ")");
        FragNode node;
        node.mask = mask;
        for (int a = 0; a < n; ++a) {
            if (mask & (Mask(1) << a)) {
                node.formula.add(skeleton.atoms[a].element, 1);
                node.h_attached += skeleton.atoms[a].implicit_h;
                ++node.num_heavy;
            }
        }
        return dag.nodes.emplace(mask, std::move(node)).first->second;
    };

    FragNode& root = make_node(dag.root);
    root.depth_set.insert(1);

    EdgeSet all_edges = bonds.empty() ? 0 : (EdgeSet(1) << bonds.size()) - 1;

    // Each (mask, remaining edges, depth) state is expanded at most once.
    std::set<std::tuple<Mask, EdgeSet, int>> expanded;
    std::function<void(Mask, EdgeSet, int)> expand = [&](Mask mask, EdgeSet edges, int dp) {
        if (dp > d) return;
        if (!expanded.insert({mask, edges, dp}).second) return;
        for (int bi = 0; bi < static_cast<int>(bonds.size()); ++bi) {
            if (!(edges & (EdgeSet(1) << bi))) continue;
            EdgeSet rest = edges & ~(EdgeSet(1) << bi);
            for (int endpoint : {bonds[bi].u, bonds[bi].v}) {
                auto [cmask, cedges] = bfs_component(endpoint, mask, rest, bonds, incident);
                if (cmask == mask) {
                    // ring bond: same node, no self-edge; recurse on the
                    // ring-opened edge set at the next depth level
                    expand(mask, rest, dp + 1);
                } else {
                    FragNode& child = make_node(cmask);
                    child.depth_set.insert(dp + 1);
                    dag.edges.insert({mask, cmask});
                    expand(cmask, cedges, dp + 1);
                }
            }
        }
    };
    expand(dag.root, all_edges, 1);
    return dag;
}

std::set<Mask> exhaustive_oracle(const MolGraph& skeleton) {
    int n = skeleton.num_atoms();
    if (n > 12) throw ValidationError("exhaustive oracle limited to 12 heavy atoms");
    std::vector<BondEnds> bonds;
    std::vector<std::vector<int>> incident(n);
    for (int i = 0; i < skeleton.num_bonds(); ++i) {
        bonds.push_back({skeleton.bonds[i].a, skeleton.bonds[i].b});
        incident[skeleton.bonds[i].a].push_back(i);
        incident[skeleton.bonds[i].b].push_back(i);
    }
    EdgeSet all_edges = bonds.empty() ? 0 : (EdgeSet(1) << bonds.size()) - 1;
    std::set<Mask> out;
    for (Mask mask = 1; mask < (Mask(1) << n); ++mask) {
        int start = std::countr_zero(mask);
        auto [comp, ce] = bfs_component(start, mask, all_edges, bonds, incident);
        if (comp == mask) out.insert(mask);
    }
    return out;
}

std::vector<int> valid_hydrogen_offsets(const FragNode& node, int j) {
    if (j < 0) throw ValidationError("hydrogen tolerance must be >= 0");
    std::vector<int> out;
    int hmax = 2 * node.num_heavy + 2;
    for (int i = -j; i <= j; ++i) {
        int h = node.h_attached + i;
        if (h >= 0 && h <= hmax) out.push_back(i);
    }
    return out;
}

Formula offset_formula(const FragNode& node, int offset) {
    Formula f = node.formula;
    f.add(Elem::H, node.h_attached + offset);
    return f;
}

std::vector<double> mass_set(const FragDag& dag, int j, AdductMode mode,
                             const ElementTable& table) {
    std::vector<double> masses;
    for (const auto& [mask, node] : dag.nodes)
        for (int off : valid_hydrogen_offsets(node, j))
            masses.push_back(formula_mass(offset_formula(node, off), mode, table));
    std::sort(masses.begin(), masses.end());
    masses.erase(std::unique(masses.begin(), masses.end()), masses.end());
    return masses;
}

// ---------------------------------------------------------------------------
// Isomorphism classes via Weisfeiler-Lehman refinement

namespace {

uint64_t hash_mix(uint64_t h, uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return h;
}

uint64_t wl_hash_subgraph(const MolGraph& skeleton, Mask mask) {
    std::vector<int> atoms;
    for (int a = 0; a < skeleton.num_atoms(); ++a)
        if (mask & (Mask(1) << a)) atoms.push_back(a);
    int k = static_cast<int>(atoms.size());
    std::vector<int> local(skeleton.num_atoms(), -1);
    for (int i = 0; i < k; ++i) local[atoms[i]] = i;

    std::vector<std::vector<std::pair<int, int>>> adj(k);  // (local neighbor, bond order)
    int edge_count = 0;
    for (const auto& b : skeleton.bonds) {
        int la = local[b.a], lb = local[b.b];
        if (la >= 0 && lb >= 0) {
            adj[la].push_back({lb, static_cast<int>(b.order)});
            adj[lb].push_back({la, static_cast<int>(b.order)});
            ++edge_count;
        }
    }

    std::vector<uint64_t> label(k), next(k);
    for (int i = 0; i < k; ++i)
        label[i] = hash_mix(0x5c4d, static_cast<uint64_t>(skeleton.atoms[atoms[i]].element));
    for (int iter = 0; iter < k; ++iter) {
        for (int i = 0; i < k; ++i) {
            std::vector<std::pair<int, uint64_t>> neigh;
            for (auto [v, order] : adj[i]) neigh.push_back({order, label[v]});
            std::sort(neigh.begin(), neigh.end());
            uint64_t h = hash_mix(0xa11ce, label[i]);
            for (auto [order, l] : neigh) h = hash_mix(hash_mix(h, order), l);
            next[i] = h;
        }
        label.swap(next);
    }
    std::sort(label.begin(), label.end());
    uint64_t h = hash_mix(0xf00d, static_cast<uint64_t>(k));
    h = hash_mix(h, static_cast<uint64_t>(edge_count));
    for (uint64_t l : label) h = hash_mix(h, l);
    return h;
}

}  // namespace

void assign_iso_classes(FragDag& dag, const MolGraph& skeleton) {
    std::map<uint64_t, int> class_of_hash;
    // nodes iterate in ascending mask order, so the first member of each
    // class (the representative) has the lowest node id
    for (auto& [mask, node] : dag.nodes) {
        uint64_t h = wl_hash_subgraph(skeleton, mask);
        auto it = class_of_hash.find(h);
        if (it == class_of_hash.end()) {
            int id = static_cast<int>(class_of_hash.size());
            class_of_hash.emplace(h, id);
            node.iso_class = id;
        } else {
            node.iso_class = it->second;
        }
    }
}

bool subgraphs_isomorphic(const MolGraph& skeleton, Mask a, Mask b) {
    auto collect = [&](Mask m) {
        std::vector<int> atoms;
        for (int i = 0; i < skeleton.num_atoms(); ++i)
            if (m & (Mask(1) << i)) atoms.push_back(i);
        return atoms;
    };
    std::vector<int> aa = collect(a), bb = collect(b);
    if (aa.size() != bb.size()) return false;
    if (aa.size() > 8) throw ValidationError("brute-force isomorphism limited to 8 atoms");
    int k = static_cast<int>(aa.size());

    auto build = [&](const std::vector<int>& atoms) {
        std::vector<int> local(skeleton.num_atoms(), -1);
        for (int i = 0; i < k; ++i) local[atoms[i]] = i;
        std::vector<std::vector<int>> m(k, std::vector<int>(k, 0));
        for (const auto& bond : skeleton.bonds) {
            int u = local[bond.a], v = local[bond.b];
            if (u >= 0 && v >= 0) m[u][v] = m[v][u] = static_cast<int>(bond.order) + 1;
        }
        return m;
    };
    auto ma = build(aa), mb = build(bb);

    std::vector<int> perm(k);
    for (int i = 0; i < k; ++i) perm[i] = i;
    do {
        bool ok = true;
        for (int i = 0; i < k && ok; ++i) {
            if (skeleton.atoms[aa[i]].element != skeleton.atoms[bb[perm[i]]].element) ok = false;
            for (int jx = i + 1; jx < k && ok; ++jx)
                if (ma[i][jx] != mb[perm[i]][perm[jx]]) ok = false;
        }
        if (ok) return true;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return false;
}

std::string dag_to_jsonl(const FragDag& dag) {
    std::ostringstream out;
    for (const auto& [mask, node] : dag.nodes) {
        nlohmann::json j;
        j["node_id"] = mask;
        std::ostringstream hex;
        hex << std::hex << mask;
        j["mask_hex"] = hex.str();
        j["formula"] = node.formula.str();
        j["h"] = node.h_attached;
        j["depths"] = std::vector<int>(node.depth_set.begin(), node.depth_set.end());
        j["iso_class"] = node.iso_class;
        out << j.dump() << "\n";
    }
    for (const auto& [p, c] : dag.edges)
        out << nlohmann::json::array({p, c}).dump() << "\n";
    return out.str();
}

}  // namespace fragnn
