#include "fragnn/molio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fragnn {

namespace {

const char* kSymbols[12] = {"C", "O", "N", "P", "S", "F", "Cl", "Br", "I", "Se", "Si", "H"};

// Monoisotopic masses (Da) and default valences.
struct ElemDefault { double mass; int valence; };
const ElemDefault kDefaults[12] = {
    {12.0, 4},             // C
    {15.9949146196, 2},    // O
    {14.0030740048, 3},    // N
    {30.97376163, 3},      // P
    {31.97207100, 2},      // S
    {18.99840322, 1},      // F
    {34.96885268, 1},      // Cl
    {78.9183371, 1},       // Br
    {126.904473, 1},       // I
    {79.9165213, 2},       // Se
    {27.9769265325, 4},    // Si
    {1.00782503207, 1},    // H
};

}  // namespace

const char* elem_symbol(Elem e) { return kSymbols[static_cast<int>(e)]; }

std::optional<Elem> elem_from_symbol(const std::string& s) {
    for (int i = 0; i < 12; ++i)
        if (s == kSymbols[i]) return static_cast<Elem>(i);
    return std::nullopt;
}

const ElementTable& ElementTable::builtin() {
    static ElementTable t = [] {
        ElementTable t;
        for (int i = 0; i < 12; ++i) {
            t.mass_[i] = kDefaults[i].mass;
            t.valence_[i] = kDefaults[i].valence;
        }
        return t;
    }();
    return t;
}

ElementTable ElementTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open element table: " + path);
    ElementTable t = builtin();
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string sym;
        double mass;
        int val;
        if (!(ss >> sym >> mass >> val))
            throw ValidationError("malformed element table line: " + line);
        auto e = elem_from_symbol(sym);
        if (!e) throw ValidationError("unknown element symbol: " + sym);
        if (mass <= 0) throw ValidationError("non-positive mass for " + sym);
        t.mass_[static_cast<int>(*e)] = mass;
        t.valence_[static_cast<int>(*e)] = val;
    }
    return t;
}

double bond_order_value(BondOrder o) {
    switch (o) {
        case BondOrder::Single: return 1.0;
        case BondOrder::Double: return 2.0;
        case BondOrder::Triple: return 3.0;
        case BondOrder::Aromatic: return 1.5;
    }
    return 1.0;
}

std::vector<std::vector<int>> MolGraph::adjacency() const {
    std::vector<std::vector<int>> adj(atoms.size());
    for (const auto& b : bonds) {
        adj[b.a].push_back(b.b);
        adj[b.b].push_back(b.a);
    }
    return adj;
}

void MolGraph::validate() const {
    std::set<std::pair<int, int>> seen;
    for (const auto& b : bonds) {
        if (b.a < 0 || b.a >= num_atoms() || b.b < 0 || b.b >= num_atoms())
            throw ValidationError("bond index out of range in " + id);
        if (b.a == b.b) throw ValidationError("self-loop bond in " + id);
        auto key = std::minmax(b.a, b.b);
        if (!seen.insert(key).second)
            throw ValidationError("duplicate bond in " + id);
    }
    for (const auto& a : atoms) {
        if (a.charge < -2 || a.charge > 2)
            throw ValidationError("formal charge out of range in " + id);
        if (a.radical < 0 || a.radical > 4)
            throw ValidationError("radical count out of range in " + id);
        if (a.implicit_h < 0)
            throw ValidationError("negative implicit hydrogen count in " + id);
    }
}

// ---------------------------------------------------------------------------
// SMILES parsing

namespace {

struct SmilesParser {
    const std::string& s;
    bool allow_aromatic;
    const ElementTable& table;
    size_t pos = 0;
    MolGraph g;
    std::vector<int> explicit_h_override;  // -1 when implicit

    explicit SmilesParser(const std::string& text, bool arom, const ElementTable& t)
        : s(text), allow_aromatic(arom), table(t) {}

    [[noreturn]] void fail(const std::string& msg, size_t at) { throw ParseError(msg, at); }

    char peek() const { return pos < s.size() ? s[pos] : '\0'; }

    int add_atom(Elem e, bool aromatic, int charge, int hcount) {
        g.atoms.push_back({e, charge, 0, aromatic, 0});
        explicit_h_override.push_back(hcount);
        return static_cast<int>(g.atoms.size()) - 1;
    }

    // Returns atom index, or -1 if no atom starts at pos.
    int parse_atom() {
        size_t at = pos;
        char c = peek();
        if (c == '[') return parse_bracket_atom();
        // two-letter symbols first
        if (pos + 1 < s.size()) {
            std::string two = s.substr(pos, 2);
            if (two == "Cl" || two == "Br" || two == "Se" || two == "Si") {
                pos += 2;
                return add_atom(*elem_from_symbol(two), false, 0, -1);
            }
        }
        std::string one(1, c);
        if (auto e = elem_from_symbol(one); e && *e != Elem::H) {
            ++pos;
            return add_atom(*e, false, 0, -1);
        }
        if (std::islower(static_cast<unsigned char>(c))) {
            std::string up(1, static_cast<char>(std::toupper(c)));
            if (auto e = elem_from_symbol(up); e && *e != Elem::H) {
                if (!allow_aromatic)
                    fail("aromatic atom requires aromatic mode", at);
                ++pos;
                return add_atom(*e, true, 0, -1);
            }
        }
        return -1;
    }

    int parse_bracket_atom() {
        size_t at = pos;
        ++pos;  // '['
        std::string sym;
        bool aromatic = false;
        if (pos + 1 < s.size()) {
            std::string two = s.substr(pos, 2);
            if (two == "Cl" || two == "Br" || two == "Se" || two == "Si") {
                sym = two;
                pos += 2;
            }
        }
        if (sym.empty()) {
            char c = peek();
            if (std::islower(static_cast<unsigned char>(c))) {
                if (!allow_aromatic) fail("aromatic atom requires aromatic mode", pos);
                aromatic = true;
                c = static_cast<char>(std::toupper(c));
            }
            sym = std::string(1, c);
            ++pos;
        }
        auto e = elem_from_symbol(sym);
        if (!e) fail("unsupported element '" + sym + "'", at);
        int hcount = -1;
        int charge = 0;
        while (peek() != ']') {
            char c = peek();
            if (c == 'H') {
                ++pos;
                hcount = 1;
                if (std::isdigit(static_cast<unsigned char>(peek()))) {
                    hcount = peek() - '0';
                    ++pos;
                }
            } else if (c == '+' || c == '-') {
                int sign = (c == '+') ? 1 : -1;
                ++pos;
                int mag = 1;
                if (std::isdigit(static_cast<unsigned char>(peek()))) {
                    mag = peek() - '0';
                    ++pos;
                } else {
                    while (peek() == c) {
                        ++mag;
                        ++pos;
                    }
                }
                charge = sign * mag;
            } else if (c == '\0') {
                fail("unterminated bracket atom", at);
            } else {
                fail(std::string("unsupported bracket token '") + c + "'", pos);
            }
        }
        ++pos;  // ']'
        if (hcount < 0) hcount = 0;  // bracket atoms default to no implicit H
        return add_atom(*e, aromatic, charge, hcount);
    }

    MolGraph run() {
        struct RingOpen { int atom; BondOrder order; bool has_order; size_t at; };
        std::vector<int> stack;
        std::map<int, RingOpen> rings;
        int prev = -1;
        BondOrder pending = BondOrder::Single;
        bool has_pending = false;
        size_t pending_at = 0;

        while (pos < s.size()) {
            char c = peek();
            if (c == '-' || c == '=' || c == '#' || c == ':') {
                if (has_pending) fail("duplicate bond symbol", pos);
                pending = c == '-'   ? BondOrder::Single
                          : c == '=' ? BondOrder::Double
                          : c == '#' ? BondOrder::Triple
                                     : BondOrder::Aromatic;
                if (c == ':' && !allow_aromatic) fail("aromatic bond requires aromatic mode", pos);
                has_pending = true;
                pending_at = pos;
                ++pos;
            } else if (c == '(') {
                if (prev < 0) fail("branch before any atom", pos);
                stack.push_back(prev);
                ++pos;
            } else if (c == ')') {
                if (stack.empty()) fail("unmatched ')'", pos);
                prev = stack.back();
                stack.pop_back();
                ++pos;
            } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '%') {
                int num;
                if (c == '%') {
                    if (pos + 2 >= s.size() ||
                        !std::isdigit(static_cast<unsigned char>(s[pos + 1])) ||
                        !std::isdigit(static_cast<unsigned char>(s[pos + 2])))
                        fail("malformed %nn ring closure", pos);
                    num = (s[pos + 1] - '0') * 10 + (s[pos + 2] - '0');
                    pos += 3;
                } else {
                    num = c - '0';
                    ++pos;
                }
                if (prev < 0) fail("ring closure before any atom", pos - 1);
                auto it = rings.find(num);
                if (it == rings.end()) {
                    rings[num] = {prev, pending, has_pending, pos - 1};
                } else {
                    BondOrder order = BondOrder::Single;
                    if (has_pending && it->second.has_order && pending != it->second.order)
                        fail("conflicting ring bond orders", pos - 1);
                    if (has_pending) order = pending;
                    else if (it->second.has_order) order = it->second.order;
                    else if (g.atoms[prev].aromatic && g.atoms[it->second.atom].aromatic)
                        order = BondOrder::Aromatic;
                    if (it->second.atom == prev) fail("ring closure to self", pos - 1);
                    g.bonds.push_back({it->second.atom, prev, order});
                    rings.erase(it);
                }
                has_pending = false;
            } else {
                int idx = parse_atom();
                if (idx < 0) fail(std::string("unsupported token '") + c + "'", pos);
                if (prev >= 0) {
                    BondOrder order = pending;
                    if (!has_pending)
                        order = (g.atoms[prev].aromatic && g.atoms[idx].aromatic)
                                    ? BondOrder::Aromatic
                                    : BondOrder::Single;
                    g.bonds.push_back({prev, idx, order});
                }
                prev = idx;
                has_pending = false;
            }
        }
        if (has_pending) fail("dangling bond symbol", pending_at);
        if (!stack.empty()) fail("unmatched '('", s.size());
        if (!rings.empty()) fail("unmatched ring closure", rings.begin()->second.at);
        if (g.atoms.empty()) fail("empty molecule", 0);

        fill_hydrogens();
        g.validate();
        return std::move(g);
    }

    void fill_hydrogens() {
        std::vector<double> order_sum(g.atoms.size(), 0.0);
        for (const auto& b : g.bonds) {
            order_sum[b.a] += bond_order_value(b.order);
            order_sum[b.b] += bond_order_value(b.order);
        }
        for (size_t i = 0; i < g.atoms.size(); ++i) {
            Atom& a = g.atoms[i];
            if (explicit_h_override[i] >= 0) {
                a.implicit_h = explicit_h_override[i];
                continue;
            }
            int val = table.valence(a.element);
            int h = val - static_cast<int>(std::floor(order_sum[i] + 1e-9)) - std::abs(a.charge);
            if (h < 0 && explicit_h_override[i] < 0 && order_sum[i] > val + std::abs(a.charge) + 1e-9)
                throw ValidationError("valence exceeded on atom " + std::to_string(i) +
                                      " (" + elem_symbol(a.element) + ")");
            a.implicit_h = std::max(0, h);
        }
    }
};

}  // namespace

MolGraph parse_smiles(const std::string& text, bool allow_aromatic, const ElementTable& table) {
    SmilesParser p(text, allow_aromatic, table);
    MolGraph g = p.run();
    g.id = text;
    return g;
}

// ---------------------------------------------------------------------------
// SMILES writing (DFS spanning tree, ring closures for back edges)

namespace {

bool atom_needs_bracket(const Atom& a, const ElementTable& t, double order_sum) {
    if (a.charge != 0 || a.radical != 0) return true;
    int h = std::max(0, t.valence(a.element) -
                            static_cast<int>(std::floor(order_sum + 1e-9)) -
                            std::abs(a.charge));
    return h != a.implicit_h;
}

}  // namespace

std::string write_smiles(const MolGraph& g) {
    const ElementTable& t = ElementTable::builtin();
    int n = g.num_atoms();
    std::vector<double> order_sum(n, 0.0);
    std::vector<std::vector<std::pair<int, BondOrder>>> adj(n);
    for (const auto& b : g.bonds) {
        adj[b.a].push_back({b.b, b.order});
        adj[b.b].push_back({b.a, b.order});
        order_sum[b.a] += bond_order_value(b.order);
        order_sum[b.b] += bond_order_value(b.order);
    }
    std::vector<bool> visited(n, false);
    std::set<std::pair<int, int>> tree_edges;
    std::vector<std::vector<std::pair<int, BondOrder>>> ring_marks(n);  // atom -> (digit, order)
    int next_ring = 1;

    // DFS to find back edges and assign ring-closure digits.
    std::function<void(int, int)> mark = [&](int u, int parent) {
        visited[u] = true;
        for (auto [v, order] : adj[u]) {
            if (v == parent && tree_edges.count(std::minmax(u, v))) continue;
            if (!visited[v]) {
                tree_edges.insert(std::minmax(u, v));
                mark(v, u);
            } else if (!tree_edges.count(std::minmax(u, v))) {
                tree_edges.insert(std::minmax(u, v));
                int digit = next_ring++;
                ring_marks[u].push_back({digit, order});
                ring_marks[v].push_back({digit, order});
            }
        }
    };
    std::fill(visited.begin(), visited.end(), false);
    // first pass to classify edges
    std::function<void(int, int)> classify = [&](int u, int parent) {
        visited[u] = true;
        for (auto [v, order] : adj[u]) {
            (void)order;
            if (!visited[v]) {
                tree_edges.insert(std::minmax(u, v));
                classify(v, u);
            }
        }
        (void)parent;
    };
    classify(0, -1);
    if (std::count(visited.begin(), visited.end(), true) != n)
        throw ValidationError("cannot serialize disconnected molecule " + g.id);
    for (const auto& b : g.bonds) {
        if (!tree_edges.count(std::minmax(b.a, b.b))) {
            int digit = next_ring++;
            ring_marks[b.a].push_back({digit, b.order});
            ring_marks[b.b].push_back({digit, b.order});
        }
    }
    (void)mark;

    auto bond_sym = [](BondOrder o) -> std::string {
        switch (o) {
            case BondOrder::Single: return "";
            case BondOrder::Double: return "=";
            case BondOrder::Triple: return "#";
            case BondOrder::Aromatic: return ":";
        }
        return "";
    };

    std::string out;
    std::fill(visited.begin(), visited.end(), false);
    std::function<void(int)> emit = [&](int u) {
        visited[u] = true;
        const Atom& a = g.atoms[u];
        std::string sym = elem_symbol(a.element);
        if (a.aromatic) for (auto& c : sym) c = static_cast<char>(std::tolower(c));
        if (atom_needs_bracket(a, t, order_sum[u])) {
            out += "[";
            out += sym;
            if (a.implicit_h == 1) out += "H";
            else if (a.implicit_h > 1) out += "H" + std::to_string(a.implicit_h);
            if (a.charge > 0) out += (a.charge == 1) ? "+" : "+" + std::to_string(a.charge);
            if (a.charge < 0) out += (a.charge == -1) ? "-" : "-" + std::to_string(-a.charge);
            out += "]";
        } else {
            out += sym;
        }
        for (auto [digit, order] : ring_marks[u]) {
            out += bond_sym(order);
            if (digit < 10) out += std::to_string(digit);
            else out += "%" + std::to_string(digit);
        }
        std::vector<std::pair<int, BondOrder>> children;
        for (auto [v, order] : adj[u])
            if (!visited[v] && tree_edges.count(std::minmax(u, v))) children.push_back({v, order});
        for (size_t i = 0; i < children.size(); ++i) {
            auto [v, order] = children[i];
            if (visited[v]) continue;
            bool last = true;
            for (size_t k = i + 1; k < children.size(); ++k)
                if (!visited[children[k].first]) last = false;
            if (!last) out += "(";
            std::string sym2 = bond_sym(order);
            if (sym2.empty() && g.atoms[u].aromatic && g.atoms[v].aromatic &&
                order != BondOrder::Aromatic)
                sym2 = "-";
            out += sym2;
            emit(v);
            if (!last) out += ")";
        }
    };
    emit(0);
    return out;
}

// ---------------------------------------------------------------------------
// Formula and masses

int Formula::get(Elem e) const {
    auto it = counts.find(e);
    return it == counts.end() ? 0 : it->second;
}

void Formula::add(Elem e, int n) {
    if (n == 0) return;
    counts[e] += n;
    if (counts[e] == 0) counts.erase(e);
}

int Formula::total() const {
    int t = 0;
    for (auto& [e, c] : counts) t += c;
    return t;
}

std::string Formula::str() const {
    // C first, H second, remaining by symbol.
    std::string out;
    auto emit = [&](Elem e) {
        int c = get(e);
        if (c <= 0) return;
        out += elem_symbol(e);
        if (c > 1) out += std::to_string(c);
    };
    emit(Elem::C);
    emit(Elem::H);
    std::vector<Elem> rest;
    for (auto& [e, c] : counts)
        if (e != Elem::C && e != Elem::H) rest.push_back(e);
    std::sort(rest.begin(), rest.end(), [](Elem a, Elem b) {
        return std::string(elem_symbol(a)) < std::string(elem_symbol(b));
    });
    for (Elem e : rest) emit(e);
    return out;
}

double formula_mass(const Formula& f, AdductMode mode, const ElementTable& table) {
    double m = 0.0;
    for (auto& [e, c] : f.counts) {
        if (c < 0) throw ValidationError("negative element count in formula");
        m += table.mass(e) * c;
    }
    if (mode == AdductMode::Protonated) m += table.proton_mass();
    return m;
}

// ---------------------------------------------------------------------------

MolGraph heavy_skeleton(const MolGraph& g) {
    g.validate();
    std::vector<int> heavy_index(g.num_atoms(), -1);
    MolGraph out;
    out.id = g.id;
    for (int i = 0; i < g.num_atoms(); ++i) {
        if (g.atoms[i].element == Elem::H) continue;
        heavy_index[i] = out.num_atoms();
        out.atoms.push_back(g.atoms[i]);
    }
    if (out.atoms.empty()) throw ValidationError("no heavy atoms in " + g.id);
    for (const auto& b : g.bonds) {
        int a = heavy_index[b.a], c = heavy_index[b.b];
        if (a >= 0 && c >= 0) {
            out.bonds.push_back({a, c, b.order});
        } else if (a >= 0) {
            out.atoms[a].implicit_h += 1;  // explicit H folded into attached count
        } else if (c >= 0) {
            out.atoms[c].implicit_h += 1;
        }
    }
    // connectivity check on heavy part
    auto adj = out.adjacency();
    std::vector<bool> seen(out.num_atoms(), false);
    std::vector<int> stack{0};
    seen[0] = true;
    while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        for (int v : adj[u])
            if (!seen[v]) {
                seen[v] = true;
                stack.push_back(v);
            }
    }
    if (std::count(seen.begin(), seen.end(), true) != out.num_atoms())
        throw ValidationError("disconnected heavy atoms in " + g.id);
    return out;
}

Formula molecular_formula(const MolGraph& g) {
    Formula f;
    for (const auto& a : g.atoms) {
        f.add(a.element, 1);
        f.add(Elem::H, a.implicit_h);
    }
    return f;
}

// ---------------------------------------------------------------------------
// Featurization

namespace {

// Atom is in a ring iff some incident edge is not a bridge.
std::vector<bool> ring_membership(const MolGraph& g) {
    int n = g.num_atoms();
    std::vector<std::vector<std::pair<int, int>>> adj(n);  // (neighbor, bond idx)
    for (int i = 0; i < g.num_bonds(); ++i) {
        adj[g.bonds[i].a].push_back({g.bonds[i].b, i});
        adj[g.bonds[i].b].push_back({g.bonds[i].a, i});
    }
    std::vector<int> disc(n, -1), low(n, 0);
    std::vector<bool> is_bridge(g.num_bonds(), false);
    int timer = 0;
    std::function<void(int, int)> dfs = [&](int u, int pe) {
        disc[u] = low[u] = timer++;
        for (auto [v, ei] : adj[u]) {
            if (ei == pe) continue;
            if (disc[v] >= 0) {
                low[u] = std::min(low[u], disc[v]);
            } else {
                dfs(v, ei);
                low[u] = std::min(low[u], low[v]);
                if (low[v] > disc[u]) is_bridge[ei] = true;
            }
        }
    };
    for (int i = 0; i < n; ++i)
        if (disc[i] < 0) dfs(i, -1);
    std::vector<bool> ring(n, false);
    for (int i = 0; i < g.num_bonds(); ++i)
        if (!is_bridge[i]) {
            ring[g.bonds[i].a] = true;
            ring[g.bonds[i].b] = true;
        }
    return ring;
}

// SP if triple bond or two doubles, SP2 if one double/aromatic, else SP3.
int hybridization_index(const MolGraph& g, const std::vector<std::vector<int>>& bond_lists, int atom) {
    int doubles = 0, triples = 0, aromatics = 0;
    for (int bi : bond_lists[atom]) {
        switch (g.bonds[bi].order) {
            case BondOrder::Double: ++doubles; break;
            case BondOrder::Triple: ++triples; break;
            case BondOrder::Aromatic: ++aromatics; break;
            default: break;
        }
    }
    if (triples > 0 || doubles >= 2) return 0;               // SP
    if (doubles == 1 || aromatics > 0) return 1;             // SP2
    return 2;                                                // SP3
}

}  // namespace

std::vector<std::array<double, kAtomFeatureDim>> atom_features(const MolGraph& g,
                                                               const ElementTable& table) {
    g.validate();
    int n = g.num_atoms();
    std::vector<std::vector<int>> bond_lists(n);
    for (int i = 0; i < g.num_bonds(); ++i) {
        bond_lists[g.bonds[i].a].push_back(i);
        bond_lists[g.bonds[i].b].push_back(i);
    }
    std::vector<bool> ring = ring_membership(g);
    std::vector<std::array<double, kAtomFeatureDim>> out(n);
    for (int i = 0; i < n; ++i) {
        auto& f = out[i];
        f.fill(0.0);
        const Atom& a = g.atoms[i];
        int off = 0;
        int ei = static_cast<int>(a.element);
        if (ei < kNumHeavyElems) f[off + ei] = 1.0;  // explicit H atoms get no element bit
        off += 11;
        int degree = std::min(static_cast<int>(bond_lists[i].size()), 10);
        f[off + degree] = 1.0;
        off += 11;
        f[off + hybridization_index(g, bond_lists, i)] = 1.0;
        off += 5;
        f[off + (a.charge + 2)] = 1.0;
        off += 5;
        f[off + a.radical] = 1.0;
        off += 5;
        f[off + (ring[i] ? 0 : 1)] = 1.0;
        off += 2;
        f[off + (a.aromatic ? 0 : 1)] = 1.0;
        off += 2;
        f[off + 0] = 1.0;  // chirality always Unspecified
        off += 3;
        f[off] = table.mass(a.element) * 0.01;
    }
    return out;
}

std::vector<std::array<double, kBondFeatureDim>> bond_features(const MolGraph& g) {
    std::vector<std::array<double, kBondFeatureDim>> out(g.num_bonds());
    for (int i = 0; i < g.num_bonds(); ++i) {
        out[i].fill(0.0);
        out[i][static_cast<int>(g.bonds[i].order)] = 1.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSONL interchange

namespace {

const char* order_name(BondOrder o) {
    switch (o) {
        case BondOrder::Single: return "single";
        case BondOrder::Double: return "double";
        case BondOrder::Triple: return "triple";
        case BondOrder::Aromatic: return "aromatic";
    }
    return "single";
}

BondOrder order_from_name(const std::string& s) {
    if (s == "single") return BondOrder::Single;
    if (s == "double") return BondOrder::Double;
    if (s == "triple") return BondOrder::Triple;
    if (s == "aromatic") return BondOrder::Aromatic;
    throw ValidationError("unknown bond order: " + s);
}

}  // namespace

std::string molgraph_to_json(const MolGraph& g) {
    nlohmann::json j;
    j["id"] = g.id;
    j["atoms"] = nlohmann::json::array();
    for (const auto& a : g.atoms)
        j["atoms"].push_back({{"el", elem_symbol(a.element)},
                              {"chg", a.charge},
                              {"rad", a.radical},
                              {"arom", a.aromatic},
                              {"h", a.implicit_h}});
    j["bonds"] = nlohmann::json::array();
    for (const auto& b : g.bonds)
        j["bonds"].push_back({b.a, b.b, order_name(b.order)});
    return j.dump();
}

MolGraph molgraph_from_json(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    if (!j.contains("atoms") && j.contains("smiles"))
        return parse_smiles(j["smiles"].get<std::string>());
    MolGraph g;
    g.id = j.value("id", "");
    for (const auto& a : j.at("atoms")) {
        auto e = elem_from_symbol(a.at("el").get<std::string>());
        if (!e) throw ValidationError("unknown element in JSON: " + a.at("el").get<std::string>());
        g.atoms.push_back({*e, a.value("chg", 0), a.value("rad", 0), a.value("arom", false),
                           a.value("h", 0)});
    }
    for (const auto& b : j.at("bonds"))
        g.bonds.push_back({b.at(0).get<int>(), b.at(1).get<int>(),
                           order_from_name(b.at(2).get<std::string>())});
    g.validate();
    return g;
}

std::vector<MolGraph> read_molecule_file(const std::string& path, bool allow_aromatic) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open molecule file: " + path);
    std::vector<MolGraph> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        if (line[0] == '{') {
            out.push_back(molgraph_from_json(line));
        } else {
            // "id smiles" or bare smiles
            std::istringstream ss(line);
            std::string first, second;
            ss >> first >> second;
            MolGraph g = second.empty() ? parse_smiles(first, allow_aromatic)
                                        : parse_smiles(second, allow_aromatic);
            g.id = second.empty() ? "mol" + std::to_string(lineno) : first;
            out.push_back(std::move(g));
        }
    }
    return out;
}

void write_molecule_file(const std::string& path, const std::vector<MolGraph>& mols) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open output file: " + path);
    for (const auto& g : mols) out << molgraph_to_json(g) << "\n";
}

}  // namespace fragnn
