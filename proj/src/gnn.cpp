#include "fragnn/gnn.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"

namespace fragnn {

void ModelConfig::validate() const {
    if (hidden_dim < 1) throw ValidationError("hidden_dim must be >= 1");
    if (L1 < 1 || L2 < 1) throw ValidationError("layer counts must be >= 1");
    if (j < 0) throw ValidationError("hydrogen tolerance must be >= 0");
    if (d < 1) throw ValidationError("fragmentation depth must be >= 1");
    if (fourier_T < 1) throw ValidationError("fourier_T must be >= 1");
}

std::vector<double> fourier_embed(double z, int T) {
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    std::vector<double> out(T);
    double tau = 2.0;
    for (int t = 0; t < T; ++t) {
        out[t] = std::abs(std::sin(kTwoPi * z / tau));
        tau *= 2.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameter manifest

namespace {

struct ManifestBuilder {
    std::vector<std::string> names;
    std::vector<std::pair<int, int>> shapes;
    void linear(const std::string& prefix, int in, int out) {
        names.push_back(prefix + ".W");
        shapes.push_back({in, out});
        names.push_back(prefix + ".b");
        shapes.push_back({1, out});
    }
};

ManifestBuilder build_manifest(const ModelConfig& c) {
    ManifestBuilder m;
    int h = c.hidden_dim;
    m.linear("mol.in", kAtomFeatureDim, h);
    for (int l = 0; l < c.L1; ++l) {
        std::string p = "mol.l" + std::to_string(l);
        m.linear(p + ".bond", kBondFeatureDim, h);
        m.linear(p + ".mlp1", h, h);
        m.linear(p + ".mlp2", h, h);
    }
    int node_in = h + kNumHeavyElems * c.fourier_T + (c.d + 1);
    m.linear("frag.in", node_in, h);
    int edge_in = h + kNumHeavyElems * c.fourier_T;
    for (int l = 0; l < c.L2; ++l) {
        std::string p = "frag.l" + std::to_string(l);
        if (c.use_frag_edges) m.linear(p + ".edge", edge_in, h);
        m.linear(p + ".mlp1", h, h);
        m.linear(p + ".mlp2", h, h);
    }
    int head_in = h + c.ce_dim();
    m.linear("head.1", head_in, h);
    m.linear("head.2", h, 2 * c.j + 1);
    m.linear("os.1", head_in, h);
    m.linear("os.2", h, 1);
    return m;
}

}  // namespace

size_t ModelParams::total_count() const {
    size_t t = 0;
    for (const auto& a : arrays) t += a.size();
    return t;
}

ModelParams init_params(const ModelConfig& config) {
    config.validate();
    ModelParams p;
    p.config = config;
    ManifestBuilder m = build_manifest(config);
    p.names = m.names;
    std::mt19937_64 rng(config.seed);
    for (size_t i = 0; i < m.names.size(); ++i) {
        auto [rows, cols] = m.shapes[i];
        Array a(rows, cols, 0.0);
        bool is_bias = rows == 1 && m.names[i].ends_with(".b");
        if (!is_bias) {
            double bound = std::sqrt(6.0 / (rows + cols));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (auto& v : a.data) v = u(rng);
        }
        p.arrays.push_back(std::move(a));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Checkpoint: JSON header line, then little-endian float64 blocks.

void save_checkpoint(const std::string& path, const ModelParams& params) {
    nlohmann::json header;
    header["format"] = "fragnn-ckpt-v1";
    const ModelConfig& c = params.config;
    header["config"] = {{"hidden_dim", c.hidden_dim}, {"L1", c.L1}, {"L2", c.L2},
                        {"d", c.d}, {"j", c.j}, {"fourier_T", c.fourier_T},
                        {"use_frag_edges", c.use_frag_edges},
                        {"use_collision_energy", c.use_collision_energy},
                        {"seed", c.seed}};
    header["manifest"] = nlohmann::json::array();
    for (size_t i = 0; i < params.names.size(); ++i)
        header["manifest"].push_back({{"name", params.names[i]},
                                      {"rows", params.arrays[i].rows},
                                      {"cols", params.arrays[i].cols}});
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint: " + path);
    out << header.dump() << "\n";
    for (const auto& a : params.arrays)
        out.write(reinterpret_cast<const char*>(a.data.data()),
                  static_cast<std::streamsize>(a.size() * sizeof(double)));
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("truncated checkpoint header");
    nlohmann::json header = nlohmann::json::parse(line);
    if (header.value("format", "") != "fragnn-ckpt-v1")
        throw ValidationError("unknown checkpoint format");
    ModelParams p;
    const auto& c = header.at("config");
    p.config.hidden_dim = c.at("hidden_dim");
    p.config.L1 = c.at("L1");
    p.config.L2 = c.at("L2");
    p.config.d = c.at("d");
    p.config.j = c.at("j");
    p.config.fourier_T = c.at("fourier_T");
    p.config.use_frag_edges = c.at("use_frag_edges");
    p.config.use_collision_energy = c.at("use_collision_energy");
    p.config.seed = c.at("seed");
    for (const auto& entry : header.at("manifest")) {
        p.names.push_back(entry.at("name"));
        Array a(entry.at("rows").get<int>(), entry.at("cols").get<int>());
        in.read(reinterpret_cast<char*>(a.data.data()),
                static_cast<std::streamsize>(a.size() * sizeof(double)));
        if (!in) throw ValidationError("truncated checkpoint data for " + p.names.back());
        p.arrays.push_back(std::move(a));
    }
    ManifestBuilder expect = build_manifest(p.config);
    if (expect.names != p.names) throw ValidationError("checkpoint manifest mismatch");
    return p;
}

// ---------------------------------------------------------------------------
// Lattice

CellLattice build_lattice(const FragDag& dag, int j, AdductMode mode, const ElementTable& table) {
    CellLattice lat;
    lat.mode = mode;
    lat.node_ids = dag.node_ids();
    lat.num_nodes = static_cast<int>(lat.node_ids.size());
    lat.num_offsets = 2 * j + 1;
    lat.num_cells = lat.num_nodes * lat.num_offsets;
    lat.cell_valid.assign(lat.num_cells, false);
    lat.cell_node.assign(lat.num_cells, 0);
    lat.cell_offset.assign(lat.num_cells, 0);
    lat.cell_formula.assign(lat.num_cells, 0);
    lat.node_iso_class.resize(lat.num_nodes);

    std::map<Formula, int> group_of;
    for (int ni = 0; ni < lat.num_nodes; ++ni) {
        const FragNode& node = dag.nodes.at(lat.node_ids[ni]);
        lat.node_iso_class[ni] = node.iso_class;
        auto offs = valid_hydrogen_offsets(node, j);
        std::set<int> valid(offs.begin(), offs.end());
        for (int pos = 0; pos < lat.num_offsets; ++pos) {
            int off = pos - j;
            int ci = lat.cell_index(ni, pos);
            lat.cell_node[ci] = ni;
            lat.cell_offset[ci] = off;
            if (!valid.count(off)) continue;
            lat.cell_valid[ci] = true;
            Formula f = offset_formula(node, off);
            auto it = group_of.find(f);
            int gid;
            if (it == group_of.end()) {
                gid = static_cast<int>(lat.formulas.size());
                group_of.emplace(f, gid);
                lat.formulas.push_back(f);
                lat.formula_mass_da.push_back(formula_mass(f, mode, table));
            } else {
                gid = it->second;
            }
            lat.cell_formula[ci] = gid;
        }
    }
    return lat;
}

MoleculeContext prepare_molecule(const MolGraph& mol, const ModelConfig& config, AdductMode mode,
                                 size_t node_cap) {
    MoleculeContext ctx;
    ctx.mol = mol;
    ctx.skeleton = heavy_skeleton(mol);
    ctx.dag = rec_frag(ctx.skeleton, config.d, node_cap);
    assign_iso_classes(ctx.dag, ctx.skeleton);
    ctx.dag.hydrogen_tol = config.j;
    ctx.lattice = build_lattice(ctx.dag, config.j, mode);
    return ctx;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

struct ParamIndex {
    const std::vector<std::string>& names;
    const std::vector<Tape::Id>& ids;
    Tape::Id operator()(const std::string& name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return ids[i];
        throw ValidationError("missing parameter: " + name);
    }
};

Tape::Id mlp2(Tape& t, Tape::Id x, const ParamIndex& P, const std::string& p1,
              const std::string& p2) {
    auto h = t.relu(t.add_rowvec(t.matmul(x, P(p1 + ".W")), P(p1 + ".b")));
    return t.add_rowvec(t.matmul(h, P(p2 + ".W")), P(p2 + ".b"));
}

Tape::Id linear(Tape& t, Tape::Id x, const ParamIndex& P, const std::string& p) {
    return t.add_rowvec(t.matmul(x, P(p + ".W")), P(p + ".b"));
}

}  // namespace

ForwardResult forward(const ModelParams& params, const MoleculeContext& ctx) {
    const ModelConfig& c = params.config;
    c.validate();
    if (c.use_collision_energy && ctx.energies.empty())
        throw ValidationError("collision-energy embedding requires a non-empty energy list");

    ForwardResult r;
    Tape& t = r.tape;
    for (const auto& a : params.arrays) r.param_ids.push_back(t.leaf(a, true));
    ParamIndex P{params.names, r.param_ids};

    // --- Molecule GNN over the full molecular graph ---
    const MolGraph& mol = ctx.mol;
    int n_atoms = mol.num_atoms();
    auto feats = atom_features(mol);
    Array atom_in(n_atoms, kAtomFeatureDim);
    for (int i = 0; i < n_atoms; ++i)
        for (int k = 0; k < kAtomFeatureDim; ++k) atom_in.at(i, k) = feats[i][k];
    auto bfeats = bond_features(mol);
    int n_bonds = mol.num_bonds();
    Array bond_in(n_bonds, kBondFeatureDim);
    for (int i = 0; i < n_bonds; ++i)
        for (int k = 0; k < kBondFeatureDim; ++k) bond_in.at(i, k) = bfeats[i][k];

    std::vector<int> src, tgt, bond_of;
    for (int i = 0; i < n_bonds; ++i) {
        src.push_back(mol.bonds[i].a);
        tgt.push_back(mol.bonds[i].b);
        bond_of.push_back(i);
        src.push_back(mol.bonds[i].b);
        tgt.push_back(mol.bonds[i].a);
        bond_of.push_back(i);
    }

    auto atoms = t.constant(std::move(atom_in));
    auto bonds = n_bonds > 0 ? t.constant(std::move(bond_in)) : -1;
    auto h = linear(t, atoms, P, "mol.in");
    for (int l = 0; l < c.L1; ++l) {
        std::string p = "mol.l" + std::to_string(l);
        Tape::Id x = h;
        if (n_bonds > 0) {
            auto bond_emb = linear(t, bonds, P, p + ".bond");
            auto msg =
                t.relu(t.add(t.gather_rows(h, src), t.gather_rows(bond_emb, bond_of)));
            x = t.add(h, t.segment_sum(msg, tgt, n_atoms));
        }
        h = mlp2(t, x, P, p + ".mlp1", p + ".mlp2");
    }
    r.atom_embeddings = h;

    // --- Fragment node inputs ---
    const CellLattice& lat = ctx.lattice;
    int n_nodes = lat.num_nodes;

    // atoms of the full molecule that belong to each DAG node: map skeleton
    // atom index -> molecule atom index (heavy atoms keep relative order)
    std::vector<int> heavy_to_mol;
    for (int i = 0; i < n_atoms; ++i)
        if (mol.atoms[i].element != Elem::H) heavy_to_mol.push_back(i);

    std::vector<int> member_atoms, member_seg;
    for (int ni = 0; ni < n_nodes; ++ni) {
        Mask m = lat.node_ids[ni];
        for (int a = 0; a < static_cast<int>(heavy_to_mol.size()); ++a)
            if (m & (Mask(1) << a)) {
                member_atoms.push_back(heavy_to_mol[a]);
                member_seg.push_back(ni);
            }
    }
    auto node_pool = t.segment_mean(t.gather_rows(h, member_atoms), member_seg, n_nodes);

    int fdim = kNumHeavyElems * c.fourier_T;
    Array node_const(n_nodes, fdim + c.d + 1, 0.0);
    for (int ni = 0; ni < n_nodes; ++ni) {
        const FragNode& node = ctx.dag.nodes.at(lat.node_ids[ni]);
        for (int e = 0; e < kNumHeavyElems; ++e) {
            auto emb = fourier_embed(node.formula.get(static_cast<Elem>(e)), c.fourier_T);
            for (int k = 0; k < c.fourier_T; ++k)
                node_const.at(ni, e * c.fourier_T + k) = emb[k];
        }
        for (int dep : node.depth_set)
            if (dep >= 1 && dep <= c.d + 1) node_const.at(ni, fdim + dep - 1) = 1.0;
    }
    auto node_in = t.concat_cols(node_pool, t.constant(std::move(node_const)));
    auto hn = linear(t, node_in, P, "frag.in");

    // --- Fragment GNN ---
    if (c.use_frag_edges && !ctx.dag.edges.empty()) {
        // edge inputs: mean embedding of the lost atoms and the neutral-loss
        // formula difference
        std::map<Mask, int> node_index;
        for (int ni = 0; ni < n_nodes; ++ni) node_index[lat.node_ids[ni]] = ni;
        int n_edges = static_cast<int>(ctx.dag.edges.size());
        std::vector<int> loss_atoms, loss_seg, esrc, etgt, edge_of;
        Array edge_const(n_edges, fdim, 0.0);
        int ei = 0;
        for (const auto& [pm, cm] : ctx.dag.edges) {
            Mask lost = pm & ~cm;
            for (int a = 0; a < static_cast<int>(heavy_to_mol.size()); ++a)
                if (lost & (Mask(1) << a)) {
                    loss_atoms.push_back(heavy_to_mol[a]);
                    loss_seg.push_back(ei);
                }
            const Formula& fp = ctx.dag.nodes.at(pm).formula;
            const Formula& fc = ctx.dag.nodes.at(cm).formula;
            for (int e = 0; e < kNumHeavyElems; ++e) {
                auto emb = fourier_embed(fp.get(static_cast<Elem>(e)) -
                                             fc.get(static_cast<Elem>(e)),
                                         c.fourier_T);
                for (int k = 0; k < c.fourier_T; ++k)
                    edge_const.at(ei, e * c.fourier_T + k) = emb[k];
            }
            int pi = node_index[pm], ci = node_index[cm];
            // directed DAG edges carry messages both ways
            esrc.push_back(pi); etgt.push_back(ci); edge_of.push_back(ei);
            esrc.push_back(ci); etgt.push_back(pi); edge_of.push_back(ei);
            ++ei;
        }
        auto edge_pool = t.segment_mean(t.gather_rows(h, loss_atoms), loss_seg, n_edges);
        auto edge_in = t.concat_cols(edge_pool, t.constant(std::move(edge_const)));
        for (int l = 0; l < c.L2; ++l) {
            std::string p = "frag.l" + std::to_string(l);
            auto edge_emb = linear(t, edge_in, P, p + ".edge");
            auto msg =
                t.relu(t.add(t.gather_rows(hn, esrc), t.gather_rows(edge_emb, edge_of)));
            auto agg = t.segment_sum(msg, etgt, n_nodes);
            hn = mlp2(t, t.add(hn, agg), P, p + ".mlp1", p + ".mlp2");
        }
    } else {
        // edgeless default: per-node MLP stack, no neighbourhood term
        for (int l = 0; l < c.L2; ++l) {
            std::string p = "frag.l" + std::to_string(l);
            hn = mlp2(t, hn, P, p + ".mlp1", p + ".mlp2");
        }
    }
    r.node_embeddings = hn;

    // --- Output heads ---
    Tape::Id head_in = hn;
    Tape::Id os_in = t.segment_mean(hn, std::vector<int>(n_nodes, 0), 1);
    if (c.use_collision_energy) {
        Array ce(1, c.fourier_T, 0.0);
        for (int z : ctx.energies) {
            if (z < 0 || z > 200) throw ValidationError("collision energy outside [0, 200]");
            auto emb = fourier_embed(z, c.fourier_T);
            for (int k = 0; k < c.fourier_T; ++k) ce.at(0, k) += emb[k];
        }
        for (auto& v : ce.data) v /= static_cast<double>(ctx.energies.size());
        Array ce_rows(n_nodes, c.fourier_T);
        for (int i = 0; i < n_nodes; ++i)
            for (int k = 0; k < c.fourier_T; ++k) ce_rows.at(i, k) = ce.at(0, k);
        head_in = t.concat_cols(hn, t.constant(std::move(ce_rows)));
        os_in = t.concat_cols(os_in, t.constant(std::move(ce)));
    }
    r.joint_logits = mlp2(t, head_in, P, "head.1", "head.2");
    r.os_logit = mlp2(t, os_in, P, "os.1", "os.2");

    // --- Joint normalization: one softmax over all cells plus OS ---
    auto flat = t.reshape(r.joint_logits, 1, lat.num_cells);
    auto row = t.concat_cols(flat, r.os_logit);
    Array mask(1, lat.num_cells + 1, 0.0);
    for (int ci = 0; ci < lat.num_cells; ++ci)
        if (!lat.cell_valid[ci]) mask.at(0, ci) = kNegInf;
    auto logp = t.log_softmax_masked(row, std::move(mask));
    r.joint_col = t.reshape(logp, lat.num_cells + 1, 1);
    return r;
}

}  // namespace fragnn
