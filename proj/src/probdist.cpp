#include "fragnn/probdist.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fragnn {

namespace {

double logsumexp(const std::vector<double>& xs) {
    double m = kNegInf;
    for (double x : xs) m = std::max(m, x);
    if (m == kNegInf) return kNegInf;
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - m);
    return m + std::log(acc);
}

// -p * log p with the 0 log 0 = 0 convention, log-space input
double nplogp(double logp) {
    double p = std::exp(logp);
    return p == 0.0 ? 0.0 : -p * logp;
}

}  // namespace

LatentState latent_from_logits(const Array& joint_logits, double os_logit,
                               const CellLattice& lattice) {
    if (joint_logits.rows != lattice.num_nodes || joint_logits.cols != lattice.num_offsets)
        throw ShapeError("latent_from_logits: logits " + joint_logits.shape_str() +
                         " do not match lattice " + std::to_string(lattice.num_nodes) + "x" +
                         std::to_string(lattice.num_offsets));
    bool any_valid = false;
    for (int ci = 0; ci < lattice.num_cells; ++ci)
        if (lattice.cell_valid[ci]) any_valid = true;
    if (!any_valid) throw ValidationError("latent_from_logits: all cells masked");

    LatentState st;
    st.lattice = lattice;
    st.log_joint.assign(lattice.num_cells, kNegInf);

    double m = os_logit;
    for (int ci = 0; ci < lattice.num_cells; ++ci)
        if (lattice.cell_valid[ci])
            m = std::max(m, joint_logits.data[ci]);
    double acc = std::exp(os_logit - m);
    for (int ci = 0; ci < lattice.num_cells; ++ci)
        if (lattice.cell_valid[ci]) acc += std::exp(joint_logits.data[ci] - m);
    double log_z = m + std::log(acc);
    st.log_os = os_logit - log_z;
    for (int ci = 0; ci < lattice.num_cells; ++ci)
        if (lattice.cell_valid[ci]) st.log_joint[ci] = joint_logits.data[ci] - log_z;

    st.log_node.assign(lattice.num_nodes, kNegInf);
    st.log_formula.assign(lattice.formulas.size(), kNegInf);
    std::vector<std::vector<double>> per_node(lattice.num_nodes), per_group(lattice.formulas.size());
    for (int ci = 0; ci < lattice.num_cells; ++ci) {
        if (!lattice.cell_valid[ci]) continue;
        per_node[lattice.cell_node[ci]].push_back(st.log_joint[ci]);
        per_group[lattice.cell_formula[ci]].push_back(st.log_joint[ci]);
    }
    for (int i = 0; i < lattice.num_nodes; ++i) st.log_node[i] = logsumexp(per_node[i]);
    for (size_t g = 0; g < per_group.size(); ++g) st.log_formula[g] = logsumexp(per_group[g]);
    return st;
}

Spectrum dirac_spectrum(const LatentState& state) {
    Spectrum sp;
    std::vector<int> order(state.lattice.formulas.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return state.lattice.formula_mass_da[a] < state.lattice.formula_mass_da[b];
    });
    for (int g : order) {
        double p = state.p_formula(g);
        if (p > 0.0) sp.peaks.push_back({state.lattice.formula_mass_da[g], p});
    }
    return sp;
}

double GaussianMixture::density(double mass) const {
    // each truncated component integrates to its weight; the +-1 sigma window
    // carries erf(1/sqrt(2)) of the untruncated normal mass
    static const double kWindowMass = std::erf(1.0 / std::sqrt(2.0));
    double acc = 0.0;
    for (const auto& c : components) {
        if (std::abs(mass - c.mean) > c.sigma) continue;
        double z = (mass - c.mean) / c.sigma;
        constexpr double kSqrt2Pi = 2.506628274631000502415765284811;
        double pdf = std::exp(-0.5 * z * z) / (c.sigma * kSqrt2Pi);
        acc += c.weight * pdf / kWindowMass;
    }
    return acc;
}

GaussianMixture gaussian_spectrum(const LatentState& state) {
    GaussianMixture gm;
    Spectrum sp = dirac_spectrum(state);
    for (const auto& pk : sp.peaks)
        gm.components.push_back({pk.mass, 5e-6 * pk.mass, pk.intensity});
    return gm;
}

Annotation annotation(const LatentState& state, const Formula& f) {
    int group = -1;
    for (size_t g = 0; g < state.lattice.formulas.size(); ++g)
        if (state.lattice.formulas[g] == f) group = static_cast<int>(g);
    if (group < 0 || state.p_formula(group) <= 0.0)
        throw ValidationError("formula outside predicted support: " + f.str());

    Annotation ann;
    for (int ci = 0; ci < state.lattice.num_cells; ++ci) {
        if (!state.lattice.cell_valid[ci] || state.lattice.cell_formula[ci] != group) continue;
        double p = std::exp(state.log_joint[ci] - state.log_formula[group]);
        ann.probs.push_back({state.lattice.node_ids[state.lattice.cell_node[ci]], p});
    }
    std::sort(ann.probs.begin(), ann.probs.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    ann.argmax = ann.probs.front().first;
    return ann;
}

IsoAggregate iso_aggregate(const LatentState& state) {
    const CellLattice& lat = state.lattice;
    IsoAggregate agg;
    for (int c : lat.node_iso_class) agg.num_classes = std::max(agg.num_classes, c + 1);
    int ng = static_cast<int>(lat.formulas.size());

    std::vector<std::vector<double>> class_terms(agg.num_classes);
    std::vector<std::vector<std::vector<double>>> joint_terms(
        agg.num_classes, std::vector<std::vector<double>>(ng));
    for (int ci = 0; ci < lat.num_cells; ++ci) {
        if (!lat.cell_valid[ci]) continue;
        int cls = lat.node_iso_class[lat.cell_node[ci]];
        class_terms[cls].push_back(state.log_joint[ci]);
        joint_terms[cls][lat.cell_formula[ci]].push_back(state.log_joint[ci]);
    }
    agg.log_class.resize(agg.num_classes);
    agg.log_f_given_class.assign(agg.num_classes, std::vector<double>(ng, kNegInf));
    agg.log_class_given_f.assign(ng, std::vector<double>(agg.num_classes, kNegInf));
    for (int c = 0; c < agg.num_classes; ++c) {
        agg.log_class[c] = logsumexp(class_terms[c]);
        for (int g = 0; g < ng; ++g) {
            double lj = logsumexp(joint_terms[c][g]);
            if (agg.log_class[c] != kNegInf)
                agg.log_f_given_class[c][g] = lj - agg.log_class[c];
            if (state.log_formula[g] != kNegInf)
                agg.log_class_given_f[g][c] = lj - state.log_formula[g];
        }
    }
    return agg;
}

namespace {

// support sizes for normalized entropies; see header
struct SupportSizes {
    int n, f, f_given_n, n_given_f;
};

SupportSizes support_sizes(const CellLattice& lat) {
    SupportSizes s{lat.num_nodes, static_cast<int>(lat.formulas.size()), 0, 0};
    std::vector<int> offs(lat.num_nodes, 0);
    std::vector<int> share(lat.formulas.size(), 0);
    std::vector<std::vector<bool>> seen(lat.formulas.size(),
                                        std::vector<bool>(lat.num_nodes, false));
    for (int ci = 0; ci < lat.num_cells; ++ci) {
        if (!lat.cell_valid[ci]) continue;
        ++offs[lat.cell_node[ci]];
        int g = lat.cell_formula[ci];
        if (!seen[g][lat.cell_node[ci]]) {
            seen[g][lat.cell_node[ci]] = true;
            ++share[g];
        }
    }
    for (int v : offs) s.f_given_n = std::max(s.f_given_n, v);
    for (int v : share) s.n_given_f = std::max(s.n_given_f, v);
    return s;
}

double normalize_entropy(double h, int support) {
    return support > 1 ? h / std::log(static_cast<double>(support)) : 0.0;
}

}  // namespace

Entropies entropies(const LatentState& state) {
    const CellLattice& lat = state.lattice;
    Entropies e;
    for (double lp : state.log_node) e.h_n += nplogp(lp);
    for (double lp : state.log_formula) e.h_f += nplogp(lp);
    for (int ci = 0; ci < lat.num_cells; ++ci) {
        if (!lat.cell_valid[ci]) continue;
        double lj = state.log_joint[ci];
        double p = std::exp(lj);
        if (p == 0.0) continue;
        e.h_f_given_n += -p * (lj - state.log_node[lat.cell_node[ci]]);
        e.h_n_given_f += -p * (lj - state.log_formula[lat.cell_formula[ci]]);
    }
    SupportSizes s = support_sizes(lat);
    e.hn_n = normalize_entropy(e.h_n, s.n);
    e.hn_f = normalize_entropy(e.h_f, s.f);
    e.hn_f_given_n = normalize_entropy(e.h_f_given_n, s.f_given_n);
    e.hn_n_given_f = normalize_entropy(e.h_n_given_f, s.n_given_f);
    return e;
}

double entropy_n_given_f_iso(const LatentState& state) {
    IsoAggregate agg = iso_aggregate(state);
    double h = 0.0;
    for (size_t g = 0; g < state.lattice.formulas.size(); ++g) {
        double pf = state.p_formula(static_cast<int>(g));
        if (pf == 0.0) continue;
        double hg = 0.0;
        for (int c = 0; c < agg.num_classes; ++c) hg += nplogp(agg.log_class_given_f[g][c]);
        h += pf * hg;
    }
    return h;
}

std::string annotated_spectrum_jsonl(const LatentState& state, double min_prob, int top_k) {
    const CellLattice& lat = state.lattice;
    IsoAggregate agg = iso_aggregate(state);
    std::vector<int> order(lat.formulas.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return lat.formula_mass_da[a] < lat.formula_mass_da[b]; });

    std::ostringstream out;
    for (int g : order) {
        double pf = state.p_formula(g);
        if (pf < min_prob) continue;
        nlohmann::json line;
        line["mass"] = lat.formula_mass_da[g];
        line["intensity"] = pf;
        line["formula"] = lat.formulas[g].str();
        Annotation ann = annotation(state, lat.formulas[g]);
        nlohmann::json tops = nlohmann::json::array();
        for (int i = 0; i < std::min<int>(top_k, static_cast<int>(ann.probs.size())); ++i) {
            char hex[32];
            std::snprintf(hex, sizeof(hex), "%llx",
                          static_cast<unsigned long long>(ann.probs[i].first));
            tops.push_back({{"node_id", ann.probs[i].first},
                            {"mask_hex", std::string(hex)},
                            {"prob", ann.probs[i].second}});
        }
        line["top_annotations"] = tops;
        nlohmann::json isos = nlohmann::json::array();
        std::vector<std::pair<double, int>> cls;
        for (int c = 0; c < agg.num_classes; ++c) {
            double p = std::exp(agg.log_class_given_f[g][c]);
            if (p >= min_prob) cls.push_back({-p, c});
        }
        std::sort(cls.begin(), cls.end());
        for (int i = 0; i < std::min<int>(top_k, static_cast<int>(cls.size())); ++i)
            isos.push_back({{"class_id", cls[i].second}, {"prob", -cls[i].first}});
        line["iso_annotations"] = isos;
        out << line.dump() << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Differentiable latent summaries

TapeLatent build_tape_latent(Tape& tape, Tape::Id joint_col, const CellLattice& lat) {
    TapeLatent tl;
    std::vector<int> cell_idx(lat.num_cells);
    for (int i = 0; i < lat.num_cells; ++i) cell_idx[i] = i;
    tl.log_cells = tape.gather_rows(joint_col, cell_idx);
    tl.log_os = tape.gather_rows(joint_col, {lat.num_cells});
    tl.log_node = tape.segment_logsumexp(tl.log_cells, lat.cell_node, lat.num_nodes);
    int ng = static_cast<int>(lat.formulas.size());
    tl.log_formula = tape.segment_logsumexp(tl.log_cells, lat.cell_formula, ng);

    auto h_n = tape.neg(tape.reduce_sum(tape.xexpy(tl.log_node, tl.log_node)));
    auto h_f = tape.neg(tape.reduce_sum(tape.xexpy(tl.log_formula, tl.log_formula)));
    auto lcond_n = tape.sub(tl.log_cells, tape.gather_rows(tl.log_node, lat.cell_node));
    auto h_fgn = tape.neg(tape.reduce_sum(tape.xexpy(tl.log_cells, lcond_n)));
    auto lcond_f = tape.sub(tl.log_cells, tape.gather_rows(tl.log_formula, lat.cell_formula));
    auto h_ngf = tape.neg(tape.reduce_sum(tape.xexpy(tl.log_cells, lcond_f)));

    SupportSizes s = support_sizes(lat);
    auto norm = [&](Tape::Id h, int support) {
        if (support > 1) return tape.scale(h, 1.0 / std::log(static_cast<double>(support)));
        return tape.scale(h, 0.0);
    };
    tl.hn_n = norm(h_n, s.n);
    tl.hn_f = norm(h_f, s.f);
    tl.hn_f_given_n = norm(h_fgn, s.f_given_n);
    tl.hn_n_given_f = norm(h_ngf, s.n_given_f);
    return tl;
}

LatentState predict_state(const ModelParams& params, const MolGraph& mol,
                          const std::vector<int>& energies, AdductMode mode) {
    auto ctx = prepare_molecule(mol, params.config, mode);
    ctx.energies = energies;
    auto r = forward(params, ctx);
    return latent_from_logits(r.tape.value(r.joint_logits), r.tape.value(r.os_logit).at(0, 0),
                              ctx.lattice);
}

// ---------------------------------------------------------------------------
// Spectrum files

std::vector<Spectrum> read_spectra(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read spectrum file: " + path);
    std::vector<Spectrum> out;
    std::string line;
    Spectrum cur;
    int expect = -1;
    bool open = false;
    auto flush = [&]() {
        if (!open) return;
        if (expect >= 0 && static_cast<int>(cur.peaks.size()) != expect)
            throw ValidationError("spectrum " + cur.id + ": NUMPEAKS mismatch");
        out.push_back(cur);
        cur = Spectrum{};
        expect = -1;
        open = false;
    };
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            flush();
            continue;
        }
        if (line.rfind("ID: ", 0) == 0) {
            cur.id = line.substr(4);
            open = true;
        } else if (line.rfind("ENERGIES: ", 0) == 0) {
            std::stringstream ss(line.substr(10));
            std::string tok;
            while (std::getline(ss, tok, ',')) cur.energies.push_back(std::stoi(tok));
            open = true;
        } else if (line.rfind("NUMPEAKS: ", 0) == 0) {
            expect = std::stoi(line.substr(10));
            open = true;
        } else {
            std::istringstream ss(line);
            Peak p;
            if (!(ss >> p.mass >> p.intensity))
                throw ValidationError("bad peak line in " + path + ": " + line);
            cur.peaks.push_back(p);
            open = true;
        }
    }
    flush();
    return out;
}

void write_spectra(const std::string& path, const std::vector<Spectrum>& spectra) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write spectrum file: " + path);
    char buf[64];
    for (const auto& sp : spectra) {
        out << "ID: " << sp.id << "\n";
        out << "ENERGIES: ";
        for (size_t i = 0; i < sp.energies.size(); ++i)
            out << (i ? "," : "") << sp.energies[i];
        out << "\n";
        out << "NUMPEAKS: " << sp.peaks.size() << "\n";
        for (const auto& p : sp.peaks) {
            std::snprintf(buf, sizeof(buf), "%.5f %.8f", p.mass, p.intensity);
            out << buf << "\n";
        }
        out << "\n";
    }
}

}  // namespace fragnn
