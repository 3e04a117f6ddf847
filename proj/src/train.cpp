#include "fragnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "fragnn/metrics.hpp"

namespace fragnn {

namespace {

constexpr double kLogFloor = -745.0;

bool within_10ppm(double support_mass, double mass) {
    return std::abs(support_mass - mass) <= 1e-5 * std::max(support_mass, mass);
}

}  // namespace

OsPartitionResult os_partition(const Spectrum& spectrum, const std::vector<double>& support) {
    OsPartitionResult r;
    for (const auto& p : spectrum.peaks) {
        bool is = false;
        for (double s : support)
            if (within_10ppm(s, p.mass)) is = true;
        (is ? r.is_peaks : r.os_peaks).push_back(p);
        if (!is) r.p_os += p.intensity;
    }
    return r;
}

LossTargets match_peaks(const Spectrum& spectrum, const CellLattice& lattice) {
    LossTargets t;
    t.group_intensity.assign(lattice.formulas.size(), 0.0);
    for (const auto& p : spectrum.peaks) {
        int best = -1;
        double best_d = 0;
        for (size_t g = 0; g < lattice.formula_mass_da.size(); ++g) {
            double m = lattice.formula_mass_da[g];
            if (!within_10ppm(m, p.mass)) continue;
            double d = std::abs(m - p.mass);
            if (best < 0 || d < best_d) {
                best = static_cast<int>(g);
                best_d = d;
            }
        }
        if (best >= 0)
            t.group_intensity[best] += p.intensity;
        else
            t.os_intensity += p.intensity;
    }
    return t;
}

double nll_loss(const LatentState& state, const Spectrum& spectrum) {
    LossTargets t = match_peaks(spectrum, state.lattice);
    double loss = 0.0;
    for (size_t g = 0; g < t.group_intensity.size(); ++g)
        if (t.group_intensity[g] > 0)
            loss -= t.group_intensity[g] * std::max(state.log_formula[g], kLogFloor);
    return loss;
}

double loss_with_os(const LatentState& state, const Spectrum& spectrum, bool* clamped) {
    if (clamped) *clamped = false;
    LossTargets t = match_peaks(spectrum, state.lattice);
    double loss = nll_loss(state, spectrum);
    if (t.os_intensity > 0) {
        double lo = state.log_os;
        if (lo < kLogFloor) {
            lo = kLogFloor;
            if (clamped) *clamped = true;
        }
        loss -= t.os_intensity * lo;
    }
    return loss;
}

double reg_loss(const LatentState& state, double loss, const Alphas& alphas) {
    auto e = entropies(state);
    return loss + alphas.n * e.hn_n + alphas.f * e.hn_f + alphas.f_given_n * e.hn_f_given_n +
           alphas.n_given_f * e.hn_n_given_f;
}

Tape::Id loss_with_os_tape(Tape& tape, const TapeLatent& latent, const CellLattice& lattice,
                           const LossTargets& targets) {
    Array w(static_cast<int>(lattice.formulas.size()), 1, 0.0);
    for (size_t g = 0; g < targets.group_intensity.size(); ++g)
        w.at(static_cast<int>(g), 0) = targets.group_intensity[g];
    auto lf = tape.clamp_min(latent.log_formula, kLogFloor);
    auto loss = tape.neg(tape.reduce_sum(tape.mul(lf, tape.constant(std::move(w)))));
    if (targets.os_intensity > 0) {
        auto lo = tape.clamp_min(latent.log_os, kLogFloor);
        loss = tape.add(loss, tape.scale(tape.reduce_sum(lo), -targets.os_intensity));
    }
    return loss;
}

Tape::Id reg_loss_tape(Tape& tape, const TapeLatent& latent, Tape::Id loss,
                       const Alphas& alphas) {
    auto out = loss;
    if (alphas.n != 0) out = tape.add(out, tape.scale(latent.hn_n, alphas.n));
    if (alphas.f != 0) out = tape.add(out, tape.scale(latent.hn_f, alphas.f));
    if (alphas.f_given_n != 0)
        out = tape.add(out, tape.scale(latent.hn_f_given_n, alphas.f_given_n));
    if (alphas.n_given_f != 0)
        out = tape.add(out, tape.scale(latent.hn_n_given_f, alphas.n_given_f));
    return out;
}

Spectrum merge_spectra(const std::vector<Spectrum>& spectra) {
    if (spectra.empty()) throw ValidationError("merge_spectra: empty input");
    std::map<double, double> acc;
    std::set<int> energies;
    for (const auto& sp : spectra) {
        for (const auto& p : sp.peaks) acc[p.mass] += p.intensity;
        energies.insert(sp.energies.begin(), sp.energies.end());
    }
    Spectrum out;
    out.id = spectra.front().id;
    out.energies.assign(energies.begin(), energies.end());
    double total = 0;
    for (const auto& [m, i] : acc) total += i;
    for (const auto& [m, i] : acc)
        if (i > 0) out.peaks.push_back({m, i / total});
    return out;
}

OracleParams OracleParams::defaults(int j, uint64_t seed) {
    OracleParams p;
    p.propensity = {{Elem::C, 1.0},  {Elem::O, 1.6}, {Elem::N, 0.8},  {Elem::P, 1.2},
                    {Elem::S, 1.1},  {Elem::F, 0.6}, {Elem::Cl, 0.7}, {Elem::Br, 0.9},
                    {Elem::I, 1.3},  {Elem::Se, 1.4}, {Elem::Si, 1.05}};
    p.depth_decay = 0.4;
    double total = 0;
    for (int i = -j; i <= j; ++i) total += 1.0 / (1.0 + std::abs(i));
    for (int i = -j; i <= j; ++i) p.offset_weights.push_back(1.0 / (1.0 + std::abs(i)) / total);
    p.seed = seed;
    return p;
}

std::vector<SpectrumRecord> synth_generate(const std::vector<MolGraph>& molecules,
                                           const OracleParams& oracle, int d, int j) {
    if (static_cast<int>(oracle.offset_weights.size()) != 2 * j + 1)
        throw ValidationError("synth_generate: offset weights must cover -j..+j");
    for (const auto& [e, v] : oracle.propensity)
        if (v <= 0) throw ValidationError("synth_generate: propensities must be positive");
    if (oracle.os_fraction < 0 || oracle.os_fraction >= 1)
        throw ValidationError("synth_generate: os_fraction must be in [0, 1)");

    std::mt19937_64 rng(oracle.seed);
    std::vector<SpectrumRecord> out;
    for (const auto& mol : molecules) {
        MolGraph skel = heavy_skeleton(mol);
        FragDag dag = rec_frag(skel, d);
        CellLattice lat = build_lattice(dag, j, AdductMode::Protonated);

        auto prop = [&](Elem e) {
            auto it = oracle.propensity.find(e);
            return it == oracle.propensity.end() ? 1.0 : it->second;
        };
        std::vector<double> score(lat.num_cells, 0.0);
        double total = 0.0;
        for (int ni = 0; ni < lat.num_nodes; ++ni) {
            Mask m = lat.node_ids[ni];
            const FragNode& node = dag.nodes.at(m);
            double base = 1.0;
            for (const auto& b : skel.bonds) {
                bool ia = m & (Mask(1) << b.a), ib = m & (Mask(1) << b.b);
                if (ia != ib)
                    base *= prop(skel.atoms[b.a].element) * prop(skel.atoms[b.b].element);
            }
            base *= std::pow(oracle.depth_decay, *node.depth_set.begin());
            for (int pos = 0; pos < lat.num_offsets; ++pos) {
                int ci = lat.cell_index(ni, pos);
                if (!lat.cell_valid[ci]) continue;
                score[ci] = base * oracle.offset_weights[pos];
                total += score[ci];
            }
        }

        std::map<double, double> peak_map;  // mass -> intensity, merged by formula
        for (int ci = 0; ci < lat.num_cells; ++ci)
            if (score[ci] > 0)
                peak_map[lat.formula_mass_da[lat.cell_formula[ci]]] += score[ci] / total;

        SpectrumRecord rec;
        rec.molecule_id = mol.id;
        rec.mol = mol;
        int ne = 1 + static_cast<int>(rng() % 3);
        std::set<int> es;
        while (static_cast<int>(es.size()) < ne) es.insert(static_cast<int>(rng() % 201));
        rec.energies.assign(es.begin(), es.end());

        double q = oracle.os_fraction;
        rec.spectrum.id = mol.id;
        rec.spectrum.energies = rec.energies;
        for (const auto& [m, i] : peak_map) rec.spectrum.peaks.push_back({m, i * (1.0 - q)});
        if (q > 0) {
            std::vector<double> support;
            for (const auto& [m, i] : peak_map) support.push_back(m);
            std::uniform_real_distribution<double> rel(50e-6, 500e-6);
            std::uniform_int_distribution<int> pick(0, static_cast<int>(support.size()) - 1);
            double os_mass = 0;
            for (int tries = 0; tries < 1000; ++tries) {
                double base = support[pick(rng)];
                double sign = (rng() & 1) ? 1.0 : -1.0;
                os_mass = base * (1.0 + sign * rel(rng));
                bool clash = false;
                for (double s : support)
                    if (within_10ppm(s, os_mass)) clash = true;
                if (!clash && os_mass > 0) break;
            }
            std::vector<Peak> merged;
            bool placed = false;
            for (const auto& p : rec.spectrum.peaks) {
                if (!placed && os_mass < p.mass) {
                    merged.push_back({os_mass, q});
                    placed = true;
                }
                merged.push_back(p);
            }
            if (!placed) merged.push_back({os_mass, q});
            rec.spectrum.peaks = merged;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

namespace {

uint64_t hash_id(const std::string& id, uint64_t seed) {
    uint64_t h = 1469598103934665603ull ^ (seed * 0x9e3779b97f4a7c15ull);
    for (char c : id) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    // final avalanche
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    return h;
}

}  // namespace

void split_dataset(std::vector<SpectrumRecord>& records, const std::array<double, 3>& ratios,
                   uint64_t seed) {
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split_dataset: ratios must sum to 1");
    for (auto& rec : records) {
        double u = static_cast<double>(hash_id(rec.molecule_id, seed) >> 11) /
                   static_cast<double>(1ull << 53);
        if (u < ratios[0])
            rec.split = Split::Train;
        else if (u < ratios[0] + ratios[1])
            rec.split = Split::Val;
        else
            rec.split = Split::Test;
    }
}

TrainResult train_model(const std::vector<SpectrumRecord>& dataset, const ModelConfig& model_cfg,
                        const TrainConfig& train_cfg) {
    std::vector<int> train_idx, val_idx;
    for (size_t i = 0; i < dataset.size(); ++i) {
        if (dataset[i].split == Split::Train) train_idx.push_back(static_cast<int>(i));
        if (dataset[i].split == Split::Val) val_idx.push_back(static_cast<int>(i));
    }
    if (train_idx.empty()) throw ValidationError("train_model: no training records");

    // molecule preparation and peak matching are static; cache per record
    std::vector<MoleculeContext> contexts(dataset.size());
    std::vector<LossTargets> targets(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) {
        if (dataset[i].split == Split::Test) continue;
        contexts[i] = prepare_molecule(dataset[i].mol, model_cfg);
        contexts[i].energies = dataset[i].energies;
        targets[i] = match_peaks(dataset[i].spectrum, contexts[i].lattice);
    }

    ModelParams params = init_params(model_cfg);
    size_t np = params.arrays.size();
    std::vector<Array> m1(np), m2(np);
    for (size_t i = 0; i < np; ++i) {
        m1[i] = Array(params.arrays[i].rows, params.arrays[i].cols, 0.0);
        m2[i] = Array(params.arrays[i].rows, params.arrays[i].cols, 0.0);
    }

    auto record_loss = [&](int ri, std::vector<Array>* grads) {
        auto r = forward(params, contexts[ri]);
        auto tl = build_tape_latent(r.tape, r.joint_col, contexts[ri].lattice);
        auto loss = loss_with_os_tape(r.tape, tl, contexts[ri].lattice, targets[ri]);
        if (train_cfg.alphas.any()) loss = reg_loss_tape(r.tape, tl, loss, train_cfg.alphas);
        double lv = r.tape.value(loss).at(0, 0);
        if (grads) {
            r.tape.backward(loss);
            for (size_t p = 0; p < np; ++p) {
                const Array& g = r.tape.grad(r.param_ids[p]);
                for (size_t k = 0; k < g.size(); ++k) (*grads)[p].data[k] += g.data[k];
            }
        }
        return lv;
    };

    TrainResult result;
    result.params = params;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    std::mt19937_64 rng(train_cfg.seed);
    long long step = 0;
    int since_best = 0;

    for (int epoch = 0; epoch < train_cfg.max_epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        double train_loss = 0;
        for (size_t start = 0; start < train_idx.size();
             start += static_cast<size_t>(train_cfg.batch_size)) {
            size_t end = std::min(train_idx.size(), start + train_cfg.batch_size);
            std::vector<Array> grads(np);
            for (size_t p = 0; p < np; ++p)
                grads[p] = Array(params.arrays[p].rows, params.arrays[p].cols, 0.0);
            for (size_t b = start; b < end; ++b) {
                double lv = record_loss(train_idx[b], &grads);
                if (!std::isfinite(lv))
                    throw TrainDivergence("non-finite loss at epoch " + std::to_string(epoch) +
                                          ", record " + dataset[train_idx[b]].molecule_id);
                train_loss += lv;
            }
            double inv = 1.0 / static_cast<double>(end - start);
            ++step;
            double bc1 = 1.0 - std::pow(train_cfg.beta1, static_cast<double>(step));
            double bc2 = 1.0 - std::pow(train_cfg.beta2, static_cast<double>(step));
            for (size_t p = 0; p < np; ++p)
                for (size_t k = 0; k < grads[p].size(); ++k) {
                    double g = grads[p].data[k] * inv;
                    m1[p].data[k] = train_cfg.beta1 * m1[p].data[k] + (1 - train_cfg.beta1) * g;
                    m2[p].data[k] =
                        train_cfg.beta2 * m2[p].data[k] + (1 - train_cfg.beta2) * g * g;
                    params.arrays[p].data[k] -= train_cfg.lr * (m1[p].data[k] / bc1) /
                                                (std::sqrt(m2[p].data[k] / bc2) + train_cfg.eps);
                }
        }
        train_loss /= static_cast<double>(train_idx.size());

        EpochStats st;
        st.epoch = epoch;
        st.train_loss = train_loss;
        if (!val_idx.empty()) {
            double vl = 0, cb = 0, ch = 0;
            for (int vi : val_idx) {
                auto r = forward(params, contexts[vi]);
                auto state = latent_from_logits(r.tape.value(r.joint_logits),
                                                r.tape.value(r.os_logit).at(0, 0),
                                                contexts[vi].lattice);
                double lv = loss_with_os(state, dataset[vi].spectrum);
                if (train_cfg.alphas.any()) lv = reg_loss(state, lv, train_cfg.alphas);
                vl += lv;
                Spectrum pred = dirac_spectrum(state);
                cb += cos_binned(pred, dataset[vi].spectrum);
                ch += cos_hungarian(pred, dataset[vi].spectrum);
            }
            double nv = static_cast<double>(val_idx.size());
            st.val_loss = vl / nv;
            st.val_cos_binned = cb / nv;
            st.val_cos_hungarian = ch / nv;
            if (!std::isfinite(st.val_loss))
                throw TrainDivergence("non-finite validation loss at epoch " +
                                      std::to_string(epoch));
        } else {
            st.val_loss = train_loss;
        }
        result.history.push_back(st);
        if (train_cfg.verbose)
            std::fprintf(stderr, "epoch %d train %.4f val %.4f coshun %.4f\n", epoch,
                         st.train_loss, st.val_loss, st.val_cos_hungarian);

        if (st.val_loss < result.best_val_loss) {
            result.best_val_loss = st.val_loss;
            result.best_epoch = epoch;
            result.params = params;
            since_best = 0;
        } else if (++since_best >= train_cfg.patience) {
            break;
        }
    }
    return result;
}

FileConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config file: " + path);
    FileConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto l = line.find_first_not_of(" \t\r");
        if (l == std::string::npos) continue;
        auto r = line.find_last_not_of(" \t\r");
        line = line.substr(l, r - l + 1);
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        auto ke = key.find_last_not_of(" \t");
        key = key.substr(0, ke + 1);
        auto vs = val.find_first_not_of(" \t");
        val = vs == std::string::npos ? "" : val.substr(vs);

        try {
            if (key == "hidden_dim") cfg.model.hidden_dim = std::stoi(val);
            else if (key == "mol_layers") cfg.model.L1 = std::stoi(val);
            else if (key == "frag_layers") cfg.model.L2 = std::stoi(val);
            else if (key == "depth") cfg.model.d = std::stoi(val);
            else if (key == "hydrogen_tol") cfg.model.j = std::stoi(val);
            else if (key == "fourier_terms") cfg.model.fourier_T = std::stoi(val);
            else if (key == "use_frag_edges") cfg.model.use_frag_edges = val == "true" || val == "1";
            else if (key == "use_collision_energy")
                cfg.model.use_collision_energy = val == "true" || val == "1";
            else if (key == "model_seed") cfg.model.seed = std::stoull(val);
            else if (key == "lr") cfg.train.lr = std::stod(val);
            else if (key == "beta1") cfg.train.beta1 = std::stod(val);
            else if (key == "beta2") cfg.train.beta2 = std::stod(val);
            else if (key == "batch_size") cfg.train.batch_size = std::stoi(val);
            else if (key == "patience") cfg.train.patience = std::stoi(val);
            else if (key == "max_epochs") cfg.train.max_epochs = std::stoi(val);
            else if (key == "alpha_n") cfg.train.alphas.n = std::stod(val);
            else if (key == "alpha_f") cfg.train.alphas.f = std::stod(val);
            else if (key == "alpha_f_given_n") cfg.train.alphas.f_given_n = std::stod(val);
            else if (key == "alpha_n_given_f") cfg.train.alphas.n_given_f = std::stod(val);
            else if (key == "train_seed") cfg.train.seed = std::stoull(val);
            else
                throw ValidationError("config line " + std::to_string(lineno) +
                                      ": unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ValidationError("config line " + std::to_string(lineno) + ": bad value for '" +
                                  key + "'");
        }
    }
    cfg.model.validate();
    return cfg;
}

std::vector<SpectrumRecord> read_records(const std::string& molecules_path,
                                         const std::string& spectra_path) {
    auto mols = read_molecule_file(molecules_path);
    std::map<std::string, const MolGraph*> by_id;
    for (const auto& m : mols) by_id[m.id] = &m;
    auto spectra = read_spectra(spectra_path);
    std::vector<SpectrumRecord> out;
    for (auto& sp : spectra) {
        auto it = by_id.find(sp.id);
        if (it == by_id.end())
            throw ValidationError("spectrum '" + sp.id + "' has no molecule entry");
        SpectrumRecord rec;
        rec.molecule_id = sp.id;
        rec.mol = *it->second;
        rec.energies = sp.energies;
        rec.spectrum = std::move(sp);
        out.push_back(std::move(rec));
    }
    return out;
}

void write_records(const std::string& molecules_path, const std::string& spectra_path,
                   const std::vector<SpectrumRecord>& records) {
    std::vector<MolGraph> mols;
    std::vector<Spectrum> spectra;
    for (const auto& rec : records) {
        mols.push_back(rec.mol);
        spectra.push_back(rec.spectrum);
    }
    write_molecule_file(molecules_path, mols);
    write_spectra(spectra_path, spectra);
}

}  // namespace fragnn
