// End-to-end acceptance checks. Each criterion prints exactly one pass/FAIL
// line; the binary exits nonzero if any criterion fails. A5/A6/A9/A10 train
// real models and dominate the runtime (several minutes on one core).

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fragnn/metrics.hpp"
#include "fragnn/retrieve.hpp"
#include "fragnn/train.hpp"

using namespace fragnn;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;
Clock::time_point g_t0;

void begin() { g_t0 = Clock::now(); }

void report(const char* id, bool ok, const std::string& detail) {
    double secs = std::chrono::duration<double>(Clock::now() - g_t0).count();
    std::printf("%s %s  %s (%.1fs)\n", id, ok ? "pass" : "FAIL", detail.c_str(), secs);
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

// ---- random molecule generation: valence-respecting trees over C/N/O, with
// an optional extra ring-closing bond ----

MolGraph random_mol(std::mt19937_64& rng, int min_heavy, int max_heavy, bool allow_ring) {
    const ElementTable& tab = ElementTable::builtin();
    int n = min_heavy + static_cast<int>(rng() % (max_heavy - min_heavy + 1));
    MolGraph g;
    const Elem pool[6] = {Elem::C, Elem::C, Elem::C, Elem::C, Elem::N, Elem::O};
    std::vector<int> used;
    for (int i = 0; i < n; ++i) {
        Atom a;
        a.element = pool[rng() % 6];
        g.atoms.push_back(a);
        used.push_back(0);
        if (i == 0) continue;
        std::vector<int> cand;
        for (int p = 0; p < i; ++p)
            if (used[p] < tab.valence(g.atoms[p].element)) cand.push_back(p);
        if (cand.empty()) {
            g.atoms.pop_back();
            used.pop_back();
            break;
        }
        int p = cand[rng() % cand.size()];
        int ord = 1;
        if (tab.valence(g.atoms[p].element) - used[p] >= 2 &&
            tab.valence(g.atoms.back().element) >= 2 && rng() % 5 == 0)
            ord = 2;
        g.bonds.push_back({p, i, ord == 2 ? BondOrder::Double : BondOrder::Single});
        used[p] += ord;
        used.back() += ord;
    }
    if (allow_ring && g.atoms.size() >= 4 && rng() % 3 == 0) {
        std::set<std::pair<int, int>> have;
        for (const auto& b : g.bonds) have.insert({std::min(b.a, b.b), std::max(b.a, b.b)});
        for (int tries = 0; tries < 20; ++tries) {
            int u = static_cast<int>(rng() % g.atoms.size());
            int v = static_cast<int>(rng() % g.atoms.size());
            if (u == v) continue;
            auto key = std::make_pair(std::min(u, v), std::max(u, v));
            if (have.count(key)) continue;
            if (used[u] >= tab.valence(g.atoms[u].element)) continue;
            if (used[v] >= tab.valence(g.atoms[v].element)) continue;
            g.bonds.push_back({key.first, key.second, BondOrder::Single});
            ++used[u];
            ++used[v];
            break;
        }
    }
    for (size_t i = 0; i < g.atoms.size(); ++i)
        g.atoms[i].implicit_h = tab.valence(g.atoms[i].element) - used[i];
    return g;
}

std::vector<MolGraph> mol_pool(int count, int min_heavy, int max_heavy, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<MolGraph> out;
    std::set<std::vector<uint64_t>> seen;  // dedupe by fingerprint
    int guard = 0;
    while (static_cast<int>(out.size()) < count && ++guard < count * 100) {
        MolGraph g = random_mol(rng, min_heavy, max_heavy, false);
        if (!seen.insert(fingerprint(g).bits).second) continue;
        g.id = "m" + std::to_string(out.size());
        out.push_back(std::move(g));
    }
    return out;
}

// ---- reference data: spectra produced by a fixed teacher model of the same
// architecture, weights scaled so its distributions are sharp enough to
// require actual fitting ----

ModelParams make_teacher(const ModelConfig& cfg) {
    ModelConfig tc = cfg;
    tc.seed = 2024;
    auto teacher = init_params(tc);
    for (auto& a : teacher.arrays)
        for (int r = 0; r < a.rows; ++r)
            for (int c = 0; c < a.cols; ++c) a.at(r, c) *= 1.25;
    return teacher;
}

std::vector<SpectrumRecord> teacher_data(const ModelParams& teacher,
                                         const std::vector<MolGraph>& mols, double q,
                                         uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<SpectrumRecord> out;
    for (const auto& mol : mols) {
        auto st = predict_state(teacher, mol, {20, 40});
        Spectrum sp = dirac_spectrum(st);
        double total = 0;
        for (auto& p : sp.peaks) total += p.intensity;
        for (auto& p : sp.peaks) p.intensity *= (1.0 - q) / total;
        if (q > 0) {
            // one deliberately unexplainable peak, away from every support mass
            const auto& support = st.lattice.formula_mass_da;
            double mass = 0;
            for (int tries = 0; tries < 1000; ++tries) {
                double base = support[rng() % support.size()];
                double delta = (50e-6 + (rng() % 1000) * 450e-9) * (rng() % 2 ? 1 : -1);
                mass = base * (1 + delta);
                bool clash = false;
                for (double s : support)
                    if (std::abs(s - mass) <= 1e-5 * std::max(s, mass)) clash = true;
                if (!clash) break;
            }
            size_t k = 0;
            while (k < sp.peaks.size() && sp.peaks[k].mass < mass) ++k;
            sp.peaks.insert(sp.peaks.begin() + k, {mass, q});
        }
        sp.id = mol.id;
        sp.energies = {20, 40};
        SpectrumRecord r;
        r.molecule_id = mol.id;
        r.mol = mol;
        r.spectrum = std::move(sp);
        r.energies = {20, 40};
        out.push_back(std::move(r));
    }
    return out;
}

double target_entropy(const LossTargets& t) {
    double h = 0;
    for (double v : t.group_intensity)
        if (v > 0) h -= v * std::log(v);
    if (t.os_intensity > 0) h -= t.os_intensity * std::log(t.os_intensity);
    return h;
}

// shared across criteria: the main training run and its dataset
struct TrainedRun {
    std::vector<SpectrumRecord> records;
    std::vector<MolGraph> mols;
    ModelParams model;
    bool ready = false;
};
TrainedRun g_a5;

// ---------------------------------------------------------------- criteria

void a1_dag_oracle() {
    begin();
    std::mt19937_64 rng(101);
    int ok = 0, total = 200;
    for (int i = 0; i < total; ++i) {
        MolGraph g = random_mol(rng, 2, 12, true);
        auto dag = rec_frag(g, g.num_atoms());
        std::set<Mask> got;
        for (Mask m : dag.node_ids()) got.insert(m);
        if (got == exhaustive_oracle(g)) ++ok;
    }
    report("A1", ok == total,
           fmt("recursive enumeration matches brute-force connected subgraphs on %d/%d "
               "molecules at full depth",
               ok, total));
}

void a2_literature_anchor() {
    begin();
    MolGraph skel = heavy_skeleton(parse_smiles("CNCO"));
    auto dag = rec_frag(skel, 3);

    // independent edge oracle: parent -> child iff the child is one of the two
    // components left by deleting a single bond of the parent's subgraph, and
    // the parent is itself expanded within the depth budget
    auto adj = skel.adjacency();
    std::set<std::pair<Mask, Mask>> want;
    for (const auto& [pmask, pnode] : dag.nodes) {
        if (*pnode.depth_set.begin() > dag.depth) continue;
        for (const auto& b : skel.bonds) {
            if (!((pmask >> b.a) & 1) || !((pmask >> b.b) & 1)) continue;
            for (int side : {b.a, b.b}) {
                // flood fill from `side` within pmask avoiding the cut bond
                Mask comp = 0;
                std::vector<int> stack = {side};
                while (!stack.empty()) {
                    int u = stack.back();
                    stack.pop_back();
                    if ((comp >> u) & 1) continue;
                    comp |= Mask(1) << u;
                    for (int v : adj[u]) {
                        if (!((pmask >> v) & 1)) continue;
                        bool cut = (u == b.a && v == b.b) || (u == b.b && v == b.a);
                        if (!cut) stack.push_back(v);
                    }
                }
                if (comp != pmask) want.insert({pmask, comp});
            }
        }
    }
    bool nodes_ok = dag.num_nodes() == 10;
    bool edges_ok = dag.edges == want;
    // note: a commonly quoted figure for this 4-atom chain is 19 edges; the
    // full single-cut containment enumeration above yields 20, which is what
    // the builder must reproduce
    report("A2", nodes_ok && edges_ok,
           fmt("4-heavy chain at depth 3: %d nodes (want 10), %d edges, matches cut "
               "enumeration (%zu)",
               dag.num_nodes(), dag.num_edges(), want.size()));
}

void a3_normalization() {
    begin();
    auto mols = mol_pool(50, 2, 8, 303);
    double worst_sum = 0, worst_chain = 0;
    for (int i = 0; i < 100; ++i) {
        ModelConfig cfg;
        cfg.hidden_dim = 8;
        cfg.L1 = 1;
        cfg.L2 = 1;
        cfg.seed = 1000 + i;
        auto params = init_params(cfg);
        auto st = predict_state(params, mols[i % mols.size()], {20, 40});
        double total = st.p_os();
        for (double lj : st.log_joint)
            if (std::isfinite(lj)) total += std::exp(lj);
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));
        auto e = entropies(st);
        worst_chain = std::max(worst_chain,
                               std::abs((e.h_n + e.h_f_given_n) - (e.h_f + e.h_n_given_f)));
    }
    report("A3", worst_sum <= 1e-9 && worst_chain <= 1e-9,
           fmt("100 models / 50 molecules: max |sum-1| = %.2e, max entropy-chain gap = %.2e",
               worst_sum, worst_chain));
}

void a4_gradients() {
    begin();
    ModelConfig cfg;
    cfg.hidden_dim = 8;
    cfg.L1 = 2;
    cfg.L2 = 1;
    cfg.j = 2;
    cfg.seed = 44;
    Alphas alphas{0.1, -0.1, 0.1, -0.1};
    size_t params_total = 0, failures = 0;
    double max_err = 0;
    for (const char* smiles : {"CCO", "CNCO", "CC(N)CO"}) {
        MolGraph mol = parse_smiles(smiles);
        mol.id = smiles;
        auto recs = synth_generate({mol}, OracleParams::defaults(cfg.j, 7), cfg.d, cfg.j);
        auto ctx = prepare_molecule(mol, cfg);
        ctx.energies = recs[0].energies;
        auto targets = match_peaks(recs[0].spectrum, ctx.lattice);
        auto params = init_params(cfg);
        auto fn = [&](const std::vector<Array>& ps, std::vector<Array>* grads) {
            ModelParams mp = params;
            mp.arrays = ps;
            auto r = forward(mp, ctx);
            auto tl = build_tape_latent(r.tape, r.joint_col, ctx.lattice);
            auto loss = reg_loss_tape(r.tape, tl,
                                      loss_with_os_tape(r.tape, tl, ctx.lattice, targets),
                                      alphas);
            r.tape.backward(loss);
            if (grads) {
                grads->clear();
                for (auto id : r.param_ids) grads->push_back(r.tape.grad(id));
            }
            return r.tape.value(loss).at(0, 0);
        };
        auto rep = grad_check(fn, params.arrays, 1e-4);
        params_total += rep.num_params;
        failures += rep.num_failures;
        max_err = std::max(max_err, rep.max_rel_error);
    }
    report("A4", failures == 0 && max_err < 1e-4,
           fmt("full regularized loss: %zu params over 3 molecules, %zu failures, max rel "
               "err %.2e",
               params_total, failures, max_err));
}

void a5_closed_loop() {
    begin();
    ModelConfig desk;  // hidden 64, 3 molecule layers, 2 fragment layers, d=3, j=4
    auto teacher = make_teacher(desk);
    g_a5.mols = mol_pool(2000, 3, 8, 11);
    g_a5.records = teacher_data(teacher, g_a5.mols, 0.0, 99);
    split_dataset(g_a5.records, {0.6, 0.2, 0.2}, 5);

    ModelConfig student = desk;
    student.seed = 1;
    TrainConfig tc;
    tc.max_epochs = 30;
    tc.patience = 30;
    tc.seed = 5;
    auto res = train_model(g_a5.records, student, tc);
    g_a5.model = res.params;
    g_a5.ready = true;

    double loss_sum = 0, ent_sum = 0, cos_sum = 0;
    int n = 0;
    for (const auto& r : g_a5.records) {
        if (r.split != Split::Test) continue;
        auto st = predict_state(g_a5.model, r.mol, r.energies);
        loss_sum += loss_with_os(st, r.spectrum);
        ent_sum += target_entropy(match_peaks(r.spectrum, st.lattice));
        cos_sum += cos_hungarian(dirac_spectrum(st), r.spectrum);
        ++n;
    }
    double gap = std::abs(loss_sum / n - ent_sum / n);
    double cos = cos_sum / n;
    report("A5", cos >= 0.95 && gap <= 0.05,
           fmt("2000 in-family records: held-out mean COS_HUN %.4f (want >= 0.95), loss-to-"
               "entropy gap %.4f nats (want <= 0.05), n=%d",
               cos, gap, n));
}

void a6_os_calibration() {
    begin();
    if (!g_a5.ready) {
        report("A6", false, "skipped: A5 training unavailable");
        return;
    }
    ModelConfig desk;
    auto teacher = make_teacher(desk);
    auto records = teacher_data(teacher, g_a5.mols, 0.1, 77);
    split_dataset(records, {0.6, 0.2, 0.2}, 5);

    ModelConfig student = desk;
    student.seed = 2;
    TrainConfig tc;
    tc.max_epochs = 30;
    tc.patience = 30;
    tc.seed = 6;
    auto res = train_model(records, student, tc);

    std::vector<SpectrumRecord> test;
    for (const auto& r : records)
        if (r.split == Split::Test) test.push_back(r);
    double err = os_abs_error(test, res.params);
    report("A6", err <= 0.05,
           fmt("q=0.1 injected: held-out mean |P(OS) - P_model(OS)| = %.4f (want <= 0.05), "
               "n=%zu",
               err, test.size()));
}

// independent matcher: recursion over all one-to-one peak assignments
double brute_match(const Spectrum& a, const Spectrum& b, size_t i, std::vector<bool>& used,
                   double la, double lb) {
    if (i == a.peaks.size()) return 0.0;
    double best = brute_match(a, b, i + 1, used, la, lb);
    for (size_t k = 0; k < b.peaks.size(); ++k) {
        double ma = a.peaks[i].mass, mb = b.peaks[k].mass;
        if (used[k] || std::abs(ma - mb) > 1e-5 * std::max(ma, mb)) continue;
        used[k] = true;
        best = std::max(best, (a.peaks[i].intensity / la) * (b.peaks[k].intensity / lb) +
                                  brute_match(a, b, i + 1, used, la, lb));
        used[k] = false;
    }
    return best;
}

void a7_hungarian() {
    begin();
    std::mt19937_64 rng(707);
    std::uniform_real_distribution<double> mass(50, 500), inten(0.05, 1.0);
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
        Spectrum a, b;
        int na = 1 + static_cast<int>(rng() % 6), nb = 1 + static_cast<int>(rng() % 6);
        for (int i = 0; i < na; ++i) a.peaks.push_back({mass(rng), inten(rng)});
        for (int i = 0; i < nb; ++i) {
            // half the peaks jitter an existing mass to create admissible pairs
            double m = (i < na && rng() % 2) ? a.peaks[i].mass * (1 + (rng() % 19 - 9) * 1e-6)
                                             : mass(rng);
            b.peaks.push_back({m, inten(rng)});
        }
        double la = 0, lb = 0;
        for (const auto& p : a.peaks) la += p.intensity * p.intensity;
        for (const auto& p : b.peaks) lb += p.intensity * p.intensity;
        std::vector<bool> used(b.peaks.size(), false);
        double bf = brute_match(a, b, 0, used, std::sqrt(la), std::sqrt(lb));
        worst = std::max(worst, std::abs(cos_hungarian(a, b) - bf));
    }
    report("A7", worst <= 1e-9,
           fmt("assignment solver vs all-matchings recursion on 100 pairs: max |diff| = %.2e",
               worst));
}

void a8_support_identity() {
    begin();
    auto mols = mol_pool(500, 2, 8, 808);
    auto oracle = OracleParams::defaults(4, 88);
    oracle.os_fraction = 0.15;
    auto records = synth_generate(mols, oracle, 3, 4);
    double worst = 0;
    for (const auto& r : records) {
        auto dag = rec_frag(heavy_skeleton(r.mol), 3);
        auto lattice = build_lattice(dag, 4, AdductMode::Protonated);
        double wr = recall_metrics(r.spectrum, lattice.formula_mass_da).weighted_recall;
        double p_os = os_partition(r.spectrum, lattice.formula_mass_da).p_os;
        worst = std::max(worst, std::abs(wr - (1.0 - p_os)));
    }
    report("A8", worst <= 1e-12,
           fmt("weighted recall vs 1 - P(OS) on %zu records: max |diff| = %.2e",
               records.size(), worst));
}

void a9_ensemble_direction() {
    begin();
    ModelConfig desk;
    auto teacher = make_teacher(desk);
    auto mols = mol_pool(400, 3, 8, 21);
    auto records = teacher_data(teacher, mols, 0.0, 33);
    split_dataset(records, {0.7, 0.15, 0.15}, 9);
    std::vector<SpectrumRecord> test;
    for (const auto& r : records)
        if (r.split == Split::Test) test.push_back(r);

    std::map<int, EnsembleReport> reports;
    std::map<int, std::vector<ModelParams>> ensembles;
    for (int sgn : {-1, +1}) {
        std::vector<ModelParams> ensemble;
        for (int k = 0; k < 5; ++k) {
            // paired seeds: the regularizer sign is the only difference
            ModelConfig student = desk;
            student.seed = 100 + 10 * k;
            TrainConfig tc;
            tc.max_epochs = 30;
            tc.patience = 30;
            tc.seed = student.seed;
            tc.alphas.n_given_f = sgn * 0.01;
            ensemble.push_back(train_model(records, student, tc).params);
        }
        reports[sgn] = ensemble_consistency(ensemble, test);
        ensembles[sgn] = std::move(ensemble);
    }

    // class-level conditional entropy can never exceed the node-level one
    double worst_iso = -1.0;
    for (int sgn : {-1, +1})
        for (const auto& params : ensembles[sgn])
            for (size_t i = 0; i < test.size() && i < 20; ++i) {
                auto st = predict_state(params, test[i].mol, test[i].energies);
                auto iso = iso_aggregate(st);
                for (size_t g = 0; g < st.lattice.formulas.size(); ++g) {
                    if (st.p_formula(static_cast<int>(g)) <= 1e-12) continue;
                    double h_node = 0;
                    for (int c = 0; c < st.lattice.num_cells; ++c) {
                        if (st.lattice.cell_formula[c] != static_cast<int>(g) ||
                            !st.lattice.cell_valid[c])
                            continue;
                        double lp = st.log_joint[c] - st.log_formula[g];
                        if (std::isfinite(lp)) h_node -= std::exp(lp) * lp;
                    }
                    double h_iso = 0;
                    for (double lp : iso.log_class_given_f[g])
                        if (std::isfinite(lp)) h_iso -= std::exp(lp) * lp;
                    worst_iso = std::max(worst_iso, h_iso - h_node);
                }
            }

    double h_neg = reports[-1].hhat_ngf_mean, h_pos = reports[1].hhat_ngf_mean;
    double cos_diff = std::abs(reports[-1].cos_hun_mean - reports[1].cos_hun_mean);
    report("A9", h_neg > h_pos && cos_diff < 0.02 && worst_iso <= 1e-9,
           fmt("5-model ensembles, alpha(n|f) = -/+0.01: mean norm H(n|f) %.5f > %.5f, "
               "|COS_HUN diff| %.5f (want < 0.02), max H(class|f)-H(n|f) = %.1e",
               h_neg, h_pos, cos_diff, worst_iso));
}

void a10_retrieval() {
    begin();
    if (!g_a5.ready) {
        report("A10", false, "skipped: A5 model unavailable");
        return;
    }
    std::map<std::string, const Spectrum*> truth_by_id;
    for (const auto& r : g_a5.records) truth_by_id[r.molecule_id] = &r.spectrum;

    int n_query = 0, true_top1 = 0, model_top1 = 0;
    for (const auto& r : g_a5.records) {
        if (r.split != Split::Test) continue;
        if (n_query == 30) break;
        ++n_query;
        auto cands = build_candidates(r.mol, g_a5.mols, 50);

        std::vector<std::pair<std::string, Spectrum>> cand_spectra;
        for (const auto& c : cands) cand_spectra.push_back({c.id, *truth_by_id.at(c.id)});
        auto oracle_rank = rank_spectra(r.spectrum, cand_spectra, r.molecule_id, {1});
        if (oracle_rank.true_rank == 1) ++true_top1;

        auto model_rank = rank_candidates(r.spectrum, cands, r.molecule_id, g_a5.model, {1});
        if (model_rank.true_rank == 1) ++model_top1;
    }
    double model_rate = double(model_top1) / n_query;
    report("A10", true_top1 == n_query && model_rate > 0.02,
           fmt("50-candidate sets, %d queries: true-spectrum top-1 %d/%d (want all), trained-"
               "model top-1 rate %.2f (want > 0.02)",
               n_query, true_top1, n_query, model_rate));
}

}  // namespace

int main() {
    a1_dag_oracle();
    a2_literature_anchor();
    a3_normalization();
    a4_gradients();
    a5_closed_loop();
    a6_os_calibration();
    a7_hungarian();
    a8_support_identity();
    a9_ensemble_direction();
    a10_retrieval();
    std::printf("%s: %d criterion failure%s\n", g_failures ? "FAIL" : "OK", g_failures,
                g_failures == 1 ? "" : "s");
    return g_failures ? 1 : 0;
}
