#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "fragnn/metrics.hpp"

using namespace fragnn;

namespace {

Spectrum make_spec(std::vector<Peak> peaks) {
    Spectrum s;
    s.peaks = std::move(peaks);
    return s;
}

// brute force: maximize matching weight by recursion over peaks of a
double brute_best(const Spectrum& a, const Spectrum& b, MatchTolerance tol, size_t i,
                  std::vector<bool>& used, double la, double lb) {
    if (i == a.peaks.size()) return 0.0;
    double best = brute_best(a, b, tol, i + 1, used, la, lb);  // leave peak i unmatched
    for (size_t j = 0; j < b.peaks.size(); ++j) {
        if (used[j] || !tol.admissible(a.peaks[i].mass, b.peaks[j].mass)) continue;
        used[j] = true;
        double w = (a.peaks[i].intensity / la) * (b.peaks[j].intensity / lb) +
                   brute_best(a, b, tol, i + 1, used, la, lb);
        used[j] = false;
        best = std::max(best, w);
    }
    return best;
}

double brute_cos(const Spectrum& a, const Spectrum& b, MatchTolerance tol) {
    double la = 0, lb = 0;
    for (const auto& p : a.peaks) la += p.intensity * p.intensity;
    for (const auto& p : b.peaks) lb += p.intensity * p.intensity;
    if (la == 0 || lb == 0) return 0.0;
    std::vector<bool> used(b.peaks.size(), false);
    return brute_best(a, b, tol, 0, used, std::sqrt(la), std::sqrt(lb));
}

Spectrum random_spectrum(std::mt19937& rng, int max_peaks) {
    std::uniform_real_distribution<double> mass(50, 500), inten(0.05, 1.0);
    int n = 1 + static_cast<int>(rng() % max_peaks);
    Spectrum s;
    double total = 0;
    std::vector<double> is(n);
    for (int i = 0; i < n; ++i) {
        is[i] = inten(rng);
        total += is[i];
    }
    for (int i = 0; i < n; ++i) {
        double m = mass(rng);
        // half the peaks land within tolerance of an existing one
        if (i > 0 && (rng() & 1)) m = s.peaks[rng() % s.peaks.size()].mass * (1 + 4e-6);
        s.peaks.push_back({m, is[i] / total});
    }
    std::sort(s.peaks.begin(), s.peaks.end(),
              [](const Peak& a, const Peak& b) { return a.mass < b.mass; });
    return s;
}

}  // namespace

TEST_CASE("binned cosine") {
    auto a = make_spec({{100.001, 0.5}, {200.0, 0.5}});
    CHECK(cos_binned(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    auto b = make_spec({{100.02, 1.0}});
    auto c = make_spec({{100.0, 1.0}});
    CHECK(cos_binned(b, c) == 0.0);  // 0.02 Da apart, different bins

    auto d = make_spec({{100.001, 1.0}});
    auto e = make_spec({{100.005, 1.0}});
    CHECK(cos_binned(d, e) == doctest::Approx(1.0).epsilon(1e-12));  // same bin

    CHECK(cos_binned(make_spec({}), a) == 0.0);
    CHECK_THROWS_WITH_AS(cos_binned(make_spec({{1500.0, 1.0}}), a),
                         doctest::Contains("1500"), ValidationError);
}

TEST_CASE("hungarian cosine basics") {
    auto a = make_spec({{100.0, 0.3}, {150.0, 0.7}});
    CHECK(cos_hungarian(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    auto far = make_spec({{300.0, 1.0}});
    CHECK(cos_hungarian(a, far) == 0.0);  // no admissible pairs
    CHECK(cos_hungarian(make_spec({}), a) == 0.0);

    // symmetry and scale invariance
    std::mt19937 rng(5);
    for (int t = 0; t < 10; ++t) {
        auto x = random_spectrum(rng, 5);
        auto y = random_spectrum(rng, 5);
        double xy = cos_hungarian(x, y);
        CHECK(cos_hungarian(y, x) == doctest::Approx(xy).epsilon(1e-12));
        auto y2 = y;
        for (auto& p : y2.peaks) p.intensity *= 7.3;
        CHECK(cos_hungarian(x, y2) == doctest::Approx(xy).epsilon(1e-9));
    }
}

TEST_CASE("hungarian equals brute force on small spectra") {
    std::mt19937 rng(77);
    MatchTolerance tol;
    for (int t = 0; t < 100; ++t) {
        auto a = random_spectrum(rng, 6);
        auto b = random_spectrum(rng, 6);
        double h = cos_hungarian(a, b, tol);
        double bf = brute_cos(a, b, tol);
        CHECK(h == doctest::Approx(bf).epsilon(1e-9));
    }
}

TEST_CASE("recall metrics") {
    auto sp = make_spec({{20.0, 0.1}, {40.0, 0.2}, {65.0, 0.3}, {100.0, 0.4}});
    auto r = recall_metrics(sp, {20.0, 40.0, 65.0, 100.0});
    CHECK(r.recall == 1.0);
    CHECK(r.weighted_recall == doctest::Approx(1.0).epsilon(1e-12));

    auto r2 = recall_metrics(sp, {});
    CHECK(r2.recall == 0.0);
    CHECK(r2.weighted_recall == 0.0);

    auto r3 = recall_metrics(sp, {20.0, 40.0});
    CHECK(r3.recall == doctest::Approx(0.5));
    CHECK(r3.weighted_recall == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("weighted recall complements the OS partition on synthetic data") {
    std::mt19937 rng(3);
    std::vector<MolGraph> mols;
    const char* smis[] = {"CCO", "CC(N)CO", "CNCO", "CCCC", "OCCN"};
    for (int i = 0; i < 40; ++i) {
        MolGraph m = parse_smiles(smis[i % 5]);
        m.id = "m" + std::to_string(i);
        mols.push_back(m);
    }
    auto oracle = OracleParams::defaults(2, 99);
    oracle.os_fraction = 0.15;
    auto records = synth_generate(mols, oracle, 2, 2);
    for (const auto& rec : records) {
        auto ctx = prepare_molecule(rec.mol, [] {
            ModelConfig c;
            c.d = 2;
            c.j = 2;
            return c;
        }());
        auto part = os_partition(rec.spectrum, ctx.lattice.formula_mass_da);
        auto rr = recall_metrics(rec.spectrum, ctx.lattice.formula_mass_da);
        CHECK(rr.weighted_recall == doctest::Approx(1.0 - part.p_os).epsilon(1e-12));
    }
}

TEST_CASE("os_abs_error matches a direct computation") {
    std::mt19937 rng(4);
    std::vector<MolGraph> mols;
    for (int i = 0; i < 5; ++i) {
        MolGraph m = parse_smiles(i % 2 ? "CCO" : "CNC");
        m.id = "q" + std::to_string(i);
        mols.push_back(m);
    }
    ModelConfig mc;
    mc.hidden_dim = 8;
    mc.L1 = 1;
    mc.L2 = 1;
    mc.d = 2;
    mc.j = 2;
    mc.seed = 5;
    auto model = init_params(mc);
    auto records = synth_generate(mols, OracleParams::defaults(2, 7), 2, 2);
    double direct = 0;
    for (const auto& rec : records) {
        auto st = predict_state(model, rec.mol, rec.energies);
        auto part = os_partition(rec.spectrum, st.lattice.formula_mass_da);
        direct += std::abs(part.p_os - st.p_os());
    }
    direct /= records.size();
    double got = os_abs_error(records, model);
    CHECK(got == doctest::Approx(direct).epsilon(1e-12));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
}

TEST_CASE("ensemble consistency") {
    std::vector<MolGraph> mols;
    for (int i = 0; i < 4; ++i) {
        MolGraph m = parse_smiles(i % 2 ? "CCCO" : "CC(N)CO");
        m.id = "e" + std::to_string(i);
        mols.push_back(m);
    }
    auto records = synth_generate(mols, OracleParams::defaults(2, 13), 2, 2);

    ModelConfig mc;
    mc.hidden_dim = 8;
    mc.L1 = 1;
    mc.L2 = 1;
    mc.d = 2;
    mc.j = 2;

    // identical models agree perfectly
    mc.seed = 21;
    std::vector<ModelParams> same = {init_params(mc), init_params(mc), init_params(mc)};
    auto rep = ensemble_consistency(same, records);
    REQUIRE(rep.num_filtered_formulas > 0);
    CHECK(rep.cons == doctest::Approx(1.0));
    CHECK(rep.maj == doctest::Approx(1.0));
    CHECK(rep.cons_iso == doctest::Approx(1.0));
    CHECK(rep.maj_iso == doctest::Approx(1.0));
    CHECK(rep.hhat_ngf_cv == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rep.cos_hun_cv == doctest::Approx(0.0).epsilon(1e-12));

    CHECK_THROWS_AS(ensemble_consistency({same[0]}, records), ValidationError);

    // naive-loop oracle for CONS and MAJ with two differently seeded models
    ModelConfig mc2 = mc;
    mc2.seed = 22;
    std::vector<ModelParams> pair = {init_params(mc), init_params(mc2)};
    auto rep2 = ensemble_consistency(pair, records);
    int n = 0, cons_hits = 0;
    double maj_sum = 0;
    for (const auto& rec : records) {
        auto s1 = predict_state(pair[0], rec.mol, rec.energies);
        auto s2 = predict_state(pair[1], rec.mol, rec.energies);
        for (size_t g = 0; g < s1.lattice.formulas.size(); ++g) {
            if (s1.p_formula((int)g) < 0.05 || s2.p_formula((int)g) < 0.05) continue;
            ++n;
            Mask a1 = annotation(s1, s1.lattice.formulas[g]).argmax;
            Mask a2 = annotation(s2, s2.lattice.formulas[g]).argmax;
            if (a1 == a2) {
                ++cons_hits;
                maj_sum += 1.0;
            } else {
                maj_sum += 0.5;  // modal tie -> each annotation held by one model
            }
        }
    }
    REQUIRE(n == rep2.num_filtered_formulas);
    CHECK(rep2.cons == doctest::Approx((double)cons_hits / n).epsilon(1e-12));
    CHECK(rep2.maj == doctest::Approx(maj_sum / n).epsilon(1e-12));
    CHECK(rep2.cons <= rep2.maj + 1e-12);
    if (rep2.cons == 1.0) CHECK(rep2.maj == 1.0);
}

TEST_CASE("evaluate csv layout") {
    std::vector<EvalRow> rows(2);
    rows[0] = {"a", 0.9, 0.95, 1.0, 1.0, 0.01};
    rows[1] = {"b", 0.7, 0.85, 0.5, 0.6, 0.03};
    auto csv = evaluate_csv(rows, {"cos001", "coshun", "recall", "os"});
    CHECK(csv.find("molecule_id,cos001,coshun,recall,weighted_recall,os_abs_error\n") == 0);
    CHECK(csv.find("\na,0.900000,0.950000,1.000000,1.000000,0.010000\n") != std::string::npos);
    CHECK(csv.find("\nmean,0.800000,") != std::string::npos);
    CHECK(csv.find("\nstd,") != std::string::npos);

    auto csv2 = evaluate_csv(rows, {"coshun"});
    CHECK(csv2.find("molecule_id,coshun\n") == 0);
}
