#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "fragnn/retrieve.hpp"
#include "fragnn/train.hpp"

using namespace fragnn;

namespace {

MolGraph mol_of(const std::string& smiles, const std::string& id) {
    MolGraph m = parse_smiles(smiles);
    m.id = id;
    return m;
}

}  // namespace

TEST_CASE("fingerprint invariance and discrimination") {
    MolGraph g = mol_of("CC(N)CO", "a");
    auto f1 = fingerprint(g);

    // relabel the atoms
    std::vector<int> perm = {4, 2, 0, 1, 3};
    MolGraph p;
    p.id = "a";
    p.atoms.resize(g.atoms.size());
    for (size_t i = 0; i < g.atoms.size(); ++i) p.atoms[perm[i]] = g.atoms[i];
    for (const auto& b : g.bonds) p.bonds.push_back({perm[b.a], perm[b.b], b.order});
    CHECK(fingerprint(p) == f1);

    CHECK(!(fingerprint(mol_of("C", "m")) == fingerprint(mol_of("CCO", "e"))));
    CHECK(f1.popcount() > 0);

    // radius 0 sees only the element multiset
    auto e1 = fingerprint(mol_of("CCO", "x"), 0);
    auto e2 = fingerprint(mol_of("COC", "y"), 0);
    CHECK(e1 == e2);
    CHECK(!(fingerprint(mol_of("CCO", "x"), 2) == fingerprint(mol_of("COC", "y"), 2)));
}

TEST_CASE("tanimoto") {
    auto a = fingerprint(mol_of("CCO", "a"));
    CHECK(tanimoto(a, a) == 1.0);

    auto b = fingerprint(mol_of("NCCN", "b"));
    CHECK(tanimoto(a, b) == doctest::Approx(tanimoto(b, a)));
    CHECK(tanimoto(a, b) >= 0.0);
    CHECK(tanimoto(a, b) < 1.0);

    Fingerprint empty1, empty2;
    empty1.bits.assign(32, 0);
    empty2.bits.assign(32, 0);
    CHECK(tanimoto(empty1, empty2) == 1.0);

    Fingerprint narrow;
    narrow.width = 512;
    narrow.bits.assign(8, 0);
    CHECK_THROWS_AS(tanimoto(a, narrow), ValidationError);

    // disjoint hand-made bitsets
    Fingerprint x = empty1, y = empty2;
    x.set(3);
    y.set(700);
    CHECK(tanimoto(x, y) == 0.0);
}

TEST_CASE("candidate construction") {
    MolGraph target = mol_of("CC(N)CO", "target");

    std::vector<MolGraph> dup(5, target);
    CHECK_THROWS_AS(build_candidates(target, dup, 3), ValidationError);

    auto only = build_candidates(target, dup, 1);
    REQUIRE(only.size() == 1);
    CHECK(only[0].id == "target");

    std::vector<MolGraph> corpus = {
        mol_of("CCO", "c1"),    mol_of("NCCN", "c2"),  mol_of("CCCO", "c3"),
        mol_of("CC(N)CN", "c4"), mol_of("OCCN", "c5"), mol_of("CCCC", "c6"),
    };
    auto cands = build_candidates(target, corpus, 4);
    REQUIRE(cands.size() == 4);
    CHECK(cands[0].id == "target");

    // the selected three really are the top-tanimoto ones
    auto tf = fingerprint(target);
    std::vector<std::pair<double, std::string>> sims;
    for (const auto& m : corpus) sims.push_back({-tanimoto(tf, fingerprint(m)), m.id});
    std::sort(sims.begin(), sims.end());
    for (int i = 0; i < 3; ++i) CHECK(cands[i + 1].id == sims[i].second);

    // deterministic
    auto again = build_candidates(target, corpus, 4);
    for (size_t i = 0; i < cands.size(); ++i) CHECK(again[i].id == cands[i].id);

    CHECK_THROWS_AS(build_candidates(target, corpus, 20), ValidationError);
}

TEST_CASE("ranking by spectrum similarity") {
    Spectrum truth;
    truth.peaks = {{100.0, 0.5}, {200.0, 0.5}};

    std::vector<std::pair<std::string, Spectrum>> cands;
    Spectrum exact = truth;
    Spectrum close;
    close.peaks = {{100.0, 0.9}, {300.0, 0.1}};
    Spectrum off;
    off.peaks = {{700.0, 1.0}};
    cands = {{"b-close", close}, {"a-true", exact}, {"c-off", off}};

    auto r = rank_spectra(truth, cands, "a-true", {1, 3, 5});
    CHECK(r.true_rank == 1);
    CHECK(r.topk.at(1));
    CHECK(r.topk.at(3));
    REQUIRE(r.ranking.size() == 3);
    CHECK(r.ranking[0].first == "a-true");
    CHECK(r.ranking[2].first == "c-off");

    // input order does not matter; equal scores fall back to id order
    std::swap(cands[0], cands[2]);
    auto r2 = rank_spectra(truth, cands, "a-true", {1});
    for (size_t i = 0; i < r.ranking.size(); ++i) CHECK(r2.ranking[i].first == r.ranking[i].first);

    // ties: two zero-score candidates ordered by id
    std::vector<std::pair<std::string, Spectrum>> tied = {
        {"z", off}, {"a-true", exact}, {"m", off}};
    auto rt = rank_spectra(truth, tied, "a-true", {1});
    CHECK(rt.ranking[1].first == "m");
    CHECK(rt.ranking[2].first == "z");

    // top-k monotone in k
    bool prev = false;
    for (int k : {1, 3, 5}) {
        CHECK((r.topk.at(k) || !prev));
        prev = r.topk.at(k);
    }

    CHECK_THROWS_AS(rank_spectra(truth, cands, "nope", {1}), ValidationError);
    std::vector<std::pair<std::string, Spectrum>> twice = {{"a-true", exact}, {"a-true", exact}};
    CHECK_THROWS_AS(rank_spectra(truth, twice, "a-true", {1}), ValidationError);
}

TEST_CASE("model-based ranking flags failing candidates") {
    ModelConfig mc;
    mc.hidden_dim = 8;
    mc.L1 = 1;
    mc.L2 = 1;
    mc.d = 2;
    mc.j = 2;
    mc.seed = 31;
    auto model = init_params(mc);

    MolGraph target = mol_of("CCO", "t");
    auto records = synth_generate({target}, OracleParams::defaults(2, 17), 2, 2);
    const Spectrum& truth = records[0].spectrum;

    // disconnected graph cannot be fragmented
    MolGraph broken;
    broken.id = "broken";
    broken.atoms = {Atom{}, Atom{}};

    std::vector<MolGraph> cands = {target, mol_of("CNC", "c1"), broken};
    auto r = rank_candidates(truth, cands, "t", model, {1, 3});
    CHECK(r.ranking.size() == 3);
    REQUIRE(r.failed.size() == 1);
    CHECK(r.failed[0] == "broken");
    // the failed candidate scores 0 and sinks below any scoring candidate
    double broken_score = -1;
    for (const auto& [id, s] : r.ranking)
        if (id == "broken") broken_score = s;
    CHECK(broken_score == 0.0);
    CHECK(r.true_rank >= 1);
    CHECK(r.topk.at(3) == (r.true_rank <= 3));
}
