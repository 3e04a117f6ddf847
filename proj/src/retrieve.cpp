#include "fragnn/retrieve.hpp"

#include <algorithm>
#include <bit>

namespace fragnn {

int Fingerprint::popcount() const {
    int n = 0;
    for (uint64_t w : bits) n += std::popcount(w);
    return n;
}

namespace {

uint64_t hash_mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

uint64_t hash_combine(uint64_t a, uint64_t b) { return hash_mix(a ^ hash_mix(b)); }

}  // namespace

Fingerprint fingerprint(const MolGraph& g, int radius, int width) {
    g.validate();
    Fingerprint fp;
    fp.width = width;
    fp.radius = radius;
    fp.bits.assign((width + 63) / 64, 0);

    int n = g.num_atoms();
    std::vector<uint64_t> label(n);
    for (int i = 0; i < n; ++i)
        label[i] = hash_mix(static_cast<uint64_t>(g.atoms[i].element) + 0x100);
    auto emit = [&](uint64_t l) { fp.set(static_cast<int>(l % static_cast<uint64_t>(width))); };
    for (uint64_t l : label) emit(l);

    std::vector<std::vector<std::pair<int, BondOrder>>> nbrs(n);
    for (const auto& b : g.bonds) {
        nbrs[b.a].push_back({b.b, b.order});
        nbrs[b.b].push_back({b.a, b.order});
    }
    for (int r = 0; r < radius; ++r) {
        std::vector<uint64_t> next(n);
        for (int i = 0; i < n; ++i) {
            std::vector<uint64_t> env;
            for (const auto& [j, order] : nbrs[i])
                env.push_back(hash_combine(static_cast<uint64_t>(order) + 1, label[j]));
            std::sort(env.begin(), env.end());
            uint64_t h = label[i];
            for (uint64_t e : env) h = hash_combine(h, e);
            next[i] = h;
            emit(h);
        }
        label = std::move(next);
    }
    return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
    if (a.width != b.width)
        throw ValidationError("tanimoto: fingerprint widths differ (" + std::to_string(a.width) +
                              " vs " + std::to_string(b.width) + ")");
    int both = 0, any = 0;
    for (size_t i = 0; i < a.bits.size(); ++i) {
        both += std::popcount(a.bits[i] & b.bits[i]);
        any += std::popcount(a.bits[i] | b.bits[i]);
    }
    return any == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(any);
}

std::vector<MolGraph> build_candidates(const MolGraph& target, const std::vector<MolGraph>& corpus,
                                       int size, uint64_t /*seed*/) {
    if (size < 1) throw ValidationError("build_candidates: size must be >= 1");
    std::vector<MolGraph> out = {target};
    if (size == 1) return out;

    Fingerprint tf = fingerprint(target);
    struct Scored {
        double sim;
        const MolGraph* mol;
    };
    std::vector<Scored> scored;
    for (const auto& m : corpus) {
        Fingerprint f = fingerprint(m);
        if (f == tf) continue;  // exact duplicates excluded
        scored.push_back({tanimoto(tf, f), &m});
    }
    if (static_cast<int>(scored.size()) < size - 1)
        throw ValidationError("build_candidates: corpus has only " +
                              std::to_string(scored.size()) +
                              " usable molecules, need " + std::to_string(size - 1));
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        return a.mol->id < b.mol->id;
    });
    for (int i = 0; i < size - 1; ++i) out.push_back(*scored[i].mol);
    return out;
}

RankResult rank_spectra(const Spectrum& truth,
                        const std::vector<std::pair<std::string, Spectrum>>& candidates,
                        const std::string& true_id, const std::vector<int>& ks) {
    int true_count = 0;
    for (const auto& [id, sp] : candidates)
        if (id == true_id) ++true_count;
    if (true_count != 1)
        throw ValidationError("rank_spectra: expected exactly one candidate with id '" +
                              true_id + "', found " + std::to_string(true_count));

    RankResult r;
    for (const auto& [id, sp] : candidates)
        r.ranking.push_back({id, cos_hungarian(sp, truth)});
    std::sort(r.ranking.begin(), r.ranking.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (size_t i = 0; i < r.ranking.size(); ++i)
        if (r.ranking[i].first == true_id) r.true_rank = static_cast<int>(i) + 1;
    for (int k : ks) r.topk[k] = r.true_rank <= k;
    return r;
}

RankResult rank_candidates(const Spectrum& truth, const std::vector<MolGraph>& candidates,
                           const std::string& true_id, const ModelParams& model,
                           const std::vector<int>& ks) {
    std::vector<std::pair<std::string, Spectrum>> spectra;
    std::vector<std::string> failed;
    for (const auto& mol : candidates) {
        Spectrum pred;
        try {
            auto st = predict_state(model, mol, truth.energies);
            pred = dirac_spectrum(st);
        } catch (const std::exception&) {
            pred = Spectrum{};  // scores 0 against everything
            failed.push_back(mol.id);
        }
        spectra.push_back({mol.id, std::move(pred)});
    }
    RankResult r = rank_spectra(truth, spectra, true_id, ks);
    r.failed = std::move(failed);
    return r;
}

}  // namespace fragnn
