#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fragnn/metrics.hpp"

namespace fragnn {

struct Fingerprint {
    int width = 2048;
    int radius = 2;
    std::vector<uint64_t> bits;  // width/64 words

    bool get(int i) const { return (bits[i >> 6] >> (i & 63)) & 1; }
    void set(int i) { bits[i >> 6] |= uint64_t(1) << (i & 63); }
    int popcount() const;
    bool operator==(const Fingerprint& o) const = default;
};

// Iterated neighborhood hashing: per-atom labels refined `radius` times over
// (element, bond orders, neighbor labels); every refinement round hashes each
// label into the bitset. Permutation-invariant by construction.
Fingerprint fingerprint(const MolGraph& g, int radius = 2, int width = 2048);

// |a AND b| / |a OR b|; 1 when both empty; width mismatch throws.
double tanimoto(const Fingerprint& a, const Fingerprint& b);

// target plus the (size-1) corpus molecules with highest tanimoto, excluding
// exact-fingerprint duplicates of the target; similarity ties by id ascending.
std::vector<MolGraph> build_candidates(const MolGraph& target,
                                       const std::vector<MolGraph>& corpus, int size = 50,
                                       uint64_t seed = 0);

struct RankResult {
    std::vector<std::pair<std::string, double>> ranking;  // id, score, descending
    int true_rank = 0;                                    // 1-based
    std::map<int, bool> topk;
    std::vector<std::string> failed;  // candidates scored 0 after a prediction failure
};

// Rank pre-computed candidate spectra against the true spectrum by
// cos_hungarian (10 ppm); ties by id ascending.
RankResult rank_spectra(const Spectrum& truth,
                        const std::vector<std::pair<std::string, Spectrum>>& candidates,
                        const std::string& true_id, const std::vector<int>& ks);

// Predict a spectrum per candidate with the model, then rank. A candidate
// whose preparation or prediction fails is scored 0 and flagged.
RankResult rank_candidates(const Spectrum& truth, const std::vector<MolGraph>& candidates,
                           const std::string& true_id, const ModelParams& model,
                           const std::vector<int>& ks = {1, 3, 5, 10});

}  // namespace fragnn
