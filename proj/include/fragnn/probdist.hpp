#pragma once

#include <map>
#include <string>
#include <vector>

#include "fragnn/gnn.hpp"

namespace fragnn {

struct Peak {
    double mass = 0.0;
    double intensity = 0.0;
};

struct Spectrum {
    std::string id;
    std::vector<int> energies;
    std::vector<Peak> peaks;  // ascending mass
};

// Full probabilistic readout for one molecule. All distributions are kept in
// log space; linear-space views are exposed through the accessors.
struct LatentState {
    CellLattice lattice;
    std::vector<double> log_joint;    // per cell, invalid -> -inf
    double log_os = kNegInf;
    std::vector<double> log_node;     // P(n)
    std::vector<double> log_formula;  // P(f) per formula group

    double p_os() const { return std::exp(log_os); }
    double p_node(int node) const { return std::exp(log_node[node]); }
    double p_formula(int group) const { return std::exp(log_formula[group]); }
    double p_cell(int cell) const { return std::exp(log_joint[cell]); }
};

// One masked softmax over every (node, offset) cell plus the OS slot.
// joint_logits is num_nodes x (2j+1); throws if no cell is valid.
LatentState latent_from_logits(const Array& joint_logits, double os_logit,
                               const CellLattice& lattice);

Spectrum dirac_spectrum(const LatentState& state);

// Mixture of per-formula Gaussians truncated at +-1 sigma (sigma = 5e-6 * mass)
// and renormalized so each component integrates to its weight.
struct GaussianMixture {
    struct Component {
        double mean, sigma, weight;
    };
    std::vector<Component> components;
    double density(double mass) const;
};

GaussianMixture gaussian_spectrum(const LatentState& state);

struct Annotation {
    std::vector<std::pair<Mask, double>> probs;  // node id -> P(n|f), descending prob
    Mask argmax = 0;                             // ties -> lowest node id
};

// P(n|f) for one formula; throws if the formula has zero probability or is
// outside the lattice.
Annotation annotation(const LatentState& state, const Formula& f);

// Aggregation over isomorphism classes: P(class), P(f|class), P(class|f).
struct IsoAggregate {
    int num_classes = 0;
    std::vector<double> log_class;                 // P(~n)
    std::vector<std::vector<double>> log_f_given_class;  // [class][group]
    std::vector<std::vector<double>> log_class_given_f;  // [group][class]
};

IsoAggregate iso_aggregate(const LatentState& state);

struct Entropies {
    double h_n = 0, h_f = 0, h_f_given_n = 0, h_n_given_f = 0;
    double hn_n = 0, hn_f = 0, hn_f_given_n = 0, hn_n_given_f = 0;  // normalized
};

// Support sizes used for normalization: n -> node count, f -> formula-group
// count, f|n -> largest per-node valid-offset count, n|f -> largest number of
// nodes sharing one formula. Normalized entropy is 0 when the size is <= 1.
Entropies entropies(const LatentState& state);
double entropy_n_given_f_iso(const LatentState& state);  // H(~n|f)

// Per-peak annotation report, one JSON object per line.
std::string annotated_spectrum_jsonl(const LatentState& state, double min_prob = 1e-6,
                                     int top_k = 5);

// Differentiable counterparts used by the training losses. joint_col is the
// (num_cells+1) x 1 log-probability column produced by forward().
struct TapeLatent {
    Tape::Id log_cells = -1;    // num_cells x 1
    Tape::Id log_os = -1;       // 1x1
    Tape::Id log_node = -1;     // num_nodes x 1
    Tape::Id log_formula = -1;  // num_groups x 1
    Tape::Id hn_n = -1, hn_f = -1, hn_f_given_n = -1, hn_n_given_f = -1;  // 1x1
};

TapeLatent build_tape_latent(Tape& tape, Tape::Id joint_col, const CellLattice& lattice);

// Convenience: prepare the molecule, run one forward pass and normalize.
LatentState predict_state(const ModelParams& params, const MolGraph& mol,
                          const std::vector<int>& energies,
                          AdductMode mode = AdductMode::Protonated);

// Spectrum file IO, MSP-like blocks:
//   ID: <id>
//   ENERGIES: e1,e2,...
//   NUMPEAKS: k
//   <mass 5 decimals> <intensity 8 decimals>
// separated by blank lines.
std::vector<Spectrum> read_spectra(const std::string& path);
void write_spectra(const std::string& path, const std::vector<Spectrum>& spectra);

}  // namespace fragnn
