#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "fragnn/probdist.hpp"

namespace fragnn {

enum class Split { Train, Val, Test };

struct SpectrumRecord {
    std::string molecule_id;
    MolGraph mol;
    Spectrum spectrum;            // normalized, masses ascending
    std::vector<int> energies;    // 0-200
    Split split = Split::Train;
};

struct OracleParams {
    std::map<Elem, double> propensity;    // per-element bond-break propensities
    double depth_decay = 0.5;
    std::vector<double> offset_weights;   // over -j..+j, normalized
    double os_fraction = 0.0;             // q
    uint64_t seed = 0;

    static OracleParams defaults(int j, uint64_t seed);
};

struct OsPartitionResult {
    std::vector<Peak> is_peaks;
    std::vector<Peak> os_peaks;
    double p_os = 0.0;  // P(M^OS), sum of OS intensities
};

// a peak is in-support iff some support mass is within 10 ppm
// (|m_s - m| <= 1e-5 * max(m_s, m), boundary inclusive)
OsPartitionResult os_partition(const Spectrum& spectrum, const std::vector<double>& support);

// Observed peaks matched to predicted formula masses at 10 ppm, nearest mass
// first; two peaks hitting one predicted mass sum their intensities there.
struct LossTargets {
    std::vector<double> group_intensity;  // per formula group
    double os_intensity = 0.0;
};

LossTargets match_peaks(const Spectrum& spectrum, const CellLattice& lattice);

// Cross-entropy over matched peaks only (unmatched handled by the OS term of
// loss_with_os, never -inf here).
double nll_loss(const LatentState& state, const Spectrum& spectrum);

// Adds -P_i(OS) * log P_theta(OS); log clamped at -745, sets *clamped.
double loss_with_os(const LatentState& state, const Spectrum& spectrum,
                    bool* clamped = nullptr);

struct Alphas {
    double n = 0, f = 0, f_given_n = 0, n_given_f = 0;
    bool any() const { return n != 0 || f != 0 || f_given_n != 0 || n_given_f != 0; }
};

double reg_loss(const LatentState& state, double loss, const Alphas& alphas);

// Differentiable counterparts built on a forward() tape.
Tape::Id loss_with_os_tape(Tape& tape, const TapeLatent& latent, const CellLattice& lattice,
                           const LossTargets& targets);
Tape::Id reg_loss_tape(Tape& tape, const TapeLatent& latent, Tape::Id loss,
                       const Alphas& alphas);

Spectrum merge_spectra(const std::vector<Spectrum>& spectra);

std::vector<SpectrumRecord> synth_generate(const std::vector<MolGraph>& molecules,
                                           const OracleParams& oracle, int d, int j);

// Deterministic per-molecule-id bucketing; ratios {train, val, test} sum to 1.
void split_dataset(std::vector<SpectrumRecord>& records, const std::array<double, 3>& ratios,
                   uint64_t seed);

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 16;
    int patience = 10;
    int max_epochs = 200;
    Alphas alphas;
    uint64_t seed = 0;
    bool verbose = false;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0, val_loss = 0, val_cos_binned = 0, val_cos_hungarian = 0;
};

struct TrainDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    ModelParams params;  // best-validation checkpoint
    std::vector<EpochStats> history;
    int best_epoch = 0;
    double best_val_loss = 0;
};

TrainResult train_model(const std::vector<SpectrumRecord>& dataset, const ModelConfig& model_cfg,
                        const TrainConfig& train_cfg);

// Flat key=value config file covering ModelConfig, TrainConfig and the alphas.
struct FileConfig {
    ModelConfig model;
    TrainConfig train;
};

FileConfig parse_config_file(const std::string& path);

std::vector<SpectrumRecord> read_records(const std::string& molecules_path,
                                         const std::string& spectra_path);
void write_records(const std::string& molecules_path, const std::string& spectra_path,
                   const std::vector<SpectrumRecord>& records);

}  // namespace fragnn
