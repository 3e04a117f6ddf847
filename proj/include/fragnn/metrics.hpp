#pragma once

#include <string>
#include <vector>

#include "fragnn/train.hpp"

namespace fragnn {

struct MatchTolerance {
    enum class Kind { AbsoluteDa, Ppm } kind = Kind::Ppm;
    double value = 10.0;

    // admissible window for a pair of masses
    double window(double m1, double m2) const {
        return kind == Kind::Ppm ? 1e-6 * value * std::max(m1, m2) : value;
    }
    bool admissible(double m1, double m2) const { return std::abs(m1 - m2) <= window(m1, m2); }
};

// Cosine over floor(m / bin_da) intensity bins; throws if any mass >= max_da.
double cos_binned(const Spectrum& a, const Spectrum& b, double bin_da = 0.01,
                  double max_da = 1500.0);

// Exact maximum-weight one-to-one matching of L2-normalized intensities over
// tolerance-admissible pairs (rectangular Hungarian with padding).
double cos_hungarian(const Spectrum& a, const Spectrum& b,
                     MatchTolerance tol = MatchTolerance{});

struct RecallResult {
    double recall = 0.0;           // fraction of peaks with a support mass in tolerance
    double weighted_recall = 0.0;  // intensity-weighted fraction
};

RecallResult recall_metrics(const Spectrum& spectrum, const std::vector<double>& support,
                            MatchTolerance tol = MatchTolerance{});

// mean |P(M^OS) - P_theta(M^OS)| over records
double os_abs_error(const std::vector<SpectrumRecord>& records, const ModelParams& model);

struct EnsembleReport {
    double cos_hun_mean = 0, cos_hun_cv = 0;       // across models
    double hhat_ngf_mean = 0, hhat_ngf_cv = 0;     // normalized H(n|f)
    double hhat_iso_mean = 0, hhat_iso_cv = 0;     // normalized H(~n|f)
    double cons = 0, maj = 0;                      // annotation agreement, P(n|f)
    double cons_iso = 0, maj_iso = 0;              // P(~n|f) variants
    int num_filtered_formulas = 0;                 // formulas passing the p_min filter
};

// K >= 2 models over the records' molecules; formulas filtered by
// min_k P_k(f) >= p_min. cos_hun_* compare against the records' true spectra.
EnsembleReport ensemble_consistency(const std::vector<ModelParams>& models,
                                    const std::vector<SpectrumRecord>& records,
                                    double p_min = 0.05);

struct EvalRow {
    std::string molecule_id;
    double cos001 = 0, coshun = 0, recall = 0, weighted_recall = 0, os_err = 0;
};

// CSV report: one row per molecule plus mean and std summary rows.
std::string evaluate_csv(const std::vector<EvalRow>& rows, const std::vector<std::string>& metrics);

}  // namespace fragnn
