#include "fragnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

namespace fragnn {

double cos_binned(const Spectrum& a, const Spectrum& b, double bin_da, double max_da) {
    auto binify = [&](const Spectrum& s) {
        std::map<long long, double> bins;
        std::string offenders;
        for (const auto& p : s.peaks) {
            if (p.mass >= max_da) {
                if (!offenders.empty()) offenders += ", ";
                offenders += std::to_string(p.mass);
            } else {
                bins[static_cast<long long>(std::floor(p.mass / bin_da))] += p.intensity;
            }
        }
        if (!offenders.empty())
            throw ValidationError("cos_binned: peaks at or beyond " + std::to_string(max_da) +
                                  " Da: " + offenders);
        return bins;
    };
    auto ba = binify(a), bb = binify(b);
    double na = 0, nb = 0, dot = 0;
    for (const auto& [k, v] : ba) na += v * v;
    for (const auto& [k, v] : bb) nb += v * v;
    if (na == 0 || nb == 0) return 0.0;
    for (const auto& [k, v] : ba) {
        auto it = bb.find(k);
        if (it != bb.end()) dot += v * it->second;
    }
    return dot / std::sqrt(na * nb);
}

namespace {

// exact O(n^3) min-cost assignment on a square matrix (potentials method)
double assignment_min_cost(const std::vector<std::vector<double>>& a) {
    int n = static_cast<int>(a.size());
    const double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0), v(n + 1, 0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), kInf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            int i0 = p[j0], j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    double total = 0;
    for (int j = 1; j <= n; ++j)
        if (p[j]) total += a[p[j] - 1][j - 1];
    return total;
}

double vec_mean(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double s = 0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double vec_cv(const std::vector<double>& xs) {
    double m = vec_mean(xs);
    if (xs.size() < 2 || m == 0.0) return 0.0;
    double acc = 0;
    for (double x : xs) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1)) / m;
}

}  // namespace

double cos_hungarian(const Spectrum& a, const Spectrum& b, MatchTolerance tol) {
    int na = static_cast<int>(a.peaks.size()), nb = static_cast<int>(b.peaks.size());
    if (na == 0 || nb == 0) return 0.0;
    double la = 0, lb = 0;
    for (const auto& p : a.peaks) la += p.intensity * p.intensity;
    for (const auto& p : b.peaks) lb += p.intensity * p.intensity;
    if (la == 0 || lb == 0) return 0.0;
    la = std::sqrt(la);
    lb = std::sqrt(lb);

    int n = std::max(na, nb);
    // cost = negated matching weight; padding and inadmissible pairs are 0
    std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
    bool any = false;
    for (int i = 0; i < na; ++i)
        for (int j = 0; j < nb; ++j)
            if (tol.admissible(a.peaks[i].mass, b.peaks[j].mass)) {
                cost[i][j] = -(a.peaks[i].intensity / la) * (b.peaks[j].intensity / lb);
                any = true;
            }
    if (!any) return 0.0;
    double best = -assignment_min_cost(cost);
    return std::clamp(best, 0.0, 1.0);
}

RecallResult recall_metrics(const Spectrum& spectrum, const std::vector<double>& support,
                            MatchTolerance tol) {
    RecallResult r;
    if (spectrum.peaks.empty()) return r;
    double total = 0, hit_i = 0;
    int hits = 0;
    for (const auto& p : spectrum.peaks) {
        total += p.intensity;
        bool ok = false;
        for (double s : support)
            if (tol.admissible(s, p.mass)) ok = true;
        if (ok) {
            ++hits;
            hit_i += p.intensity;
        }
    }
    r.recall = static_cast<double>(hits) / static_cast<double>(spectrum.peaks.size());
    r.weighted_recall = total > 0 ? hit_i / total : 0.0;
    return r;
}

double os_abs_error(const std::vector<SpectrumRecord>& records, const ModelParams& model) {
    if (records.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& rec : records) {
        auto st = predict_state(model, rec.mol, rec.energies);
        auto part = os_partition(rec.spectrum, st.lattice.formula_mass_da);
        acc += std::abs(part.p_os - st.p_os());
    }
    return acc / static_cast<double>(records.size());
}

namespace {

// normalized H(~n|f): support is the largest number of isomorphism classes
// sharing one formula
double hhat_iso(const LatentState& st) {
    auto agg = iso_aggregate(st);
    int support = 0;
    for (size_t g = 0; g < st.lattice.formulas.size(); ++g) {
        int cnt = 0;
        for (int c = 0; c < agg.num_classes; ++c)
            if (agg.log_class_given_f[g][c] != kNegInf) ++cnt;
        support = std::max(support, cnt);
    }
    if (support <= 1) return 0.0;
    return entropy_n_given_f_iso(st) / std::log(static_cast<double>(support));
}

int argmax_class(const IsoAggregate& agg, int group) {
    int best = -1;
    double bp = -1;
    for (int c = 0; c < agg.num_classes; ++c) {
        double p = std::exp(agg.log_class_given_f[group][c]);
        if (p > bp) {
            bp = p;
            best = c;  // first hit wins ties -> lowest class id
        }
    }
    return best;
}

// modal value of a list; count ties broken by smallest value
template <typename T>
std::pair<T, int> modal(const std::vector<T>& xs) {
    std::map<T, int> counts;
    for (const T& x : xs) ++counts[x];
    T arg = xs.front();
    int best = 0;
    for (const auto& [v, c] : counts)
        if (c > best) {  // map iterates ascending: first max is the smallest value
            best = c;
            arg = v;
        }
    return {arg, best};
}

}  // namespace

EnsembleReport ensemble_consistency(const std::vector<ModelParams>& models,
                                    const std::vector<SpectrumRecord>& records, double p_min) {
    int K = static_cast<int>(models.size());
    if (K < 2) throw ValidationError("ensemble_consistency: need at least 2 models");
    for (const auto& m : models)
        if (m.config.d != models[0].config.d || m.config.j != models[0].config.j)
            throw ValidationError("ensemble_consistency: models disagree on (d, j)");

    EnsembleReport rep;
    std::vector<double> cos_per_model(K, 0.0), hhat_per_model(K, 0.0), hiso_per_model(K, 0.0);
    double cons_hits = 0, maj_sum = 0, cons_iso_hits = 0, maj_iso_sum = 0;
    int n_formulas = 0;

    for (const auto& rec : records) {
        std::vector<LatentState> states;
        std::vector<IsoAggregate> aggs;
        for (const auto& m : models) {
            states.push_back(predict_state(m, rec.mol, rec.energies));
            aggs.push_back(iso_aggregate(states.back()));
        }
        for (int k = 0; k < K; ++k) {
            cos_per_model[k] += cos_hungarian(dirac_spectrum(states[k]), rec.spectrum);
            auto e = entropies(states[k]);
            hhat_per_model[k] += e.hn_n_given_f;
            hiso_per_model[k] += hhat_iso(states[k]);
        }
        const CellLattice& lat = states[0].lattice;
        for (size_t g = 0; g < lat.formulas.size(); ++g) {
            bool pass = true;
            for (int k = 0; k < K; ++k)
                if (states[k].p_formula(static_cast<int>(g)) < p_min) pass = false;
            if (!pass) continue;
            ++n_formulas;
            std::vector<Mask> arg_nodes;
            std::vector<int> arg_classes;
            for (int k = 0; k < K; ++k) {
                arg_nodes.push_back(annotation(states[k], lat.formulas[g]).argmax);
                arg_classes.push_back(argmax_class(aggs[k], static_cast<int>(g)));
            }
            auto [mn, cn] = modal(arg_nodes);
            auto [mc, cc] = modal(arg_classes);
            if (cn == K) cons_hits += 1;
            maj_sum += static_cast<double>(cn) / K;
            if (cc == K) cons_iso_hits += 1;
            maj_iso_sum += static_cast<double>(cc) / K;
        }
    }

    double nr = static_cast<double>(records.size());
    for (int k = 0; k < K; ++k) {
        cos_per_model[k] /= nr;
        hhat_per_model[k] /= nr;
        hiso_per_model[k] /= nr;
    }
    rep.cos_hun_mean = vec_mean(cos_per_model);
    rep.cos_hun_cv = vec_cv(cos_per_model);
    rep.hhat_ngf_mean = vec_mean(hhat_per_model);
    rep.hhat_ngf_cv = vec_cv(hhat_per_model);
    rep.hhat_iso_mean = vec_mean(hiso_per_model);
    rep.hhat_iso_cv = vec_cv(hiso_per_model);
    rep.num_filtered_formulas = n_formulas;
    if (n_formulas > 0) {
        rep.cons = cons_hits / n_formulas;
        rep.maj = maj_sum / n_formulas;
        rep.cons_iso = cons_iso_hits / n_formulas;
        rep.maj_iso = maj_iso_sum / n_formulas;
    }
    return rep;
}

std::string evaluate_csv(const std::vector<EvalRow>& rows,
                         const std::vector<std::string>& metrics) {
    auto has = [&](const char* m) {
        return std::find(metrics.begin(), metrics.end(), m) != metrics.end();
    };
    std::ostringstream out;
    out << "molecule_id";
    if (has("cos001")) out << ",cos001";
    if (has("coshun")) out << ",coshun";
    if (has("recall")) out << ",recall,weighted_recall";
    if (has("os")) out << ",os_abs_error";
    out << "\n";
    char buf[64];
    auto emit = [&](double v) {
        std::snprintf(buf, sizeof(buf), ",%.6f", v);
        out << buf;
    };
    auto line = [&](const std::string& id, const EvalRow& r) {
        out << id;
        if (has("cos001")) emit(r.cos001);
        if (has("coshun")) emit(r.coshun);
        if (has("recall")) {
            emit(r.recall);
            emit(r.weighted_recall);
        }
        if (has("os")) emit(r.os_err);
        out << "\n";
    };
    for (const auto& r : rows) line(r.molecule_id, r);

    auto stat = [&](auto sel, bool stddev) {
        std::vector<double> xs;
        for (const auto& r : rows) xs.push_back(sel(r));
        double m = vec_mean(xs);
        if (!stddev) return m;
        if (xs.size() < 2) return 0.0;
        double acc = 0;
        for (double x : xs) acc += (x - m) * (x - m);
        return std::sqrt(acc / static_cast<double>(xs.size() - 1));
    };
    for (bool sd : {false, true}) {
        EvalRow s;
        s.cos001 = stat([](const EvalRow& r) { return r.cos001; }, sd);
        s.coshun = stat([](const EvalRow& r) { return r.coshun; }, sd);
        s.recall = stat([](const EvalRow& r) { return r.recall; }, sd);
        s.weighted_recall = stat([](const EvalRow& r) { return r.weighted_recall; }, sd);
        s.os_err = stat([](const EvalRow& r) { return r.os_err; }, sd);
        line(sd ? "std" : "mean", s);
    }
    return out.str();
}

}  // namespace fragnn
