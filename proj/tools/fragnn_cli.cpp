#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "fragnn/metrics.hpp"
#include "fragnn/retrieve.hpp"
#include "fragnn/train.hpp"

using namespace fragnn;
namespace fs = std::filesystem;

namespace {

void logline(const std::string& msg) { std::fprintf(stderr, "[fragnn] %s\n", msg.c_str()); }

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

std::vector<SpectrumRecord> load_dir(const std::string& dir) {
    return read_records(dir + "/molecules.jsonl", dir + "/spectra.msp");
}

struct FragmentOpts {
    std::string in, out, elements;
    int depth = 3;
};

int cmd_fragment(const FragmentOpts& o) {
    const ElementTable* table = &ElementTable::builtin();
    ElementTable loaded;
    if (!o.elements.empty()) {
        loaded = ElementTable::load(o.elements);
        table = &loaded;
    }
    auto mols = read_molecule_file(o.in);
    std::ofstream dump;
    if (!o.out.empty()) {
        dump.open(o.out);
        if (!dump) throw ValidationError("cannot write " + o.out);
    }
    for (const auto& mol : mols) {
        MolGraph skel = heavy_skeleton(mol);
        FragDag dag = rec_frag(skel, o.depth);
        assign_iso_classes(dag, skel);
        auto masses = mass_set(dag, 0, AdductMode::Protonated, *table);
        std::printf("id=%s nodes=%d edges=%d masses=%zu\n", mol.id.c_str(), dag.num_nodes(),
                    dag.num_edges(), masses.size());
        if (dump) dump << dag_to_jsonl(dag);
    }
    return 0;
}

struct SynthOpts {
    std::string molecules, out;
    uint64_t seed = 0;
    int depth = 3, htol = 4;
    double q = 0.0;
};

int cmd_synth(const SynthOpts& o) {
    auto mols = read_molecule_file(o.molecules);
    auto oracle = OracleParams::defaults(o.htol, o.seed);
    oracle.os_fraction = o.q;
    auto records = synth_generate(mols, oracle, o.depth, o.htol);
    fs::create_directories(o.out);
    write_records(o.out + "/molecules.jsonl", o.out + "/spectra.msp", records);
    logline("synth: wrote " + std::to_string(records.size()) + " records to " + o.out);
    return 0;
}

struct TrainOpts {
    std::string data, config, out;
    uint64_t seed = 0;
};

int cmd_train(const TrainOpts& o) {
    FileConfig cfg;
    if (!o.config.empty()) cfg = parse_config_file(o.config);
    cfg.model.seed = o.seed;
    cfg.train.seed = o.seed;
    auto records = load_dir(o.data);
    split_dataset(records, {0.6, 0.2, 0.2}, o.seed);
    cfg.train.verbose = true;
    auto result = train_model(records, cfg.model, cfg.train);
    save_checkpoint(o.out, result.params);
    const auto& last = result.history.back();
    std::printf("epochs=%zu best_epoch=%d best_val_loss=%.6f val_coshun=%.4f\n",
                result.history.size(), result.best_epoch, result.best_val_loss,
                last.val_cos_hungarian);
    return 0;
}

struct PredictOpts {
    std::string model, molecules, out_spectra, out_annotations, energies = "20,40";
};

int cmd_predict(const PredictOpts& o) {
    auto params = load_checkpoint(o.model);
    auto mols = read_molecule_file(o.molecules);
    auto energies = parse_int_list(o.energies);
    std::vector<Spectrum> spectra;
    std::ofstream ann;
    if (!o.out_annotations.empty()) {
        ann.open(o.out_annotations);
        if (!ann) throw ValidationError("cannot write " + o.out_annotations);
    }
    for (const auto& mol : mols) {
        auto st = predict_state(params, mol, energies);
        Spectrum sp = dirac_spectrum(st);
        sp.id = mol.id;
        sp.energies = energies;
        spectra.push_back(std::move(sp));
        if (ann) {
            std::istringstream lines(annotated_spectrum_jsonl(st));
            std::string line;
            while (std::getline(lines, line)) {
                auto j = nlohmann::json::parse(line);
                j["molecule_id"] = mol.id;
                ann << j.dump() << "\n";
            }
        }
    }
    write_spectra(o.out_spectra, spectra);
    logline("predict: wrote " + std::to_string(spectra.size()) + " spectra");
    return 0;
}

struct EvaluateOpts {
    std::string pred, truth, metrics = "cos001,coshun", report, model, molecules;
};

int cmd_evaluate(const EvaluateOpts& o) {
    std::vector<std::string> metric_list;
    {
        std::stringstream ss(o.metrics);
        std::string tok;
        while (std::getline(ss, tok, ',')) metric_list.push_back(tok);
    }
    bool want_recall = std::find(metric_list.begin(), metric_list.end(), "recall") !=
                       metric_list.end();
    bool want_os = std::find(metric_list.begin(), metric_list.end(), "os") != metric_list.end();
    for (const auto& m : metric_list)
        if (m != "cos001" && m != "coshun" && m != "recall" && m != "os")
            throw CLI::ValidationError("--metrics", "unknown metric '" + m + "'");

    auto preds = read_spectra(o.pred);
    auto truths = read_spectra(o.truth);
    std::map<std::string, const Spectrum*> pred_by_id;
    for (const auto& sp : preds) pred_by_id[sp.id] = &sp;

    ModelParams params;
    std::map<std::string, const MolGraph*> mol_by_id;
    std::vector<MolGraph> mols;
    if (want_recall || want_os) {
        if (o.model.empty() || o.molecules.empty())
            throw CLI::ValidationError("--metrics",
                                       "recall/os metrics need --model and --molecules");
        params = load_checkpoint(o.model);
        mols = read_molecule_file(o.molecules);
        for (const auto& m : mols) mol_by_id[m.id] = &m;
    }

    std::vector<EvalRow> rows;
    for (const auto& truth : truths) {
        auto it = pred_by_id.find(truth.id);
        if (it == pred_by_id.end())
            throw ValidationError("no prediction for spectrum '" + truth.id + "'");
        EvalRow row;
        row.molecule_id = truth.id;
        row.cos001 = cos_binned(*it->second, truth);
        row.coshun = cos_hungarian(*it->second, truth);
        if (want_recall || want_os) {
            auto mit = mol_by_id.find(truth.id);
            if (mit == mol_by_id.end())
                throw ValidationError("no molecule entry for spectrum '" + truth.id + "'");
            auto st = predict_state(params, *mit->second, truth.energies);
            auto rr = recall_metrics(truth, st.lattice.formula_mass_da);
            row.recall = rr.recall;
            row.weighted_recall = rr.weighted_recall;
            auto part = os_partition(truth, st.lattice.formula_mass_da);
            row.os_err = std::abs(part.p_os - st.p_os());
        }
        rows.push_back(row);
    }
    std::string csv = evaluate_csv(rows, metric_list);
    if (o.report.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        std::ofstream out(o.report);
        if (!out) throw ValidationError("cannot write " + o.report);
        out << csv;
    }
    return 0;
}

struct RetrieveOpts {
    std::string truth_spectra, corpus, model, ks = "1,3,5,10", report;
    int candidates = 50;
};

int cmd_retrieve(const RetrieveOpts& o) {
    auto truths = read_spectra(o.truth_spectra);
    auto corpus = read_molecule_file(o.corpus);
    auto params = load_checkpoint(o.model);
    auto ks = parse_int_list(o.ks);
    std::map<std::string, const MolGraph*> by_id;
    for (const auto& m : corpus) by_id[m.id] = &m;

    std::ostringstream csv;
    csv << "molecule_id,rank";
    for (int k : ks) csv << ",top" << k;
    csv << "\n";
    std::map<int, double> hits;
    int n = 0;
    for (const auto& truth : truths) {
        auto it = by_id.find(truth.id);
        if (it == by_id.end())
            throw ValidationError("spectrum '" + truth.id + "' has no corpus molecule");
        auto cands = build_candidates(*it->second, corpus, o.candidates);
        auto r = rank_candidates(truth, cands, truth.id, params, ks);
        csv << truth.id << "," << r.true_rank;
        for (int k : ks) {
            csv << "," << (r.topk.at(k) ? 1 : 0);
            hits[k] += r.topk.at(k) ? 1 : 0;
        }
        csv << "\n";
        ++n;
    }
    csv << "topk_rate,";
    for (size_t i = 0; i < ks.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s%.4f", i ? "," : "",
                      n ? hits[ks[i]] / n : 0.0);
        csv << buf;
    }
    csv << "\n";
    if (o.report.empty()) {
        std::fputs(csv.str().c_str(), stdout);
    } else {
        std::ofstream out(o.report);
        if (!out) throw ValidationError("cannot write " + o.report);
        out << csv.str();
    }
    return 0;
}

struct EnsembleOpts {
    std::string models, data, report;
    double pmin = 0.05;
};

int cmd_ensemble(const EnsembleOpts& o) {
    std::vector<ModelParams> models;
    {
        std::stringstream ss(o.models);
        std::string tok;
        while (std::getline(ss, tok, ',')) models.push_back(load_checkpoint(tok));
    }
    auto records = load_dir(o.data);
    auto rep = ensemble_consistency(models, records, o.pmin);
    std::ostringstream out;
    out << "metric,value\n";
    char buf[64];
    auto emit = [&](const char* k, double v) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f\n", k, v);
        out << buf;
    };
    emit("cos_hun_mean", rep.cos_hun_mean);
    emit("cos_hun_cv", rep.cos_hun_cv);
    emit("hhat_n_given_f_mean", rep.hhat_ngf_mean);
    emit("hhat_n_given_f_cv", rep.hhat_ngf_cv);
    emit("hhat_iso_mean", rep.hhat_iso_mean);
    emit("hhat_iso_cv", rep.hhat_iso_cv);
    emit("cons", rep.cons);
    emit("maj", rep.maj);
    emit("cons_iso", rep.cons_iso);
    emit("maj_iso", rep.maj_iso);
    emit("filtered_formulas", rep.num_filtered_formulas);
    if (o.report.empty()) {
        std::fputs(out.str().c_str(), stdout);
    } else {
        std::ofstream f(o.report);
        if (!f) throw ValidationError("cannot write " + o.report);
        f << out.str();
    }
    return 0;
}

struct GradcheckOpts {
    std::string smiles = "CCO";
    int hidden = 8;
    double tol = 1e-4;
    uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckOpts& o) {
    ModelConfig c;
    c.hidden_dim = o.hidden;
    c.L1 = 1;
    c.L2 = 1;
    c.d = 2;
    c.j = 2;
    c.seed = o.seed;
    MolGraph mol = parse_smiles(o.smiles);
    mol.id = "gradcheck";
    auto records = synth_generate({mol}, OracleParams::defaults(c.j, o.seed + 1), c.d, c.j);
    auto ctx = prepare_molecule(mol, c);
    ctx.energies = records[0].energies;
    auto targets = match_peaks(records[0].spectrum, ctx.lattice);
    Alphas alphas{0.1, -0.1, 0.1, -0.1};
    auto params = init_params(c);
    auto fn = [&](const std::vector<Array>& ps, std::vector<Array>* grads) {
        ModelParams mp = params;
        mp.arrays = ps;
        auto r = forward(mp, ctx);
        auto tl = build_tape_latent(r.tape, r.joint_col, ctx.lattice);
        auto loss = reg_loss_tape(r.tape, tl,
                                  loss_with_os_tape(r.tape, tl, ctx.lattice, targets), alphas);
        r.tape.backward(loss);
        if (grads) {
            grads->clear();
            for (auto id : r.param_ids) grads->push_back(r.tape.grad(id));
        }
        return r.tape.value(loss).at(0, 0);
    };
    auto report = grad_check(fn, params.arrays, o.tol);
    std::printf("params=%zu failures=%zu max_rel_error=%.3g pass=%s\n", report.num_params,
                report.num_failures, report.max_rel_error,
                report.pass(o.tol) ? "true" : "false");
    return report.pass(o.tol) ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mass-spectrum prediction via fragmentation graphs"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker threads (default 1 for determinism)")
        ->check(CLI::PositiveNumber);

    FragmentOpts fo;
    auto* frag = app.add_subcommand("fragment", "enumerate the fragmentation graph");
    frag->add_option("--in", fo.in, "molecule file (jsonl or id+smiles lines)")->required();
    frag->add_option("--out", fo.out, "write the graph dump (jsonl)");
    frag->add_option("--depth", fo.depth, "maximum fragmentation depth")->capture_default_str();
    frag->add_option("--elements", fo.elements, "element table tsv override");

    SynthOpts so;
    auto* synth = app.add_subcommand("synth", "generate synthetic spectra");
    synth->add_option("--molecules", so.molecules, "input molecule file")->required();
    synth->add_option("--out", so.out, "output dataset directory")->required();
    synth->add_option("--seed", so.seed, "generator seed")->required();
    synth->add_option("--depth", so.depth, "fragmentation depth")->capture_default_str();
    synth->add_option("--htol", so.htol, "hydrogen tolerance")->capture_default_str();
    synth->add_option("--q", so.q, "out-of-support intensity fraction")->capture_default_str();

    TrainOpts to;
    auto* train = app.add_subcommand("train", "fit a model");
    train->add_option("--data", to.data, "dataset directory")->required();
    train->add_option("--config", to.config, "key=value config file");
    train->add_option("--out", to.out, "output checkpoint")->required();
    train->add_option("--seed", to.seed, "training seed")->required();

    PredictOpts po;
    auto* predict = app.add_subcommand("predict", "predict spectra for molecules");
    predict->add_option("--model", po.model, "checkpoint file")->required();
    predict->add_option("--molecules", po.molecules, "input molecule file")->required();
    predict->add_option("--out-spectra", po.out_spectra, "output spectrum file")->required();
    predict->add_option("--out-annotations", po.out_annotations, "per-peak annotation jsonl");
    predict->add_option("--energies", po.energies, "collision energies")->capture_default_str();

    EvaluateOpts eo;
    auto* evaluate = app.add_subcommand("evaluate", "score predictions against truth");
    evaluate->add_option("--pred", eo.pred, "predicted spectrum file")->required();
    evaluate->add_option("--truth", eo.truth, "true spectrum file")->required();
    evaluate->add_option("--metrics", eo.metrics, "comma list: cos001,coshun,recall,os")
        ->capture_default_str();
    evaluate->add_option("--report", eo.report, "output csv (stdout when omitted)");
    evaluate->add_option("--model", eo.model, "checkpoint, needed for recall/os");
    evaluate->add_option("--molecules", eo.molecules, "molecule file, needed for recall/os");

    RetrieveOpts ro;
    auto* retrieve = app.add_subcommand("retrieve", "rank candidate structures per spectrum");
    retrieve->add_option("--truth-spectra", ro.truth_spectra, "spectrum file")->required();
    retrieve->add_option("--corpus", ro.corpus, "candidate molecule corpus")->required();
    retrieve->add_option("--model", ro.model, "checkpoint file")->required();
    retrieve->add_option("--k", ro.ks, "top-k list")->capture_default_str();
    retrieve->add_option("--candidates", ro.candidates, "candidate-set size")
        ->capture_default_str();
    retrieve->add_option("--report", ro.report, "output csv (stdout when omitted)");

    EnsembleOpts no;
    auto* ensemble = app.add_subcommand("ensemble", "ensemble agreement metrics");
    ensemble->add_option("--models", no.models, "comma-separated checkpoints")->required();
    ensemble->add_option("--data", no.data, "dataset directory")->required();
    ensemble->add_option("--pmin", no.pmin, "formula probability filter")->capture_default_str();
    ensemble->add_option("--report", no.report, "output csv (stdout when omitted)");

    GradcheckOpts go;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gradcheck->add_option("--smiles", go.smiles, "molecule")->capture_default_str();
    gradcheck->add_option("--hidden", go.hidden, "hidden width")->capture_default_str();
    gradcheck->add_option("--tol", go.tol, "relative tolerance")->capture_default_str();
    gradcheck->add_option("--seed", go.seed, "seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        std::fprintf(stderr, "%s", app.help().c_str());
        return 1;
    }

    try {
        if (*frag) return cmd_fragment(fo);
        if (*synth) return cmd_synth(so);
        if (*train) return cmd_train(to);
        if (*predict) return cmd_predict(po);
        if (*evaluate) return cmd_evaluate(eo);
        if (*retrieve) return cmd_retrieve(ro);
        if (*ensemble) return cmd_ensemble(no);
        if (*gradcheck) return cmd_gradcheck(go);
    } catch (const CLI::ValidationError& e) {
        std::fprintf(stderr, "[fragnn] usage error: %s\n", e.what());
        return 1;
    } catch (const TrainDivergence& e) {
        std::fprintf(stderr, "[fragnn] numerical failure: %s\n", e.what());
        return 3;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "[fragnn] parse error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "[fragnn] error: %s\n", e.what());
        return 2;
    }
    return 1;
}
