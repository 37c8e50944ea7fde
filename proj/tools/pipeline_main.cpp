#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "mul/checkpoint.hpp"
#include "mul/pipeline.hpp"

using namespace mul;

namespace {

void write_report(const std::string& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << j.dump(2) << "\n";
}

/// Teacher labels for the ablation sweeps: the first iteration's k-means
/// units, or the ground-truth phones, optionally corrupted.
std::pair<std::vector<std::vector<int>>, int> sweep_teacher(const PipelineConfig& cfg,
                                                            const LabeledCorpus& corpus,
                                                            const std::string& kind,
                                                            double corrupt_fraction) {
    std::vector<std::vector<int>> teacher;
    int classes = 0;
    if (kind == "truth") {
        if (!corpus.has_ground_truth())
            throw std::runtime_error("corpus has no ground-truth labels");
        for (const auto& seq : corpus.phones) {
            teacher.push_back(seq.labels);
            for (int z : seq.labels) classes = std::max(classes, z + 1);
        }
    } else if (kind == "kmeans") {
        PipelineConfig one = cfg;
        one.iterations.resize(1);
        one.work_dir = cfg.work_dir / "sweep_teacher";
        const IterationResult it = run_iteration(one, corpus, 0);
        const auto labels = load_labels(it.labels_path);
        for (const auto& seq : labels) {
            teacher.push_back(seq.labels);
            for (int z : seq.labels) classes = std::max(classes, z + 1);
        }
    } else {
        throw std::runtime_error("unknown teacher kind: " + kind);
    }
    if (corrupt_fraction > 0.0)
        teacher = corrupt_labels(teacher, corrupt_fraction, classes,
                                 derive_seed(cfg.seed, "teacher-corrupt"));
    return {teacher, classes};
}

SweepSpec sweep_spec_from(const PipelineConfig& cfg, const LabeledCorpus& corpus) {
    SweepSpec spec;
    spec.model = cfg.model;
    spec.model.input_dim = corpus.features.front().dim;
    const IterationConfig& it = cfg.iterations.front();
    spec.train.total_steps = it.steps;
    spec.train.batch_size = it.train_batch;
    spec.train.crop_frames = it.crop_frames;
    spec.train.alpha = it.alpha;
    spec.train.mask = it.mask;
    spec.train.peak_lr = it.peak_lr;
    spec.train.seed = derive_seed(cfg.seed, "sweep-train");
    spec.downstream_k = it.codebooks.front().k;
    spec.fit = it;
    return spec;
}

std::vector<double> parse_list(const std::string& csv) {
    std::vector<double> out;
    size_t pos = 0;
    while (pos < csv.size()) {
        size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        out.push_back(std::stod(csv.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-supervised unit-refinement pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_path;

    auto* run = app.add_subcommand("run", "run the configured iterations end to end");
    run->add_option("--config", config_path, "pipeline config JSON")->required();

    auto* synth = app.add_subcommand("synth", "generate a synthetic labelled corpus");
    std::string spec_path, synth_out;
    synth->add_option("--spec", spec_path, "corpus spec JSON (defaults when omitted)");
    synth->add_option("--out", synth_out, "output directory")->required();

    auto* stability = app.add_subcommand("stability", "PNMI mean/std over (K, size) cells");
    std::string ks_csv = "100", sizes_csv = "1.0", stability_ckpt;
    int trials = 10, stability_layer = -1;
    stability->add_option("--config", config_path)->required();
    stability->add_option("--ks", ks_csv, "comma-separated cluster counts");
    stability->add_option("--sizes", sizes_csv, "comma-separated training-size fractions");
    stability->add_option("--trials", trials, "independent fits per cell");
    stability->add_option("--checkpoint", stability_ckpt,
                          "study a model's layer features instead of the acoustics");
    stability->add_option("--layer", stability_layer, "layer for --checkpoint (-1 = middle)");
    stability->add_option("--out", out_path, "output JSON")->required();

    auto* lsweep = app.add_subcommand("layer-sweep", "cluster quality per encoder layer");
    std::string checkpoint_path;
    lsweep->add_option("--config", config_path)->required();
    lsweep->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    lsweep->add_option("--ks", ks_csv, "comma-separated cluster counts");
    lsweep->add_option("--out", out_path, "output JSON")->required();

    auto* asweep = app.add_subcommand("alpha-sweep", "masked/unmasked loss-weight ablation");
    std::string alphas_csv = "1.0,0.5,0.0", teacher_kind = "kmeans";
    double corrupt_fraction = 0.0;
    asweep->add_option("--config", config_path)->required();
    asweep->add_option("--alphas", alphas_csv, "comma-separated loss weights");
    asweep->add_option("--teacher", teacher_kind, "kmeans | truth");
    asweep->add_option("--corrupt", corrupt_fraction, "teacher corruption fraction");
    asweep->add_option("--out", out_path, "output JSON")->required();

    auto* msweep = app.add_subcommand("mask-sweep", "mask start-probability ablation");
    std::string probs_csv = "0.04,0.08,0.16";
    msweep->add_option("--config", config_path)->required();
    msweep->add_option("--probs", probs_csv, "comma-separated start probabilities");
    msweep->add_option("--teacher", teacher_kind, "kmeans | truth");
    msweep->add_option("--corrupt", corrupt_fraction, "teacher corruption fraction");
    msweep->add_option("--out", out_path, "output JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            SyntheticCorpusSpec spec;
            if (!spec_path.empty()) {
                std::ifstream is(spec_path);
                if (!is) throw std::runtime_error("cannot open spec: " + spec_path);
                nlohmann::json j;
                is >> j;
                from_json(j, spec);
            }
            write_corpus(synth_out, gen_synthetic_corpus(spec));
            std::cout << "wrote " << spec.num_utterances << " utterances to " << synth_out << "\n";
            return 0;
        }

        const PipelineConfig cfg = load_pipeline_config(config_path);
        if (run->parsed()) {
            run_pipeline(cfg);
            return 0;
        }

        LabeledCorpus corpus = load_corpus(cfg);
        if (stability->parsed()) {
            if (!stability_ckpt.empty()) {
                MaskedPredictionModel model = load_checkpoint(stability_ckpt);
                const int layer = stability_layer >= 0
                                      ? stability_layer
                                      : (model.config().num_layers + 1) / 2;
                corpus.features = extract_features(model, corpus.features, layer);
            }
            std::vector<int> ks;
            for (double k : parse_list(ks_csv)) ks.push_back(static_cast<int>(k));
            const nlohmann::json grid = stability_study(
                corpus, ks, parse_list(sizes_csv), trials, cfg.iterations.front(), cfg.seed);
            write_report(out_path, grid);
            for (const auto& cell : grid)
                std::cout << "k=" << cell["k"] << " size=" << cell["size"]
                          << " pnmi=" << cell["pnmi_mean"] << " +- " << cell["pnmi_std"] << "\n";
        } else if (lsweep->parsed()) {
            MaskedPredictionModel model = load_checkpoint(checkpoint_path);
            std::vector<int> ks;
            for (double k : parse_list(ks_csv)) ks.push_back(static_cast<int>(k));
            const nlohmann::json rows =
                layer_sweep(model, corpus, ks, cfg.iterations.front(), cfg.seed);
            write_report(out_path, rows);
            for (const auto& row : rows)
                std::cout << "layer=" << row["layer"] << " k=" << row["k"]
                          << " pnmi=" << row["pnmi"] << "\n";
        } else {
            const auto [teacher, classes] =
                sweep_teacher(cfg, corpus, teacher_kind, corrupt_fraction);
            const SweepSpec spec = sweep_spec_from(cfg, corpus);
            nlohmann::json rows;
            if (asweep->parsed())
                rows = alpha_sweep(corpus, teacher, classes, parse_list(alphas_csv), spec);
            else
                rows = mask_prob_sweep(corpus, teacher, classes, parse_list(probs_csv), spec);
            write_report(out_path, rows);
            for (const auto& row : rows)
                std::cout << "alpha=" << row["alpha"] << " mask_p=" << row["mask_p"]
                          << " heldout_masked_acc=" << row["heldout_masked_accuracy"] << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
