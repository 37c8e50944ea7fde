#include "mul/pipeline.hpp"
#include <cstdio>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "mul/checkpoint.hpp"
#include "mul/mfcc.hpp"
#include "mul/rng.hpp"

namespace mul {

namespace {

uint64_t fnv1a_str(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hash_hex(const std::string& s) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a_str(s)));
    return buf;
}

/// Per-stage config hashes for staleness detection.
class RunManifest {
public:
    explicit RunManifest(std::filesystem::path work_dir)
        : path_(work_dir / "run_manifest.json") {
        if (std::filesystem::exists(path_)) {
            std::ifstream is(path_);
            is >> j_;
        } else {
            j_ = nlohmann::json::object();
        }
    }

    bool fresh(const std::string& stage, const std::string& hash,
               const std::filesystem::path& artifact) const {
        return j_.contains(stage) && j_.at(stage) == hash && std::filesystem::exists(artifact);
    }

    void record(const std::string& stage, const std::string& hash) {
        j_[stage] = hash;
        std::ofstream os(path_);
        os << j_.dump(2) << "\n";
    }

private:
    std::filesystem::path path_;
    nlohmann::json j_;
};

void to_json_iter(nlohmann::json& j, const IterationConfig& it) {
    j = {{"source", it.source},
         {"source_layer", it.source_layer},
         {"subsample", it.subsample},
         {"starts", it.starts},
         {"batch_size", it.batch_size},
         {"max_batches", it.max_batches},
         {"tol", it.tol},
         {"steps", it.steps},
         {"alpha", it.alpha},
         {"mask_p", it.mask.p},
         {"mask_l", it.mask.l},
         {"peak_lr", it.peak_lr},
         {"train_batch", it.train_batch},
         {"crop_frames", it.crop_frames}};
    j["codebooks"] = nlohmann::json::array();
    for (const auto& cb : it.codebooks) {
        nlohmann::json c = {{"k", cb.k}};
        if (cb.pq) {
            c["pq"] = true;
            c["splice_window"] = cb.splice_window;
            c["block"] = cb.block;
            c["orders"] = cb.orders;
        }
        j["codebooks"].push_back(c);
    }
}

void from_json_iter(const nlohmann::json& j, IterationConfig& it) {
    it = IterationConfig{};
    if (j.contains("source")) it.source = j.at("source").get<std::string>();
    if (j.contains("source_layer")) it.source_layer = j.at("source_layer").get<int>();
    if (j.contains("subsample")) it.subsample = j.at("subsample").get<double>();
    if (j.contains("starts")) it.starts = j.at("starts").get<int>();
    if (j.contains("batch_size")) it.batch_size = j.at("batch_size").get<int>();
    if (j.contains("max_batches")) it.max_batches = j.at("max_batches").get<int>();
    if (j.contains("tol")) it.tol = j.at("tol").get<double>();
    if (j.contains("steps")) it.steps = j.at("steps").get<int>();
    if (j.contains("alpha")) it.alpha = j.at("alpha").get<double>();
    if (j.contains("mask_p")) it.mask.p = j.at("mask_p").get<double>();
    if (j.contains("mask_l")) it.mask.l = j.at("mask_l").get<int>();
    if (j.contains("peak_lr")) it.peak_lr = j.at("peak_lr").get<double>();
    if (j.contains("train_batch")) it.train_batch = j.at("train_batch").get<int>();
    if (j.contains("crop_frames")) it.crop_frames = j.at("crop_frames").get<int>();
    if (j.contains("codebooks")) {
        it.codebooks.clear();
        for (const auto& c : j.at("codebooks")) {
            CodebookSpecCfg cb;
            if (c.contains("k")) cb.k = c.at("k").get<int>();
            if (c.contains("pq")) cb.pq = c.at("pq").get<bool>();
            if (c.contains("splice_window")) cb.splice_window = c.at("splice_window").get<int>();
            if (c.contains("block")) cb.block = c.at("block").get<int>();
            if (c.contains("orders")) cb.orders = c.at("orders").get<int>();
            it.codebooks.push_back(cb);
        }
    }
}

int middle_layer(const ModelConfig& cfg) { return std::max(0, cfg.num_layers / 2) + cfg.num_layers % 2; }

int effective_layer(const ModelConfig& cfg, int wanted) {
    return wanted >= 0 ? wanted : middle_layer(cfg);
}

}  // namespace

void to_json(nlohmann::json& j, const PipelineConfig& cfg) {
    j = nlohmann::json::object();
    j["work_dir"] = cfg.work_dir.string();
    j["seed"] = cfg.seed;
    j["holdout_fraction"] = cfg.holdout_fraction;
    if (cfg.synthetic) {
        nlohmann::json s;
        to_json(s, *cfg.synthetic);
        j["corpus"] = {{"synthetic", s}};
    } else {
        j["corpus"] = {{"features_dir", cfg.features_dir.string()}};
        if (!cfg.phones_path.empty()) j["corpus"]["phones"] = cfg.phones_path.string();
    }
    to_json(j["model"], cfg.model);
    j["iterations"] = nlohmann::json::array();
    for (const auto& it : cfg.iterations) {
        nlohmann::json ji;
        to_json_iter(ji, it);
        j["iterations"].push_back(ji);
    }
    j["final_eval"] = cfg.final_eval;
}

void from_json(const nlohmann::json& j, PipelineConfig& cfg) {
    cfg = PipelineConfig{};
    if (j.contains("work_dir")) cfg.work_dir = j.at("work_dir").get<std::string>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
    if (j.contains("holdout_fraction"))
        cfg.holdout_fraction = j.at("holdout_fraction").get<double>();
    if (j.contains("corpus")) {
        const auto& c = j.at("corpus");
        if (c.contains("synthetic")) {
            SyntheticCorpusSpec s;
            from_json(c.at("synthetic"), s);
            cfg.synthetic = s;
        }
        if (c.contains("features_dir")) cfg.features_dir = c.at("features_dir").get<std::string>();
        if (c.contains("phones")) cfg.phones_path = c.at("phones").get<std::string>();
    }
    if (j.contains("model")) from_json(j.at("model"), cfg.model);
    if (j.contains("iterations")) {
        cfg.iterations.clear();
        for (const auto& ji : j.at("iterations")) {
            IterationConfig it;
            from_json_iter(ji, it);
            cfg.iterations.push_back(it);
        }
    }
    if (j.contains("final_eval")) cfg.final_eval = j.at("final_eval").get<bool>();
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path.string());
    nlohmann::json j;
    is >> j;
    PipelineConfig cfg;
    from_json(j, cfg);
    if (cfg.iterations.empty()) throw std::runtime_error("config has no iterations");
    if (cfg.iterations.front().source != "mfcc")
        throw std::runtime_error("iteration 1 must cluster the acoustic (mfcc) features");
    for (size_t i = 1; i < cfg.iterations.size(); ++i) {
        if (cfg.iterations[i].source != "checkpoint")
            throw std::runtime_error("iteration " + std::to_string(i + 1) +
                                     " must cluster checkpoint features");
    }
    return cfg;
}

LabeledCorpus load_corpus(const PipelineConfig& cfg) {
    LabeledCorpus corpus;
    if (cfg.synthetic) {
        SyntheticCorpus syn = gen_synthetic_corpus(*cfg.synthetic);
        corpus.features = std::move(syn.features);
        corpus.phones = std::move(syn.phone_labels);
    } else {
        const Manifest m = load_manifest(cfg.features_dir / "manifest.txt");
        for (size_t i = 0; i < m.entries.size(); ++i)
            corpus.features.push_back(load_features(m.resolve(i)));
        std::filesystem::path phones = cfg.phones_path;
        if (phones.empty() && std::filesystem::exists(cfg.features_dir / "phones.txt"))
            phones = cfg.features_dir / "phones.txt";
        if (!phones.empty()) corpus.phones = load_labels(phones);
    }
    split_corpus(corpus, cfg.holdout_fraction, cfg.seed);
    return corpus;
}

void split_corpus(LabeledCorpus& corpus, double holdout_fraction, uint64_t seed) {
    corpus.train_idx.clear();
    corpus.holdout_idx.clear();
    Rng rng(derive_seed(seed, "holdout-split"));
    for (size_t i = 0; i < corpus.features.size(); ++i) {
        if (rng.uniform() < holdout_fraction)
            corpus.holdout_idx.push_back(static_cast<int>(i));
        else
            corpus.train_idx.push_back(static_cast<int>(i));
    }
    if (corpus.train_idx.empty())
        throw std::runtime_error("holdout fraction leaves no training utterances");
}

namespace {

/// Features used as the clustering source for one iteration: the corpus
/// acoustics for iteration 1, otherwise the previous model's hidden states.
std::vector<FeatureSequence> source_features(const PipelineConfig& cfg,
                                             const LabeledCorpus& corpus, int index) {
    const IterationConfig& it = cfg.iterations[index];
    if (it.source == "mfcc") return corpus.features;
    if (index == 0) throw std::runtime_error("iteration 1 cannot cluster checkpoint features");
    const std::filesystem::path ckpt =
        cfg.work_dir / ("it" + std::to_string(index)) / "checkpoint.muck";
    if (!std::filesystem::exists(ckpt))
        throw std::runtime_error("missing upstream artifact: " + ckpt.string());
    MaskedPredictionModel model = load_checkpoint(ckpt);
    const int layer = effective_layer(model.config(), it.source_layer);
    return extract_features(model, corpus.features, layer);
}

DataMatrix gather_fit_data(const std::vector<FeatureSequence>& feats,
                           const std::vector<int>& train_idx, double fraction, uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw std::runtime_error("subsample fraction must be in (0, 1]");
    Rng rng(derive_seed(seed, "fit-subsample"));
    std::vector<FeatureSequence> chosen;
    for (int i : train_idx) {
        if (fraction >= 1.0 || rng.uniform() < fraction) chosen.push_back(feats[i]);
    }
    if (chosen.empty()) chosen.push_back(feats[train_idx.front()]);
    return DataMatrix::from_features(chosen);
}

struct FittedTargets {
    ClusterEnsemble ensemble;
    // per-head labels for every corpus utterance, in corpus order
    std::vector<std::vector<LabelSequence>> labels;  // [head][utterance]
    std::vector<int> head_sizes;
};

FittedTargets fit_targets(const std::vector<FeatureSequence>& source,
                          const LabeledCorpus& corpus, const IterationConfig& it,
                          uint64_t seed) {
    FittedTargets out;
    for (size_t ci = 0; ci < it.codebooks.size(); ++ci) {
        const CodebookSpecCfg& spec = it.codebooks[ci];
        const uint64_t cb_seed = derive_seed(seed, "codebook", ci);
        MiniBatchConfig mb;
        mb.k = spec.k;
        mb.batch_size = it.batch_size;
        mb.max_batches = it.max_batches;
        mb.n_starts = it.starts;
        mb.tol = it.tol;
        mb.seed = cb_seed;
        if (spec.pq) {
            std::vector<FeatureSequence> spliced;
            spliced.reserve(source.size());
            for (const auto& f : source) spliced.push_back(splice(f, spec.splice_window));
            std::vector<FeatureSequence> train_spliced;
            {
                Rng rng(derive_seed(cb_seed, "fit-subsample"));
                for (int i : corpus.train_idx)
                    if (it.subsample >= 1.0 || rng.uniform() < it.subsample)
                        train_spliced.push_back(spliced[i]);
                if (train_spliced.empty()) train_spliced.push_back(spliced[corpus.train_idx.front()]);
            }
            const DataMatrix data = DataMatrix::from_features(train_spliced);
            const auto partition =
                derivative_order_partition(spec.splice_window, spec.block, spec.orders);
            ClusterEnsemble ens = pq_fit(data, partition, mb);
            for (auto& cb : ens.codebooks) {
                cb.kind = FeatureKind::kSplicedMfcc;
                std::vector<LabelSequence> head_labels;
                head_labels.reserve(spliced.size());
                for (const auto& f : spliced) head_labels.push_back(assign(cb, f));
                out.labels.push_back(std::move(head_labels));
                out.head_sizes.push_back(cb.k);
                out.ensemble.codebooks.push_back(cb);
            }
        } else {
            const DataMatrix data =
                gather_fit_data(source, corpus.train_idx, it.subsample, cb_seed);
            MatrixSource stream(data);
            FitResult fit = minibatch_kmeans_fit(stream, mb);
            fit.codebook.kind = source.front().kind;
            std::vector<LabelSequence> head_labels;
            head_labels.reserve(source.size());
            for (const auto& f : source) head_labels.push_back(assign(fit.codebook, f));
            out.labels.push_back(std::move(head_labels));
            out.head_sizes.push_back(fit.codebook.k);
            out.ensemble.codebooks.push_back(std::move(fit.codebook));
        }
    }
    return out;
}

nlohmann::json evaluate_targets(const FittedTargets& targets, const LabeledCorpus& corpus) {
    nlohmann::json heads = nlohmann::json::array();
    for (size_t k = 0; k < targets.labels.size(); ++k) {
        std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
        for (int i : corpus.holdout_idx)
            pairs.emplace_back(corpus.phones[i].labels, targets.labels[k][i].labels);
        heads.push_back(metrics_report(build_contingency(pairs)));
    }
    nlohmann::json j;
    j["heads"] = heads;
    j["pnmi"] = heads[0]["pnmi"];
    j["phone_purity"] = heads[0]["phone_purity"];
    j["cluster_purity"] = heads[0]["cluster_purity"];
    if (targets.labels.size() > 1) {
        uint64_t product = 1;
        for (int k : targets.head_sizes) product *= static_cast<uint64_t>(k);
        if (product <= 100000) {
            // joint tuple label over all heads
            std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
            for (int i : corpus.holdout_idx) {
                std::vector<int> joint(targets.labels[0][i].labels.size(), 0);
                for (size_t k = 0; k < targets.labels.size(); ++k) {
                    for (size_t t = 0; t < joint.size(); ++t)
                        joint[t] = joint[t] * targets.head_sizes[k] +
                                   targets.labels[k][i].labels[t];
                }
                pairs.emplace_back(corpus.phones[i].labels, joint);
            }
            j["joint"] = metrics_report(build_contingency(pairs));
        }
    }
    return j;
}

std::vector<TrainUtterance> build_train_set(const LabeledCorpus& corpus,
                                            const FittedTargets& targets) {
    std::vector<TrainUtterance> data;
    for (int i : corpus.train_idx) {
        TrainUtterance u;
        u.id = corpus.features[i].utterance_id;
        u.features = corpus.features[i];
        for (const auto& head : targets.labels) u.targets.push_back(head[i].labels);
        data.push_back(std::move(u));
    }
    return data;
}

}  // namespace

IterationResult run_iteration(const PipelineConfig& cfg, const LabeledCorpus& corpus, int index) {
    if (index < 0 || index >= static_cast<int>(cfg.iterations.size()))
        throw std::runtime_error("iteration index out of range");
    const IterationConfig& it = cfg.iterations[index];
    const std::filesystem::path it_dir = cfg.work_dir / ("it" + std::to_string(index + 1));
    std::filesystem::create_directories(it_dir);
    RunManifest manifest(cfg.work_dir);

    // chained hash: any upstream config change invalidates this stage
    nlohmann::json cfg_j;
    to_json(cfg_j, cfg);
    std::string chain = cfg_j["model"].dump() + std::to_string(cfg.seed) +
                        std::to_string(cfg.holdout_fraction) +
                        (cfg.synthetic ? nlohmann::json(*cfg.synthetic).dump()
                                       : cfg.features_dir.string());
    for (int i = 0; i <= index; ++i) {
        nlohmann::json ji;
        to_json_iter(ji, cfg.iterations[i]);
        chain += ji.dump();
    }
    const std::string stage_prefix = "it" + std::to_string(index + 1) + "/";
    const uint64_t iter_seed = derive_seed(cfg.seed, "iteration", static_cast<uint64_t>(index));

    IterationResult res;
    res.codebook_dir = it_dir / "codebook";
    res.checkpoint = it_dir / "checkpoint.muck";
    res.labels_path = it_dir / "labels_0.txt";

    const std::string cluster_hash = hash_hex(chain + "cluster");
    const std::string train_hash = hash_hex(chain + "train");

    FittedTargets targets;
    const bool cluster_fresh =
        manifest.fresh(stage_prefix + "cluster", cluster_hash, res.labels_path) &&
        std::filesystem::exists(res.codebook_dir / "index.txt");
    if (cluster_fresh) {
        targets.ensemble = load_ensemble(res.codebook_dir);
        for (size_t k = 0; k < targets.ensemble.codebooks.size(); ++k) {
            auto labels = load_labels(it_dir / ("labels_" + std::to_string(k) + ".txt"));
            targets.labels.push_back(std::move(labels));
            targets.head_sizes.push_back(targets.ensemble.codebooks[k].k);
        }
        std::cout << "[pipeline] it" << index + 1 << " clustering up-to-date, skipped\n";
    } else {
        const std::vector<FeatureSequence> source = source_features(cfg, corpus, index);
        targets = fit_targets(source, corpus, it, iter_seed);
        save_ensemble(res.codebook_dir, targets.ensemble);
        for (size_t k = 0; k < targets.labels.size(); ++k)
            save_labels(it_dir / ("labels_" + std::to_string(k) + ".txt"), targets.labels[k]);
        manifest.record(stage_prefix + "cluster", cluster_hash);
    }

    if (corpus.has_ground_truth()) {
        res.metrics = evaluate_targets(targets, corpus);
        std::ofstream os(it_dir / "metrics.json");
        os << res.metrics.dump(2) << "\n";
    }

    if (manifest.fresh(stage_prefix + "train", train_hash, res.checkpoint)) {
        std::cout << "[pipeline] it" << index + 1 << " training up-to-date, skipped\n";
        return res;
    }
    ModelConfig mc = cfg.model;
    mc.input_mode = InputMode::kFeatures;
    mc.input_dim = corpus.features.front().dim;
    mc.codebook_sizes = targets.head_sizes;
    MaskedPredictionModel model(mc, derive_seed(iter_seed, "model"));
    TrainConfig tc;
    tc.total_steps = it.steps;
    tc.batch_size = it.train_batch;
    tc.crop_frames = it.crop_frames;
    tc.alpha = it.alpha;
    tc.mask = it.mask;
    tc.peak_lr = it.peak_lr;
    tc.seed = derive_seed(iter_seed, "train");
    tc.checkpoint_path = res.checkpoint;
    const std::vector<TrainUtterance> data = build_train_set(corpus, targets);
    if (it.steps > 0) {
        TrainResult tr = train(model, data, tc);
        write_loss_curve(it_dir / "loss_curve.json", tr);
    } else {
        save_checkpoint(res.checkpoint, model);  // degenerate schedule: initial model
    }
    manifest.record(stage_prefix + "train", train_hash);
    return res;
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
    std::filesystem::create_directories(cfg.work_dir);
    LabeledCorpus corpus = load_corpus(cfg);
    if (cfg.synthetic) {
        // persist the corpus so downstream CLI stages can reference it
        const std::filesystem::path corpus_dir = cfg.work_dir / "corpus";
        if (!std::filesystem::exists(corpus_dir / "manifest.txt")) {
            SyntheticCorpus sc;
            sc.features = corpus.features;
            sc.phone_labels = corpus.phones;
            write_corpus(corpus_dir, sc);
        }
    }
    PipelineResult res;
    for (int i = 0; i < static_cast<int>(cfg.iterations.size()); ++i) {
        IterationResult ir = run_iteration(cfg, corpus, i);
        res.iteration_metrics.push_back(ir.metrics);
        if (corpus.has_ground_truth() && !ir.metrics.is_null())
            std::cout << "[pipeline] it" << i + 1
                      << " teacher PNMI=" << ir.metrics["pnmi"].get<double>() << "\n";
    }
    if (cfg.final_eval && corpus.has_ground_truth()) {
        // cluster the last model's features with the last iteration's spec
        const int last = static_cast<int>(cfg.iterations.size());
        const std::filesystem::path ckpt =
            cfg.work_dir / ("it" + std::to_string(last)) / "checkpoint.muck";
        MaskedPredictionModel model = load_checkpoint(ckpt);
        IterationConfig eval_it = cfg.iterations.back();
        const int layer = effective_layer(model.config(), eval_it.source_layer);
        const std::vector<FeatureSequence> feats = extract_features(model, corpus.features, layer);
        FittedTargets targets =
            fit_targets(feats, corpus, eval_it, derive_seed(cfg.seed, "final-eval"));
        res.final_metrics = evaluate_targets(targets, corpus);
        std::ofstream os(cfg.work_dir / "final_metrics.json");
        os << res.final_metrics.dump(2) << "\n";
        std::cout << "[pipeline] final model-feature PNMI="
                  << res.final_metrics["pnmi"].get<double>() << "\n";
    }
    return res;
}

nlohmann::json stability_study(const LabeledCorpus& corpus, const std::vector<int>& ks,
                               const std::vector<double>& sizes, int trials,
                               const IterationConfig& fit_cfg, uint64_t seed) {
    if (!corpus.has_ground_truth())
        throw std::runtime_error("stability study needs ground-truth labels");
    nlohmann::json grid = nlohmann::json::array();
    for (int k : ks) {
        for (double size : sizes) {
            std::vector<double> pnmis;
            for (int trial = 0; trial < trials; ++trial) {
                const uint64_t trial_seed = derive_seed(seed, "stability", k, trial);
                const uint64_t size_seed = derive_seed(trial_seed, "size",
                                                       static_cast<uint64_t>(size * 1e6));
                const DataMatrix data =
                    gather_fit_data(corpus.features, corpus.train_idx, size, size_seed);
                MiniBatchConfig mb;
                mb.k = k;
                mb.batch_size = fit_cfg.batch_size;
                mb.max_batches = fit_cfg.max_batches;
                mb.n_starts = fit_cfg.starts;
                mb.tol = fit_cfg.tol;
                mb.seed = size_seed;
                MatrixSource stream(data);
                const FitResult fit = minibatch_kmeans_fit(stream, mb);
                std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
                for (int i : corpus.holdout_idx)
                    pairs.emplace_back(corpus.phones[i].labels,
                                       assign(fit.codebook, corpus.features[i]).labels);
                pnmis.push_back(pnmi(build_contingency(pairs)));
            }
            double mean = 0.0;
            for (double v : pnmis) mean += v;
            mean /= pnmis.size();
            double var = 0.0;
            for (double v : pnmis) var += (v - mean) * (v - mean);
            const double std_dev = pnmis.size() > 1 ? std::sqrt(var / (pnmis.size() - 1)) : 0.0;
            grid.push_back({{"k", k},
                            {"size", size},
                            {"trials", trials},
                            {"pnmi_mean", mean},
                            {"pnmi_std", std_dev}});
        }
    }
    return grid;
}

nlohmann::json layer_sweep(MaskedPredictionModel& model, const LabeledCorpus& corpus,
                           const std::vector<int>& ks, const IterationConfig& fit_cfg,
                           uint64_t seed) {
    if (!corpus.has_ground_truth()) throw std::runtime_error("layer sweep needs ground truth");
    nlohmann::json rows = nlohmann::json::array();
    for (int layer = 0; layer <= model.config().num_layers; ++layer) {
        const std::vector<FeatureSequence> feats = extract_features(model, corpus.features, layer);
        for (int k : ks) {
            MiniBatchConfig mb;
            mb.k = k;
            mb.batch_size = fit_cfg.batch_size;
            mb.max_batches = fit_cfg.max_batches;
            mb.n_starts = fit_cfg.starts;
            mb.tol = fit_cfg.tol;
            mb.seed = derive_seed(seed, "layer-sweep", layer, k);
            const DataMatrix data =
                gather_fit_data(feats, corpus.train_idx, fit_cfg.subsample, mb.seed);
            MatrixSource stream(data);
            const FitResult fit = minibatch_kmeans_fit(stream, mb);
            std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
            for (int i : corpus.holdout_idx)
                pairs.emplace_back(corpus.phones[i].labels,
                                   assign(fit.codebook, feats[i]).labels);
            nlohmann::json row = metrics_report(build_contingency(pairs));
            row["layer"] = layer;
            row["k"] = k;
            rows.push_back(row);
        }
    }
    return rows;
}

namespace {

nlohmann::json sweep_point(const LabeledCorpus& corpus,
                           const std::vector<std::vector<int>>& teacher, int teacher_classes,
                           double alpha, double mask_p, SweepSpec spec) {
    ModelConfig mc = spec.model;
    mc.input_mode = InputMode::kFeatures;
    mc.input_dim = corpus.features.front().dim;
    mc.codebook_sizes = {teacher_classes};
    MaskedPredictionModel model(mc, derive_seed(spec.train.seed, "sweep-model"));

    std::vector<TrainUtterance> data;
    for (int i : corpus.train_idx) {
        TrainUtterance u;
        u.id = corpus.features[i].utterance_id;
        u.features = corpus.features[i];
        u.targets = {teacher[i]};
        data.push_back(std::move(u));
    }
    TrainConfig tc = spec.train;
    tc.alpha = alpha;
    tc.mask.p = mask_p;
    tc.checkpoint_path.clear();
    train(model, data, tc);

    std::vector<TrainUtterance> held;
    for (int i : corpus.holdout_idx) {
        TrainUtterance u;
        u.features = corpus.features[i];
        u.targets = {teacher[i]};
        held.push_back(std::move(u));
    }
    MaskConfig eval_mask;
    eval_mask.p = spec.train.mask.p;
    eval_mask.l = spec.train.mask.l;
    const std::vector<double> acc = masked_prediction_accuracy(
        model, held, eval_mask, derive_seed(spec.train.seed, "sweep-eval"));

    nlohmann::json row = {{"alpha", alpha},
                          {"mask_p", mask_p},
                          {"heldout_masked_accuracy", acc[0]}};
    if (corpus.has_ground_truth()) {
        const int layer = effective_layer(mc, spec.extract_layer);
        const std::vector<FeatureSequence> feats = extract_features(model, corpus.features, layer);
        MiniBatchConfig mb;
        mb.k = spec.downstream_k;
        mb.batch_size = spec.fit.batch_size;
        mb.max_batches = spec.fit.max_batches;
        mb.n_starts = spec.fit.starts;
        mb.tol = spec.fit.tol;
        mb.seed = derive_seed(spec.train.seed, "sweep-cluster");
        const DataMatrix fit_data =
            gather_fit_data(feats, corpus.train_idx, spec.fit.subsample, mb.seed);
        MatrixSource stream(fit_data);
        const FitResult fit = minibatch_kmeans_fit(stream, mb);
        std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
        for (int i : corpus.holdout_idx)
            pairs.emplace_back(corpus.phones[i].labels, assign(fit.codebook, feats[i]).labels);
        row["downstream_pnmi"] = pnmi(build_contingency(pairs));
    }
    return row;
}

}  // namespace

nlohmann::json alpha_sweep(const LabeledCorpus& corpus,
                           const std::vector<std::vector<int>>& teacher, int teacher_classes,
                           const std::vector<double>& alphas, SweepSpec spec) {
    nlohmann::json rows = nlohmann::json::array();
    for (double a : alphas)
        rows.push_back(sweep_point(corpus, teacher, teacher_classes, a, spec.train.mask.p, spec));
    return rows;
}

nlohmann::json mask_prob_sweep(const LabeledCorpus& corpus,
                               const std::vector<std::vector<int>>& teacher, int teacher_classes,
                               const std::vector<double>& probs, SweepSpec spec) {
    nlohmann::json rows = nlohmann::json::array();
    for (double p : probs)
        rows.push_back(sweep_point(corpus, teacher, teacher_classes, spec.train.alpha, p, spec));
    return rows;
}

std::vector<std::vector<int>> corrupt_labels(const std::vector<std::vector<int>>& labels,
                                             double fraction, int num_classes, uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0)
        throw std::runtime_error("corruption fraction must be in [0, 1]");
    if (num_classes < 2) throw std::runtime_error("need at least 2 classes to corrupt");
    std::vector<std::vector<int>> out = labels;
    Rng rng(derive_seed(seed, "corrupt-labels"));
    for (auto& seq : out) {
        for (int& z : seq) {
            if (rng.uniform() < fraction) {
                const int step = 1 + static_cast<int>(rng.uniform_int(num_classes - 1));
                z = (z + step) % num_classes;
            }
        }
    }
    return out;
}

}  // namespace mul
