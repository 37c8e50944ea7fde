#pragma once

#include <filesystem>
#include <optional>

#include "mul/ensemble.hpp"
#include "mul/metrics.hpp"
#include "mul/network.hpp"
#include "mul/synthetic.hpp"
#include "mul/trainer.hpp"

#include <json.hpp>

namespace mul {

/// One target codebook for an iteration: plain k-means on the source
/// features, or product k-means over spliced features partitioned by
/// coefficient order (one codebook per order).
struct CodebookSpecCfg {
    int k = 100;
    bool pq = false;
    int splice_window = 3;  // pq only
    int block = 13;         // coefficients per order
    int orders = 3;
};

struct IterationConfig {
    std::string source = "mfcc";  // "mfcc" (corpus features) or "checkpoint"
    int source_layer = -1;        // layer clustered when source=checkpoint; -1 = middle
    std::vector<CodebookSpecCfg> codebooks = {CodebookSpecCfg{}};
    double subsample = 1.0;
    int starts = 20;
    int batch_size = 10000;
    int max_batches = 100;
    double tol = 1e-4;
    int steps = 1000;
    double alpha = 1.0;
    MaskConfig mask;
    double peak_lr = 5e-4;
    int train_batch = 2;
    int crop_frames = 256;
};

struct PipelineConfig {
    std::filesystem::path work_dir = "work";
    uint64_t seed = 0;
    double holdout_fraction = 0.2;
    std::optional<SyntheticCorpusSpec> synthetic;
    std::filesystem::path features_dir;  // used when no synthetic spec
    std::filesystem::path phones_path;   // optional ground truth for features_dir
    ModelConfig model;
    std::vector<IterationConfig> iterations;
    bool final_eval = true;  // cluster the last model's features and report
};

PipelineConfig load_pipeline_config(const std::filesystem::path& path);
void to_json(nlohmann::json& j, const PipelineConfig& cfg);
void from_json(const nlohmann::json& j, PipelineConfig& cfg);

/// A corpus in memory with its deterministic train/holdout split.
struct LabeledCorpus {
    std::vector<FeatureSequence> features;
    std::vector<LabelSequence> phones;  // empty when no ground truth exists
    std::vector<int> train_idx;
    std::vector<int> holdout_idx;

    bool has_ground_truth() const { return !phones.empty(); }
};

LabeledCorpus load_corpus(const PipelineConfig& cfg);
void split_corpus(LabeledCorpus& corpus, double holdout_fraction, uint64_t seed);

struct IterationResult {
    std::filesystem::path codebook_dir;
    std::filesystem::path labels_path;   // labels_<head>.txt per codebook
    std::filesystem::path checkpoint;
    nlohmann::json metrics;  // teacher quality on held-out data (if ground truth)
};

/// Executes cluster -> label -> train for iteration `index` (0-based),
/// persisting artifacts under work_dir/it<index+1>/. Previous-iteration
/// artifacts must exist for index > 0. Stages whose config hash matches the
/// recorded one are skipped when their artifact already exists.
IterationResult run_iteration(const PipelineConfig& cfg, const LabeledCorpus& corpus, int index);

struct PipelineResult {
    std::vector<nlohmann::json> iteration_metrics;
    nlohmann::json final_metrics;  // clustering of the last model's features
};

PipelineResult run_pipeline(const PipelineConfig& cfg);

/// Mean/std PNMI grid over (K, training-size fraction) cells, `trials`
/// independent fits each, evaluated on held-out utterances.
nlohmann::json stability_study(const LabeledCorpus& corpus, const std::vector<int>& ks,
                               const std::vector<double>& sizes, int trials,
                               const IterationConfig& fit_cfg, uint64_t seed);

/// Clustering quality of every layer 0..num_layers for each K.
nlohmann::json layer_sweep(MaskedPredictionModel& model, const LabeledCorpus& corpus,
                           const std::vector<int>& ks, const IterationConfig& fit_cfg,
                           uint64_t seed);

struct SweepSpec {
    ModelConfig model;
    TrainConfig train;
    int extract_layer = -1;  // -1 = middle
    int downstream_k = 12;   // K for clustering the extracted features
    IterationConfig fit;     // clustering params for the downstream fit
};

/// Trains one model per alpha with a shared seed against the given teacher
/// labels (one head); reports held-out masked-prediction accuracy and
/// downstream clustering PNMI per setting.
nlohmann::json alpha_sweep(const LabeledCorpus& corpus,
                           const std::vector<std::vector<int>>& teacher, int teacher_classes,
                           const std::vector<double>& alphas, SweepSpec spec);

/// Same protocol varying the mask start probability at fixed alpha.
nlohmann::json mask_prob_sweep(const LabeledCorpus& corpus,
                               const std::vector<std::vector<int>>& teacher, int teacher_classes,
                               const std::vector<double>& probs, SweepSpec spec);

/// Replaces labels at a Bernoulli(fraction) subset of frames with a
/// uniformly drawn different class. Used to simulate bad teachers.
std::vector<std::vector<int>> corrupt_labels(const std::vector<std::vector<int>>& labels,
                                             double fraction, int num_classes, uint64_t seed);

}  // namespace mul
