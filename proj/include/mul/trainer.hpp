#pragma once

#include <filesystem>
#include <optional>

#include "mul/adam.hpp"
#include "mul/network.hpp"

namespace mul {

/// One training item: frames (feature mode) or raw samples (waveform mode)
/// plus one target sequence per head.
struct TrainUtterance {
    std::string id;
    FeatureSequence features;             // feature mode input
    std::vector<float> samples;           // waveform mode input
    std::vector<std::vector<int>> targets;  // [head][frame]
};

struct TrainConfig {
    int total_steps = 1000;
    int batch_size = 4;    // utterances per step
    int crop_frames = 256; // random crop length in frames; 0 disables
    double alpha = 1.0;
    MaskConfig mask;
    double peak_lr = 5e-4;
    double warmup_fraction = 0.08;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_eps = 1e-8;
    int checkpoint_interval = 0;  // steps between checkpoints; 0 = end only
    std::filesystem::path checkpoint_path;  // empty = never persisted
    uint64_t seed = 0;
};

struct StepStats {
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;          // alpha-weighted sum over the batch, nats
    int masked_frames = 0;
    int unmasked_frames = 0;
    double masked_nats_per_frame = 0.0;  // per frame per head
    double masked_accuracy = 0.0;        // averaged over heads
};

struct TrainResult {
    std::vector<StepStats> curve;
};

/// Deterministic single-threaded training loop: Adam with linear
/// warmup/decay, per-step resampled masks, optional periodic checkpoints.
/// Aborts restoring the previous parameters if the loss or any parameter
/// goes non-finite.
TrainResult train(MaskedPredictionModel& model, const std::vector<TrainUtterance>& data,
                  const TrainConfig& cfg);

/// Eval-mode hidden states at the given layer (0 = transformer input),
/// masks and layerdrop disabled.
FeatureSequence extract_features(MaskedPredictionModel& model, const FeatureSequence& input,
                                 int layer);
std::vector<FeatureSequence> extract_features(MaskedPredictionModel& model,
                                              const std::vector<FeatureSequence>& inputs,
                                              int layer);

/// Held-out masked-prediction accuracy: per utterance, sample a mask, run
/// the corrupted forward pass, and score argmax predictions at masked
/// frames against the targets. Returns the per-head mean over frames.
std::vector<double> masked_prediction_accuracy(MaskedPredictionModel& model,
                                               const std::vector<TrainUtterance>& data,
                                               const MaskConfig& mask_cfg, uint64_t seed);

void write_loss_curve(const std::filesystem::path& path, const TrainResult& result);

}  // namespace mul
