#pragma once

#include <filesystem>

#include "mul/common.hpp"

#include <json.hpp>

namespace mul {

/// Generator for a labelled toy corpus: a left-to-right chain of phone
/// segments, each emitting Gaussian frames around a per-phone anchor
/// vector. Frame labels are the generating phone, standing in for
/// forced-aligned ground truth.
struct SyntheticCorpusSpec {
    int num_phones = 10;
    int emission_dim = 16;
    int min_segment_frames = 6;   // per-segment duration, uniform
    int max_segment_frames = 14;
    double anchor_distance = 4.0;  // pairwise distance between phone anchors
    double noise_sigma = 1.2;      // per-dimension emission noise
    int num_utterances = 200;
    int mean_utterance_frames = 500;  // ~10 s at 50 Hz
    uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticCorpusSpec& s);
void from_json(const nlohmann::json& j, SyntheticCorpusSpec& s);

struct SyntheticCorpus {
    std::vector<FeatureSequence> features;
    std::vector<LabelSequence> phone_labels;
};

/// Deterministic given the seed. Anchors sit on scaled orthogonal basis
/// directions when num_phones <= emission_dim (exact pairwise distance),
/// otherwise on random unit directions.
SyntheticCorpus gen_synthetic_corpus(const SyntheticCorpusSpec& spec);

/// Writes manifest.txt, one .mulf per utterance, and phones.txt.
void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus);

}  // namespace mul
