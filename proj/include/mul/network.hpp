#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mul/autodiff.hpp"
#include "mul/common.hpp"
#include "mul/masking.hpp"
#include "mul/rng.hpp"

#include <json.hpp>

namespace mul {

struct ConvLayerSpec {
    int channels = 0;
    int kernel = 0;
    int stride = 0;
};

enum class InputMode { kWaveform, kFeatures };

/// Desk-scale defaults; the full-size shapes are expressible but never the
/// default. conv defaults to the standard waveform-encoder geometry
/// (strides 5,2,2,2,2,2,2 / kernels 10,3,3,3,3,2,2) at 32 channels.
struct ModelConfig {
    InputMode input_mode = InputMode::kFeatures;
    int input_dim = 39;  // feature-mode input dimension
    std::vector<ConvLayerSpec> conv = {{32, 10, 5}, {32, 3, 2}, {32, 3, 2}, {32, 3, 2},
                                       {32, 3, 2},  {32, 2, 2}, {32, 2, 2}};
    int num_layers = 2;
    int embed_dim = 64;
    int ffn_dim = 256;
    int num_heads = 2;
    int proj_dim = 32;
    int pos_conv_kernel = 13;
    int pos_conv_groups = 4;
    double layerdrop_prob = 0.0;
    double tau = 0.1;
    std::vector<int> codebook_sizes = {100};

    void validate() const;
    /// Frames produced by the conv encoder for n input samples.
    int conv_output_frames(int64_t n) const;
    /// Dimension entering the input projection (conv channels or input_dim).
    int pre_projection_dim() const;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

struct ForwardResult {
    std::vector<ad::Var> hidden;  // [0] = transformer input, [i] = block i output
    ad::Var output = nullptr;     // final layer-norm output feeding the heads
};

struct LossStats {
    double total = 0.0;  // alpha-weighted sum, nats
    int num_masked = 0;
    int num_unmasked = 0;
    double masked_nats = 0.0;    // sum over masked frames and heads
    double unmasked_nats = 0.0;  // sum over unmasked frames and heads
    std::vector<double> masked_accuracy;    // per head
    std::vector<double> unmasked_accuracy;  // per head
};

struct LossResult {
    ad::Var loss = nullptr;
    LossStats stats;
};

/// The masked-prediction network: optional convolutional downsampler, input
/// projection, convolutional positional embedding, pre-norm transformer
/// blocks, final layer-norm, and one cosine-similarity codeword head per
/// configured codebook.
class MaskedPredictionModel {
public:
    MaskedPredictionModel(ModelConfig cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    uint64_t step = 0;

    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    Parameter& param(const std::string& name);
    void zero_grads();
    /// Throws naming the first non-finite parameter, if any.
    void check_finite_parameters() const;

    /// Conv encoder output for a raw waveform, [frames, channels].
    ad::Var conv_encode(ad::Graph& g, std::span<const float> samples);

    /// Full forward from acoustic frames (feature mode) or a pre-computed
    /// conv output. Masked rows are replaced in-graph by the trained mask
    /// embedding. In training mode layerdrop may skip blocks (drop_rng
    /// required when layerdrop_prob > 0); in eval mode the pass is
    /// deterministic. Throws on non-finite activations, naming the layer.
    ForwardResult forward_frames(ad::Graph& g, ad::Var frames, const MaskSpec* mask,
                                 bool training = false, Rng* drop_rng = nullptr);
    /// Convenience: builds the frame constant from a FeatureSequence.
    ForwardResult forward(ad::Graph& g, const FeatureSequence& f, const MaskSpec* mask,
                          bool training = false, Rng* drop_rng = nullptr);
    /// Waveform mode: conv encoder, then the shared trunk.
    ForwardResult forward_waveform(ad::Graph& g, std::span<const float> samples,
                                   const MaskSpec* mask, bool training = false,
                                   Rng* drop_rng = nullptr);

    /// Codeword logits for head k over the whole output sequence, [T, C_k]:
    /// cos(A o_t, e_c) / tau.
    ad::Var sequence_logits(ad::Graph& g, ad::Var output, int head);

    /// Plain (non-graph) logits for a single frame, for inspection.
    std::vector<double> head_logits(int head, std::span<const double> o_t) const;

    /// The weighted masked/unmasked cross-entropy over all heads.
    /// targets[k] must have one label per frame for head k.
    LossResult loss(ad::Graph& g, ad::Var output, const std::vector<std::vector<int>>& targets,
                    const MaskSpec& mask, double alpha);

    static constexpr double kCosineEps = 1e-8;

private:
    Parameter& add_param(const std::string& name, Tensor t);
    void init_params(uint64_t seed);
    ad::Var transformer_block(ad::Graph& g, ad::Var x, int layer);

    ModelConfig cfg_;
    std::vector<Parameter> params_;
};

}  // namespace mul
