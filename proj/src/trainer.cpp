#include "mul/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mul/checkpoint.hpp"

namespace mul {

namespace {

struct BatchItem {
    const TrainUtterance* utt;
    int offset;  // crop start in frames
    int frames;
};

int utterance_frames(const ModelConfig& cfg, const TrainUtterance& u) {
    if (cfg.input_mode == InputMode::kFeatures) return u.features.rows;
    return cfg.conv_output_frames(static_cast<int64_t>(u.samples.size()));
}

}  // namespace

TrainResult train(MaskedPredictionModel& model, const std::vector<TrainUtterance>& data,
                  const TrainConfig& cfg) {
    if (data.empty()) throw std::runtime_error("training dataset is empty");
    if (cfg.total_steps < 1) throw std::runtime_error("total_steps must be >= 1");
    const ModelConfig& mc = model.config();
    const size_t num_heads = mc.codebook_sizes.size();
    for (const auto& u : data) {
        if (u.targets.size() != num_heads)
            throw std::runtime_error("utterance " + u.id + " has " +
                                     std::to_string(u.targets.size()) + " target sequences, " +
                                     "model expects " + std::to_string(num_heads));
    }

    Adam adam(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    TrainResult result;
    result.curve.reserve(cfg.total_steps);

    std::vector<Tensor> stash(model.parameters().size());
    const bool waveform = mc.input_mode == InputMode::kWaveform;
    // frames per conv frame, for cropping waveforms at frame granularity
    int64_t samples_per_frame = 1;
    if (waveform) {
        samples_per_frame = 1;
        for (const auto& l : mc.conv) samples_per_frame *= l.stride;
    }

    for (int step = 0; step < cfg.total_steps; ++step) {
        // keep the previous parameters so a divergent step can be rolled back
        for (size_t i = 0; i < model.parameters().size(); ++i)
            stash[i] = model.parameters()[i].value;

        Rng batch_rng(derive_seed(cfg.seed, "batch", static_cast<uint64_t>(step)));
        std::vector<BatchItem> batch;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& u = data[batch_rng.uniform_int(static_cast<int64_t>(data.size()))];
            const int t = utterance_frames(mc, u);
            BatchItem item{&u, 0, t};
            if (cfg.crop_frames > 0 && t > cfg.crop_frames) {
                item.offset = static_cast<int>(batch_rng.uniform_int(t - cfg.crop_frames + 1));
                item.frames = cfg.crop_frames;
            }
            batch.push_back(item);
        }

        auto abort_training = [&](const std::string& why) {
            for (size_t i = 0; i < model.parameters().size(); ++i)
                model.parameters()[i].value = stash[i];
            if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, model);
            throw std::runtime_error("training diverged at step " + std::to_string(step) + ": " +
                                     why + " (last good parameters " +
                                     (cfg.checkpoint_path.empty()
                                          ? std::string("kept in memory")
                                          : "written to " + cfg.checkpoint_path.string()) +
                                     ")");
        };

        model.zero_grads();
        ad::Graph g;
        Rng drop_rng(derive_seed(cfg.seed, "layerdrop", static_cast<uint64_t>(step)));
        ad::Var total = nullptr;
        StepStats stats;
        stats.step = step;
        double masked_acc_sum = 0.0;
        int acc_terms = 0;

        try {
            for (size_t b = 0; b < batch.size(); ++b) {
                const BatchItem& item = batch[b];
                const TrainUtterance& u = *item.utt;
                const MaskSpec mask = sample_mask(
                    item.frames, cfg.mask,
                    derive_seed(cfg.seed, "mask", static_cast<uint64_t>(step), static_cast<uint64_t>(b)));

                ForwardResult fwd;
                int out_frames = item.frames;
                if (waveform) {
                    const int64_t s0 = static_cast<int64_t>(item.offset) * samples_per_frame;
                    const int64_t s1 = std::min<int64_t>(
                        u.samples.size(), s0 + static_cast<int64_t>(item.frames) * samples_per_frame);
                    std::span<const float> seg(u.samples.data() + s0, static_cast<size_t>(s1 - s0));
                    ad::Var frames = model.conv_encode(g, seg);
                    out_frames = frames->val.dim(0);
                    MaskSpec wmask = mask;
                    if (out_frames != item.frames) {
                        if (std::abs(out_frames - item.frames) > 2)
                            throw std::runtime_error("conv output length " +
                                                     std::to_string(out_frames) +
                                                     " far from label length " +
                                                     std::to_string(item.frames) + " in " + u.id);
                        wmask = sample_mask(out_frames, cfg.mask,
                                            derive_seed(cfg.seed, "mask", static_cast<uint64_t>(step),
                                                        static_cast<uint64_t>(b)));
                    }
                    fwd = model.forward_frames(g, frames, &wmask, true, &drop_rng);
                    std::vector<std::vector<int>> targets(num_heads);
                    for (size_t k = 0; k < num_heads; ++k) {
                        targets[k].assign(u.targets[k].begin() + item.offset,
                                          u.targets[k].begin() + item.offset + out_frames);
                    }
                    LossResult lres = model.loss(g, fwd.output, targets, wmask, cfg.alpha);
                    total = total ? g.add(total, lres.loss) : lres.loss;
                    stats.masked_frames += lres.stats.num_masked;
                    stats.unmasked_frames += lres.stats.num_unmasked;
                    stats.masked_nats_per_frame += lres.stats.masked_nats;
                    for (double a : lres.stats.masked_accuracy) masked_acc_sum += a;
                    acc_terms += static_cast<int>(lres.stats.masked_accuracy.size());
                    continue;
                }

                FeatureSequence crop;
                const FeatureSequence* feats = &u.features;
                if (item.offset != 0 || item.frames != u.features.rows) {
                    crop = u.features;
                    crop.rows = item.frames;
                    crop.data.assign(u.features.row(item.offset),
                                     u.features.row(item.offset) + static_cast<size_t>(item.frames) *
                                                                       u.features.dim);
                    feats = &crop;
                }
                std::vector<std::vector<int>> targets(num_heads);
                for (size_t k = 0; k < num_heads; ++k) {
                    if (static_cast<int>(u.targets[k].size()) != u.features.rows)
                        throw std::runtime_error("target length mismatch in utterance " + u.id);
                    targets[k].assign(u.targets[k].begin() + item.offset,
                                      u.targets[k].begin() + item.offset + item.frames);
                }
                fwd = model.forward(g, *feats, &mask, true, &drop_rng);
                LossResult lres = model.loss(g, fwd.output, targets, mask, cfg.alpha);
                total = total ? g.add(total, lres.loss) : lres.loss;
                stats.masked_frames += lres.stats.num_masked;
                stats.unmasked_frames += lres.stats.num_unmasked;
                stats.masked_nats_per_frame += lres.stats.masked_nats;
                for (double a : lres.stats.masked_accuracy) masked_acc_sum += a;
                acc_terms += static_cast<int>(lres.stats.masked_accuracy.size());
            }

            stats.loss = total->val.data[0];
            stats.lr = schedule_lr(cfg.peak_lr, step + 1, cfg.total_steps, cfg.warmup_fraction);
            stats.masked_accuracy = acc_terms > 0 ? masked_acc_sum / acc_terms : 0.0;
            stats.masked_nats_per_frame =
                stats.masked_frames > 0
                    ? stats.masked_nats_per_frame / (static_cast<double>(stats.masked_frames) *
                                                     static_cast<double>(num_heads))
                    : 0.0;
            if (!std::isfinite(stats.loss)) throw NonFiniteError("non-finite loss");

            g.backward(total);
            adam.step(stats.lr);
            model.step += 1;
            model.check_finite_parameters();
        } catch (const NonFiniteError& e) {
            abort_training(e.what());
        }

        result.curve.push_back(stats);
        if (!cfg.checkpoint_path.empty() && cfg.checkpoint_interval > 0 &&
            (step + 1) % cfg.checkpoint_interval == 0) {
            save_checkpoint(cfg.checkpoint_path, model);
        }
    }
    if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, model);
    return result;
}

FeatureSequence extract_features(MaskedPredictionModel& model, const FeatureSequence& input,
                                 int layer) {
    const ModelConfig& mc = model.config();
    if (layer < 0 || layer > mc.num_layers)
        throw std::runtime_error("layer index " + std::to_string(layer) + " out of range [0, " +
                                 std::to_string(mc.num_layers) + "]");
    ad::Graph g(false);
    ForwardResult fwd = model.forward(g, input, nullptr, false, nullptr);
    const Tensor& h = fwd.hidden[layer]->val;
    FeatureSequence out;
    out.rows = h.dim(0);
    out.dim = h.dim(1);
    out.frame_rate_hz = 50;
    out.kind = FeatureKind::kEncoderLayer;
    out.utterance_id = input.utterance_id;
    out.data.resize(h.data.size());
    for (size_t i = 0; i < h.data.size(); ++i) out.data[i] = static_cast<float>(h.data[i]);
    return out;
}

std::vector<FeatureSequence> extract_features(MaskedPredictionModel& model,
                                              const std::vector<FeatureSequence>& inputs,
                                              int layer) {
    std::vector<FeatureSequence> out;
    out.reserve(inputs.size());
    for (const auto& f : inputs) out.push_back(extract_features(model, f, layer));
    return out;
}

std::vector<double> masked_prediction_accuracy(MaskedPredictionModel& model,
                                               const std::vector<TrainUtterance>& data,
                                               const MaskConfig& mask_cfg, uint64_t seed) {
    const size_t num_heads = model.config().codebook_sizes.size();
    std::vector<int64_t> correct(num_heads, 0);
    int64_t total = 0;
    for (size_t ui = 0; ui < data.size(); ++ui) {
        const TrainUtterance& u = data[ui];
        const MaskSpec mask =
            sample_mask(u.features.rows, mask_cfg, derive_seed(seed, "eval-mask", ui));
        if (mask.masked.empty()) continue;
        ad::Graph g(false);
        ForwardResult fwd = model.forward(g, u.features, &mask, false, nullptr);
        for (size_t k = 0; k < num_heads; ++k) {
            ad::Var logits = model.sequence_logits(g, fwd.output, static_cast<int>(k));
            for (int t : mask.masked) {
                const double* row = logits->val.row(t);
                const int c = model.config().codebook_sizes[k];
                int arg = 0;
                for (int j = 1; j < c; ++j)
                    if (row[j] > row[arg]) arg = j;
                if (arg == u.targets[k][t]) ++correct[k];
            }
        }
        total += static_cast<int64_t>(mask.masked.size());
    }
    std::vector<double> acc(num_heads, 0.0);
    for (size_t k = 0; k < num_heads; ++k)
        acc[k] = total > 0 ? static_cast<double>(correct[k]) / static_cast<double>(total) : 0.0;
    return acc;
}

void write_loss_curve(const std::filesystem::path& path, const TrainResult& result) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : result.curve) {
        j.push_back({{"step", s.step},
                     {"lr", s.lr},
                     {"loss", s.loss},
                     {"masked_frames", s.masked_frames},
                     {"unmasked_frames", s.unmasked_frames},
                     {"masked_nats_per_frame", s.masked_nats_per_frame},
                     {"masked_accuracy", s.masked_accuracy}});
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os << j.dump(2) << "\n";
}

}  // namespace mul
