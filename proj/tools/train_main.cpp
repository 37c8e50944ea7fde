#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

#include "mul/checkpoint.hpp"
#include "mul/trainer.hpp"
#include "tool_common.hpp"

using namespace mul;

int main(int argc, char** argv) {
    CLI::App app{"masked-prediction pre-training"};
    std::string manifest_path, config_path, out_path;
    std::vector<std::string> label_paths;
    TrainConfig tc;
    uint64_t model_seed = 0;
    app.add_option("--manifest", manifest_path, "feature manifest (or directory)")->required();
    app.add_option("--labels", label_paths, "target label file, one per codebook")
        ->required()
        ->take_all();
    app.add_option("--config", config_path, "model config JSON");
    app.add_option("--alpha", tc.alpha, "weight on the masked-region loss");
    app.add_option("--steps", tc.total_steps, "training steps")->required();
    app.add_option("--batch", tc.batch_size, "utterances per step");
    app.add_option("--crop", tc.crop_frames, "random crop length in frames (0 = off)");
    app.add_option("--peak-lr", tc.peak_lr, "peak learning rate");
    app.add_option("--mask-p", tc.mask.p, "mask start probability");
    app.add_option("--mask-l", tc.mask.l, "mask span length");
    app.add_option("--seed", tc.seed, "random seed");
    app.add_option("--checkpoint-interval", tc.checkpoint_interval,
                   "steps between checkpoints (0 = end only)");
    app.add_option("--out", out_path, "output checkpoint")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const std::filesystem::path mp(manifest_path);
        const std::filesystem::path dir =
            std::filesystem::is_directory(mp) ? mp : mp.parent_path();
        const std::vector<FeatureSequence> features = tool::load_feature_dir(dir);

        ModelConfig mc;
        if (!config_path.empty()) {
            std::ifstream is(config_path);
            if (!is) throw std::runtime_error("cannot open config: " + config_path);
            nlohmann::json j;
            is >> j;
            from_json(j, mc);
        }
        mc.input_mode = InputMode::kFeatures;
        mc.input_dim = features.front().dim;

        // one head per label file; codebook sizes inferred from the labels
        std::vector<std::vector<LabelSequence>> heads;
        mc.codebook_sizes.clear();
        for (const auto& lp : label_paths) {
            auto labels = load_labels(lp);
            int max_label = 0;
            for (const auto& seq : labels)
                for (int z : seq.labels) max_label = std::max(max_label, z);
            mc.codebook_sizes.push_back(max_label + 1);
            heads.push_back(std::move(labels));
        }

        std::vector<TrainUtterance> data;
        for (const auto& f : features) {
            TrainUtterance u;
            u.id = f.utterance_id;
            u.features = f;
            for (auto& head : heads) {
                auto it = std::find_if(head.begin(), head.end(), [&](const LabelSequence& s) {
                    return s.utterance_id == f.utterance_id;
                });
                if (it == head.end())
                    throw std::runtime_error("no labels for utterance " + f.utterance_id);
                u.targets.push_back(it->labels);
            }
            data.push_back(std::move(u));
        }

        tc.checkpoint_path = out_path;
        model_seed = derive_seed(tc.seed, "model");
        MaskedPredictionModel model(mc, model_seed);
        const TrainResult result = train(model, data, tc);
        write_loss_curve(out_path + ".loss.json", result);
        std::cout << "trained " << tc.total_steps << " steps; final loss "
                  << (result.curve.empty() ? 0.0 : result.curve.back().loss) << "; checkpoint "
                  << out_path << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
