#include <CLI11.hpp>

#include <iostream>

#include "mul/checkpoint.hpp"
#include "mul/trainer.hpp"
#include "tool_common.hpp"

using namespace mul;

int main(int argc, char** argv) {
    CLI::App app{"hidden-state feature extraction"};
    std::string checkpoint_path, manifest_path, out_dir;
    int layer = -1;
    app.add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    app.add_option("--manifest", manifest_path, "feature manifest (or directory)")->required();
    app.add_option("--layer", layer, "encoder layer (0 = transformer input)")->required();
    app.add_option("--out", out_dir, "output feature directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        MaskedPredictionModel model = load_checkpoint(checkpoint_path);
        const std::filesystem::path mp(manifest_path);
        const std::filesystem::path dir =
            std::filesystem::is_directory(mp) ? mp : mp.parent_path();
        std::filesystem::create_directories(out_dir);
        Manifest out_manifest;
        out_manifest.root = ".";
        for (const auto& f : tool::load_feature_dir(dir)) {
            const FeatureSequence h = extract_features(model, f, layer);
            const std::string name = f.utterance_id + ".mulf";
            save_features(std::filesystem::path(out_dir) / name, h);
            out_manifest.entries.push_back({name, static_cast<uint64_t>(h.rows)});
        }
        save_manifest(std::filesystem::path(out_dir) / "manifest.txt", out_manifest);
        std::cout << "extracted " << feature_kind_name(FeatureKind::kEncoderLayer)
                  << "-" << layer << " features for "
                  << out_manifest.entries.size() << " utterances to " << out_dir << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
