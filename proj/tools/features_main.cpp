#include <CLI11.hpp>

#include <iostream>

#include "mul/io.hpp"
#include "mul/mfcc.hpp"
#include "mul/wav.hpp"

using namespace mul;

int main(int argc, char** argv) {
    CLI::App app{"acoustic feature extraction"};
    app.require_subcommand(1);

    auto* mfcc = app.add_subcommand("mfcc", "compute 39-dim MFCC features for a wav manifest");
    std::string manifest_path, out_dir;
    int splice_window = 1;
    mfcc->add_option("--manifest", manifest_path, "wav manifest")->required();
    mfcc->add_option("--out-dir", out_dir, "output feature directory")->required();
    mfcc->add_option("--splice", splice_window, "odd splice window (1 = off)");

    CLI11_PARSE(app, argc, argv);

    try {
        const Manifest manifest = load_manifest(manifest_path);
        std::filesystem::create_directories(out_dir);
        Manifest out_manifest;
        out_manifest.root = ".";
        const MfccConfig cfg;
        for (size_t i = 0; i < manifest.entries.size(); ++i) {
            const Waveform w = load_wav(manifest.resolve(i));
            FeatureSequence f = compute_mfcc(w, cfg);
            if (splice_window > 1) f = splice(f, splice_window);
            const std::string name = w.utterance_id + ".mulf";
            save_features(std::filesystem::path(out_dir) / name, f);
            out_manifest.entries.push_back({name, static_cast<uint64_t>(f.rows)});
        }
        save_manifest(std::filesystem::path(out_dir) / "manifest.txt", out_manifest);
        std::cout << "wrote " << out_manifest.entries.size() << " "
                  << feature_kind_name(splice_window > 1 ? FeatureKind::kSplicedMfcc
                                                         : FeatureKind::kMfcc)
                  << " feature files to " << out_dir << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
