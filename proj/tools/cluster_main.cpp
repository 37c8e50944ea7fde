#include <CLI11.hpp>

#include <iostream>

#include "mul/kmeans.hpp"
#include "tool_common.hpp"

using namespace mul;

int main(int argc, char** argv) {
    CLI::App app{"k-means unit discovery"};
    app.require_subcommand(1);

    auto* fit = app.add_subcommand("fit", "fit a codebook with streaming mini-batch k-means");
    std::string features_dir, out_path;
    MiniBatchConfig cfg;
    double subsample = 1.0;
    fit->add_option("--features", features_dir, "feature directory")->required();
    fit->add_option("--k", cfg.k, "number of clusters")->required();
    fit->add_option("--batch-size", cfg.batch_size, "mini-batch size in frames");
    fit->add_option("--max-batches", cfg.max_batches, "mini-batch budget");
    fit->add_option("--starts", cfg.n_starts, "k-means++ random starts");
    fit->add_option("--tol", cfg.tol, "stop when max centroid displacement < tol");
    fit->add_option("--subsample", subsample, "utterance-level selection fraction");
    fit->add_option("--seed", cfg.seed, "random seed");
    fit->add_flag("--refit-per-start", cfg.refit_per_start,
                  "run a full fit per start instead of seeding only");
    fit->add_option("--out", out_path, "output codebook file")->required();

    auto* assign_cmd = app.add_subcommand("assign", "assign frames to their nearest centroids");
    std::string codebook_path, assign_features, labels_out;
    assign_cmd->add_option("--codebook", codebook_path, "codebook file")->required();
    assign_cmd->add_option("--features", assign_features, "feature directory")->required();
    assign_cmd->add_option("--out", labels_out, "output label file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (fit->parsed()) {
            const Manifest manifest = tool::feature_manifest(features_dir);
            ManifestSource stream(manifest, subsample, cfg.seed);
            const FitResult res = minibatch_kmeans_fit(stream, cfg);
            save_codebook(out_path, res.codebook);
            std::cout << "fit k=" << res.codebook.k << " dim=" << res.codebook.dim << " batches="
                      << res.iterations << " inertia=" << res.inertia << "\n";
        } else {
            const Codebook cb = load_codebook(codebook_path);
            std::vector<LabelSequence> labels;
            for (const auto& f : tool::load_feature_dir(assign_features))
                labels.push_back(assign(cb, f));
            save_labels(labels_out, labels);
            std::cout << "labelled " << labels.size() << " utterances\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
