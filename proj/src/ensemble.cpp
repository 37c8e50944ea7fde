#include "mul/ensemble.hpp"

#include <algorithm>
#include <fstream>

#include "mul/rng.hpp"

namespace mul {

uint64_t ClusterEnsemble::target_space_size() const {
    uint64_t n = 1;
    for (const auto& cb : codebooks) n *= static_cast<uint64_t>(cb.k);
    return n;
}

void validate_partition(const std::vector<std::vector<int>>& partition, int dim) {
    if (partition.empty()) throw std::runtime_error("partition is empty");
    std::vector<int> hit(dim, 0);
    for (const auto& subset : partition) {
        if (subset.empty()) throw std::runtime_error("partition contains an empty subset");
        for (int d : subset) {
            if (d < 0 || d >= dim)
                throw std::runtime_error("partition index " + std::to_string(d) +
                                         " out of range for dim " + std::to_string(dim));
            if (hit[d]++)
                throw std::runtime_error("partition subsets overlap at dimension " +
                                         std::to_string(d));
        }
    }
    for (int d = 0; d < dim; ++d)
        if (!hit[d])
            throw std::runtime_error("partition does not cover dimension " + std::to_string(d));
}

ClusterEnsemble pq_fit(const DataMatrix& data, const std::vector<std::vector<int>>& partition,
                       const MiniBatchConfig& cfg) {
    validate_partition(partition, data.dim);
    ClusterEnsemble ens;
    for (size_t s = 0; s < partition.size(); ++s) {
        const auto& dims = partition[s];
        DataMatrix sub;
        sub.rows = data.rows;
        sub.dim = static_cast<int>(dims.size());
        sub.values.resize(static_cast<size_t>(sub.rows) * sub.dim);
        for (int i = 0; i < data.rows; ++i) {
            const float* src = data.row(i);
            float* dst= sub.row(i);
            for (int j = 0; j < sub.dim; ++j) dst[j] = src[dims[j]];
        }
        MiniBatchConfig sub_cfg = cfg;
        sub_cfg.seed = derive_seed(cfg.seed, "pq-subspace", static_cast<uint64_t>(s));
        MatrixSource src(sub);
        FitResult fit = minibatch_kmeans_fit(src, sub_cfg);
        fit.codebook.dims = dims;
        ens.codebooks.push_back(std::move(fit.codebook));
    }
    return ens;
}

std::vector<LabelSequence> ensemble_assign(const ClusterEnsemble& ens, const FeatureSequence& f) {
    std::vector<LabelSequence> out;
    out.reserve(ens.codebooks.size());
    for (const auto& cb : ens.codebooks) out.push_back(assign(cb, f));
    return out;
}

void save_ensemble(const std::filesystem::path& dir, const ClusterEnsemble& ens) {
    std::filesystem::create_directories(dir);
    std::ofstream index(dir / "index.txt");
    if (!index) throw std::runtime_error("cannot open for writing: " + (dir / "index.txt").string());
    for (size_t i = 0; i < ens.codebooks.size(); ++i) {
        const std::string name = "codebook_" + std::to_string(i) + ".mucb";
        save_codebook(dir / name, ens.codebooks[i]);
        index << name << "\n";
    }
}

ClusterEnsemble load_ensemble(const std::filesystem::path& dir) {
    std::ifstream index(dir / "index.txt");
    if (!index) throw std::runtime_error("cannot open ensemble index: " + (dir / "index.txt").string());
    ClusterEnsemble ens;
    std::string name;
    while (std::getline(index, name)) {
        if (name.empty()) continue;
        ens.codebooks.push_back(load_codebook(dir / name));
    }
    if (ens.codebooks.empty()) throw std::runtime_error("ensemble index is empty: " + dir.string());
    return ens;
}

}  // namespace mul
