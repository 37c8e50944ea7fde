#pragma once

#include <filesystem>

#include "mul/kmeans.hpp"

namespace mul {

/// An ordered list of codebooks used jointly as prediction targets. For
/// product quantization the codebooks' dims partition the feature
/// dimensions; the effective target space is the product of codebook sizes.
struct ClusterEnsemble {
    std::vector<Codebook> codebooks;

    uint64_t target_space_size() const;
};

/// Validates that the partition subsets are non-empty, duplicate-free,
/// disjoint, and cover [0, dim).
void validate_partition(const std::vector<std::vector<int>>& partition, int dim);

/// Fits one codebook per subspace independently (mini-batch k-means with
/// per-subspace seeds derived from cfg.seed). cfg.k is the per-subspace
/// codebook size.
ClusterEnsemble pq_fit(const DataMatrix& data, const std::vector<std::vector<int>>& partition,
                       const MiniBatchConfig& cfg);

/// Per-codebook assignments; entry k is codebook k's label sequence.
std::vector<LabelSequence> ensemble_assign(const ClusterEnsemble& ens, const FeatureSequence& f);

/// Ensembles are stored as a directory: an index file listing the codebook
/// file names in head order, one per line, next to the codebook files.
void save_ensemble(const std::filesystem::path& dir, const ClusterEnsemble& ens);
ClusterEnsemble load_ensemble(const std::filesystem::path& dir);

}  // namespace mul
