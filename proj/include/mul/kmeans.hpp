#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "mul/common.hpp"
#include "mul/io.hpp"

namespace mul {

/// Plain N x D float32 matrix used by the clustering routines.
struct DataMatrix {
    int rows = 0;
    int dim = 0;
    std::vector<float> values;

    float* row(int i) { return values.data() + static_cast<size_t>(i) * dim; }
    const float* row(int i) const { return values.data() + static_cast<size_t>(i) * dim; }

    static DataMatrix from_features(const std::vector<FeatureSequence>& fs);
};

/// K centroids over a subset of the input dimensions. dims lists the input
/// coordinates this codebook quantizes (identity for plain k-means).
struct Codebook {
    int k = 0;
    int dim = 0;
    FeatureKind kind = FeatureKind::kMfcc;
    std::vector<int> dims;         // size == dim, duplicate-free
    std::vector<float> centroids;  // k * dim row-major

    float* centroid(int c) { return centroids.data() + static_cast<size_t>(c) * dim; }
    const float* centroid(int c) const { return centroids.data() + static_cast<size_t>(c) * dim; }

    bool identity_dims() const;
};

void save_codebook(const std::filesystem::path& path, const Codebook& cb);
Codebook load_codebook(const std::filesystem::path& path);

/// Re-iterable stream of frames. Implementations must yield the same frames
/// in the same order after every reset().
class FrameSource {
public:
    virtual ~FrameSource() = default;
    virtual void reset() = 0;
    /// Appends up to max_rows frames into out (resized as needed); returns
    /// the number of rows produced, 0 at end of stream.
    virtual int next(int max_rows, DataMatrix& out) = 0;
    virtual int dim() const = 0;
};

/// Stream over an in-memory matrix.
class MatrixSource : public FrameSource {
public:
    explicit MatrixSource(const DataMatrix& m) : m_(&m) {}
    void reset() override { pos_ = 0; }
    int next(int max_rows, DataMatrix& out) override;
    int dim() const override { return m_->dim; }

private:
    const DataMatrix* m_;
    int pos_ = 0;
};

/// Streams frames of the manifest's feature files in manifest order, with
/// optional utterance-level Bernoulli(fraction) selection. Deterministic
/// given the seed; fraction must be in (0, 1].
class ManifestSource : public FrameSource {
public:
    ManifestSource(Manifest manifest, double fraction = 1.0, uint64_t seed = 0);
    void reset() override;
    int next(int max_rows, DataMatrix& out) override;
    int dim() const override;

    const std::vector<size_t>& selected() const { return selected_; }

private:
    Manifest manifest_;
    std::vector<size_t> selected_;
    size_t next_file_ = 0;
    FeatureSequence current_;
    int row_ = 0;
    mutable int dim_ = -1;
};

/// Utterance-level subsampling per the unit-discovery protocol.
std::unique_ptr<ManifestSource> subsample_frames(const Manifest& manifest, double fraction,
                                                 uint64_t seed);

struct SeedResult {
    Codebook codebook;
    double potential = 0.0;  // sum of squared distances to the nearest seed
};

/// k-means++ seeding with n_starts independent restarts, keeping the start
/// with the smallest potential. Deterministic given seed.
SeedResult kmeanspp_init(const DataMatrix& data, int k, int n_starts, uint64_t seed);

struct FitResult {
    Codebook codebook;
    double inertia = 0.0;
    int iterations = 0;
};

/// Batch Lloyd iterations from a k-means++ start. Empty clusters are
/// reseeded to the point farthest from its assigned centroid. Stops when
/// assignments stop changing or after max_iters.
FitResult lloyd_fit(const DataMatrix& data, int k, uint64_t seed, int max_iters = 100);

struct MiniBatchConfig {
    int k = 100;
    int batch_size = 10000;  // frames per mini-batch
    int max_batches = 200;
    int n_starts = 20;
    int init_sample = 0;        // frames used for seeding; 0 = max(batch_size, 20*k)
    double tol = 1e-4;          // stop when max centroid displacement < tol
    bool refit_per_start = false;  // full mini-batch refit per start instead of seeding only
    uint64_t seed = 0;
};

/// Streaming mini-batch k-means: per-centroid counts with learning rate
/// 1/count. A single batch covering the whole data performs one exact
/// Lloyd-style assignment-weighted update.
FitResult minibatch_kmeans_fit(FrameSource& stream, const MiniBatchConfig& cfg);

/// Exact nearest-centroid assignment over the codebook's dims subset.
/// Ties break toward the lowest centroid index.
std::vector<int> assign_rows(const Codebook& cb, const DataMatrix& data);
LabelSequence assign(const Codebook& cb, const FeatureSequence& f);

/// Sum of squared distances from every frame to its assigned centroid.
double inertia(const Codebook& cb, const DataMatrix& data);

/// Squared Euclidean distance between a frame (projected onto cb.dims) and
/// one centroid, accumulated in double.
double squared_distance(const Codebook& cb, int c, const float* frame_full_dim);

}  // namespace mul
