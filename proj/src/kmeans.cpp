#include "mul/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "mul/rng.hpp"

namespace mul {

DataMatrix DataMatrix::from_features(const std::vector<FeatureSequence>& fs) {
    DataMatrix m;
    if (fs.empty()) return m;
    m.dim = fs.front().dim;
    size_t total = 0;
    for (const auto& f : fs) {
        if (f.dim != m.dim) throw std::runtime_error("feature dimension mismatch across utterances");
        total += static_cast<size_t>(f.rows);
    }
    m.rows = static_cast<int>(total);
    m.values.reserve(total * m.dim);
    for (const auto& f : fs) m.values.insert(m.values.end(), f.data.begin(), f.data.end());
    return m;
}

bool Codebook::identity_dims() const {
    for (int i = 0; i < dim; ++i)
        if (dims[i] != i) return false;
    return true;
}

static constexpr uint32_t kCodebookMagic = 0x4243554du;  // "MUCB"
static constexpr uint32_t kCodebookVersion = 1;

void save_codebook(const std::filesystem::path& path, const Codebook& cb) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    write_u32(os, kCodebookMagic);
    write_u32(os, kCodebookVersion);
    write_u32(os, static_cast<uint32_t>(cb.k));
    write_u32(os, static_cast<uint32_t>(cb.dim));
    write_u8(os, static_cast<uint8_t>(cb.kind));
    for (int d : cb.dims) write_u32(os, static_cast<uint32_t>(d));
    write_f32_array(os, cb.centroids.data(), cb.centroids.size());
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

Codebook load_codebook(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open codebook: " + path.string());
    if (read_u32(is) != kCodebookMagic)
        throw std::runtime_error("bad magic in codebook file: " + path.string());
    if (read_u32(is) != kCodebookVersion)
        throw std::runtime_error("unsupported codebook version in " + path.string());
    Codebook cb;
    cb.k = static_cast<int>(read_u32(is));
    cb.dim = static_cast<int>(read_u32(is));
    cb.kind = static_cast<FeatureKind>(read_u8(is));
    cb.dims.resize(cb.dim);
    for (int i = 0; i < cb.dim; ++i) cb.dims[i] = static_cast<int>(read_u32(is));
    cb.centroids.resize(static_cast<size_t>(cb.k) * cb.dim);
    read_f32_array(is, cb.centroids.data(), cb.centroids.size());
    return cb;
}

int MatrixSource::next(int max_rows, DataMatrix& out) {
    const int n = std::min(max_rows, m_->rows - pos_);
    if (n <= 0) return 0;
    out.dim = m_->dim;
    out.rows = n;
    out.values.assign(m_->row(pos_), m_->row(pos_) + static_cast<size_t>(n) * m_->dim);
    pos_ += n;
    return n;
}

ManifestSource::ManifestSource(Manifest manifest, double fraction, uint64_t seed)
    : manifest_(std::move(manifest)) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw std::runtime_error("subsample fraction must be in (0, 1], got " +
                                 std::to_string(fraction));
    Rng rng(derive_seed(seed, "subsample"));
    for (size_t i = 0; i < manifest_.entries.size(); ++i) {
        if (rng.uniform() < fraction) selected_.push_back(i);
    }
}

void ManifestSource::reset() {
    next_file_ = 0;
    current_ = FeatureSequence{};
    row_ = 0;
}

int ManifestSource::dim() const {
    if (dim_ < 0) {
        if (selected_.empty()) throw std::runtime_error("no utterances selected from manifest");
        dim_ = load_features(manifest_.resolve(selected_.front())).dim;
    }
    return dim_;
}

int ManifestSource::next(int max_rows, DataMatrix& out) {
    out.rows = 0;
    out.values.clear();
    while (out.rows < max_rows) {
        if (row_ >= current_.rows) {
            if (next_file_ >= selected_.size()) break;
            current_ = load_features(manifest_.resolve(selected_[next_file_++]));
            row_ = 0;
            if (dim_ < 0) dim_ = current_.dim;
            if (current_.dim != dim_)
                throw std::runtime_error("feature dimension mismatch in " + current_.utterance_id);
        }
        const int take = std::min(max_rows - out.rows, current_.rows - row_);
        out.values.insert(out.values.end(), current_.row(row_),
                          current_.row(row_) + static_cast<size_t>(take) * current_.dim);
        out.rows += take;
        row_ += take;
    }
    out.dim = dim_ < 0 ? 0 : dim_;
    return out.rows;
}

std::unique_ptr<ManifestSource> subsample_frames(const Manifest& manifest, double fraction,
                                                 uint64_t seed) {
    return std::make_unique<ManifestSource>(manifest, fraction, seed);
}

namespace {

double sqdist(const float* a, const float* b, int dim) {
    double acc = 0.0;
    for (int i = 0; i < dim; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc;
}

Codebook identity_codebook(int k, int dim) {
    Codebook cb;
    cb.k = k;
    cb.dim = dim;
    cb.dims.resize(dim);
    std::iota(cb.dims.begin(), cb.dims.end(), 0);
    cb.centroids.assign(static_cast<size_t>(k) * dim, 0.0f);
    return cb;
}

/// One k-means++ pass; returns chosen row indices and the final potential.
double kmeanspp_single(const DataMatrix& data, int k, Rng& rng, std::vector<int>& chosen) {
    const int n = data.rows;
    chosen.clear();
    chosen.push_back(static_cast<int>(rng.uniform_int(n)));
    std::vector<double> dist2(n);
    for (int i = 0; i < n; ++i) dist2[i] = sqdist(data.row(i), data.row(chosen[0]), data.dim);
    for (int c = 1; c < k; ++c) {
        double total = std::accumulate(dist2.begin(), dist2.end(), 0.0);
        int pick;
        if (total <= 0.0) {
            pick = static_cast<int>(rng.uniform_int(n));  // all points already covered
        } else {
            const double target = rng.uniform() * total;
            double run = 0.0;
            pick = n - 1;
            for (int i = 0; i < n; ++i) {
                run += dist2[i];
                if (run > target) {
                    pick = i;
                    break;
                }
            }
        }
        chosen.push_back(pick);
        for (int i = 0; i < n; ++i)
            dist2[i] = std::min(dist2[i], sqdist(data.row(i), data.row(pick), data.dim));
    }
    return std::accumulate(dist2.begin(), dist2.end(), 0.0);
}

}  // namespace

double squared_distance(const Codebook& cb, int c, const float* frame) {
    const float* cent = cb.centroid(c);
    if (cb.identity_dims()) return sqdist(frame, cent, cb.dim);
    double acc = 0.0;
    for (int i = 0; i < cb.dim; ++i) {
        const double d = static_cast<double>(frame[cb.dims[i]]) - static_cast<double>(cent[i]);
        acc += d * d;
    }
    return acc;
}

SeedResult kmeanspp_init(const DataMatrix& data, int k, int n_starts, uint64_t seed) {
    if (k < 1) throw std::runtime_error("k must be >= 1");
    if (n_starts < 1) throw std::runtime_error("n_starts must be >= 1");
    if (data.rows < k)
        throw std::runtime_error("fewer points than clusters (" + std::to_string(data.rows) +
                                 " < " + std::to_string(k) + ")");
    SeedResult best;
    best.potential = std::numeric_limits<double>::infinity();
    std::vector<int> chosen;
    for (int s = 0; s < n_starts; ++s) {
        Rng rng(derive_seed(seed, "kmeans++", static_cast<uint64_t>(s)));
        const double pot = kmeanspp_single(data, k, rng, chosen);
        if (pot < best.potential) {
            best.potential = pot;
            best.codebook = identity_codebook(k, data.dim);
            for (int c = 0; c < k; ++c) {
                const float* src = data.row(chosen[c]);
                std::copy(src, src + data.dim, best.codebook.centroid(c));
            }
        }
    }
    return best;
}

std::vector<int> assign_rows(const Codebook& cb, const DataMatrix& data) {
    if (cb.identity_dims() && data.dim != cb.dim)
        throw std::runtime_error("dimension mismatch: codebook expects " + std::to_string(cb.dim) +
                                 ", features have " + std::to_string(data.dim));
    for (int d : cb.dims)
        if (d >= data.dim)
            throw std::runtime_error("codebook dimension index " + std::to_string(d) +
                                     " out of range for " + std::to_string(data.dim) +
                                     "-dim features");
    std::vector<int> labels(data.rows);
    for (int i = 0; i < data.rows; ++i) {
        const float* frame = data.row(i);
        int best = 0;
        double best_d = squared_distance(cb, 0, frame);
        for (int c = 1; c < cb.k; ++c) {
            const double d = squared_distance(cb, c, frame);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        labels[i] = best;
    }
    return labels;
}

LabelSequence assign(const Codebook& cb, const FeatureSequence& f) {
    DataMatrix m;
    m.rows = f.rows;
    m.dim = f.dim;
    m.values = f.data;
    LabelSequence seq;
    seq.utterance_id = f.utterance_id;
    seq.labels = assign_rows(cb, m);
    return seq;
}

double inertia(const Codebook& cb, const DataMatrix& data) {
    const std::vector<int> labels = assign_rows(cb, data);
    double acc = 0.0;
    for (int i = 0; i < data.rows; ++i) acc += squared_distance(cb, labels[i], data.row(i));
    return acc;
}

FitResult lloyd_fit(const DataMatrix& data, int k, uint64_t seed, int max_iters) {
    if (data.rows < k)
        throw std::runtime_error("fewer points than clusters (" + std::to_string(data.rows) +
                                 " < " + std::to_string(k) + ")");
    FitResult res;
    res.codebook = kmeanspp_init(data, k, 1, derive_seed(seed, "lloyd-init")).codebook;
    Codebook& cb = res.codebook;
    std::vector<int> labels(data.rows, -1);
    std::vector<double> sums(static_cast<size_t>(k) * data.dim);
    std::vector<int> counts(k);
    for (int it = 0; it < max_iters; ++it) {
        std::vector<int> new_labels = assign_rows(cb, data);
        const bool changed = new_labels != labels;
        labels = std::move(new_labels);
        res.iterations = it + 1;

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < data.rows; ++i) {
            const float* row = data.row(i);
            double* s = sums.data() + static_cast<size_t>(labels[i]) * data.dim;
            for (int d = 0; d < data.dim; ++d) s[d] += row[d];
            ++counts[labels[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            float* cent = cb.centroid(c);
            const double* s = sums.data() + static_cast<size_t>(c) * data.dim;
            for (int d = 0; d < data.dim; ++d)
                cent[d] = static_cast<float>(s[d] / counts[c]);
        }
        // reseed empty clusters to the point farthest from its centroid
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            int worst = 0;
            double worst_d = -1.0;
            for (int i = 0; i < data.rows; ++i) {
                const double d = squared_distance(cb, labels[i], data.row(i));
                if (d > worst_d) {
                    worst_d = d;
                    worst = i;
                }
            }
            const float* src = data.row(worst);
            std::copy(src, src + data.dim, cb.centroid(c));
        }
        if (!changed && it > 0) break;
    }
    res.inertia = inertia(cb, data);
    return res;
}

FitResult minibatch_kmeans_fit(FrameSource& stream, const MiniBatchConfig& cfg) {
    if (cfg.batch_size < 1) throw std::runtime_error("batch_size must be >= 1");

    // Seeding sample: deterministic reservoir over the whole stream, so the
    // sample is representative regardless of frame order.
    const int want = cfg.init_sample > 0 ? cfg.init_sample
                                         : std::max(cfg.batch_size, 20 * cfg.k);
    DataMatrix init_sample;
    {
        Rng rng(derive_seed(cfg.seed, "init-reservoir"));
        stream.reset();
        DataMatrix chunk;
        int64_t seen = 0;
        while (stream.next(std::max(want, 4096), chunk) > 0) {
            if (init_sample.dim == 0) init_sample.dim = chunk.dim;
            for (int r = 0; r < chunk.rows; ++r, ++seen) {
                if (init_sample.rows < want) {
                    init_sample.values.insert(init_sample.values.end(), chunk.row(r),
                                              chunk.row(r) + chunk.dim);
                    ++init_sample.rows;
                } else {
                    const int64_t j = rng.uniform_int(seen + 1);
                    if (j < want)
                        std::copy(chunk.row(r), chunk.row(r) + chunk.dim,
                                  init_sample.row(static_cast<int>(j)));
                }
            }
        }
    }
    if (init_sample.rows == 0) throw std::runtime_error("empty feature stream");
    if (init_sample.rows < cfg.k)
        throw std::runtime_error("stream yields fewer frames than clusters (" +
                                 std::to_string(init_sample.rows) + " < " + std::to_string(cfg.k) +
                                 ")");

    auto run_fit = [&](const Codebook& start, FitResult& res) {
        res.codebook = start;
        Codebook& cb = res.codebook;
        const int dim = cb.dim;
        std::vector<int64_t> counts(cfg.k, 0);
        std::vector<int64_t> epoch_counts(cfg.k, 0);
        std::vector<double> sums(static_cast<size_t>(cfg.k) * dim);
        std::vector<int64_t> batch_counts(cfg.k);
        std::vector<float> prev(cb.centroids.size());
        DataMatrix batch;
        std::vector<int> labels;
        int batches = 0;
        stream.reset();

        // A centroid that received nothing over a full pass is dead; reseed
        // it to the point of the last batch farthest from its centroid.
        auto epoch_end = [&]() {
            std::vector<int> order(batch.rows);
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                return squared_distance(cb, labels[a], batch.row(a)) >
                       squared_distance(cb, labels[b], batch.row(b));
            });
            size_t next_worst = 0;
            for (int c = 0; c < cfg.k && next_worst < order.size(); ++c) {
                if (epoch_counts[c] > 0) continue;
                const float* src = batch.row(order[next_worst++]);
                std::copy(src, src + dim, cb.centroid(c));
                counts[c] = 1;
            }
            std::fill(epoch_counts.begin(), epoch_counts.end(), 0);
        };

        while (batches < cfg.max_batches) {
            DataMatrix next_batch;
            if (stream.next(cfg.batch_size, next_batch) == 0) {
                if (batches == 0) break;  // genuinely empty stream
                epoch_end();
                stream.reset();
                if (stream.next(cfg.batch_size, next_batch) == 0) break;
            }
            batch = std::move(next_batch);
            ++batches;
            prev = cb.centroids;
            std::fill(sums.begin(), sums.end(), 0.0);
            std::fill(batch_counts.begin(), batch_counts.end(), 0);
            labels = assign_rows(cb, batch);
            for (int i = 0; i < batch.rows; ++i) {
                double* s = sums.data() + static_cast<size_t>(labels[i]) * dim;
                const float* row = batch.row(i);
                for (int d = 0; d < dim; ++d) s[d] += row[d];
                ++batch_counts[labels[i]];
            }
            for (int c = 0; c < cfg.k; ++c) {
                if (batch_counts[c] == 0) continue;
                counts[c] += batch_counts[c];
                epoch_counts[c] += batch_counts[c];
                float* cent = cb.centroid(c);
                const double* s = sums.data() + static_cast<size_t>(c) * dim;
                // convex-combination update, learning rate 1/count
                for (int d = 0; d < dim; ++d) {
                    const double delta = (s[d] - static_cast<double>(batch_counts[c]) * cent[d]) /
                                         static_cast<double>(counts[c]);
                    cent[d] = static_cast<float>(cent[d] + delta);
                }
            }
            double max_disp = 0.0;
            for (int c = 0; c < cfg.k; ++c) {
                const double d = sqdist(cb.centroid(c), prev.data() + static_cast<size_t>(c) * dim,
                                        dim);
                max_disp = std::max(max_disp, std::sqrt(d));
            }
            if (max_disp < cfg.tol) break;
        }
        res.iterations = batches;

        // final inertia over the whole stream
        res.inertia = 0.0;
        stream.reset();
        while (stream.next(cfg.batch_size, batch) > 0) {
            const std::vector<int> labels = assign_rows(cb, batch);
            for (int i = 0; i < batch.rows; ++i)
                res.inertia += squared_distance(cb, labels[i], batch.row(i));
        }
    };

    if (!cfg.refit_per_start) {
        const SeedResult seed_res = kmeanspp_init(init_sample, cfg.k, cfg.n_starts, cfg.seed);
        FitResult res;
        run_fit(seed_res.codebook, res);
        return res;
    }
    // full refit per start, keep the lowest-inertia run
    FitResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int s = 0; s < cfg.n_starts; ++s) {
        const SeedResult seed_res =
            kmeanspp_init(init_sample, cfg.k, 1, derive_seed(cfg.seed, "refit-start", s));
        FitResult res;
        run_fit(seed_res.codebook, res);
        if (res.inertia < best.inertia) best = std::move(res);
    }
    return best;
}

}  // namespace mul
