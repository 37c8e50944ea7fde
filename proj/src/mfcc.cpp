#include "mul/mfcc.hpp"

#include <cmath>
#include <stdexcept>

namespace mul {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

int next_pow2(int n) {
    int p = 1;
    while (p < n) p *= 2;
    return p;
}

}  // namespace

int MfccConfig::window_samples(int sample_rate) const {
    return static_cast<int>(std::lround(window_ms * sample_rate / 1000.0));
}

int MfccConfig::hop_samples(int sample_rate) const {
    return static_cast<int>(std::lround(hop_ms * sample_rate / 1000.0));
}

int num_frames(int64_t num_samples, int window, int hop) {
    if (num_samples < window)
        throw std::runtime_error("waveform shorter than one analysis window (" +
                                 std::to_string(num_samples) + " < " + std::to_string(window) +
                                 " samples)");
    return static_cast<int>(1 + (num_samples - window) / hop);
}

void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
    const size_t n = re.size();
    if (n != im.size() || (n & (n - 1)) != 0)
        throw std::runtime_error("fft size must be a power of two");
    // bit reversal
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (size_t k = 0; k < len / 2; ++k) {
                const size_t a = i + k, b = i + k + len / 2;
                const double tr = re[b] * cr - im[b] * ci;
                const double ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

std::vector<double> compute_deltas(const std::vector<double>& x, int rows, int dim, int window) {
    double denom = 0.0;
    for (int d = 1; d <= window; ++d) denom += 2.0 * d * d;
    std::vector<double> out(x.size());
    auto row_at = [&](int t) {
        t = std::max(0, std::min(rows - 1, t));  // replicate edges
        return x.data() + static_cast<size_t>(t) * dim;
    };
    for (int t = 0; t < rows; ++t) {
        double* o = out.data() + static_cast<size_t>(t) * dim;
        for (int j = 0; j < dim; ++j) {
            double acc = 0.0;
            for (int d = 1; d <= window; ++d) acc += d * (row_at(t + d)[j] - row_at(t - d)[j]);
            o[j] = acc / denom;
        }
    }
    return out;
}

FeatureSequence compute_mfcc(const Waveform& w, const MfccConfig& cfg) {
    if (w.sample_rate != 16000)
        throw std::runtime_error("unsupported sample rate " + std::to_string(w.sample_rate));
    const int win = cfg.window_samples(w.sample_rate);
    const int hop = cfg.hop_samples(w.sample_rate);
    const int frames = num_frames(static_cast<int64_t>(w.samples.size()), win, hop);
    const int nfft = next_pow2(win);
    const int nbins = nfft / 2 + 1;
    const int m = cfg.num_filters;
    const int nc = cfg.num_ceps;

    // pre-emphasis over the whole signal
    std::vector<double> pre(w.samples.size());
    pre[0] = (1.0 - cfg.preemphasis) * w.samples[0];
    for (size_t i = 1; i < w.samples.size(); ++i)
        pre[i] = w.samples[i] - cfg.preemphasis * w.samples[i - 1];

    std::vector<double> hamming(win);
    for (int i = 0; i < win; ++i)
        hamming[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (win - 1));

    // triangular filters with corners equally spaced on the mel scale
    std::vector<double> mel_corner(m + 2);
    const double mel_lo = hz_to_mel(cfg.low_freq_hz);
    const double mel_hi = hz_to_mel(cfg.high_freq_hz);
    for (int i = 0; i < m + 2; ++i) mel_corner[i] = mel_lo + (mel_hi - mel_lo) * i / (m + 1);
    std::vector<double> bin_mel(nbins);
    for (int b = 0; b < nbins; ++b)
        bin_mel[b] = hz_to_mel(static_cast<double>(b) * w.sample_rate / nfft);
    std::vector<double> filters(static_cast<size_t>(m) * nbins, 0.0);
    for (int f = 0; f < m; ++f) {
        const double left = mel_corner[f], center = mel_corner[f + 1], right = mel_corner[f + 2];
        for (int b = 0; b < nbins; ++b) {
            const double mel = bin_mel[b];
            double weight = 0.0;
            if (mel > left && mel < center)
                weight = (mel - left) / (center - left);
            else if (mel >= center && mel < right)
                weight = (right - mel) / (right - center);
            filters[static_cast<size_t>(f) * nbins + b] = weight;
        }
    }

    // orthonormal DCT-II
    std::vector<double> dct(static_cast<size_t>(nc) * m);
    for (int k = 0; k < nc; ++k) {
        const double norm = (k == 0) ? std::sqrt(1.0 / m) : std::sqrt(2.0 / m);
        for (int n = 0; n < m; ++n)
            dct[static_cast<size_t>(k) * m + n] =
                norm * std::cos(M_PI * k * (2.0 * n + 1.0) / (2.0 * m));
    }

    std::vector<double> statics(static_cast<size_t>(frames) * nc);
    std::vector<double> re(nfft), im(nfft), mel_energy(m);
    for (int t = 0; t < frames; ++t) {
        const int start = t * hop;
        for (int i = 0; i < win; ++i) re[i] = pre[start + i] * hamming[i];
        std::fill(re.begin() + win, re.end(), 0.0);
        std::fill(im.begin(), im.end(), 0.0);
        fft_radix2(re, im);
        for (int f = 0; f < m; ++f) {
            double acc = 0.0;
            const double* row = filters.data() + static_cast<size_t>(f) * nbins;
            for (int b = 0; b < nbins; ++b) acc += row[b] * (re[b] * re[b] + im[b] * im[b]);
            mel_energy[f] = std::log(std::max(acc, cfg.log_floor));
        }
        double* out = statics.data() + static_cast<size_t>(t) * nc;
        for (int k = 0; k < nc; ++k) {
            double acc = 0.0;
            const double* row = dct.data() + static_cast<size_t>(k) * m;
            for (int n = 0; n < m; ++n) acc += row[n] * mel_energy[n];
            out[k] = acc;
        }
    }

    const std::vector<double> d1 = compute_deltas(statics, frames, nc, cfg.delta_window);
    const std::vector<double> d2 = compute_deltas(d1, frames, nc, cfg.delta_window);

    FeatureSequence out;
    out.rows = frames;
    out.dim = 3 * nc;
    out.frame_rate_hz = static_cast<int>(std::lround(1000.0 / cfg.hop_ms));
    out.kind = FeatureKind::kMfcc;
    out.utterance_id = w.utterance_id;
    out.data.resize(static_cast<size_t>(frames) * out.dim);
    for (int t = 0; t < frames; ++t) {
        float* row = out.row(t);
        for (int k = 0; k < nc; ++k) {
            row[k] = static_cast<float>(statics[static_cast<size_t>(t) * nc + k]);
            row[nc + k] = static_cast<float>(d1[static_cast<size_t>(t) * nc + k]);
            row[2 * nc + k] = static_cast<float>(d2[static_cast<size_t>(t) * nc + k]);
        }
    }
    return out;
}

FeatureSequence splice(const FeatureSequence& f, int window) {
    if (window < 1 || window % 2 == 0)
        throw std::runtime_error("splice window must be odd, got " + std::to_string(window));
    if (window == 1) return f;
    const int half = window / 2;
    FeatureSequence out;
    out.rows = f.rows;
    out.dim = f.dim * window;
    out.frame_rate_hz = f.frame_rate_hz;
    out.kind = FeatureKind::kSplicedMfcc;
    out.utterance_id = f.utterance_id;
    out.data.resize(static_cast<size_t>(out.rows) * out.dim);
    for (int t = 0; t < f.rows; ++t) {
        float* dst = out.row(t);
        for (int o = -half; o <= half; ++o) {
            const int s = std::max(0, std::min(f.rows - 1, t + o));
            const float* src = f.row(s);
            std::copy(src, src + f.dim, dst);
            dst += f.dim;
        }
    }
    return out;
}

std::vector<std::vector<int>> derivative_order_partition(int window, int block, int num_orders) {
    std::vector<std::vector<int>> parts(num_orders);
    const int frame_dim = block * num_orders;
    for (int order = 0; order < num_orders; ++order) {
        for (int copy = 0; copy < window; ++copy) {
            for (int c = 0; c < block; ++c)
                parts[order].push_back(copy * frame_dim + order * block + c);
        }
    }
    return parts;
}

}  // namespace mul
