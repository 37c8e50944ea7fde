#pragma once

#include <vector>

#include "mul/common.hpp"

namespace mul {

/// MFCC recipe: pre-emphasis, Hamming window, power spectrum, triangular
/// mel filterbank, log with floor, orthonormal DCT-II, then first and
/// second order regression deltas. 13 cepstra (c0 included) + deltas
/// + delta-deltas = 39 dimensions.
struct MfccConfig {
    int num_ceps = 13;
    int num_filters = 23;
    double window_ms = 25.0;
    double hop_ms = 20.0;  // 20 ms so frames align 1:1 with the encoder output
    double preemphasis = 0.97;
    double low_freq_hz = 0.0;
    double high_freq_hz = 8000.0;
    double log_floor = 1e-10;
    int delta_window = 2;

    int window_samples(int sample_rate) const;
    int hop_samples(int sample_rate) const;
};

/// Number of analysis frames for n samples: 1 + floor((n - win) / hop).
/// Requires n >= win.
int num_frames(int64_t num_samples, int window, int hop);

FeatureSequence compute_mfcc(const Waveform& w, const MfccConfig& cfg = {});

/// Symmetric regression deltas over +-window frames with replicated edges:
/// d_t = sum_d d * (x_{t+d} - x_{t-d}) / (2 * sum_d d^2).
/// Input and output are T x dim row-major.
std::vector<double> compute_deltas(const std::vector<double>& x, int rows, int dim, int window);

/// Concatenate each frame with its +-(window-1)/2 neighbours (edge frames
/// replicated). window must be odd. Output dim is window * input dim.
FeatureSequence splice(const FeatureSequence& f, int window);

/// Dimension subsets of a spliced feature grouped by coefficient order:
/// subset k holds the k-th block of `block` coefficients from every spliced
/// copy. For window=3 on 13-coefficient MFCC with 3 orders this yields the
/// static / delta / delta-delta split of the 117-dim vector.
std::vector<std::vector<int>> derivative_order_partition(int window, int block, int num_orders);

/// In-place radix-2 FFT over interleaved complex (re, im) pairs. n must be a
/// power of two.
void fft_radix2(std::vector<double>& re, std::vector<double>& im);

}  // namespace mul
