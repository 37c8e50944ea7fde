#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mul {

/// Tag describing where a frame matrix came from.
enum class FeatureKind : uint8_t {
    kMfcc = 0,
    kSplicedMfcc = 1,
    kEncoderLayer = 2,
};

const char* feature_kind_name(FeatureKind kind);

/// Raised when an activation, loss, or parameter goes non-finite.
struct NonFiniteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A T x D matrix of frames at a fixed frame rate. Row-major float32 storage,
/// immutable by convention once built.
struct FeatureSequence {
    int rows = 0;
    int dim = 0;
    int frame_rate_hz = 50;
    FeatureKind kind = FeatureKind::kMfcc;
    std::string utterance_id;
    std::vector<float> data;  // rows * dim, row-major

    float* row(int t) { return data.data() + static_cast<size_t>(t) * dim; }
    const float* row(int t) const { return data.data() + static_cast<size_t>(t) * dim; }

    static FeatureSequence zeros(int rows, int dim, FeatureKind kind, int rate_hz);
};

/// Throws if any entry is non-finite or the shape is inconsistent.
void validate_features(const FeatureSequence& f);

/// Mono 16 kHz audio with samples in [-1, 1].
struct Waveform {
    std::vector<float> samples;
    int sample_rate = 16000;
    std::string utterance_id;
};

/// Per-utterance integer labels, one per frame.
struct LabelSequence {
    std::string utterance_id;
    std::vector<int> labels;
};

}  // namespace mul
