#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mul/common.hpp"

namespace mul {

// Little-endian binary primitives. All on-disk formats are little-endian
// regardless of host order.
void write_u8(std::ostream& os, uint8_t v);
void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f32_array(std::ostream& os, const float* v, size_t n);
uint8_t read_u8(std::istream& is);
uint32_t read_u32(std::istream& is);
uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
void read_f32_array(std::istream& is, float* v, size_t n);

/// Feature file: magic "MULF", version u32, T u64, D u32, frame_rate u32,
/// feature_kind u8, then T*D float32 row-major.
void save_features(const std::filesystem::path& path, const FeatureSequence& f);
FeatureSequence load_features(const std::filesystem::path& path);

/// Manifest: first line is the root directory, then one
/// "relative_path<TAB>num_samples" line per utterance.
struct ManifestEntry {
    std::string relative_path;
    uint64_t num_samples = 0;
};

struct Manifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    std::filesystem::path resolve(size_t i) const;
    static std::string stem(const std::string& relative_path);
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& m);

/// Label file: one utterance per line, "utterance_id z_1 z_2 ... z_T".
std::vector<LabelSequence> load_labels(const std::filesystem::path& path);
void save_labels(const std::filesystem::path& path, const std::vector<LabelSequence>& labels);

}  // namespace mul
