#pragma once

#include <algorithm>
#include <filesystem>
#include <vector>

#include "mul/io.hpp"

namespace mul::tool {

/// Feature directories carry a manifest.txt; bare directories of .mulf
/// files are accepted too (sorted by name for a stable order).
inline Manifest feature_manifest(const std::filesystem::path& dir) {
    if (std::filesystem::exists(dir / "manifest.txt")) return load_manifest(dir / "manifest.txt");
    Manifest m;
    m.root = dir;
    std::vector<std::string> names;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.path().extension() == ".mulf") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto& n : names) m.entries.push_back({n, 0});
    return m;
}

inline std::vector<FeatureSequence> load_feature_dir(const std::filesystem::path& dir) {
    const Manifest m = feature_manifest(dir);
    std::vector<FeatureSequence> out;
    out.reserve(m.entries.size());
    for (size_t i = 0; i < m.entries.size(); ++i) out.push_back(load_features(m.resolve(i)));
    return out;
}

/// Label argument: a file, or a directory whose *.txt files are read in
/// sorted order.
inline std::vector<LabelSequence> load_label_arg(const std::filesystem::path& path) {
    if (!std::filesystem::is_directory(path)) return load_labels(path);
    std::vector<std::string> names;
    for (const auto& e : std::filesystem::directory_iterator(path))
        if (e.path().extension() == ".txt") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    std::vector<LabelSequence> out;
    for (const auto& n : names) {
        auto part = load_labels(path / n);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

}  // namespace mul::tool
