#include "mul/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mul {

namespace {

void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void get_bytes(std::istream& is, void* p, size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error("unexpected end of file");
}

constexpr bool host_is_little_endian() {
    return std::endian::native == std::endian::little;
}

}  // namespace

void write_u8(std::ostream& os, uint8_t v) { put_bytes(os, &v, 1); }

void write_u32(std::ostream& os, uint32_t v) {
    uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
    put_bytes(os, b, 4);
}

void write_u64(std::ostream& os, uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = uint8_t(v >> (8 * i));
    put_bytes(os, b, 8);
}

void write_f32(std::ostream& os, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(os, u);
}

void write_f32_array(std::ostream& os, const float* v, size_t n) {
    if (host_is_little_endian()) {
        put_bytes(os, v, n * 4);
    } else {
        for (size_t i = 0; i < n; ++i) write_f32(os, v[i]);
    }
}

uint8_t read_u8(std::istream& is) {
    uint8_t v;
    get_bytes(is, &v, 1);
    return v;
}

uint32_t read_u32(std::istream& is) {
    uint8_t b[4];
    get_bytes(is, b, 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

uint64_t read_u64(std::istream& is) {
    uint8_t b[8];
    get_bytes(is, b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
}

float read_f32(std::istream& is) {
    uint32_t u = read_u32(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

void read_f32_array(std::istream& is, float* v, size_t n) {
    if (host_is_little_endian()) {
        get_bytes(is, v, n * 4);
    } else {
        for (size_t i = 0; i < n; ++i) v[i] = read_f32(is);
    }
}

const char* feature_kind_name(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::kMfcc: return "mfcc";
        case FeatureKind::kSplicedMfcc: return "spliced-mfcc";
        case FeatureKind::kEncoderLayer: return "encoder-layer";
    }
    return "unknown";
}

FeatureSequence FeatureSequence::zeros(int rows, int dim, FeatureKind kind, int rate_hz) {
    FeatureSequence f;
    f.rows = rows;
    f.dim = dim;
    f.kind = kind;
    f.frame_rate_hz = rate_hz;
    f.data.assign(static_cast<size_t>(rows) * dim, 0.0f);
    return f;
}

void validate_features(const FeatureSequence& f) {
    if (f.rows < 1) throw std::runtime_error("feature sequence is empty");
    if (f.data.size() != static_cast<size_t>(f.rows) * f.dim)
        throw std::runtime_error("feature sequence shape mismatch");
    for (float v : f.data) {
        if (!std::isfinite(v))
            throw std::runtime_error("feature sequence contains a non-finite value (utterance " +
                                     f.utterance_id + ")");
    }
}

static constexpr uint32_t kFeatureMagic = 0x464c554du;  // "MULF"
static constexpr uint32_t kFeatureVersion = 1;

void save_features(const std::filesystem::path& path, const FeatureSequence& f) {
    validate_features(f);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    write_u32(os, kFeatureMagic);
    write_u32(os, kFeatureVersion);
    write_u64(os, static_cast<uint64_t>(f.rows));
    write_u32(os, static_cast<uint32_t>(f.dim));
    write_u32(os, static_cast<uint32_t>(f.frame_rate_hz));
    write_u8(os, static_cast<uint8_t>(f.kind));
    write_f32_array(os, f.data.data(), f.data.size());
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

FeatureSequence load_features(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open feature file: " + path.string());
    if (read_u32(is) != kFeatureMagic)
        throw std::runtime_error("bad magic in feature file: " + path.string());
    uint32_t version = read_u32(is);
    if (version != kFeatureVersion)
        throw std::runtime_error("unsupported feature file version " + std::to_string(version));
    FeatureSequence f;
    f.rows = static_cast<int>(read_u64(is));
    f.dim = static_cast<int>(read_u32(is));
    f.frame_rate_hz = static_cast<int>(read_u32(is));
    f.kind = static_cast<FeatureKind>(read_u8(is));
    f.data.resize(static_cast<size_t>(f.rows) * f.dim);
    read_f32_array(is, f.data.data(), f.data.size());
    f.utterance_id = path.stem().string();
    return f;
}

std::filesystem::path Manifest::resolve(size_t i) const {
    return root / entries.at(i).relative_path;
}

std::string Manifest::stem(const std::string& relative_path) {
    return std::filesystem::path(relative_path).stem().string();
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest: " + path.string());
    Manifest m;
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty manifest: " + path.string());
    std::filesystem::path root(line);
    // A relative root is taken relative to the manifest location, so a
    // feature directory can be moved as a whole.
    m.root = root.is_absolute() ? root : path.parent_path() / root;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("manifest line missing tab separator: " + line);
        ManifestEntry e;
        e.relative_path = line.substr(0, tab);
        e.num_samples = std::stoull(line.substr(tab + 1));
        m.entries.push_back(std::move(e));
    }
    return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& m) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os << m.root.string() << "\n";
    for (const auto& e : m.entries) os << e.relative_path << "\t" << e.num_samples << "\n";
}

std::vector<LabelSequence> load_labels(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open label file: " + path.string());
    std::vector<LabelSequence> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        LabelSequence seq;
        ls >> seq.utterance_id;
        int z;
        while (ls >> z) seq.labels.push_back(z);
        out.push_back(std::move(seq));
    }
    return out;
}

void save_labels(const std::filesystem::path& path, const std::vector<LabelSequence>& labels) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    for (const auto& seq : labels) {
        os << seq.utterance_id;
        for (int z : seq.labels) os << ' ' << z;
        os << "\n";
    }
}

}  // namespace mul
