#include "mul/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "mul/io.hpp"

namespace mul {

static constexpr uint32_t kCheckpointMagic = 0x4b43554du;  // "MUCK"
static constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const MaskedPredictionModel& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    write_u32(os, kCheckpointMagic);
    write_u32(os, kCheckpointVersion);
    nlohmann::json j;
    to_json(j, model.config());
    const std::string cfg = j.dump();
    write_u32(os, static_cast<uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    write_u64(os, model.step);
    write_u32(os, static_cast<uint32_t>(model.parameters().size()));
    for (const auto& p : model.parameters()) {
        write_u32(os, static_cast<uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_u32(os, static_cast<uint32_t>(p.value.shape.size()));
        for (int d : p.value.shape) write_u32(os, static_cast<uint32_t>(d));
        for (double v : p.value.data) write_f32(os, static_cast<float>(v));
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

MaskedPredictionModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
    if (read_u32(is) != kCheckpointMagic)
        throw std::runtime_error("bad magic in checkpoint: " + path.string());
    if (read_u32(is) != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version in " + path.string());
    const uint32_t cfg_len = read_u32(is);
    std::string cfg_str(cfg_len, '\0');
    is.read(cfg_str.data(), cfg_len);
    if (!is) throw std::runtime_error("truncated checkpoint: " + path.string());
    ModelConfig cfg;
    from_json(nlohmann::json::parse(cfg_str), cfg);
    MaskedPredictionModel model(cfg, 0);
    model.step = read_u64(is);
    const uint32_t count = read_u32(is);
    if (count != model.parameters().size())
        throw std::runtime_error("checkpoint parameter count does not match config");
    for (auto& p : model.parameters()) {
        const uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (name != p.name)
            throw std::runtime_error("checkpoint parameter order mismatch: expected " + p.name +
                                     ", found " + name);
        const uint32_t ndim = read_u32(is);
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = static_cast<int>(read_u32(is));
        if (shape != p.value.shape)
            throw std::runtime_error("checkpoint shape mismatch for " + p.name);
        for (double& v : p.value.data) v = static_cast<double>(read_f32(is));
    }
    return model;
}

}  // namespace mul
