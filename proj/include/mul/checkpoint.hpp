#pragma once

#include <filesystem>

#include "mul/network.hpp"

namespace mul {

/// Checkpoint file: magic "MUCK", version u32, config JSON blob
/// (u32 length + bytes), step u64, then a parameter table of
/// (name, shape, float32 data) entries in registry order.
void save_checkpoint(const std::filesystem::path& path, const MaskedPredictionModel& model);
MaskedPredictionModel load_checkpoint(const std::filesystem::path& path);

}  // namespace mul
