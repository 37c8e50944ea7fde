#pragma once

#include <filesystem>

#include "mul/common.hpp"

namespace mul {

/// Load a RIFF/WAVE file. Accepts only mono 16-bit PCM at 16000 Hz and
/// rejects anything else with a diagnostic naming the offending property.
/// Integer samples are scaled to [-1, 1] by division by 32768; the
/// utterance id is the file stem.
Waveform load_wav(const std::filesystem::path& path);

/// Write a mono 16-bit PCM file. Samples are clamped to [-1, 1] and scaled
/// by 32767.
void save_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace mul
