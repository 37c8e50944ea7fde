#include "mul/wav.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mul/io.hpp"

namespace mul {

namespace {

constexpr uint32_t fourcc(char a, char b, char c, char d) {
    return uint32_t(uint8_t(a)) | uint32_t(uint8_t(b)) << 8 | uint32_t(uint8_t(c)) << 16 |
           uint32_t(uint8_t(d)) << 24;
}

}  // namespace

Waveform load_wav(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open wav file: " + path.string());

    if (read_u32(is) != fourcc('R', 'I', 'F', 'F'))
        throw std::runtime_error("not a RIFF file: " + path.string());
    read_u32(is);  // riff size
    if (read_u32(is) != fourcc('W', 'A', 'V', 'E'))
        throw std::runtime_error("not a WAVE file: " + path.string());

    bool have_fmt = false;
    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t sample_rate = 0;
    std::vector<float> samples;
    bool have_data = false;

    while (is.peek() != EOF) {
        uint32_t id = read_u32(is);
        uint32_t size = read_u32(is);
        if (id == fourcc('f', 'm', 't', ' ')) {
            uint32_t fmt_lo = read_u32(is);
            format = uint16_t(fmt_lo);
            channels = uint16_t(fmt_lo >> 16);
            sample_rate = read_u32(is);
            read_u32(is);  // byte rate
            uint32_t align_bits = read_u32(is);
            bits = uint16_t(align_bits >> 16);
            if (size > 16) is.seekg(size - 16, std::ios::cur);
            have_fmt = true;
        } else if (id == fourcc('d', 'a', 't', 'a')) {
            if (!have_fmt) throw std::runtime_error("wav data chunk before fmt chunk");
            if (format != 1) throw std::runtime_error("unsupported wav encoding " +
                                                      std::to_string(format) + " (expected PCM)");
            if (channels != 1)
                throw std::runtime_error("unsupported channel count " + std::to_string(channels) +
                                         " (expected mono)");
            if (bits != 16)
                throw std::runtime_error("unsupported bit depth " + std::to_string(bits) +
                                         " (expected 16-bit)");
            if (sample_rate != 16000)
                throw std::runtime_error("unsupported sample rate " + std::to_string(sample_rate) +
                                         " (expected 16000)");
            size_t n = size / 2;
            samples.resize(n);
            for (size_t i = 0; i < n; ++i) {
                uint32_t lo = read_u8(is);
                uint32_t hi = read_u8(is);
                int16_t s = static_cast<int16_t>(lo | (hi << 8));
                samples[i] = static_cast<float>(s) / 32768.0f;
            }
            if (size % 2) read_u8(is);
            have_data = true;
        } else {
            is.seekg(size + (size % 2), std::ios::cur);  // chunks are word-aligned
        }
    }

    if (!have_data) throw std::runtime_error("wav file has no data chunk: " + path.string());
    if (samples.empty()) throw std::runtime_error("wav file has no samples: " + path.string());

    Waveform w;
    w.samples = std::move(samples);
    w.sample_rate = 16000;
    w.utterance_id = path.stem().string();
    return w;
}

void save_wav(const std::filesystem::path& path, const Waveform& w) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    const uint32_t n = static_cast<uint32_t>(w.samples.size());
    const uint32_t data_bytes = n * 2;
    write_u32(os, fourcc('R', 'I', 'F', 'F'));
    write_u32(os, 36 + data_bytes);
    write_u32(os, fourcc('W', 'A', 'V', 'E'));
    write_u32(os, fourcc('f', 'm', 't', ' '));
    write_u32(os, 16);
    write_u32(os, 1u | (1u << 16));  // PCM, mono
    write_u32(os, static_cast<uint32_t>(w.sample_rate));
    write_u32(os, static_cast<uint32_t>(w.sample_rate) * 2);
    write_u32(os, 2u | (16u << 16));  // block align, bits
    write_u32(os, fourcc('d', 'a', 't', 'a'));
    write_u32(os, data_bytes);
    for (float v : w.samples) {
        float c = std::clamp(v, -1.0f, 1.0f);
        int16_t s = static_cast<int16_t>(std::lrint(c * 32767.0f));
        write_u8(os, static_cast<uint8_t>(s & 0xff));
        write_u8(os, static_cast<uint8_t>((s >> 8) & 0xff));
    }
}

}  // namespace mul
