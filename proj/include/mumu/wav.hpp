#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mumu/common.hpp"

namespace mumu {

/// Mono waveform, samples nominally in [-1, 1].
struct Waveform {
    std::vector<double> samples;
    int sample_rate = 16000;

    double duration_s() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

namespace wav {

inline int16_t clamp_i16(double v) {
    double s = v * 32767.0;
    if (s > 32767.0) s = 32767.0;
    if (s < -32768.0) s = -32768.0;
    return static_cast<int16_t>(std::lrint(s));
}

/// PCM 16-bit mono writer.
inline void write(const std::string &path, const Waveform &w) {
    if (w.sample_rate <= 0) throw InvalidInput("wav: sample rate must be positive");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("wav: cannot write " + path);
    uint32_t data_bytes = static_cast<uint32_t>(w.samples.size() * 2);
    uint32_t riff_size = 36 + data_bytes;
    uint32_t sr = static_cast<uint32_t>(w.sample_rate);
    uint32_t byte_rate = sr * 2;
    uint16_t block_align = 2, bits = 16, fmt_pcm = 1, channels = 1;
    uint32_t fmt_size = 16;
    f.write("RIFF", 4);
    f.write(reinterpret_cast<const char *>(&riff_size), 4);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    f.write(reinterpret_cast<const char *>(&fmt_size), 4);
    f.write(reinterpret_cast<const char *>(&fmt_pcm), 2);
    f.write(reinterpret_cast<const char *>(&channels), 2);
    f.write(reinterpret_cast<const char *>(&sr), 4);
    f.write(reinterpret_cast<const char *>(&byte_rate), 4);
    f.write(reinterpret_cast<const char *>(&block_align), 2);
    f.write(reinterpret_cast<const char *>(&bits), 2);
    f.write("data", 4);
    f.write(reinterpret_cast<const char *>(&data_bytes), 4);
    for (double s : w.samples) {
        int16_t v = clamp_i16(s);
        f.write(reinterpret_cast<const char *>(&v), 2);
    }
    if (!f) throw IoError("wav: write failed for " + path);
}

/// PCM 16-bit mono reader; rejects anything else.
inline Waveform read(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("wav: cannot read " + path);
    char tag[4];
    uint32_t riff_size = 0;
    f.read(tag, 4);
    if (!f || std::memcmp(tag, "RIFF", 4) != 0) throw IoError("wav: not a RIFF file: " + path);
    f.read(reinterpret_cast<char *>(&riff_size), 4);
    f.read(tag, 4);
    if (!f || std::memcmp(tag, "WAVE", 4) != 0) throw IoError("wav: not a WAVE file: " + path);

    Waveform w;
    bool have_fmt = false;
    while (f.read(tag, 4)) {
        uint32_t chunk = 0;
        f.read(reinterpret_cast<char *>(&chunk), 4);
        if (!f) break;
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            std::vector<char> buf(chunk);
            f.read(buf.data(), chunk);
            if (chunk < 16) throw IoError("wav: short fmt chunk");
            uint16_t fmt_pcm, channels, bits;
            uint32_t sr;
            std::memcpy(&fmt_pcm, buf.data(), 2);
            std::memcpy(&channels, buf.data() + 2, 2);
            std::memcpy(&sr, buf.data() + 4, 4);
            std::memcpy(&bits, buf.data() + 14, 2);
            if (fmt_pcm != 1 || bits != 16) throw IoError("wav: only PCM 16-bit supported");
            if (channels != 1) throw IoError("wav: only mono supported");
            w.sample_rate = static_cast<int>(sr);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw IoError("wav: data before fmt");
            size_t n = chunk / 2;
            w.samples.resize(n);
            std::vector<int16_t> raw(n);
            f.read(reinterpret_cast<char *>(raw.data()), static_cast<std::streamsize>(n * 2));
            if (!f) throw IoError("wav: truncated data chunk");
            for (size_t i = 0; i < n; ++i) w.samples[i] = raw[i] / 32768.0;
            return w;
        } else {
            f.seekg(chunk + (chunk & 1), std::ios::cur);
        }
    }
    throw IoError("wav: no data chunk in " + path);
}

} // namespace wav
} // namespace mumu
