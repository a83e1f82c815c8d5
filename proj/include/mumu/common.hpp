#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mumu {

// Thrown when an argument violates an operation's contract.
struct InvalidInput : std::runtime_error {
    explicit InvalidInput(const std::string &msg) : std::runtime_error(msg) {}
};

// Thrown when a template placeholder cannot be substituted.
struct TemplateError : std::runtime_error {
    explicit TemplateError(const std::string &msg) : std::runtime_error(msg) {}
};

// Thrown on file-format or filesystem failures.
struct IoError : std::runtime_error {
    explicit IoError(const std::string &msg) : std::runtime_error(msg) {}
};

enum class Modality { music, image, video };

inline const char *modality_name(Modality m) {
    switch (m) {
    case Modality::music: return "music";
    case Modality::image: return "image";
    case Modality::video: return "video";
    }
    return "?";
}

template <typename T>
inline bool is_finite(T v) {
    return std::isfinite(static_cast<double>(v));
}

} // namespace mumu
