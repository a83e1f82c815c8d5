#pragma once

#include <variant>
#include <vector>

#include "mumu/common.hpp"
#include "mumu/mat.hpp"
#include "mumu/rng.hpp"
#include "mumu/wav.hpp"

namespace mumu {

enum class Scale { full, toy };

/// H x W x 3 image, channels interleaved, values in [0, 1].
struct ImageTensor {
    int height = 0;
    int width = 0;
    std::vector<double> rgb;
};

/// frames x H x W x 3 video.
struct VideoTensor {
    int frames = 0;
    int height = 0;
    int width = 0;
    std::vector<double> rgb;
};

struct RawModalityInput {
    Modality kind;
    std::variant<Waveform, ImageTensor, VideoTensor> payload;

    static RawModalityInput music(Waveform w) { return {Modality::music, std::move(w)}; }
    static RawModalityInput image(ImageTensor t) { return {Modality::image, std::move(t)}; }
    static RawModalityInput video(VideoTensor t) { return {Modality::video, std::move(t)}; }
};

struct EncoderDims {
    int seq_len = 0;
    int feat_dim = 0;
};

// Full-scale output contracts of the stand-in encoders.
inline constexpr EncoderDims kFullMusicDims{25, 1024};
inline constexpr EncoderDims kFullImageDims{197, 768};
inline constexpr EncoderDims kFullVideoDims{3137, 768};

struct EncoderConfig {
    Scale scale = Scale::full;
    EncoderDims toy_music{6, 16};
    EncoderDims toy_image{4, 8};
    EncoderDims toy_video{5, 12};
    uint64_t seed = 0;

    EncoderDims dims(Modality m) const {
        if (scale == Scale::full) {
            switch (m) {
            case Modality::music: return kFullMusicDims;
            case Modality::image: return kFullImageDims;
            case Modality::video: return kFullVideoDims;
            }
        }
        switch (m) {
        case Modality::music: return toy_music;
        case Modality::image: return toy_image;
        case Modality::video: return toy_video;
        }
        return {};
    }

    void validate() const {
        for (auto d : {toy_music, toy_image, toy_video})
            if (d.seq_len < 1 || d.feat_dim < 1)
                throw InvalidInput("encoder config: toy dims must be >= 1");
    }
};

template <typename T = double>
struct ModalityEmbedding {
    Modality kind;
    Scale scale;
    Mat<T> data; // seq_len x feat_dim
};

namespace detail {

// number of interpolation taps summarizing each sequence chunk
inline constexpr int kEncoderTaps = 64;

inline void validate_payload(const RawModalityInput &input) {
    auto check_finite = [](const std::vector<double> &v, const char *what) {
        if (v.empty()) throw InvalidInput(std::string("encode: empty ") + what);
        for (double s : v)
            if (!is_finite(s)) throw InvalidInput(std::string("encode: non-finite ") + what);
    };
    switch (input.kind) {
    case Modality::music: {
        const auto *w = std::get_if<Waveform>(&input.payload);
        if (!w) throw InvalidInput("encode: music input requires a waveform payload");
        if (w->sample_rate <= 0) throw InvalidInput("encode: sample rate must be positive");
        check_finite(w->samples, "waveform");
        break;
    }
    case Modality::image: {
        const auto *t = std::get_if<ImageTensor>(&input.payload);
        if (!t) throw InvalidInput("encode: image input requires an image payload");
        if (t->height <= 0 || t->width <= 0) throw InvalidInput("encode: image dims must be positive");
        if (t->rgb.size() != static_cast<size_t>(t->height) * t->width * 3)
            throw InvalidInput("encode: image payload size mismatch");
        check_finite(t->rgb, "image");
        break;
    }
    case Modality::video: {
        const auto *t = std::get_if<VideoTensor>(&input.payload);
        if (!t) throw InvalidInput("encode: video input requires a video payload");
        if (t->frames <= 0 || t->height <= 0 || t->width <= 0)
            throw InvalidInput("encode: video dims must be positive");
        if (t->rgb.size() != static_cast<size_t>(t->frames) * t->height * t->width * 3)
            throw InvalidInput("encode: video payload size mismatch");
        check_finite(t->rgb, "video");
        break;
    }
    }
}

inline const std::vector<double> &flat_signal(const RawModalityInput &input) {
    switch (input.kind) {
    case Modality::music: return std::get<Waveform>(input.payload).samples;
    case Modality::image: return std::get<ImageTensor>(input.payload).rgb;
    case Modality::video: return std::get<VideoTensor>(input.payload).rgb;
    }
    throw InvalidInput("encode: unknown modality");
}

// fractional-position linear interpolation over the flattened payload
inline double sample_at(const std::vector<double> &x, double pos) {
    if (pos <= 0.0) return x.front();
    double last = static_cast<double>(x.size() - 1);
    if (pos >= last) return x.back();
    size_t i0 = static_cast<size_t>(pos);
    double frac = pos - static_cast<double>(i0);
    return x[i0] * (1.0 - frac) + x[i0 + 1] * frac;
}

} // namespace detail

/// Stand-in feature encoder: deterministic seeded linear map over uniformly
/// partitioned input chunks, followed by tanh. Output shape depends only on
/// (kind, scale/config); content enters through the chunk summaries.
template <typename T = double>
ModalityEmbedding<T> encode(const RawModalityInput &input, const EncoderConfig &cfg) {
    cfg.validate();
    detail::validate_payload(input);
    const EncoderDims dims = cfg.dims(input.kind);
    const std::vector<double> &signal = detail::flat_signal(input);

    const int taps = detail::kEncoderTaps;
    Rng wrng = Rng::from(cfg.seed, 0x5eed0000ull + static_cast<uint64_t>(input.kind));
    Mat<double> w = Mat<double>::xavier(taps, dims.feat_dim, wrng);
    Mat<double> b = Mat<double>::randn(1, dims.feat_dim, wrng, 0.05);

    ModalityEmbedding<T> out{input.kind, cfg.scale, Mat<T>(dims.seq_len, dims.feat_dim)};
    const double n = static_cast<double>(signal.size());
    std::vector<double> chunk(taps);
    for (int r = 0; r < dims.seq_len; ++r) {
        double lo = n * static_cast<double>(r) / dims.seq_len;
        double hi = n * static_cast<double>(r + 1) / dims.seq_len;
        for (int j = 0; j < taps; ++j) {
            double pos = lo + (hi - lo) * (static_cast<double>(j) + 0.5) / taps;
            chunk[j] = detail::sample_at(signal, pos);
        }
        for (int c = 0; c < dims.feat_dim; ++c) {
            double acc = b(0, c);
            for (int j = 0; j < taps; ++j) acc += chunk[j] * w(j, c);
            out.data(r, c) = static_cast<T>(std::tanh(acc));
        }
    }
    return out;
}

} // namespace mumu
