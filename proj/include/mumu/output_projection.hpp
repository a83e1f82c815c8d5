#pragma once

#include <string>
#include <utility>

#include "mumu/dsp.hpp"
#include "mumu/param_store.hpp"
#include "mumu/rng.hpp"
#include "mumu/wav.hpp"

namespace mumu {

enum class DecoderTarget { audioldm2, musicgen, toy };

inline const char *decoder_target_name(DecoderTarget t) {
    switch (t) {
    case DecoderTarget::audioldm2: return "audioldm2";
    case DecoderTarget::musicgen: return "musicgen";
    case DecoderTarget::toy: return "toy";
    }
    return "?";
}

inline DecoderTarget decoder_target_from_name(const std::string &s) {
    if (s == "audioldm2") return DecoderTarget::audioldm2;
    if (s == "musicgen") return DecoderTarget::musicgen;
    if (s == "toy") return DecoderTarget::toy;
    throw InvalidInput("unknown decoder target: " + s);
}

struct ProjectionConfig {
    DecoderTarget target = DecoderTarget::toy;
    int n_audio_tokens = 8; // K input rows
    int d_model = 64;
    int toy_cols = 4;
    uint64_t seed = 0;

    std::pair<int, int> out_shape() const {
        switch (target) {
        case DecoderTarget::audioldm2: return {1, 512};
        case DecoderTarget::musicgen: return {512, 768};
        case DecoderTarget::toy: return {1, toy_cols};
        }
        return {0, 0};
    }
};

template <typename T = double>
struct ConditioningEmbedding {
    DecoderTarget target;
    Mat<T> data;
};

/// Music output transformer g(.): one pre-norm single-head transformer block
/// over the K audio-token hidden rows, then a learned factored reshape head
/// (row mix K -> R, column projection d_model -> C) per decoder target.
template <typename T = double>
class OutputProjection {
  public:
    OutputProjection() = default;

    OutputProjection(ParamStore<T> &store, const ProjectionConfig &cfg, Rng rng) : cfg_(cfg) {
        const int d = cfg_.d_model;
        auto [r, c] = cfg_.out_shape();
        store.add("outproj.block.ln1.g", Mat<T>::full(1, d, T(1)));
        store.add("outproj.block.ln1.b", Mat<T>::zeros(1, d));
        store.add("outproj.block.attn.wq", Mat<T>::xavier(d, d, rng));
        store.add("outproj.block.attn.wk", Mat<T>::xavier(d, d, rng));
        store.add("outproj.block.attn.wv", Mat<T>::xavier(d, d, rng));
        store.add("outproj.block.attn.wo", Mat<T>::xavier(d, d, rng));
        store.add("outproj.block.ln2.g", Mat<T>::full(1, d, T(1)));
        store.add("outproj.block.ln2.b", Mat<T>::zeros(1, d));
        store.add("outproj.block.mlp.w1", Mat<T>::xavier(d, 4 * d, rng));
        store.add("outproj.block.mlp.b1", Mat<T>::zeros(1, 4 * d));
        store.add("outproj.block.mlp.w2", Mat<T>::xavier(4 * d, d, rng));
        store.add("outproj.block.mlp.b2", Mat<T>::zeros(1, d));
        store.add("outproj.head.rowmix", Mat<T>::xavier(r, cfg_.n_audio_tokens, rng));
        store.add("outproj.head.colproj", Mat<T>::xavier(d, c, rng));
    }

    const ProjectionConfig &config() const { return cfg_; }

    typename Tape<T>::Id forward(TapeCtx<T> &ctx, typename Tape<T>::Id hidden) const {
        auto &t = ctx.tape;
        const Mat<T> &h = t.val(hidden);
        if (h.rows != cfg_.n_audio_tokens)
            throw InvalidInput("project: expected " + std::to_string(cfg_.n_audio_tokens) +
                               " audio-token rows, got " + std::to_string(h.rows));
        if (h.cols != cfg_.d_model) throw InvalidInput("project: hidden width mismatch");

        auto xn = t.layernorm_rows(hidden, ctx.param("outproj.block.ln1.g"),
                                   ctx.param("outproj.block.ln1.b"));
        auto q = t.matmul(xn, ctx.param("outproj.block.attn.wq"));
        auto k = t.matmul(xn, ctx.param("outproj.block.attn.wk"));
        auto v = t.matmul(xn, ctx.param("outproj.block.attn.wv"));
        auto scores = t.scale(t.matmul(q, t.transpose(k)),
                              static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg_.d_model))));
        auto mixed = t.matmul(t.softmax_rows(scores), v);
        auto x = t.add(hidden, t.matmul(mixed, ctx.param("outproj.block.attn.wo")));
        auto xn2 = t.layernorm_rows(x, ctx.param("outproj.block.ln2.g"),
                                    ctx.param("outproj.block.ln2.b"));
        auto h1 = t.gelu_(t.add_rowvec(t.matmul(xn2, ctx.param("outproj.block.mlp.w1")),
                                       ctx.param("outproj.block.mlp.b1")));
        auto h2 = t.add_rowvec(t.matmul(h1, ctx.param("outproj.block.mlp.w2")),
                               ctx.param("outproj.block.mlp.b2"));
        x = t.add(x, h2);
        return t.matmul(t.matmul(ctx.param("outproj.head.rowmix"), x),
                        ctx.param("outproj.head.colproj"));
    }

    /// evaluation wrapper over the tape forward
    ConditioningEmbedding<T> project(const ParamStore<T> &store, const Mat<T> &hidden) const {
        Tape<T> tape;
        std::set<std::string> frozen;
        TapeCtx<T> ctx{tape, store, &frozen};
        auto out = forward(ctx, tape.constant(hidden));
        return {cfg_.target, tape.val(out)};
    }

  private:
    ProjectionConfig cfg_;
};

/// Deterministic stand-in for a music decoder: a sinusoid mixture whose
/// component frequencies and amplitudes are a fixed hash of the conditioning
/// embedding. Identical conditioning gives bitwise-identical audio.
template <typename T>
Waveform decode_stub(const ConditioningEmbedding<T> &cond, double duration_s, uint64_t seed = 0,
                     int sample_rate = 16000) {
    if (duration_s <= 0.0) throw InvalidInput("decode_stub: duration must be positive");
    uint64_t h = hash_combine(seed, fnv1a64(cond.data.data.data(),
                                            cond.data.data.size() * sizeof(T)));
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.assign(static_cast<size_t>(std::llround(duration_s * sample_rate)), 0.0);
    const int components = 4;
    for (int c = 0; c < components; ++c) {
        uint64_t hc = splitmix64(h + static_cast<uint64_t>(c));
        double freq = 180.0 + 35.0 * static_cast<double>(hc % 97);
        double amp = 0.08 + 0.10 * (static_cast<double>((hc >> 32) % 1000) / 999.0);
        double phase = 2.0 * M_PI * (static_cast<double>((hc >> 17) % 1024) / 1024.0);
        if (c == 0) amp += 0.15; // keep one clearly dominant component
        for (size_t i = 0; i < w.samples.size(); ++i)
            w.samples[i] += amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) /
                                               sample_rate +
                                           phase);
    }
    return w;
}

} // namespace mumu
