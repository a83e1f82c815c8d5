#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mumu/param_store.hpp"
#include "mumu/rng.hpp"

namespace mumu {

struct FusionConfig {
    int n_layers = 32;
    int block_len = 6; // layers per injection block
    int d_model = 64;
    int n_heads = 4;
    int vocab_size = 260; // base vocab: 256 bytes, BOS, spares, EOS at vocab_size-1
    int n_audio_tokens = 8;
    int max_target_len = 512;
    uint64_t seed = 0;

    // injection order over the three trailing blocks
    static constexpr std::array<Modality, 3> kInjectionOrder = {Modality::video, Modality::image,
                                                                Modality::music};

    int total_vocab() const { return vocab_size + n_audio_tokens; }
    int audio_token_id(int i) const { return vocab_size + i; }
    bool is_audio_token(int id) const { return id >= vocab_size && id < total_vocab(); }
    int eos_id() const { return vocab_size - 1; }
    int bos_id() const { return 256; }

    void validate() const {
        if (block_len < 1 || n_layers < 3 * block_len)
            throw InvalidInput("fusion: need n_layers >= 3 * block_len");
        if (n_audio_tokens < 1) throw InvalidInput("fusion: need at least one audio token");
        if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
            throw InvalidInput("fusion: d_model must be divisible by n_heads");
        if (vocab_size < 2) throw InvalidInput("fusion: vocab too small");
        if (max_target_len < 2) throw InvalidInput("fusion: max_target_len too small");
    }

    /// [start, end) layer ranges of the three injection blocks; they tile the
    /// last 3*block_len layers in order.
    std::array<std::array<int, 2>, 3> injection_blocks() const {
        int start = n_layers - 3 * block_len;
        std::array<std::array<int, 2>, 3> blocks{};
        for (int b = 0; b < 3; ++b)
            blocks[b] = {start + b * block_len, start + (b + 1) * block_len};
        return blocks;
    }

    /// block index receiving a layer's injection, or -1
    int block_of_layer(int layer) const {
        int start = n_layers - 3 * block_len;
        if (layer < start || layer >= n_layers) return -1;
        return (layer - start) / block_len;
    }

    static int block_of_modality(Modality m) {
        for (int b = 0; b < 3; ++b)
            if (kInjectionOrder[b] == m) return b;
        return -1;
    }
};

// ---- token plumbing ----

using TokenSequence = std::vector<int>;

/// Byte-level tokenizer with "[AUD_i]" markers mapped to the reserved top-K
/// vocabulary ids.
inline TokenSequence tokenize_text(const std::string &text, const FusionConfig &cfg) {
    if (cfg.vocab_size < 258) throw InvalidInput("tokenize: byte vocab requires vocab_size >= 258");
    TokenSequence ids;
    size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '[' && text.compare(i, 5, "[AUD_") == 0) {
            size_t j = i + 5;
            int v = 0;
            bool digits = false;
            while (j < text.size() && text[j] >= '0' && text[j] <= '9') {
                v = v * 10 + (text[j] - '0');
                digits = true;
                ++j;
            }
            if (digits && j < text.size() && text[j] == ']' && v < cfg.n_audio_tokens) {
                ids.push_back(cfg.audio_token_id(v));
                i = j + 1;
                continue;
            }
        }
        ids.push_back(static_cast<unsigned char>(text[i]));
        ++i;
    }
    return ids;
}

inline std::string detokenize(const TokenSequence &ids, const FusionConfig &cfg) {
    std::string out;
    for (int id : ids) {
        if (id < 256) {
            out.push_back(static_cast<char>(id));
        } else if (cfg.is_audio_token(id)) {
            out += "[AUD_" + std::to_string(id - cfg.vocab_size) + "]";
        }
        // control ids (BOS/EOS/spares) render as nothing
    }
    return out;
}

inline std::string audio_token_suffix(int k) {
    std::string s;
    for (int i = 0; i < k; ++i) s += "[AUD_" + std::to_string(i) + "]";
    return s;
}

/// Positions of the K-token audio suffix iff the sequence ends with exactly
/// [AUD_0 .. AUD_{K-1}] in order.
inline std::optional<std::vector<int>> detect_audio_tokens(const TokenSequence &seq,
                                                           const FusionConfig &cfg) {
    const int k = cfg.n_audio_tokens;
    if (static_cast<int>(seq.size()) < k) return std::nullopt;
    int base = static_cast<int>(seq.size()) - k;
    for (int i = 0; i < k; ++i)
        if (seq[base + i] != cfg.audio_token_id(i)) return std::nullopt;
    std::vector<int> pos(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) pos[static_cast<size_t>(i)] = base + i;
    return pos;
}

// ---- LoRA bookkeeping (deltas applied inside attention weight lookups) ----

struct LoraSet {
    int rank = 0;
    double scaling = 0.0;
    std::map<std::string, std::pair<std::string, std::string>> targets; // base -> (A, B)
};

// ---- model ----

template <typename T>
struct FusionProbe {
    std::array<std::array<int, 2>, 3> blocks{};
    std::vector<std::pair<int, Mat<T>>> injections; // (layer, broadcast row added)
};

template <typename T>
struct FusionForwardResult {
    typename Tape<T>::Id logits;       // seq_len x (vocab + K)
    typename Tape<T>::Id final_hidden; // seq_len x d_model, post final norm
};

/// Decoder-only pre-norm transformer with learned positions and three gated
/// modality-injection blocks over the trailing layers.
template <typename T = double>
class FusionLm {
  public:
    FusionLm() = default;

    FusionLm(ParamStore<T> &store, const FusionConfig &cfg, Rng rng) : cfg_(cfg) {
        cfg_.validate();
        const int d = cfg_.d_model;
        store.add("fusion.embed.tok", Mat<T>::randn(cfg_.total_vocab(), d, rng, 0.02));
        store.add("fusion.embed.pos", Mat<T>::randn(cfg_.max_target_len, d, rng, 0.02));
        for (int l = 0; l < cfg_.n_layers; ++l) {
            std::string p = layer_prefix(l);
            store.add(p + ".ln1.g", Mat<T>::full(1, d, T(1)));
            store.add(p + ".ln1.b", Mat<T>::zeros(1, d));
            store.add(p + ".attn.wq", Mat<T>::xavier(d, d, rng));
            store.add(p + ".attn.wk", Mat<T>::xavier(d, d, rng));
            store.add(p + ".attn.wv", Mat<T>::xavier(d, d, rng));
            store.add(p + ".attn.wo", Mat<T>::xavier(d, d, rng));
            store.add(p + ".ln2.g", Mat<T>::full(1, d, T(1)));
            store.add(p + ".ln2.b", Mat<T>::zeros(1, d));
            store.add(p + ".mlp.w1", Mat<T>::xavier(d, 4 * d, rng));
            store.add(p + ".mlp.b1", Mat<T>::zeros(1, 4 * d));
            store.add(p + ".mlp.w2", Mat<T>::xavier(4 * d, d, rng));
            store.add(p + ".mlp.b2", Mat<T>::zeros(1, d));
        }
        store.add("fusion.final_norm.g", Mat<T>::full(1, d, T(1)));
        store.add("fusion.final_norm.b", Mat<T>::zeros(1, d));
        store.add("fusion.head.w", Mat<T>::xavier(d, cfg_.total_vocab(), rng));
        // prefix queries and zero-initialized injection gates
        for (int b = 0; b < 3; ++b) {
            store.add("fusion.prefix.p" + std::to_string(b), Mat<T>::randn(1, d, rng, 0.02));
            store.add("fusion.prefix.gate" + std::to_string(b), Mat<T>::zeros(1, 1));
        }
    }

    const FusionConfig &config() const { return cfg_; }

    void set_lora(const LoraSet *lora) { lora_ = lora; }
    const LoraSet *lora() const { return lora_; }

    static std::string layer_prefix(int l) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "fusion.layer%02d", l);
        return buf;
    }

    /// Teacher-forced forward. feats maps a modality to a (1 x d_model) node
    /// (an adapter output); absent modalities fall back to the prefix query
    /// alone inside their block.
    FusionForwardResult<T> forward(TapeCtx<T> &ctx, const TokenSequence &tokens,
                                   const std::map<Modality, typename Tape<T>::Id> &feats,
                                   FusionProbe<T> *probe = nullptr) const {
        auto &t = ctx.tape;
        const int L = static_cast<int>(tokens.size());
        if (L == 0) throw InvalidInput("fusion: empty token sequence");
        if (L > cfg_.max_target_len) throw InvalidInput("fusion: sequence exceeds max_target_len");
        for (int id : tokens)
            if (id < 0 || id >= cfg_.total_vocab())
                throw InvalidInput("fusion: token id out of vocabulary");

        if (probe) probe->blocks = cfg_.injection_blocks();

        // per-block injection rows: gate_b * (A_modality + P_b) or gate_b * P_b
        std::array<typename Tape<T>::Id, 3> inject{};
        for (int b = 0; b < 3; ++b) {
            Modality m = FusionConfig::kInjectionOrder[static_cast<size_t>(b)];
            auto p = ctx.param("fusion.prefix.p" + std::to_string(b));
            auto g = ctx.param("fusion.prefix.gate" + std::to_string(b));
            auto it = feats.find(m);
            auto base = it == feats.end() ? p : t.add(it->second, p);
            inject[static_cast<size_t>(b)] = t.scale_by(base, g);
        }

        Mat<T> mask(L, L);
        for (int i = 0; i < L; ++i)
            for (int j = i + 1; j < L; ++j) mask(i, j) = static_cast<T>(-1e30);

        auto x = t.add(t.gather_rows(ctx.param("fusion.embed.tok"), tokens),
                       t.slice_rows(ctx.param("fusion.embed.pos"), 0, L));
        for (int l = 0; l < cfg_.n_layers; ++l) {
            int b = cfg_.block_of_layer(l);
            if (b >= 0) {
                auto inj = inject[static_cast<size_t>(b)];
                x = t.add_rowvec(x, inj);
                if (probe) probe->injections.emplace_back(l, t.val(inj));
            }
            x = layer(ctx, l, x, mask);
        }
        auto final_hidden = t.layernorm_rows(x, ctx.param("fusion.final_norm.g"),
                                             ctx.param("fusion.final_norm.b"));
        auto logits = t.matmul(final_hidden, ctx.param("fusion.head.w"));
        return {logits, final_hidden};
    }

  private:
    typename Tape<T>::Id weight(TapeCtx<T> &ctx, const std::string &name) const {
        auto base = ctx.param(name);
        if (!lora_) return base;
        auto it = lora_->targets.find(name);
        if (it == lora_->targets.end()) return base;
        auto &t = ctx.tape;
        auto a = ctx.param(it->second.first);  // (r x d_in)
        auto b = ctx.param(it->second.second); // (d_out x r)
        auto delta = t.scale(t.transpose(t.matmul(b, a)), static_cast<T>(lora_->scaling));
        return t.add(base, delta);
    }

    typename Tape<T>::Id layer(TapeCtx<T> &ctx, int l, typename Tape<T>::Id x,
                               const Mat<T> &mask) const {
        auto &t = ctx.tape;
        const std::string p = layer_prefix(l);
        const int d = cfg_.d_model;
        const int dh = d / cfg_.n_heads;

        auto xn = t.layernorm_rows(x, ctx.param(p + ".ln1.g"), ctx.param(p + ".ln1.b"));
        auto q = t.matmul(xn, weight(ctx, p + ".attn.wq"));
        auto k = t.matmul(xn, ctx.param(p + ".attn.wk"));
        auto v = t.matmul(xn, weight(ctx, p + ".attn.wv"));
        std::vector<typename Tape<T>::Id> heads;
        heads.reserve(static_cast<size_t>(cfg_.n_heads));
        for (int h = 0; h < cfg_.n_heads; ++h) {
            auto qh = t.slice_cols(q, h * dh, dh);
            auto kh = t.slice_cols(k, h * dh, dh);
            auto vh = t.slice_cols(v, h * dh, dh);
            auto scores = t.scale(t.matmul(qh, t.transpose(kh)),
                                  static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
            auto attn = t.softmax_rows(scores, &mask);
            heads.push_back(t.matmul(attn, vh));
        }
        auto mixed = t.matmul(t.concat_cols(heads), ctx.param(p + ".attn.wo"));
        x = t.add(x, mixed);

        auto xn2 = t.layernorm_rows(x, ctx.param(p + ".ln2.g"), ctx.param(p + ".ln2.b"));
        auto h1 = t.gelu_(t.add_rowvec(t.matmul(xn2, ctx.param(p + ".mlp.w1")),
                                       ctx.param(p + ".mlp.b1")));
        auto h2 = t.add_rowvec(t.matmul(h1, ctx.param(p + ".mlp.w2")), ctx.param(p + ".mlp.b2"));
        return t.add(x, h2);
    }

    FusionConfig cfg_;
    const LoraSet *lora_ = nullptr;
};

// ---- sampling ----

struct SamplingParams {
    double temperature = 0.6;
    double top_p = 0.8;
    int max_len = 512;

    void validate() const {
        if (temperature < 0.0) throw InvalidInput("sampling: temperature must be >= 0");
        if (top_p <= 0.0 || top_p > 1.0) throw InvalidInput("sampling: top_p must be in (0, 1]");
        if (max_len < 1) throw InvalidInput("sampling: max_len must be >= 1");
    }
};

/// Hook for test/CLI harnesses to adjust next-token logits.
template <typename T>
using LogitBiasFn = std::function<void(int step, const TokenSequence &seq, std::vector<T> &logits)>;

namespace detail {

inline int sample_nucleus(std::vector<double> logits, double temperature, double top_p, Rng &rng) {
    const int n = static_cast<int>(logits.size());
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (logits[i] > logits[best]) best = i;
    if (temperature <= 0.0) return best; // argmax limit

    double mx = logits[best];
    double sum = 0.0;
    std::vector<double> probs(logits.size());
    for (int i = 0; i < n; ++i) {
        probs[i] = std::exp((logits[i] - mx) / temperature);
        sum += probs[i];
    }
    for (auto &p : probs) p /= sum;

    std::vector<int> order(probs.size());
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });
    double cum = 0.0;
    size_t keep = 0;
    while (keep < order.size()) {
        cum += probs[order[keep]];
        ++keep;
        if (cum >= top_p) break;
    }
    double u = rng.uniform() * cum;
    double acc = 0.0;
    for (size_t i = 0; i < keep; ++i) {
        acc += probs[order[i]];
        if (u < acc) return order[i];
    }
    return order[keep - 1];
}

} // namespace detail

/// Autoregressive nucleus sampling. Returns prompt + generated tokens with the
/// terminating EOS stripped; deterministic for a fixed rng state.
template <typename T>
TokenSequence generate(const ParamStore<T> &store, const FusionLm<T> &lm,
                       const TokenSequence &prompt, const std::map<Modality, Mat<T>> &feats,
                       const SamplingParams &sampling, Rng &rng,
                       const LogitBiasFn<T> &bias = nullptr) {
    sampling.validate();
    if (prompt.empty()) throw InvalidInput("generate: empty prompt");
    const FusionConfig &cfg = lm.config();
    TokenSequence seq = prompt;
    const std::set<std::string> frozen; // evaluation only
    for (int step = 0; step < sampling.max_len; ++step) {
        int win = std::min<int>(static_cast<int>(seq.size()), cfg.max_target_len);
        TokenSequence window(seq.end() - win, seq.end());
        Tape<T> tape;
        TapeCtx<T> ctx{tape, store, &frozen};
        std::map<Modality, typename Tape<T>::Id> feat_ids;
        for (const auto &[m, mat] : feats) feat_ids[m] = tape.constant(mat);
        auto fwd = lm.forward(ctx, window, feat_ids);
        const Mat<T> &logits = tape.val(fwd.logits);
        std::vector<T> last(logits.row_ptr(logits.rows - 1),
                            logits.row_ptr(logits.rows - 1) + logits.cols);
        if (bias) bias(step, seq, last);
        std::vector<double> dl(last.begin(), last.end());
        int next = detail::sample_nucleus(std::move(dl), sampling.temperature, sampling.top_p, rng);
        if (next == cfg.eos_id()) break;
        seq.push_back(next);
    }
    return seq;
}

} // namespace mumu
