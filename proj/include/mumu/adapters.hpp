#pragma once

#include <string>
#include <vector>

#include "mumu/encoders.hpp"
#include "mumu/param_store.hpp"

namespace mumu {

/// Which pieces of the understanding adapter are active (ablation lattice).
enum class AdapterVariant { projection_only, dense, rnn, attn_rnn, full };

inline const char *variant_name(AdapterVariant v) {
    switch (v) {
    case AdapterVariant::projection_only: return "projection_only";
    case AdapterVariant::dense: return "dense";
    case AdapterVariant::rnn: return "rnn";
    case AdapterVariant::attn_rnn: return "attn_rnn";
    case AdapterVariant::full: return "full";
    }
    return "?";
}

inline AdapterVariant variant_from_name(const std::string &s) {
    if (s == "projection_only") return AdapterVariant::projection_only;
    if (s == "dense") return AdapterVariant::dense;
    if (s == "rnn") return AdapterVariant::rnn;
    if (s == "attn_rnn") return AdapterVariant::attn_rnn;
    if (s == "full") return AdapterVariant::full;
    throw InvalidInput("unknown adapter variant: " + s);
}

struct AdapterConfig {
    int d_model = 4096;
    int conv_kernel = 3;
    int conv_stride = 2;
    int rnn_hidden = 0;   // 0 -> encoder feat_dim
    int dense_hidden = 0; // 0 -> 2 * d_model
    AdapterVariant variant = AdapterVariant::full;
    uint64_t seed = 0;

    int resolved_rnn_hidden(int feat_dim) const { return rnn_hidden > 0 ? rnn_hidden : feat_dim; }
    int resolved_dense_hidden() const { return dense_hidden > 0 ? dense_hidden : 2 * d_model; }

    bool has_conv() const {
        return variant == AdapterVariant::rnn || variant == AdapterVariant::attn_rnn ||
               variant == AdapterVariant::full;
    }
    bool has_rnn() const { return has_conv(); }
    bool has_attention() const {
        return variant == AdapterVariant::attn_rnn || variant == AdapterVariant::full;
    }
    bool has_dense() const {
        return variant == AdapterVariant::dense || variant == AdapterVariant::rnn ||
               variant == AdapterVariant::full;
    }

    void validate() const {
        if (d_model < 1) throw InvalidInput("adapter: d_model must be >= 1");
        if (conv_kernel < 1 || conv_stride < 1)
            throw InvalidInput("adapter: conv kernel/stride must be >= 1");
    }
};

template <typename T = double>
struct AdapterOutput {
    Modality kind;
    std::vector<T> vector; // length d_model
};

/// Softmax(Q K^T / sqrt(d)) with Q = A Wq, K = A Wk. Rows are probability
/// distributions.
template <typename T>
Mat<T> attention_weights(const Mat<T> &a, const Mat<T> &wq, const Mat<T> &wk) {
    int d = a.cols;
    if (a.rows < 1) throw InvalidInput("attention_weights: empty sequence");
    if (wq.rows != d || wq.cols != d || wk.rows != d || wk.cols != d)
        throw InvalidInput("attention_weights: weight dims must be (d x d) matching input");
    Mat<T> q = matmul(a, wq);
    Mat<T> k = matmul(a, wk);
    Mat<T> scores(a.rows, a.rows);
    matmul_bt_acc(q, k, scores);
    T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    for (auto &v : scores.data) v *= inv;
    for (int i = 0; i < scores.rows; ++i) {
        T mx = scores(i, 0);
        for (int j = 1; j < scores.cols; ++j) mx = std::max(mx, scores(i, j));
        T sum = T(0);
        for (int j = 0; j < scores.cols; ++j) {
            scores(i, j) = std::exp(scores(i, j) - mx);
            sum += scores(i, j);
        }
        for (int j = 0; j < scores.cols; ++j) scores(i, j) /= sum;
    }
    return scores;
}

/// Multi-modal understanding adapter: maps an encoder embedding sequence to a
/// single d_model vector. Temporal modalities run conv -> gated RNN ->
/// attention -> pooled dense head; the static (image) path skips RNN and
/// attention. Parameters exist per the configured variant whether or not the
/// static path uses them.
template <typename T = double>
class Adapter {
  public:
    Adapter() = default;

    Adapter(ParamStore<T> &store, std::string prefix, int feat_dim, const AdapterConfig &cfg,
            Rng rng)
        : prefix_(std::move(prefix)), cfg_(cfg), feat_dim_(feat_dim) {
        cfg_.validate();
        const int dh = cfg_.resolved_rnn_hidden(feat_dim);
        const int dd = cfg_.resolved_dense_hidden();
        hidden_dim_ = dh;
        if (cfg_.has_conv()) {
            store.add(prefix_ + ".conv.w",
                      Mat<T>::xavier(cfg_.conv_kernel * feat_dim, feat_dim, rng));
            store.add(prefix_ + ".conv.b", Mat<T>::zeros(1, feat_dim));
        }
        if (cfg_.has_rnn()) {
            for (const char *g : {"z", "r", "h"}) {
                store.add(prefix_ + ".rnn.w" + g, Mat<T>::xavier(feat_dim, dh, rng));
                store.add(prefix_ + ".rnn.u" + g, Mat<T>::xavier(dh, dh, rng));
                store.add(prefix_ + ".rnn.b" + g, Mat<T>::zeros(1, dh));
            }
        }
        if (cfg_.has_attention()) {
            store.add(prefix_ + ".attn.wq", Mat<T>::xavier(dh, dh, rng));
            store.add(prefix_ + ".attn.wk", Mat<T>::xavier(dh, dh, rng));
            store.add(prefix_ + ".attn.wv", Mat<T>::xavier(dh, dh, rng));
        }
        const int pooled = pooled_dim();
        if (cfg_.has_dense()) {
            store.add(prefix_ + ".dense.w1", Mat<T>::xavier(pooled, dd, rng));
            store.add(prefix_ + ".dense.b1", Mat<T>::zeros(1, dd));
            store.add(prefix_ + ".dense.w2", Mat<T>::xavier(dd, pooled, rng));
            store.add(prefix_ + ".dense.b2", Mat<T>::zeros(1, pooled));
        }
        store.add(prefix_ + ".proj.w", Mat<T>::xavier(pooled, cfg_.d_model, rng));
        store.add(prefix_ + ".proj.b", Mat<T>::zeros(1, cfg_.d_model));
    }

    const std::string &prefix() const { return prefix_; }
    const AdapterConfig &config() const { return cfg_; }
    int feat_dim() const { return feat_dim_; }

    /// conv -> RNN -> attention -> value-weighted sum -> mean pool -> dense ->
    /// projection, per the configured variant. Returns a (1 x d_model) node.
    typename Tape<T>::Id forward_temporal(TapeCtx<T> &ctx, typename Tape<T>::Id emb) const {
        auto &t = ctx.tape;
        auto x = emb;
        if (ctx.tape.val(x).cols != feat_dim_)
            throw InvalidInput(prefix_ + ": embedding feat dim mismatch");
        if (cfg_.has_conv()) x = conv(ctx, x);
        typename Tape<T>::Id pooled;
        if (cfg_.has_rnn()) {
            auto states = gru(ctx, x);
            if (cfg_.has_attention()) {
                auto scores = attention(ctx, states);
                auto wsum = t.matmul(scores, t.matmul(states, ctx.param(prefix_ + ".attn.wv")));
                pooled = t.mean_rows(wsum);
            } else {
                pooled = t.mean_rows(states);
            }
        } else {
            pooled = t.mean_rows(x);
        }
        return head(ctx, pooled);
    }

    /// image path: conv -> mean pool -> dense -> projection; RNN/attention
    /// parameters never enter the graph.
    typename Tape<T>::Id forward_static(TapeCtx<T> &ctx, typename Tape<T>::Id emb) const {
        auto &t = ctx.tape;
        auto x = emb;
        if (ctx.tape.val(x).cols != feat_dim_)
            throw InvalidInput(prefix_ + ": embedding feat dim mismatch");
        if (cfg_.has_conv()) x = conv(ctx, x);
        return head(ctx, t.mean_rows(x));
    }

    typename Tape<T>::Id forward(TapeCtx<T> &ctx, Modality kind, typename Tape<T>::Id emb) const {
        return kind == Modality::image ? forward_static(ctx, emb) : forward_temporal(ctx, emb);
    }

  private:
    typename Tape<T>::Id conv(TapeCtx<T> &ctx, typename Tape<T>::Id x) const {
        auto &t = ctx.tape;
        int pad = cfg_.conv_kernel / 2;
        auto cols = t.im2col(x, cfg_.conv_kernel, cfg_.conv_stride, pad);
        return t.add_rowvec(t.matmul(cols, ctx.param(prefix_ + ".conv.w")),
                            ctx.param(prefix_ + ".conv.b"));
    }

    typename Tape<T>::Id gru(TapeCtx<T> &ctx, typename Tape<T>::Id x) const {
        auto &t = ctx.tape;
        const int steps = t.val(x).rows;
        auto wz = ctx.param(prefix_ + ".rnn.wz"), uz = ctx.param(prefix_ + ".rnn.uz"),
             bz = ctx.param(prefix_ + ".rnn.bz");
        auto wr = ctx.param(prefix_ + ".rnn.wr"), ur = ctx.param(prefix_ + ".rnn.ur"),
             br = ctx.param(prefix_ + ".rnn.br");
        auto wh = ctx.param(prefix_ + ".rnn.wh"), uh = ctx.param(prefix_ + ".rnn.uh"),
             bh = ctx.param(prefix_ + ".rnn.bh");
        auto h = t.constant(Mat<T>::zeros(1, hidden_dim_));
        std::vector<typename Tape<T>::Id> states;
        states.reserve(static_cast<size_t>(steps));
        for (int i = 0; i < steps; ++i) {
            auto xt = t.slice_rows(x, i, 1);
            auto z = t.sigmoid_(t.add(t.add(t.matmul(xt, wz), t.matmul(h, uz)), bz));
            auto r = t.sigmoid_(t.add(t.add(t.matmul(xt, wr), t.matmul(h, ur)), br));
            auto hc = t.tanh_(
                t.add(t.add(t.matmul(xt, wh), t.matmul(t.hadamard(r, h), uh)), bh));
            h = t.add(h, t.hadamard(z, t.sub(hc, h)));
            states.push_back(h);
        }
        return t.concat_rows(states);
    }

    typename Tape<T>::Id attention(TapeCtx<T> &ctx, typename Tape<T>::Id states) const {
        auto &t = ctx.tape;
        auto q = t.matmul(states, ctx.param(prefix_ + ".attn.wq"));
        auto k = t.matmul(states, ctx.param(prefix_ + ".attn.wk"));
        auto logits = t.scale(t.matmul(q, t.transpose(k)),
                              static_cast<T>(1.0 / std::sqrt(static_cast<double>(hidden_dim_))));
        return t.softmax_rows(logits);
    }

    typename Tape<T>::Id head(TapeCtx<T> &ctx, typename Tape<T>::Id pooled) const {
        auto &t = ctx.tape;
        auto x = pooled;
        if (cfg_.has_dense()) {
            x = t.gelu_(t.add(t.matmul(x, ctx.param(prefix_ + ".dense.w1")),
                              ctx.param(prefix_ + ".dense.b1")));
            x = t.add(t.matmul(x, ctx.param(prefix_ + ".dense.w2")),
                      ctx.param(prefix_ + ".dense.b2"));
        }
        return t.add(t.matmul(x, ctx.param(prefix_ + ".proj.w")), ctx.param(prefix_ + ".proj.b"));
    }

    int pooled_dim() const { return cfg_.has_rnn() ? hidden_dim_ : feat_dim_; }

    std::string prefix_;
    AdapterConfig cfg_;
    int feat_dim_ = 0;
    int hidden_dim_ = 0;
};

/// Spec-level wrapper for temporal modalities (music, video).
template <typename T = double>
AdapterOutput<T> adapt_temporal(const ModalityEmbedding<T> &emb, const ParamStore<T> &store,
                                const Adapter<T> &adapter) {
    if (emb.kind != Modality::music && emb.kind != Modality::video)
        throw InvalidInput("adapt_temporal: modality must be music or video");
    Tape<T> tape;
    TapeCtx<T> ctx{tape, store};
    std::set<std::string> none;
    ctx.trainable = &none;
    auto out = adapter.forward_temporal(ctx, tape.constant(emb.data));
    const Mat<T> &v = tape.val(out);
    return {emb.kind, v.data};
}

/// Spec-level wrapper for the static (image) modality.
template <typename T = double>
AdapterOutput<T> adapt_static(const ModalityEmbedding<T> &emb, const ParamStore<T> &store,
                              const Adapter<T> &adapter) {
    if (emb.kind != Modality::image)
        throw InvalidInput("adapt_static: modality must be image");
    Tape<T> tape;
    TapeCtx<T> ctx{tape, store};
    std::set<std::string> none;
    ctx.trainable = &none;
    auto out = adapter.forward_static(ctx, tape.constant(emb.data));
    const Mat<T> &v = tape.val(out);
    return {emb.kind, v.data};
}

} // namespace mumu
