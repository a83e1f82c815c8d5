#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mumu/model.hpp"

namespace mumu {

struct TrainConfig {
    int stage = 1;
    int epochs = 0; // 0 -> stage default (5, 5, 2)
    double lr = 1e-4;
    int batch_size = 8;
    int lora_rank = 8;
    double lora_alpha = 16.0;
    double penalty_weight = 1.0; // lambda on the audio-token penalty
    double clip_norm = 1.0;
    int max_steps = 0; // 0 -> run all epochs
    uint64_t seed = 0;

    int resolved_epochs() const {
        if (epochs > 0) return epochs;
        return stage == 3 ? 2 : 5;
    }

    void validate() const {
        if (stage < 1 || stage > 3) throw InvalidInput("train: stage must be 1, 2 or 3");
        if (lr <= 0.0) throw InvalidInput("train: lr must be positive");
        if (batch_size < 1) throw InvalidInput("train: batch_size must be >= 1");
        if (lora_rank < 1) throw InvalidInput("train: lora_rank must be >= 1");
    }
};

struct LossBreakdown {
    double ce = 0.0;
    double mse = 0.0;
    double audio_penalty = 0.0;
    double total = 0.0;
};

/// One teacher-forcing example: full token sequence (BOS ... EOS), a loss mask
/// over target token positions, pre-encoded modality features, and the target
/// conditioning embedding for music-emitting examples.
template <typename T = double>
struct TrainExample {
    TokenSequence tokens;
    std::vector<char> loss_mask; // aligned with tokens; true where the token is a target
    std::map<Modality, ModalityEmbedding<T>> feats;
    bool is_music_target = false;
    Mat<T> target_embedding;
};

/// Deterministic stand-in for a decoder's text encoder: normalized seeded
/// projection of the caption's byte-count histogram.
template <typename T = double>
struct ToyTargetEmbedder {
    uint64_t seed = 0;
    int rows = 1;
    int cols = 4;

    Mat<T> embed(const std::string &caption) const {
        std::vector<double> counts(256, 0.0);
        for (unsigned char c : caption) counts[c] += 1.0;
        Rng rng = Rng::from(seed, fnv1a64("target_embedder"));
        Mat<double> w = Mat<double>::randn(256, rows * cols, rng, 1.0 / 16.0);
        Mat<T> out(rows, cols);
        for (int j = 0; j < rows * cols; ++j) {
            double acc = 0.0;
            for (int b = 0; b < 256; ++b) acc += counts[static_cast<size_t>(b)] * w(b, j);
            out.data[static_cast<size_t>(j)] = static_cast<T>(acc);
        }
        T norm = frobenius_norm(out);
        if (norm > T(0))
            for (auto &v : out.data) v /= norm;
        return out;
    }
};

/// Names trainable at each stage. Stage 1: understanding adapters plus prefix
/// queries and gates. Stage 2: the output projector. Stage 3: LoRA deltas plus
/// adapters and output projection. Everything else stays frozen.
template <typename T>
std::set<std::string> trainable_params_for_stage(int stage, const Model<T> &model) {
    std::vector<std::string> prefixes;
    switch (stage) {
    case 1: prefixes = {"adapter.", "fusion.prefix."}; break;
    case 2: prefixes = {"outproj."}; break;
    case 3: prefixes = {"lora.", "adapter.", "fusion.prefix.", "outproj."}; break;
    default: throw InvalidInput("trainable_params_for_stage: stage must be 1..3");
    }
    std::set<std::string> out;
    for (const auto &p : prefixes)
        for (const auto &n : model.store.with_prefix(p)) out.insert(n);
    return out;
}

/// LoRA on the LM attention query/value projections; identity at init.
template <typename T>
void apply_lora(Model<T> &model, const TrainConfig &cfg) {
    model.install_lora(cfg.lora_rank, cfg.lora_alpha / cfg.lora_rank);
}

namespace detail {

template <typename T>
typename Tape<T>::Id audio_hidden_rows(Tape<T> &tape, typename Tape<T>::Id final_hidden,
                                       const TokenSequence &inputs, const FusionConfig &cfg) {
    std::vector<typename Tape<T>::Id> rows;
    for (size_t i = 0; i < inputs.size(); ++i)
        if (cfg.is_audio_token(inputs[i]))
            rows.push_back(tape.slice_rows(final_hidden, static_cast<int>(i), 1));
    if (static_cast<int>(rows.size()) != cfg.n_audio_tokens)
        throw InvalidInput("loss: music example must carry the full audio-token suffix");
    return tape.concat_rows(rows);
}

} // namespace detail

/// Composite loss over a batch: mean token cross-entropy, plus for
/// music-target examples the conditioning-embedding MSE and the audio-token
/// probability-mass penalty weighted by lambda.
template <typename T>
std::pair<LossBreakdown, typename Tape<T>::Id>
compute_loss(const Model<T> &model, TapeCtx<T> &ctx, const std::vector<TrainExample<T>> &batch,
             const TrainConfig &cfg) {
    if (batch.empty()) throw InvalidInput("loss: empty batch");
    auto &t = ctx.tape;
    const FusionConfig &fc = model.cfg.fusion;

    typename Tape<T>::Id ce_sum = t.constant(Mat<T>::zeros(1, 1));
    typename Tape<T>::Id mse_sum = t.constant(Mat<T>::zeros(1, 1));
    typename Tape<T>::Id pen_sum = t.constant(Mat<T>::zeros(1, 1));
    bool any_music = false;

    for (const auto &ex : batch) {
        if (ex.tokens.size() < 2) throw InvalidInput("loss: example needs at least two tokens");
        TokenSequence inputs(ex.tokens.begin(), ex.tokens.end() - 1);
        std::vector<int> targets(ex.tokens.begin() + 1, ex.tokens.end());
        std::vector<char> mask(targets.size(), 1);
        if (!ex.loss_mask.empty()) {
            if (ex.loss_mask.size() != ex.tokens.size())
                throw InvalidInput("loss: mask length mismatch");
            for (size_t i = 0; i < targets.size(); ++i) mask[i] = ex.loss_mask[i + 1];
        }

        std::map<Modality, typename Tape<T>::Id> feats;
        for (const auto &[mod, emb] : ex.feats) feats[mod] = model.adapt(ctx, emb);
        auto fwd = model.lm.forward(ctx, inputs, feats);
        ce_sum = t.add(ce_sum, t.cross_entropy(fwd.logits, targets, mask));

        if (!ex.is_music_target) continue;
        any_music = true;
        if (ex.target_embedding.size() == 0)
            throw InvalidInput("loss: music example missing target embedding");
        auto hidden_k = detail::audio_hidden_rows(t, fwd.final_hidden, inputs, fc);
        auto cond = model.proj.forward(ctx, hidden_k);
        mse_sum = t.add(mse_sum, t.mse(cond, t.constant(ex.target_embedding)));

        // probability mass on the wrong token class at supervised positions
        int n_masked = 0;
        Mat<T> wrong(static_cast<int>(targets.size()), fc.total_vocab());
        for (size_t i = 0; i < targets.size(); ++i) {
            if (!mask[i]) continue;
            ++n_masked;
            bool target_is_audio = fc.is_audio_token(targets[i]);
            for (int j = 0; j < fc.total_vocab(); ++j)
                if (fc.is_audio_token(j) != target_is_audio)
                    wrong(static_cast<int>(i), j) = T(1);
        }
        auto probs = t.softmax_rows(fwd.logits);
        auto mass = t.sum_all(t.hadamard(probs, t.constant(std::move(wrong))));
        pen_sum = t.add(pen_sum, t.scale(mass, T(1) / static_cast<T>(std::max(1, n_masked))));
    }

    const T inv_b = T(1) / static_cast<T>(batch.size());
    auto ce = t.scale(ce_sum, inv_b);
    LossBreakdown bd;
    bd.ce = static_cast<double>(t.val(ce)(0, 0));
    typename Tape<T>::Id total = ce;
    if (any_music) {
        auto mse = t.scale(mse_sum, inv_b);
        auto pen = t.scale(pen_sum, inv_b);
        bd.mse = static_cast<double>(t.val(mse)(0, 0));
        bd.audio_penalty = static_cast<double>(t.val(pen)(0, 0));
        total = t.add(total, t.add(mse, t.scale(pen, static_cast<T>(cfg.penalty_weight))));
    }
    bd.total = static_cast<double>(t.val(total)(0, 0));
    return {bd, total};
}

/// Adam with constant lr and global-norm gradient clipping.
template <typename T>
class AdamOptimizer {
  public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore<T> &store, const std::vector<std::pair<std::string, Mat<T>>> &grads,
              double clip_norm) {
        double sq = 0.0;
        for (const auto &[name, g] : grads)
            for (const auto &v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
        double norm = std::sqrt(sq);
        double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;

        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (const auto &[name, g] : grads) {
            Mat<T> &p = store.at(name);
            auto &st = state_[name];
            if (st.m.size() != g.data.size()) {
                st.m.assign(g.data.size(), 0.0);
                st.v.assign(g.data.size(), 0.0);
            }
            for (size_t i = 0; i < g.data.size(); ++i) {
                double gi = static_cast<double>(g.data[i]) * scale;
                st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * gi;
                st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * gi * gi;
                double update = lr_ * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + eps_);
                p.data[i] -= static_cast<T>(update);
            }
        }
    }

  private:
    struct State {
        std::vector<double> m, v;
    };
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::map<std::string, State> state_;
};

struct StepLoss {
    int step = 0;
    LossBreakdown loss;
};

struct TrainHistory {
    std::vector<StepLoss> steps;

    void save_csv(const std::string &path) const {
        std::ofstream f(path);
        if (!f) throw IoError("history: cannot write " + path);
        f << "step,total,ce,mse,penalty\n";
        for (const auto &s : steps)
            f << s.step << "," << s.loss.total << "," << s.loss.ce << "," << s.loss.mse << ","
              << s.loss.audio_penalty << "\n";
    }
};

/// One training stage: freezes everything outside the stage's parameter set,
/// iterates seeded-shuffled batches with Adam, and records the loss history.
template <typename T>
TrainHistory train_stage(Model<T> &model, const std::vector<TrainExample<T>> &dataset,
                         TrainConfig cfg) {
    cfg.validate();
    if (dataset.empty()) throw InvalidInput("train: empty dataset");
    if (cfg.stage == 3 && !model.lora) apply_lora(model, cfg);

    const std::set<std::string> trainable = trainable_params_for_stage(cfg.stage, model);
    AdamOptimizer<T> adam(cfg.lr);
    TrainHistory history;
    int step = 0;

    for (int epoch = 0; epoch < cfg.resolved_epochs(); ++epoch) {
        std::vector<size_t> order(dataset.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng = Rng::from(cfg.seed, 0xe90c0000ull + static_cast<uint64_t>(epoch));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        for (size_t b = 0; b < order.size(); b += static_cast<size_t>(cfg.batch_size)) {
            std::vector<TrainExample<T>> batch;
            for (size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i)
                batch.push_back(dataset[order[i]]);

            Tape<T> tape;
            TapeCtx<T> ctx{tape, model.store, &trainable};
            auto [bd, total] = compute_loss(model, ctx, batch, cfg);
            tape.backward(total);

            std::vector<std::pair<std::string, Mat<T>>> grads;
            for (const auto &name : trainable)
                if (ctx.touched(name)) grads.emplace_back(name, ctx.grad(name));
            adam.step(model.store, grads, cfg.clip_norm);

            history.steps.push_back({step, bd});
            ++step;
            if (cfg.max_steps > 0 && step >= cfg.max_steps) return history;
        }
    }
    return history;
}

} // namespace mumu
