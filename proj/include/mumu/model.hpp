#pragma once

#include <map>
#include <optional>
#include <string>

#include "mumu/adapters.hpp"
#include "mumu/archive.hpp"
#include "mumu/encoders.hpp"
#include "mumu/fusion_lm.hpp"
#include "mumu/kvconfig.hpp"
#include "mumu/output_projection.hpp"
#include "mumu/param_store.hpp"

namespace mumu {

/// One configuration object for the assembled pipeline. d_model is shared by
/// the adapters, the language model and the output projection.
struct ModelConfig {
    EncoderConfig encoder;
    AdapterConfig adapter; // d_model/seed overwritten from the fields below
    FusionConfig fusion;
    DecoderTarget decoder_target = DecoderTarget::toy;
    int toy_cond_cols = 4;
    uint64_t seed = 0;

    static ModelConfig toy() {
        ModelConfig mc;
        mc.encoder.scale = Scale::toy;
        mc.fusion.n_layers = 6;
        mc.fusion.block_len = 2;
        mc.fusion.d_model = 32;
        mc.fusion.n_heads = 4;
        mc.fusion.max_target_len = 128;
        mc.adapter.dense_hidden = 32;
        return mc;
    }

    void apply_shared_fields() {
        adapter.d_model = fusion.d_model;
        adapter.seed = seed;
        encoder.seed = seed;
        fusion.seed = seed;
    }

    KvConfig to_kv() const {
        KvConfig kv;
        kv.set("scale", encoder.scale == Scale::full ? "full" : "toy");
        kv.set_int("toy_music_seq", encoder.toy_music.seq_len);
        kv.set_int("toy_music_feat", encoder.toy_music.feat_dim);
        kv.set_int("toy_image_seq", encoder.toy_image.seq_len);
        kv.set_int("toy_image_feat", encoder.toy_image.feat_dim);
        kv.set_int("toy_video_seq", encoder.toy_video.seq_len);
        kv.set_int("toy_video_feat", encoder.toy_video.feat_dim);
        kv.set_int("conv_kernel", adapter.conv_kernel);
        kv.set_int("conv_stride", adapter.conv_stride);
        kv.set_int("rnn_hidden", adapter.rnn_hidden);
        kv.set_int("dense_hidden", adapter.dense_hidden);
        kv.set("adapter_variant", variant_name(adapter.variant));
        kv.set_int("n_layers", fusion.n_layers);
        kv.set_int("block_len", fusion.block_len);
        kv.set_int("d_model", fusion.d_model);
        kv.set_int("n_heads", fusion.n_heads);
        kv.set_int("vocab_size", fusion.vocab_size);
        kv.set_int("n_audio_tokens", fusion.n_audio_tokens);
        kv.set_int("max_target_len", fusion.max_target_len);
        kv.set("decoder_target", decoder_target_name(decoder_target));
        kv.set_int("toy_cond_cols", toy_cond_cols);
        kv.set_int("seed", static_cast<int64_t>(seed));
        return kv;
    }

    static ModelConfig from_kv(const KvConfig &kv) {
        ModelConfig mc;
        mc.encoder.scale = kv.get("scale", "toy") == "full" ? Scale::full : Scale::toy;
        mc.encoder.toy_music = {static_cast<int>(kv.get_int("toy_music_seq", 6)),
                                static_cast<int>(kv.get_int("toy_music_feat", 16))};
        mc.encoder.toy_image = {static_cast<int>(kv.get_int("toy_image_seq", 4)),
                                static_cast<int>(kv.get_int("toy_image_feat", 8))};
        mc.encoder.toy_video = {static_cast<int>(kv.get_int("toy_video_seq", 5)),
                                static_cast<int>(kv.get_int("toy_video_feat", 12))};
        mc.adapter.conv_kernel = static_cast<int>(kv.get_int("conv_kernel", 3));
        mc.adapter.conv_stride = static_cast<int>(kv.get_int("conv_stride", 2));
        mc.adapter.rnn_hidden = static_cast<int>(kv.get_int("rnn_hidden", 0));
        mc.adapter.dense_hidden = static_cast<int>(kv.get_int("dense_hidden", 0));
        mc.adapter.variant = variant_from_name(kv.get("adapter_variant", "full"));
        mc.fusion.n_layers = static_cast<int>(kv.get_int("n_layers", 6));
        mc.fusion.block_len = static_cast<int>(kv.get_int("block_len", 2));
        mc.fusion.d_model = static_cast<int>(kv.get_int("d_model", 32));
        mc.fusion.n_heads = static_cast<int>(kv.get_int("n_heads", 4));
        mc.fusion.vocab_size = static_cast<int>(kv.get_int("vocab_size", 260));
        mc.fusion.n_audio_tokens = static_cast<int>(kv.get_int("n_audio_tokens", 8));
        mc.fusion.max_target_len = static_cast<int>(kv.get_int("max_target_len", 128));
        mc.decoder_target = decoder_target_from_name(kv.get("decoder_target", "toy"));
        mc.toy_cond_cols = static_cast<int>(kv.get_int("toy_cond_cols", 4));
        mc.seed = static_cast<uint64_t>(kv.get_int("seed", 0));
        mc.apply_shared_fields();
        return mc;
    }
};

/// Assembled pipeline: per-modality adapters, the fusion LM, the output
/// projection and any LoRA deltas, all sharing one parameter store.
template <typename T = double>
class Model {
  public:
    ModelConfig cfg;
    ParamStore<T> store;
    std::map<Modality, Adapter<T>> adapters;
    FusionLm<T> lm;
    OutputProjection<T> proj;
    std::optional<LoraSet> lora;

    static Model init(ModelConfig mc) {
        mc.apply_shared_fields();
        Model m;
        m.cfg = mc;
        for (Modality mod : {Modality::music, Modality::image, Modality::video}) {
            std::string prefix = std::string("adapter.") + modality_name(mod);
            int feat = mc.encoder.dims(mod).feat_dim;
            m.adapters[mod] = Adapter<T>(m.store, prefix, feat, mc.adapter,
                                         Rng::from(mc.seed, fnv1a64(prefix)));
        }
        m.lm = FusionLm<T>(m.store, mc.fusion, Rng::from(mc.seed, fnv1a64("fusion")));
        ProjectionConfig pc;
        pc.target = mc.decoder_target;
        pc.n_audio_tokens = mc.fusion.n_audio_tokens;
        pc.d_model = mc.fusion.d_model;
        pc.toy_cols = mc.toy_cond_cols;
        pc.seed = mc.seed;
        m.proj = OutputProjection<T>(m.store, pc, Rng::from(mc.seed, fnv1a64("outproj")));
        return m;
    }

    void save_checkpoint(const std::string &path, int stage) const {
        TensorArchive a;
        a.set_stage(stage);
        a.meta["config"] = cfg.to_kv().to_text();
        if (lora) {
            a.meta["lora_rank"] = std::to_string(lora->rank);
            a.meta["lora_scaling"] = std::to_string(lora->scaling);
        }
        for (const auto &name : store.names()) a.put(name, store.at(name));
        a.save(path);
    }

    /// Rebuilds the model from the archive's embedded config, then overwrites
    /// every parameter with the stored tensors.
    static Model load_checkpoint(const std::string &path, int *stage_out = nullptr) {
        TensorArchive a = TensorArchive::load(path);
        auto it = a.meta.find("config");
        if (it == a.meta.end()) throw IoError("checkpoint missing config metadata: " + path);
        Model m = init(ModelConfig::from_kv(KvConfig::parse(it->second)));
        if (a.meta.count("lora_rank")) {
            LoraSet ls;
            ls.rank = std::stoi(a.meta.at("lora_rank"));
            ls.scaling = std::stod(a.meta.at("lora_scaling"));
            m.install_lora(ls.rank, ls.scaling, /*init_from_archive=*/&a);
        }
        for (const auto &name : m.store.names()) {
            if (!a.has(name)) throw IoError("checkpoint missing tensor: " + name);
            Mat<T> v = a.get<T>(name);
            Mat<T> &dst = m.store.at(name);
            if (!v.same_shape(dst))
                throw IoError("checkpoint tensor shape mismatch for " + name);
            dst = std::move(v);
        }
        if (stage_out) *stage_out = a.stage();
        return m;
    }

    /// Adds LoRA A/B parameters for the attention query/value projections and
    /// routes the fusion forward through them. A is small random, B is zero,
    /// so the forward is unchanged until training moves B.
    void install_lora(int rank, double scaling, const TensorArchive *init_from_archive = nullptr) {
        if (lora) throw InvalidInput("lora already applied");
        LoraSet ls;
        ls.rank = rank;
        ls.scaling = scaling;
        Rng rng = Rng::from(cfg.seed, fnv1a64("lora"));
        for (int l = 0; l < cfg.fusion.n_layers; ++l) {
            for (const char *wn : {".attn.wq", ".attn.wv"}) {
                std::string base = FusionLm<T>::layer_prefix(l) + wn;
                const Mat<T> &w = store.at(base);
                std::string an = "lora." + base + ".a";
                std::string bn = "lora." + base + ".b";
                if (init_from_archive) {
                    // placeholder shapes; load_checkpoint overwrites values
                    store.add(an, Mat<T>::zeros(rank, w.rows));
                    store.add(bn, Mat<T>::zeros(w.cols, rank));
                } else {
                    store.add(an, Mat<T>::xavier(rank, w.rows, rng));
                    store.add(bn, Mat<T>::zeros(w.cols, rank));
                }
                ls.targets[base] = {an, bn};
            }
        }
        lora = std::move(ls);
        lm.set_lora(&*lora);
    }

    /// Encoder embedding -> adapter output node for a tape forward.
    typename Tape<T>::Id adapt(TapeCtx<T> &ctx, const ModalityEmbedding<T> &emb) const {
        auto id = ctx.tape.constant(emb.data);
        return adapters.at(emb.kind).forward(ctx, emb.kind, id);
    }

    /// Gradient-free adapter pass for generation.
    Mat<T> adapt_eval(const ModalityEmbedding<T> &emb) const {
        Tape<T> tape;
        std::set<std::string> frozen;
        TapeCtx<T> ctx{tape, store, &frozen};
        auto id = adapt(ctx, emb);
        return tape.val(id);
    }

    Model(const Model &) = delete;
    Model &operator=(const Model &) = delete;
    Model(Model &&other) noexcept { *this = std::move(other); }
    Model &operator=(Model &&other) noexcept {
        cfg = std::move(other.cfg);
        store = std::move(other.store);
        adapters = std::move(other.adapters);
        lm = std::move(other.lm);
        proj = std::move(other.proj);
        lora = std::move(other.lora);
        lm.set_lora(lora ? &*lora : nullptr);
        return *this;
    }

  private:
    Model() = default;
};

} // namespace mumu
