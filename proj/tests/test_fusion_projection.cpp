#include <catch2/catch_amalgamated.hpp>

#include "mumu/fusion_lm.hpp"
#include "mumu/output_projection.hpp"
#include "mumu/param_store.hpp"

#include "testutil.hpp"

using namespace mumu;

namespace {

FusionConfig toy_fusion(int n_layers = 6, int block_len = 2, int d_model = 16, int n_heads = 2,
                        int vocab = 24, int k = 4) {
    FusionConfig cfg;
    cfg.n_layers = n_layers;
    cfg.block_len = block_len;
    cfg.d_model = d_model;
    cfg.n_heads = n_heads;
    cfg.vocab_size = vocab;
    cfg.n_audio_tokens = k;
    cfg.max_target_len = 48;
    return cfg;
}

struct LmFixture {
    ParamStore<double> store;
    FusionLm<double> lm;

    explicit LmFixture(const FusionConfig &cfg, uint64_t seed = 7)
        : lm(store, cfg, Rng(seed)) {}

    Mat<double> logits(const TokenSequence &tokens,
                       const std::map<Modality, Mat<double>> &feats = {},
                       FusionProbe<double> *probe = nullptr) {
        Tape<double> tape;
        TapeCtx<double> ctx(tape, store);
        std::map<Modality, Tape<double>::Id> ids;
        for (const auto &[m, v] : feats) ids[m] = tape.constant(v);
        auto fwd = lm.forward(ctx, tokens, ids, probe);
        return tape.val(fwd.logits);
    }
};

TokenSequence random_tokens(int len, int vocab, Rng &rng) {
    TokenSequence t(static_cast<size_t>(len));
    for (auto &id : t) id = static_cast<int>(rng.below(static_cast<uint64_t>(vocab)));
    return t;
}

} // namespace

// ---- forward contracts ----

TEST_CASE("zero-gate injection is a bitwise identity") {
    LmFixture fx(toy_fusion());
    Rng rng(3);
    TokenSequence tokens = random_tokens(9, 24, rng);
    std::map<Modality, Mat<double>> feats;
    feats[Modality::music] = Mat<double>::randn(1, 16, rng);
    feats[Modality::image] = Mat<double>::randn(1, 16, rng);
    Mat<double> with = fx.logits(tokens, feats);
    Mat<double> without = fx.logits(tokens);
    REQUIRE(with.data == without.data);
}

TEST_CASE("prefix queries act even with no modality present") {
    LmFixture fx(toy_fusion());
    fx.store.at("fusion.prefix.gate0")(0, 0) = 0.5; // open one gate
    TokenSequence tokens = {1, 2, 3, 4};
    Mat<double> before = fx.logits(tokens);
    fx.store.at("fusion.prefix.p0")(0, 3) += 1.0;
    Mat<double> after = fx.logits(tokens);
    REQUIRE(before.data != after.data);
}

TEST_CASE("injection blocks tile the trailing layers in order") {
    FusionConfig cfg = toy_fusion(6, 2);
    auto blocks = cfg.injection_blocks();
    REQUIRE(blocks[0] == std::array<int, 2>{0, 2});
    REQUIRE(blocks[1] == std::array<int, 2>{2, 4});
    REQUIRE(blocks[2] == std::array<int, 2>{4, 6});

    FusionConfig paper = toy_fusion(32, 6, 16, 2);
    auto pb = paper.injection_blocks();
    REQUIRE(pb[0] == std::array<int, 2>{14, 20});
    REQUIRE(pb[1] == std::array<int, 2>{20, 26});
    REQUIRE(pb[2] == std::array<int, 2>{26, 32});
    REQUIRE(paper.block_of_layer(13) == -1);
    REQUIRE(paper.block_of_layer(14) == 0);
    REQUIRE(paper.block_of_layer(31) == 2);

    // probe records one injection per layer of every block
    LmFixture fx(cfg);
    FusionProbe<double> probe;
    fx.logits({1, 2, 3}, {}, &probe);
    REQUIRE(probe.injections.size() == 6);
    for (int i = 0; i < 6; ++i) REQUIRE(probe.injections[static_cast<size_t>(i)].first == i);
}

TEST_CASE("absent modalities fall back to the prefix query alone") {
    FusionConfig cfg = toy_fusion();
    LmFixture fx(cfg);
    for (int b = 0; b < 3; ++b)
        fx.store.at("fusion.prefix.gate" + std::to_string(b))(0, 0) = 0.25 * (b + 1);

    Rng rng(5);
    Mat<double> music_feat = Mat<double>::randn(1, 16, rng);
    FusionProbe<double> probe;
    fx.logits({1, 2, 3, 4, 5}, {{Modality::music, music_feat}}, &probe);

    // hand-built reference: gate_b * (P_b [+ A_music for the music block])
    for (const auto &[layer, injected] : probe.injections) {
        int b = cfg.block_of_layer(layer);
        double gate = fx.store.at("fusion.prefix.gate" + std::to_string(b))(0, 0);
        const Mat<double> &p = fx.store.at("fusion.prefix.p" + std::to_string(b));
        Modality m = FusionConfig::kInjectionOrder[static_cast<size_t>(b)];
        for (int j = 0; j < 16; ++j) {
            double expect = gate * (p(0, j) + (m == Modality::music ? music_feat(0, j) : 0.0));
            REQUIRE(injected(0, j) == Catch::Approx(expect).margin(1e-15));
        }
    }
}

TEST_CASE("causality: logits at t ignore tokens after t") {
    FusionConfig cfg = toy_fusion();
    LmFixture fx(cfg);
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        TokenSequence tokens = random_tokens(10, 24, rng);
        int cut = 1 + static_cast<int>(rng.below(8));
        TokenSequence perturbed = tokens;
        int pos = cut + static_cast<int>(rng.below(static_cast<uint64_t>(10 - cut)));
        perturbed[static_cast<size_t>(pos)] =
            (perturbed[static_cast<size_t>(pos)] + 1 + static_cast<int>(rng.below(22))) % 24;
        Mat<double> a = fx.logits(tokens);
        Mat<double> b = fx.logits(perturbed);
        for (int t = 0; t < cut; ++t)
            for (int j = 0; j < a.cols; ++j) REQUIRE(a(t, j) == b(t, j));
    }
}

TEST_CASE("logit rows softmax to valid distributions") {
    LmFixture fx(toy_fusion());
    Rng rng(13);
    Mat<double> logits = fx.logits(random_tokens(8, 24, rng));
    for (int i = 0; i < logits.rows; ++i) {
        double mx = logits(i, 0);
        for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, logits(i, j));
        double sum = 0.0;
        for (int j = 0; j < logits.cols; ++j) sum += std::exp(logits(i, j) - mx);
        double total = 0.0;
        for (int j = 0; j < logits.cols; ++j) total += std::exp(logits(i, j) - mx) / sum;
        REQUIRE(total == Catch::Approx(1.0).margin(1e-5));
    }
}

TEST_CASE("forward validates inputs") {
    LmFixture fx(toy_fusion());
    REQUIRE_THROWS_AS(fx.logits({}), InvalidInput);
    REQUIRE_THROWS_AS(fx.logits({99}), InvalidInput);      // beyond vocab + K
    REQUIRE_THROWS_AS(fx.logits(TokenSequence(60, 1)), InvalidInput); // > max_target_len
}

TEST_CASE("fusion gradients match finite differences on a tiny model") {
    FusionConfig cfg = toy_fusion(3, 1, 8, 2, 12, 2);
    cfg.max_target_len = 16;
    LmFixture fx(cfg, 17);
    Rng rng(18);
    TokenSequence tokens = {1, 5, 3, 7, 2};
    std::vector<int> targets = {5, 3, 7, 2, 11};
    std::vector<char> mask = {1, 1, 1, 1, 1};
    Mat<double> feat = Mat<double>::randn(1, 8, rng);
    fx.store.at("fusion.prefix.gate1")(0, 0) = 0.3; // exercise injection backward

    std::vector<std::string> names = fx.store.names();
    auto eval = [&](std::map<std::string, Mat<double>> *grads = nullptr) {
        Tape<double> tape;
        TapeCtx<double> ctx(tape, fx.store);
        std::map<Modality, Tape<double>::Id> feats{{Modality::image, tape.constant(feat)}};
        auto fwd = fx.lm.forward(ctx, tokens, feats);
        auto loss = tape.cross_entropy(fwd.logits, targets, mask);
        if (grads) {
            tape.backward(loss);
            for (const auto &n : names) (*grads)[n] = ctx.grad(n);
        }
        return tape.val(loss)(0, 0);
    };

    std::map<std::string, Mat<double>> grads;
    eval(&grads);
    std::vector<std::shared_ptr<Mat<double>>> handles;
    std::vector<Mat<double>> analytic;
    for (const auto &n : names) {
        handles.push_back(std::const_pointer_cast<Mat<double>>(fx.store.handle(n)));
        analytic.push_back(grads[n]);
    }
    auto res = testutil::finite_difference_check(
        handles, [&]() { return eval(); }, analytic, 1e-3, 1e-6, /*richardson=*/true);
    INFO("max rel err " << res.max_rel_err);
    REQUIRE(res.max_rel_err < 1e-4);
}

// ---- tokenizer and audio-token plumbing ----

TEST_CASE("tokenizer maps audio markers to reserved top ids") {
    FusionConfig cfg;
    cfg.vocab_size = 260;
    cfg.n_audio_tokens = 8;
    TokenSequence ids = tokenize_text("hi [AUD_0][AUD_7]", cfg);
    REQUIRE(ids.size() == 5);
    REQUIRE(ids[0] == 'h');
    REQUIRE(ids[1] == 'i');
    REQUIRE(ids[2] == ' ');
    REQUIRE(ids[3] == cfg.audio_token_id(0));
    REQUIRE(ids[4] == cfg.audio_token_id(7));
    REQUIRE(detokenize(ids, cfg) == "hi [AUD_0][AUD_7]");

    // out-of-range marker falls back to byte tokens
    TokenSequence overflow = tokenize_text("[AUD_8]", cfg);
    REQUIRE(overflow.size() == 7);
}

TEST_CASE("detect_audio_tokens requires the exact ordered suffix") {
    FusionConfig cfg;
    cfg.vocab_size = 260;
    cfg.n_audio_tokens = 8;
    auto aud = [&](int i) { return cfg.audio_token_id(i); };

    TokenSequence text_only = tokenize_text("plain text", cfg);
    REQUIRE_FALSE(detect_audio_tokens(text_only, cfg).has_value());

    TokenSequence good = tokenize_text("song time ", cfg);
    for (int i = 0; i < 8; ++i) good.push_back(aud(i));
    auto pos = detect_audio_tokens(good, cfg);
    REQUIRE(pos.has_value());
    REQUIRE(pos->size() == 8);
    REQUIRE(pos->front() == static_cast<int>(good.size()) - 8);
    REQUIRE(pos->back() == static_cast<int>(good.size()) - 1);

    TokenSequence misplaced = {aud(3)};
    TokenSequence tail = tokenize_text("text text", cfg);
    misplaced.insert(misplaced.end(), tail.begin(), tail.end());
    REQUIRE_FALSE(detect_audio_tokens(misplaced, cfg).has_value());

    TokenSequence shuffled = tokenize_text("x", cfg);
    for (int i = 7; i >= 0; --i) shuffled.push_back(aud(i));
    REQUIRE_FALSE(detect_audio_tokens(shuffled, cfg).has_value());
}

// ---- sampling ----

TEST_CASE("sampling defaults follow the evaluation protocol") {
    SamplingParams s;
    REQUIRE(s.temperature == 0.6);
    REQUIRE(s.top_p == 0.8);
    REQUIRE(s.max_len == 512);
}

TEST_CASE("argmax mode is deterministic") {
    LmFixture fx(toy_fusion());
    SamplingParams s;
    s.temperature = 0.0;
    s.max_len = 10;
    Rng r1(1), r2(2); // rng must not matter at temperature 0
    TokenSequence a = generate(fx.store, fx.lm, {1, 2}, {}, s, r1);
    TokenSequence b = generate(fx.store, fx.lm, {1, 2}, {}, s, r2);
    REQUIRE(a == b);
}

TEST_CASE("sampling is reproducible under a fixed rng seed") {
    LmFixture fx(toy_fusion());
    SamplingParams s;
    s.max_len = 12;
    Rng r1(9), r2(9);
    TokenSequence a = generate(fx.store, fx.lm, {3, 4}, {}, s, r1);
    TokenSequence b = generate(fx.store, fx.lm, {3, 4}, {}, s, r2);
    REQUIRE(a == b);
}

TEST_CASE("a logit-bias harness forces the audio-token suffix") {
    FusionConfig cfg = toy_fusion();
    LmFixture fx(cfg);
    SamplingParams s;
    s.max_len = 20;
    const int k = cfg.n_audio_tokens;
    LogitBiasFn<double> bias = [&cfg, k](int step, const TokenSequence &seq,
                                         std::vector<double> &logits) {
        if (step < 3) return;
        int emitted = 0;
        for (auto it = seq.rbegin(); it != seq.rend() && cfg.is_audio_token(*it); ++it) ++emitted;
        int target = emitted < k ? cfg.audio_token_id(emitted) : cfg.eos_id();
        logits[static_cast<size_t>(target)] += 1e9;
    };
    Rng rng(4);
    TokenSequence out = generate(fx.store, fx.lm, {1, 2}, {}, s, rng, bias);
    auto pos = detect_audio_tokens(out, cfg);
    REQUIRE(pos.has_value());
    REQUIRE(pos->size() == static_cast<size_t>(k));
}

TEST_CASE("sampling validates its parameters") {
    SamplingParams s;
    s.temperature = -0.1;
    REQUIRE_THROWS_AS(s.validate(), InvalidInput);
    s.temperature = 0.5;
    s.top_p = 0.0;
    REQUIRE_THROWS_AS(s.validate(), InvalidInput);
    s.top_p = 1.5;
    REQUIRE_THROWS_AS(s.validate(), InvalidInput);
}

// ---- output projection ----

namespace {

struct ProjFixture {
    ParamStore<double> store;
    OutputProjection<double> proj;

    ProjFixture(DecoderTarget target, int k, int d_model, int toy_cols = 4, uint64_t seed = 5)
        : proj(make(store, target, k, d_model, toy_cols, seed)) {}

    static OutputProjection<double> make(ParamStore<double> &store, DecoderTarget target, int k,
                                         int d_model, int toy_cols, uint64_t seed) {
        ProjectionConfig pc;
        pc.target = target;
        pc.n_audio_tokens = k;
        pc.d_model = d_model;
        pc.toy_cols = toy_cols;
        return OutputProjection<double>(store, pc, Rng(seed));
    }
};

} // namespace

TEST_CASE("projection toy target echoes configured shape") {
    ProjFixture fx(DecoderTarget::toy, 8, 16, 4);
    Rng rng(6);
    auto cond = fx.proj.project(fx.store, Mat<double>::randn(8, 16, rng));
    REQUIRE(cond.data.rows == 1);
    REQUIRE(cond.data.cols == 4);
    REQUIRE(cond.data.all_finite());

    REQUIRE_THROWS_AS(fx.proj.project(fx.store, Mat<double>::randn(7, 16, rng)), InvalidInput);
    REQUIRE_THROWS_AS(fx.proj.project(fx.store, Mat<double>::randn(8, 12, rng)), InvalidInput);
}

TEST_CASE("projection shape table holds over random inputs") {
    Rng rng(7);
    ProjFixture fx(DecoderTarget::toy, 8, 24, 6);
    for (int trial = 0; trial < 20; ++trial) {
        auto cond = fx.proj.project(fx.store, Mat<double>::randn(8, 24, rng, 2.0));
        REQUIRE(cond.data.rows == 1);
        REQUIRE(cond.data.cols == 6);
        REQUIRE(cond.data.all_finite());
    }
}

TEST_CASE("projection gradients match finite differences") {
    ProjFixture fx(DecoderTarget::toy, 4, 10, 3, 9);
    Rng rng(10);
    auto hidden = std::make_shared<Mat<double>>(Mat<double>::randn(4, 10, rng, 0.8));
    Mat<double> probe_w = Mat<double>::randn(1, 3, rng);

    std::vector<std::string> names = fx.store.names();
    auto eval = [&](std::map<std::string, Mat<double>> *grads = nullptr,
                    Mat<double> *hidden_grad = nullptr) {
        Tape<double> tape;
        TapeCtx<double> ctx(tape, fx.store);
        auto h = tape.leaf(hidden);
        auto out = fx.proj.forward(ctx, h);
        auto loss = tape.sum_all(tape.hadamard(out, tape.constant(probe_w)));
        if (grads) {
            tape.backward(loss);
            for (const auto &n : names) (*grads)[n] = ctx.grad(n);
            if (hidden_grad) *hidden_grad = tape.grad_of(h);
        }
        return tape.val(loss)(0, 0);
    };

    std::map<std::string, Mat<double>> grads;
    Mat<double> hidden_grad;
    eval(&grads, &hidden_grad);
    std::vector<std::shared_ptr<Mat<double>>> handles = {hidden};
    std::vector<Mat<double>> analytic = {hidden_grad};
    for (const auto &n : names) {
        handles.push_back(std::const_pointer_cast<Mat<double>>(fx.store.handle(n)));
        analytic.push_back(grads[n]);
    }
    auto res = testutil::finite_difference_check(
        handles, [&]() { return eval(); }, analytic, 1e-4);
    INFO("max rel err " << res.max_rel_err);
    REQUIRE(res.max_rel_err < 1e-4);
}

// ---- decode stub ----

TEST_CASE("decode stub is deterministic and length-exact") {
    Rng rng(12);
    ConditioningEmbedding<double> cond{DecoderTarget::toy, Mat<double>::randn(1, 4, rng)};
    Waveform a = decode_stub(cond, 2.0, 7);
    Waveform b = decode_stub(cond, 2.0, 7);
    REQUIRE(a.samples == b.samples);
    REQUIRE(a.samples.size() == 32000); // 2 s at 16 kHz
    REQUIRE_THROWS_AS(decode_stub(cond, 0.0, 7), InvalidInput);
}

TEST_CASE("different conditioning moves the dominant frequency") {
    Rng rng(13);
    ConditioningEmbedding<double> a{DecoderTarget::toy, Mat<double>::randn(1, 4, rng)};
    ConditioningEmbedding<double> b{DecoderTarget::toy, Mat<double>::randn(1, 4, rng)};
    Waveform wa = decode_stub(a, 1.0, 7);
    Waveform wb = decode_stub(b, 1.0, 7);
    double fa = testutil::naive_dominant_frequency(wa.samples, wa.sample_rate);
    double fb = testutil::naive_dominant_frequency(wb.samples, wb.sample_rate);
    REQUIRE(std::abs(fa - fb) > 5.0);
}
