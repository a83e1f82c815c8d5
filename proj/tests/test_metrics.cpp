#include <catch2/catch_amalgamated.hpp>

#include "mumu/dsp.hpp"
#include "mumu/metrics.hpp"

#include "testutil.hpp"

using namespace mumu;

// ---- CLAP score ----

TEST_CASE("clap score formula cases") {
    std::vector<double> x = {3.0, 4.0};
    REQUIRE(clap_score(x, x) == 100.0);

    std::vector<double> e1 = {1.0, 0.0}, e2 = {0.0, 1.0};
    REQUIRE(clap_score(e1, e2) == 0.0);

    std::vector<double> neg = {-3.0, -4.0};
    REQUIRE(clap_score(x, neg) == 0.0); // clamped at zero

    std::vector<double> half = {0.5, std::sqrt(3.0) / 2.0};
    REQUIRE(clap_score(e1, half) == Catch::Approx(50.0).margin(1e-9));

    std::vector<double> zero = {0.0, 0.0};
    REQUIRE_THROWS_AS(clap_score(e1, zero), InvalidInput);
    std::vector<double> longer = {1.0, 2.0, 3.0};
    REQUIRE_THROWS_AS(clap_score(e1, longer), InvalidInput);
}

TEST_CASE("clap score is invariant under positive rescaling") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(8), b(8);
        for (auto &v : a) v = rng.normal();
        for (auto &v : b) v = rng.normal();
        double base = clap_score(a, b);
        std::vector<double> a2 = a, b2 = b;
        for (auto &v : a2) v *= 7.5;
        for (auto &v : b2) v *= 0.01;
        REQUIRE(clap_score(a2, b2) == Catch::Approx(base).margin(1e-9));
        REQUIRE(base >= 0.0);
    }
}

// ---- LSD ----

TEST_CASE("lsd of identical waves is zero") {
    Waveform w = dsp::sine(300.0, 0.5, 16000, 0.4);
    REQUIRE(lsd(w.samples, w.samples, 16000) == 0.0);
}

TEST_CASE("lsd of a 10x amplitude scale is exactly two decades") {
    Rng rng(5);
    std::vector<double> a(4096);
    for (auto &v : a) v = 0.3 * rng.uniform(-1.0, 1.0);
    std::vector<double> b(a.size());
    for (size_t i = 0; i < a.size(); ++i) b[i] = 10.0 * a[i];
    REQUIRE(lsd(a, b, 16000) == Catch::Approx(2.0).margin(1e-6));
}

TEST_CASE("lsd matches a naive full-enumeration oracle") {
    Rng rng(6);
    std::vector<double> a(3000), b(3000);
    for (auto &v : a) v = rng.uniform(-0.5, 0.5);
    for (auto &v : b) v = rng.uniform(-0.5, 0.5);
    double fast = lsd(a, b, 16000);

    // oracle: naive DFT STFT with the same frame/hop/floor policy
    auto frames_of = [&](const std::vector<double> &x) {
        std::vector<std::vector<double>> frames;
        std::vector<double> win = dsp::hann_window(1024);
        for (size_t start = 0; start + 1024 <= x.size() || start == 0; start += 256) {
            std::vector<double> frame(1024, 0.0);
            for (size_t i = 0; i < 1024 && start + i < x.size(); ++i)
                frame[i] = x[start + i] * win[i];
            frames.push_back(testutil::naive_power_spectrum(frame));
            if (start + 1024 >= x.size()) break;
        }
        return frames;
    };
    auto fa = frames_of(a), fb = frames_of(b);
    double total = 0.0;
    for (size_t f = 0; f < fa.size(); ++f) {
        double sq = 0.0;
        for (size_t k = 0; k < fa[f].size(); ++k) {
            double la = std::log10(std::max(fa[f][k], 1e-10));
            double lb = std::log10(std::max(fb[f][k], 1e-10));
            sq += (la - lb) * (la - lb);
        }
        total += std::sqrt(sq / static_cast<double>(fa[f].size()));
    }
    double slow = total / static_cast<double>(fa.size());
    REQUIRE(fast == Catch::Approx(slow).margin(1e-9));
}

TEST_CASE("lsd flags truncation and rejects empty input") {
    std::vector<double> a(2000, 0.1), b(1500, 0.1);
    bool truncated = false;
    lsd(a, b, 16000, {}, &truncated);
    REQUIRE(truncated);
    std::vector<double> empty;
    REQUIRE_THROWS_AS(lsd(empty, a, 16000), InvalidInput);
}

// ---- FAD ----

namespace {
EmbeddingSet set_of(const Mat<double> &m, const char *tag) { return {m, tag}; }
} // namespace

TEST_CASE("fad of a set against itself vanishes") {
    Rng rng(7);
    Mat<double> x = Mat<double>::randn(50, 6, rng);
    REQUIRE(fad(set_of(x, "a"), set_of(x, "b")) < 1e-8);
}

TEST_CASE("fad matches the scalar two-point formula") {
    // ref {0, 2}: mean 1, unbiased var 2; gen {1, 2}: mean 1.5, var 0.5
    Mat<double> ref(2, 1, {0.0, 2.0});
    Mat<double> gen(2, 1, {1.0, 2.0});
    double expect = 0.25 + std::pow(std::sqrt(2.0) - std::sqrt(0.5), 2.0);
    REQUIRE(expect == Catch::Approx(0.75).margin(1e-12));
    REQUIRE(fad(set_of(ref, "r"), set_of(gen, "g")) == Catch::Approx(expect).margin(1e-9));
}

TEST_CASE("fad approaches the squared mean shift for equal covariances") {
    Rng rng(8);
    const int n = 10000, dim = 4;
    std::vector<double> delta = {1.0, 0.5, -0.3, 0.2};
    double delta_sq = 0.0;
    for (double d : delta) delta_sq += d * d;
    Mat<double> ref(n, dim), gen(n, dim);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j) {
            ref(i, j) = rng.normal();
            gen(i, j) = rng.normal() + delta[static_cast<size_t>(j)];
        }
    double v = fad(set_of(ref, "r"), set_of(gen, "g"));
    REQUIRE(v == Catch::Approx(delta_sq).epsilon(0.10));
}

TEST_CASE("fad is symmetric and nonnegative on random pairs") {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        int dim = 2 + static_cast<int>(rng.below(4));
        int n = 8 + static_cast<int>(rng.below(16));
        Mat<double> a = Mat<double>::randn(n, dim, rng, 1.0 + rng.uniform());
        Mat<double> b = Mat<double>::randn(n, dim, rng, 1.0 + rng.uniform());
        double ab = fad(set_of(a, "a"), set_of(b, "b"));
        double ba = fad(set_of(b, "b"), set_of(a, "a"));
        REQUIRE(ab >= 0.0);
        REQUIRE(ab == Catch::Approx(ba).margin(1e-8));
    }
}

TEST_CASE("fad validates dims and sample counts") {
    Rng rng(10);
    Mat<double> a = Mat<double>::randn(4, 3, rng);
    Mat<double> b = Mat<double>::randn(4, 2, rng);
    REQUIRE_THROWS_AS(fad(set_of(a, "a"), set_of(b, "b")), InvalidInput);
    Mat<double> one = Mat<double>::randn(1, 3, rng);
    REQUIRE_THROWS_AS(fad(set_of(a, "a"), set_of(one, "b")), InvalidInput);
}

// ---- KL ----

namespace {
WaveClassifier fixed_classifier(std::vector<std::vector<double>> outputs) {
    auto idx = std::make_shared<size_t>(0);
    return [outputs, idx](const Waveform &) {
        auto &i = *idx;
        auto out = outputs[i % outputs.size()];
        ++i;
        return out;
    };
}
} // namespace

TEST_CASE("kl of identical classifications is zero") {
    Waveform w = dsp::sine(220.0, 0.3, 16000, 0.3);
    ToyAudioEmbedder emb{3, 8, 16};
    double v = kl_metric({w, w}, {w, w}, [&](const Waveform &x) { return emb.classify(x); });
    REQUIRE(v == 0.0);
}

TEST_CASE("kl with a floored one-hot matches the hand value") {
    Waveform w = dsp::sine(220.0, 0.1, 16000, 0.3);
    // classifier returns p for the ref, q for the gen
    auto cls = fixed_classifier({{1.0, 0.0}, {0.5, 0.5}});
    double v = kl_metric({w}, {w}, cls);
    double expect = 1.0 * std::log(1.0 / 0.5) + 1e-10 * std::log(1e-10 / 0.5);
    REQUIRE(v == Catch::Approx(expect).margin(1e-12));
    REQUIRE(v == Catch::Approx(std::log(2.0)).margin(1e-8));
}

TEST_CASE("kl matches a naive oracle on random pairs") {
    Rng rng(11);
    ToyAudioEmbedder emb{12, 10, 16};
    for (int trial = 0; trial < 100; ++trial) {
        Waveform a = dsp::sine(150.0 + 400.0 * rng.uniform(), 0.12, 16000, 0.4);
        Waveform b = dsp::sine(150.0 + 400.0 * rng.uniform(), 0.12, 16000, 0.4);
        double fast = kl_metric({a}, {b}, [&](const Waveform &x) { return emb.classify(x); });
        std::vector<double> p = emb.classify(a), q = emb.classify(b);
        double slow = 0.0;
        for (size_t k = 0; k < p.size(); ++k) {
            double pk = std::max(p[k], 1e-10), qk = std::max(q[k], 1e-10);
            slow += pk * std::log(pk / qk);
        }
        REQUIRE(fast == Catch::Approx(slow).margin(1e-9));
    }
}

TEST_CASE("kl rejects unpaired lists") {
    Waveform w = dsp::sine(220.0, 0.1, 16000, 0.3);
    ToyAudioEmbedder emb{3, 8, 16};
    std::vector<Waveform> one = {w}, two = {w, w};
    REQUIRE_THROWS_AS(
        kl_metric(one, two, [&](const Waveform &x) { return emb.classify(x); }), InvalidInput);
}

// ---- IB rank ----

TEST_CASE("ib rank endpoints for two models") {
    RankingTable t;
    t.n_models = 2;
    t.ranks = {{1, 2}, {1, 2}, {1, 2}};
    auto scores = ib_rank(t);
    REQUIRE(scores[0] == 1.0);
    REQUIRE(scores[1] == 0.0);
}

TEST_CASE("ib rank hand case over three samples") {
    RankingTable t;
    t.n_models = 3;
    t.ranks = {{1, 2, 3}, {2, 1, 3}, {3, 1, 2}};
    auto scores = ib_rank(t);
    REQUIRE(scores[0] == Catch::Approx(0.5).margin(1e-12)); // ranks 1,2,3 -> (2+1+0)/(3*2)
}

TEST_CASE("ib rank column scores sum to N/2") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        RankingTable t;
        t.n_models = 2 + static_cast<int>(rng.below(5));
        int samples = 1 + static_cast<int>(rng.below(10));
        for (int s = 0; s < samples; ++s) {
            std::vector<int> row(static_cast<size_t>(t.n_models));
            for (int m = 0; m < t.n_models; ++m) row[static_cast<size_t>(m)] = m + 1;
            for (size_t i = row.size(); i > 1; --i) std::swap(row[i - 1], row[rng.below(i)]);
            t.ranks.push_back(std::move(row));
        }
        auto scores = ib_rank(t);
        double sum = 0.0;
        for (double s : scores) sum += s;
        REQUIRE(sum == Catch::Approx(t.n_models / 2.0).margin(1e-12));
    }
    // with a power-of-two divisor the identity is exact
    RankingTable t;
    t.n_models = 3;
    t.ranks = {{1, 2, 3}, {3, 1, 2}};
    auto scores = ib_rank(t);
    REQUIRE(scores[0] + scores[1] + scores[2] == 1.5);
}

TEST_CASE("ib rank validates permutations") {
    RankingTable bad;
    bad.n_models = 3;
    bad.ranks = {{1, 1, 2}};
    REQUIRE_THROWS_AS(ib_rank(bad), InvalidInput);
    RankingTable small;
    small.n_models = 1;
    small.ranks = {{1}};
    REQUIRE_THROWS_AS(ib_rank(small), InvalidInput);
}

TEST_CASE("rank_by_cosine orders models by anchor similarity") {
    std::vector<std::vector<double>> anchors = {{1.0, 0.0}};
    std::vector<std::vector<std::vector<double>>> models = {
        {{0.9, 0.1}, {0.0, 1.0}, {0.5, 0.5}}};
    RankingTable t = rank_by_cosine(anchors, models);
    REQUIRE(t.ranks[0][0] == 1);
    REQUIRE(t.ranks[0][2] == 2);
    REQUIRE(t.ranks[0][1] == 3);
}

// ---- text metrics ----

TEST_CASE("text metrics are exact for identical corpora") {
    std::vector<std::string> cands = {"the quick brown fox", "jumps over the dog"};
    TextMetrics tm = text_metrics(cands, cands);
    REQUIRE(tm.bleu == 1.0);
    REQUIRE(tm.rouge_l == 1.0);
}

TEST_CASE("text metrics vanish on disjoint vocabulary") {
    std::vector<std::string> cands = {"alpha beta gamma delta"};
    std::vector<std::string> refs = {"one two three four"};
    TextMetrics tm = text_metrics(cands, refs);
    REQUIRE(tm.bleu < 1e-6);
    REQUIRE(tm.rouge_l == 0.0);
}

TEST_CASE("rouge-l hand case is exactly 0.8") {
    std::vector<std::string> cands = {"the cat sat"};
    std::vector<std::string> refs = {"the cat"};
    TextMetrics tm = text_metrics(cands, refs);
    REQUIRE(tm.rouge_l == 0.8);
}

TEST_CASE("bleu applies the brevity penalty") {
    // perfect 1-gram precision but half length: BP = exp(1 - 2) = e^-1
    std::vector<std::string> cands = {"a b"};
    std::vector<std::string> refs = {"a b c d"};
    TextMetrics tm = text_metrics(cands, refs);
    REQUIRE(tm.bleu < 0.6); // without BP the smoothed score would exceed this
    std::vector<std::string> empty;
    REQUIRE_THROWS_AS(text_metrics(empty, empty), InvalidInput);
}

// ---- toy embedders ----

TEST_CASE("toy audio embedder separates distinct tones deterministically") {
    ToyAudioEmbedder emb{21, 12, 20};
    Waveform a = dsp::sine(220.0, 0.4, 16000, 0.4);
    Waveform b = dsp::sine(880.0, 0.4, 16000, 0.4);
    auto ea1 = emb.embed(a);
    auto ea2 = emb.embed(a);
    auto eb = emb.embed(b);
    REQUIRE(ea1 == ea2);
    REQUIRE(ea1 != eb);
    auto p = emb.classify(a);
    double sum = 0.0;
    for (double v : p) {
        REQUIRE(v >= 0.0);
        sum += v;
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("metric report serializes task, counts and values") {
    MetricReport r;
    r.task = "edit";
    r.sample_count = 3;
    r.values["fad"] = 1.5;
    r.values["kl"] = 0.2;
    r.values["lsd"] = 0.9;
    auto j = r.to_json();
    REQUIRE(j["task"] == "edit");
    REQUIRE(j["sample_count"] == 3);
    REQUIRE(j["metrics"].size() == 3);
    REQUIRE(j["metrics"]["lsd"] == 0.9);
}
