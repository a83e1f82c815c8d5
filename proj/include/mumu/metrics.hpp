#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mumu/common.hpp"
#include "mumu/dsp.hpp"
#include "mumu/mat.hpp"
#include "mumu/rng.hpp"
#include "mumu/wav.hpp"

namespace mumu {

// ---- embeddings ----

struct EmbeddingSet {
    Mat<double> data; // n_samples x dim
    std::string source;
};

// ---- CLAP score ----

/// max(100 * cos(e_m, e_t), 0)
inline double clap_score(const std::vector<double> &e_m, const std::vector<double> &e_t) {
    if (e_m.size() != e_t.size() || e_m.empty())
        throw InvalidInput("clap_score: embeddings must have equal nonzero dims");
    double mm = dot(e_m, e_m), tt = dot(e_t, e_t);
    if (mm <= 0.0 || tt <= 0.0) throw InvalidInput("clap_score: zero-norm embedding");
    double c = dot(e_m, e_t) / std::sqrt(mm * tt);
    return std::max(100.0 * c, 0.0);
}

// ---- log spectral distance ----

struct LsdOptions {
    size_t n_fft = 1024;
    size_t hop = 256;
    double power_floor = 1e-10;
    bool truncate_to_min = true;
};

/// Mean over STFT frames of the RMS difference of log10 power spectra.
/// Unequal lengths are truncated to the shorter wave (flagged via *truncated).
inline double lsd(const std::vector<double> &wave_a, const std::vector<double> &wave_b,
                  int sample_rate, const LsdOptions &opt = {}, bool *truncated = nullptr) {
    (void)sample_rate;
    if (wave_a.empty() || wave_b.empty()) throw InvalidInput("lsd: empty wave");
    if (truncated) *truncated = wave_a.size() != wave_b.size();
    if (wave_a.size() != wave_b.size() && !opt.truncate_to_min)
        throw InvalidInput("lsd: length mismatch");
    size_t n = std::min(wave_a.size(), wave_b.size());
    std::vector<double> a(wave_a.begin(), wave_a.begin() + n);
    std::vector<double> b(wave_b.begin(), wave_b.begin() + n);
    auto sa = dsp::stft_power(a, opt.n_fft, opt.hop);
    auto sb = dsp::stft_power(b, opt.n_fft, opt.hop);
    size_t frames = std::min(sa.size(), sb.size());
    double total = 0.0;
    for (size_t f = 0; f < frames; ++f) {
        double sq = 0.0;
        for (size_t k = 0; k < sa[f].size(); ++k) {
            double la = std::log10(std::max(sa[f][k], opt.power_floor));
            double lb = std::log10(std::max(sb[f][k], opt.power_floor));
            sq += (la - lb) * (la - lb);
        }
        total += std::sqrt(sq / static_cast<double>(sa[f].size()));
    }
    return total / static_cast<double>(frames);
}

// ---- Frechet audio distance ----

namespace detail {

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
inline void symmetric_eigen(Mat<double> a, std::vector<double> &eigenvalues,
                            Mat<double> &eigenvectors) {
    const int n = a.rows;
    eigenvectors = Mat<double>::identity(n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (off < 1e-24) break;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < n; ++k) {
                    double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    double vkp = eigenvectors(k, p), vkq = eigenvectors(k, q);
                    eigenvectors(k, p) = c * vkp - s * vkq;
                    eigenvectors(k, q) = s * vkp + c * vkq;
                }
            }
    }
    eigenvalues.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eigenvalues[static_cast<size_t>(i)] = a(i, i);
}

/// Symmetric PSD square root with negative eigenvalues clipped to 0.
inline Mat<double> matrix_sqrt_psd(const Mat<double> &m) {
    std::vector<double> vals;
    Mat<double> vecs;
    symmetric_eigen(m, vals, vecs);
    const int n = m.rows;
    Mat<double> out(n, n);
    for (int k = 0; k < n; ++k) {
        double s = std::sqrt(std::max(vals[static_cast<size_t>(k)], 0.0));
        if (s == 0.0) continue;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) out(i, j) += s * vecs(i, k) * vecs(j, k);
    }
    return out;
}

inline void mean_and_cov(const Mat<double> &x, std::vector<double> &mean, Mat<double> &cov) {
    const int n = x.rows, d = x.cols;
    mean.assign(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += x(i, j);
    for (auto &v : mean) v /= static_cast<double>(n);
    cov = Mat<double>(d, d);
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < d; ++a) {
            double da = x(i, a) - mean[static_cast<size_t>(a)];
            for (int b = 0; b < d; ++b)
                cov(a, b) += da * (x(i, b) - mean[static_cast<size_t>(b)]);
        }
    for (auto &v : cov.data) v /= static_cast<double>(n - 1);
}

} // namespace detail

/// Frechet distance between Gaussian fits of two embedding sets:
/// |mu_r - mu_g|^2 + tr(S_r + S_g - 2 (S_r S_g)^{1/2}), unbiased covariances,
/// matrix square root by eigendecomposition with negative eigenvalues clipped.
inline double fad(const EmbeddingSet &ref, const EmbeddingSet &gen) {
    if (ref.data.cols != gen.data.cols) throw InvalidInput("fad: dimension mismatch");
    if (ref.data.rows < 2 || gen.data.rows < 2)
        throw InvalidInput("fad: need at least two samples per set");
    std::vector<double> mu_r, mu_g;
    Mat<double> cov_r, cov_g;
    detail::mean_and_cov(ref.data, mu_r, cov_r);
    detail::mean_and_cov(gen.data, mu_g, cov_g);

    double mean_term = 0.0;
    for (size_t i = 0; i < mu_r.size(); ++i) {
        double d = mu_r[i] - mu_g[i];
        mean_term += d * d;
    }

    Mat<double> sqrt_r = detail::matrix_sqrt_psd(cov_r);
    Mat<double> inner = matmul(matmul(sqrt_r, cov_g), sqrt_r);
    for (int i = 0; i < inner.rows; ++i) // symmetrize numerical residue
        for (int j = i + 1; j < inner.cols; ++j) {
            double v = 0.5 * (inner(i, j) + inner(j, i));
            inner(i, j) = v;
            inner(j, i) = v;
        }
    std::vector<double> vals;
    Mat<double> vecs;
    detail::symmetric_eigen(inner, vals, vecs);
    double tr_sqrt = 0.0;
    for (double v : vals) tr_sqrt += std::sqrt(std::max(v, 0.0));

    double trace_term = 0.0;
    for (int i = 0; i < cov_r.rows; ++i) trace_term += cov_r(i, i) + cov_g(i, i);
    return std::max(mean_term + trace_term - 2.0 * tr_sqrt, 0.0);
}

// ---- KL over classifier outputs ----

using WaveClassifier = std::function<std::vector<double>(const Waveform &)>;

/// Mean over pairs of KL(p_ref || p_gen), natural log, probability floor 1e-10.
inline double kl_metric(const std::vector<Waveform> &ref_waves,
                        const std::vector<Waveform> &gen_waves, const WaveClassifier &classifier,
                        double floor = 1e-10) {
    if (ref_waves.size() != gen_waves.size() || ref_waves.empty())
        throw InvalidInput("kl_metric: need paired nonempty lists");
    double total = 0.0;
    for (size_t i = 0; i < ref_waves.size(); ++i) {
        std::vector<double> p = classifier(ref_waves[i]);
        std::vector<double> q = classifier(gen_waves[i]);
        if (p.size() != q.size() || p.empty())
            throw InvalidInput("kl_metric: classifier output dims differ");
        double kl = 0.0;
        for (size_t k = 0; k < p.size(); ++k) {
            double pk = std::max(p[k], floor);
            double qk = std::max(q[k], floor);
            kl += pk * std::log(pk / qk);
        }
        total += kl;
    }
    return total / static_cast<double>(ref_waves.size());
}

// ---- ImageBind-style ranking ----

struct RankingTable {
    int n_models = 0;
    std::vector<std::vector<int>> ranks; // per sample: rank of each model, 1 = best

    void validate() const {
        if (n_models < 2) throw InvalidInput("ranking: need at least two models");
        if (ranks.empty()) throw InvalidInput("ranking: empty table");
        for (const auto &row : ranks) {
            if (static_cast<int>(row.size()) != n_models)
                throw InvalidInput("ranking: row width mismatch");
            std::vector<bool> seen(static_cast<size_t>(n_models) + 1, false);
            for (int r : row) {
                if (r < 1 || r > n_models || seen[static_cast<size_t>(r)])
                    throw InvalidInput("ranking: row is not a permutation of 1..N");
                seen[static_cast<size_t>(r)] = true;
            }
        }
    }
};

/// Per-model score: mean of (N - rank) / (N - 1); 1.0 for rank 1 everywhere.
/// Accumulated in integers so the permutation identity survives rounding.
inline std::vector<double> ib_rank(const RankingTable &table) {
    table.validate();
    std::vector<long long> sums(static_cast<size_t>(table.n_models), 0);
    for (const auto &row : table.ranks)
        for (int m = 0; m < table.n_models; ++m)
            sums[static_cast<size_t>(m)] += table.n_models - row[static_cast<size_t>(m)];
    double denom = static_cast<double>(table.n_models - 1) *
                   static_cast<double>(table.ranks.size());
    std::vector<double> scores(sums.size());
    for (size_t m = 0; m < sums.size(); ++m) scores[m] = static_cast<double>(sums[m]) / denom;
    return scores;
}

/// Ranks each sample's model embeddings by cosine similarity to the anchor.
inline RankingTable rank_by_cosine(const std::vector<std::vector<double>> &anchors,
                                   const std::vector<std::vector<std::vector<double>>> &models) {
    RankingTable table;
    if (models.empty()) throw InvalidInput("rank_by_cosine: no samples");
    table.n_models = static_cast<int>(models.front().size());
    for (size_t s = 0; s < models.size(); ++s) {
        const auto &anchor = anchors[s];
        std::vector<double> sims;
        for (const auto &emb : models[s]) {
            double aa = dot(anchor, anchor), bb = dot(emb, emb);
            sims.push_back(aa > 0 && bb > 0 ? dot(anchor, emb) / std::sqrt(aa * bb) : -1.0);
        }
        std::vector<int> order(sims.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (sims[static_cast<size_t>(a)] != sims[static_cast<size_t>(b)])
                return sims[static_cast<size_t>(a)] > sims[static_cast<size_t>(b)];
            return a < b;
        });
        std::vector<int> row(sims.size());
        for (size_t pos = 0; pos < order.size(); ++pos)
            row[static_cast<size_t>(order[pos])] = static_cast<int>(pos) + 1;
        table.ranks.push_back(std::move(row));
    }
    return table;
}

// ---- text metrics ----

struct TextMetrics {
    double bleu = 0.0;
    double rouge_l = 0.0;
};

namespace detail {

inline std::vector<std::string> ws_tokens(const std::string &s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

inline size_t lcs_length(const std::vector<std::string> &a, const std::vector<std::string> &b) {
    std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

} // namespace detail

/// Corpus BLEU (uniform 1..4-gram weights, brevity penalty, add-epsilon
/// smoothing) and mean sentence-level ROUGE-L F1 over whitespace tokens.
inline TextMetrics text_metrics(const std::vector<std::string> &candidates,
                                const std::vector<std::string> &references,
                                double epsilon = 1e-9) {
    if (candidates.size() != references.size() || candidates.empty())
        throw InvalidInput("text_metrics: need paired nonempty lists");
    const int max_n = 4;
    std::vector<double> matches(max_n, 0.0), totals(max_n, 0.0);
    size_t cand_len = 0, ref_len = 0;
    double rouge_sum = 0.0;

    for (size_t i = 0; i < candidates.size(); ++i) {
        auto cand = detail::ws_tokens(candidates[i]);
        auto ref = detail::ws_tokens(references[i]);
        cand_len += cand.size();
        ref_len += ref.size();
        for (int n = 1; n <= max_n; ++n) {
            std::map<std::vector<std::string>, int> ref_counts;
            for (size_t j = 0; j + n <= ref.size(); ++j)
                ref_counts[std::vector<std::string>(ref.begin() + j, ref.begin() + j + n)]++;
            for (size_t j = 0; j + n <= cand.size(); ++j) {
                totals[static_cast<size_t>(n - 1)] += 1.0;
                std::vector<std::string> gram(cand.begin() + j, cand.begin() + j + n);
                auto it = ref_counts.find(gram);
                if (it != ref_counts.end() && it->second > 0) {
                    matches[static_cast<size_t>(n - 1)] += 1.0;
                    it->second--;
                }
            }
        }
        size_t lcs = detail::lcs_length(cand, ref);
        // F1 at beta=1 reduces to 2*lcs / (|cand| + |ref|)
        if (!cand.empty() && !ref.empty() && lcs > 0)
            rouge_sum += 2.0 * static_cast<double>(lcs) /
                         static_cast<double>(cand.size() + ref.size());
    }

    double log_sum = 0.0;
    for (int n = 0; n < max_n; ++n)
        log_sum += std::log((matches[static_cast<size_t>(n)] + epsilon) /
                            (totals[static_cast<size_t>(n)] + epsilon));
    double bleu = std::exp(log_sum / max_n);
    if (cand_len < ref_len && cand_len > 0)
        bleu *= std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    TextMetrics out;
    out.bleu = bleu;
    out.rouge_l = rouge_sum / static_cast<double>(candidates.size());
    return out;
}

// ---- toy embedders / classifier ----

/// Mel-like band energies through a seeded projection; stands in for the
/// pretrained audio embedders the metrics are defined over.
struct ToyAudioEmbedder {
    uint64_t seed = 0;
    int dim = 16;
    int bands = 24;

    std::vector<double> band_energies(const Waveform &w) const {
        auto frames = dsp::stft_power(w.samples, 512, 256);
        std::vector<double> mean_power(257, 0.0);
        for (const auto &f : frames)
            for (size_t k = 0; k < f.size(); ++k) mean_power[k] += f[k];
        for (auto &v : mean_power) v /= static_cast<double>(frames.size());
        // geometric band edges over [2, nyquist_bin]
        std::vector<double> energies(static_cast<size_t>(bands), 0.0);
        double lo = 2.0, hi = 256.0;
        for (int b = 0; b < bands; ++b) {
            double e0 = lo * std::pow(hi / lo, static_cast<double>(b) / bands);
            double e1 = lo * std::pow(hi / lo, static_cast<double>(b + 1) / bands);
            for (size_t k = static_cast<size_t>(e0); k < static_cast<size_t>(e1) && k < 257; ++k)
                energies[static_cast<size_t>(b)] += mean_power[k];
            energies[static_cast<size_t>(b)] = std::log10(energies[static_cast<size_t>(b)] + 1e-10);
        }
        return energies;
    }

    std::vector<double> embed(const Waveform &w) const {
        auto e = band_energies(w);
        Rng rng = Rng::from(seed, fnv1a64("audio_embed"));
        Mat<double> proj = Mat<double>::randn(bands, dim, rng, 1.0 / std::sqrt(bands));
        std::vector<double> out(static_cast<size_t>(dim), 0.0);
        for (int j = 0; j < dim; ++j)
            for (int b = 0; b < bands; ++b)
                out[static_cast<size_t>(j)] += e[static_cast<size_t>(b)] * proj(b, j);
        return out;
    }

    std::vector<double> classify(const Waveform &w) const {
        auto z = embed(w);
        double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (auto &v : z) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (auto &v : z) v /= sum;
        return z;
    }
};

/// Byte-histogram text embedding matching ToyAudioEmbedder's output dim.
struct ToyTextEmbedder {
    uint64_t seed = 0;
    int dim = 16;

    std::vector<double> embed(const std::string &text) const {
        std::vector<double> counts(256, 0.0);
        for (unsigned char c : text) counts[c] += 1.0;
        Rng rng = Rng::from(seed, fnv1a64("text_embed"));
        Mat<double> proj = Mat<double>::randn(256, dim, rng, 1.0 / 16.0);
        std::vector<double> out(static_cast<size_t>(dim), 0.0);
        for (int j = 0; j < dim; ++j)
            for (int b = 0; b < 256; ++b)
                out[static_cast<size_t>(j)] += counts[static_cast<size_t>(b)] * proj(b, j);
        return out;
    }
};

/// Flattened-tensor summary embedding for image/video anchors.
struct ToyVisualEmbedder {
    uint64_t seed = 0;
    int dim = 16;
    int taps = 64;

    std::vector<double> embed(const std::vector<double> &flat) const {
        if (flat.empty()) throw InvalidInput("visual embed: empty tensor");
        Rng rng = Rng::from(seed, fnv1a64("visual_embed"));
        Mat<double> proj = Mat<double>::randn(taps, dim, rng, 1.0 / 8.0);
        std::vector<double> out(static_cast<size_t>(dim), 0.0);
        for (int j = 0; j < dim; ++j)
            for (int i = 0; i < taps; ++i) {
                double pos = (static_cast<double>(i) + 0.5) / taps *
                             static_cast<double>(flat.size() - 1);
                size_t i0 = static_cast<size_t>(pos);
                double frac = pos - static_cast<double>(i0);
                double v = i0 + 1 < flat.size() ? flat[i0] * (1 - frac) + flat[i0 + 1] * frac
                                                : flat[i0];
                out[static_cast<size_t>(j)] += v * proj(i, j);
            }
        return out;
    }
};

// ---- reports ----

struct MetricReport {
    std::string task;
    std::map<std::string, double> values;
    int sample_count = 0;
    std::vector<std::string> notes;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["task"] = task;
        j["sample_count"] = sample_count;
        j["metrics"] = nlohmann::ordered_json::object();
        for (const auto &[k, v] : values) j["metrics"][k] = v;
        j["notes"] = notes;
        return j;
    }
};

} // namespace mumu
