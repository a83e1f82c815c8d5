#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mumu/common.hpp"
#include "mumu/dsp.hpp"
#include "mumu/wav.hpp"

namespace mumu {

struct WsolaParams {
    int frame = 512;     // analysis/synthesis frame length
    int hop = 256;       // synthesis hop
    int tolerance = 128; // search window around the nominal analysis position
};

namespace detail {

// normalized cross-correlation over zero-padded signal windows
inline double ncc_padded(const std::vector<double> &x, int a, int b, int n) {
    const int len = static_cast<int>(x.size());
    double num = 0, da = 0, db = 0;
    for (int i = 0; i < n; ++i) {
        double va = (a + i >= 0 && a + i < len) ? x[static_cast<size_t>(a + i)] : 0.0;
        double vb = (b + i >= 0 && b + i < len) ? x[static_cast<size_t>(b + i)] : 0.0;
        num += va * vb;
        da += va * va;
        db += vb * vb;
    }
    if (da <= 1e-20 || db <= 1e-20) return 0.0;
    return num / std::sqrt(da * db);
}

} // namespace detail

/// WSOLA time stretch: changes duration by duration_factor while keeping
/// pitch. Output length is round(len * factor) up to one synthesis frame.
inline Waveform wsola_stretch(const Waveform &in, double duration_factor,
                              const WsolaParams &params = {}) {
    if (duration_factor <= 0.0) throw InvalidInput("wsola: duration factor must be positive");
    const int N = params.frame, Hs = params.hop, tol = params.tolerance;
    const int L = static_cast<int>(in.samples.size());
    if (L < 2 * N) throw InvalidInput("wsola: wave shorter than two frames");

    const std::vector<double> win = dsp::hann_window(static_cast<size_t>(N));
    const std::vector<double> &x = in.samples;
    const int out_len = static_cast<int>(std::llround(L * duration_factor));

    std::vector<double> acc(static_cast<size_t>(out_len + N), 0.0);
    std::vector<double> wsum(static_cast<size_t>(out_len + N), 0.0);

    int prev_start = -1;
    for (int k = 0; k * Hs < out_len; ++k) {
        int nominal = static_cast<int>(std::llround(k * Hs / duration_factor));
        nominal = std::min(nominal, L - 1);
        int start = nominal;
        if (prev_start >= 0 && tol > 0) {
            // best alignment against the natural continuation of the previous
            // frame; reads past the ends see zeros
            int ref = prev_start + Hs;
            int lo = std::max(nominal - tol, 0);
            int hi = nominal + tol;
            double best = -2.0;
            for (int s = lo; s <= hi; ++s) {
                double c = detail::ncc_padded(x, s, ref, N);
                if (c > best) {
                    best = c;
                    start = s;
                }
            }
        }
        for (int i = 0; i < N; ++i) {
            double v = (start + i >= 0 && start + i < L) ? x[static_cast<size_t>(start + i)] : 0.0;
            acc[static_cast<size_t>(k * Hs + i)] += v * win[i];
            wsum[static_cast<size_t>(k * Hs + i)] += win[i];
        }
        prev_start = start;
    }

    Waveform out;
    out.sample_rate = in.sample_rate;
    out.samples.resize(static_cast<size_t>(out_len));
    for (int i = 0; i < out_len; ++i)
        out.samples[static_cast<size_t>(i)] =
            wsum[i] > 1e-9 ? acc[i] / wsum[i] : 0.0;
    return out;
}

/// Pitch shift by cents without changing duration: linear resample by
/// 2^(cents/1200), then WSOLA back to the original length.
inline Waveform pitch_shift(const Waveform &in, double cents, const WsolaParams &params = {}) {
    const double ratio = std::pow(2.0, cents / 1200.0);
    const size_t L = in.samples.size();
    if (L < 2 * static_cast<size_t>(params.frame))
        throw InvalidInput("pitch_shift: wave shorter than two frames");
    size_t mid_len = static_cast<size_t>(std::llround(static_cast<double>(L) / ratio));
    Waveform mid;
    mid.sample_rate = in.sample_rate;
    mid.samples = dsp::resample_linear(in.samples, mid_len);
    double back = static_cast<double>(L) / static_cast<double>(mid_len);
    Waveform out = wsola_stretch(mid, back, params);
    out.samples.resize(L, 0.0); // trim/pad the odd frame of drift
    return out;
}

} // namespace mumu
