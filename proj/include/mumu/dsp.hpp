#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "mumu/common.hpp"
#include "mumu/wav.hpp"

namespace mumu {
namespace dsp {

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft(std::vector<std::complex<double>> &a, bool inverse = false) {
    size_t n = a.size();
    if (!is_pow2(n)) throw InvalidInput("fft: size must be a power of two");
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                std::complex<double> u = a[i + j];
                std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse)
        for (auto &x : a) x /= static_cast<double>(n);
}

/// power spectrum |X_k|^2 of a real frame, bins 0..n/2
inline std::vector<double> power_spectrum(const std::vector<double> &frame) {
    std::vector<std::complex<double>> buf(frame.begin(), frame.end());
    fft(buf);
    size_t half = frame.size() / 2;
    std::vector<double> p(half + 1);
    for (size_t k = 0; k <= half; ++k) p[k] = std::norm(buf[k]);
    return p;
}

inline std::vector<double> hann_window(size_t n, bool periodic = true) {
    std::vector<double> w(n);
    double denom = periodic ? static_cast<double>(n) : static_cast<double>(n - 1);
    for (size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / denom);
    return w;
}

/// frames x bins power STFT (Hann window)
inline std::vector<std::vector<double>> stft_power(const std::vector<double> &x, size_t n_fft,
                                                   size_t hop) {
    if (x.empty()) throw InvalidInput("stft: empty signal");
    std::vector<double> win = hann_window(n_fft);
    std::vector<std::vector<double>> frames;
    for (size_t start = 0; start + n_fft <= x.size() || start == 0; start += hop) {
        std::vector<double> frame(n_fft, 0.0);
        for (size_t i = 0; i < n_fft && start + i < x.size(); ++i) frame[i] = x[start + i] * win[i];
        frames.push_back(power_spectrum(frame));
        if (start + n_fft >= x.size()) break;
    }
    return frames;
}

/// Dominant frequency in Hz via the peak power bin of a Hann-windowed FFT
/// with parabolic interpolation.
inline double dominant_frequency(const std::vector<double> &x, int sample_rate) {
    if (x.empty()) throw InvalidInput("dominant_frequency: empty signal");
    size_t n = 1;
    while (n * 2 <= x.size() && n < 16384) n *= 2;
    std::vector<double> win = hann_window(n);
    std::vector<double> frame(n);
    for (size_t i = 0; i < n; ++i) frame[i] = x[i] * win[i];
    std::vector<double> p = power_spectrum(frame);
    size_t best = 1;
    for (size_t k = 1; k + 1 < p.size(); ++k)
        if (p[k] > p[best]) best = k;
    double shift = 0.0;
    if (best > 0 && best + 1 < p.size()) {
        double l = std::log(p[best - 1] + 1e-300);
        double c = std::log(p[best] + 1e-300);
        double r = std::log(p[best + 1] + 1e-300);
        double denom = l - 2.0 * c + r;
        if (std::abs(denom) > 1e-12) shift = 0.5 * (l - r) / denom;
    }
    return (static_cast<double>(best) + shift) * sample_rate / static_cast<double>(n);
}

/// Linear-interpolation resample to a new length.
inline std::vector<double> resample_linear(const std::vector<double> &x, size_t out_len) {
    if (x.empty() || out_len == 0) return std::vector<double>(out_len, 0.0);
    std::vector<double> y(out_len);
    if (x.size() == 1) {
        std::fill(y.begin(), y.end(), x[0]);
        return y;
    }
    double step = static_cast<double>(x.size() - 1) / static_cast<double>(out_len - 1 == 0 ? 1 : out_len - 1);
    for (size_t i = 0; i < out_len; ++i) {
        double pos = static_cast<double>(i) * step;
        size_t i0 = static_cast<size_t>(pos);
        if (i0 >= x.size() - 1) {
            y[i] = x.back();
            continue;
        }
        double frac = pos - static_cast<double>(i0);
        y[i] = x[i0] * (1.0 - frac) + x[i0 + 1] * frac;
    }
    return y;
}

inline Waveform sine(double freq_hz, double duration_s, int sample_rate, double amplitude = 0.5,
                     double phase = 0.0) {
    Waveform w;
    w.sample_rate = sample_rate;
    size_t n = static_cast<size_t>(std::llround(duration_s * sample_rate));
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i)
        w.samples[i] = amplitude * std::sin(2.0 * M_PI * freq_hz * i / sample_rate + phase);
    return w;
}

inline double correlation(const std::vector<double> &a, const std::vector<double> &b) {
    size_t n = std::min(a.size(), b.size());
    if (n == 0) return 0.0;
    double sa = 0, sb = 0;
    for (size_t i = 0; i < n; ++i) {
        sa += a[i];
        sb += b[i];
    }
    double ma = sa / n, mb = sb / n;
    double num = 0, da = 0, db = 0;
    for (size_t i = 0; i < n; ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    if (da <= 0 || db <= 0) return 0.0;
    return num / std::sqrt(da * db);
}

} // namespace dsp
} // namespace mumu
