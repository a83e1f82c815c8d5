#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mumu/mat.hpp"
#include "mumu/tape.hpp"

namespace testutil {

// Slow textbook DFT; the independent oracle for everything FFT-backed.
inline std::vector<double> naive_power_spectrum(const std::vector<double> &frame) {
    size_t n = frame.size();
    std::vector<double> p(n / 2 + 1);
    for (size_t k = 0; k <= n / 2; ++k) {
        double re = 0, im = 0;
        for (size_t i = 0; i < n; ++i) {
            double ang = -2.0 * M_PI * static_cast<double>(k * i) / static_cast<double>(n);
            re += frame[i] * std::cos(ang);
            im += frame[i] * std::sin(ang);
        }
        p[k] = re * re + im * im;
    }
    return p;
}

// Dominant frequency by naive DFT over a Hann-windowed prefix.
inline double naive_dominant_frequency(const std::vector<double> &x, int sample_rate,
                                       size_t window = 4096) {
    size_t n = std::min(window, x.size());
    std::vector<double> frame(n);
    for (size_t i = 0; i < n; ++i)
        frame[i] = x[i] * (0.5 - 0.5 * std::cos(2.0 * M_PI * i / static_cast<double>(n)));
    std::vector<double> p = naive_power_spectrum(frame);
    size_t best = 1;
    for (size_t k = 1; k + 1 < p.size(); ++k)
        if (p[k] > p[best]) best = k;
    double l = std::log(p[best - 1] + 1e-300);
    double c = std::log(p[best] + 1e-300);
    double r = std::log(p[best + 1] + 1e-300);
    double denom = l - 2.0 * c + r;
    double shift = std::abs(denom) > 1e-12 ? 0.5 * (l - r) / denom : 0.0;
    return (static_cast<double>(best) + shift) * sample_rate / static_cast<double>(n);
}

// Central finite differences on a scalar function of named parameters.
// Returns max relative error between analytic and numeric gradients.
struct GradCheck {
    double max_rel_err = 0.0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

inline GradCheck finite_difference_check(
    std::vector<std::shared_ptr<mumu::Mat<double>>> params,
    const std::function<double()> &eval,
    const std::vector<mumu::Mat<double>> &analytic_grads, double step = 1e-3,
    double denom_floor = 1e-6, bool richardson = false) {
    GradCheck res;
    for (size_t p = 0; p < params.size(); ++p) {
        auto &m = *std::const_pointer_cast<mumu::Mat<double>>(params[p]);
        for (size_t i = 0; i < m.data.size(); ++i) {
            double keep = m.data[i];
            auto central = [&](double h) {
                m.data[i] = keep + h;
                double up = eval();
                m.data[i] = keep - h;
                double dn = eval();
                m.data[i] = keep;
                return (up - dn) / (2.0 * h);
            };
            double num = central(step);
            // cancel the h^2 truncation term where the graph is stiff
            if (richardson) num = (4.0 * central(step / 2.0) - num) / 3.0;
            double ana = analytic_grads[p].data[i];
            double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), denom_floor});
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_analytic = ana;
                res.worst_numeric = num;
            }
        }
    }
    return res;
}

} // namespace testutil
