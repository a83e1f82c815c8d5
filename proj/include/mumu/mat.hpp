#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mumu/common.hpp"
#include "mumu/rng.hpp"

namespace mumu {

/// Dense row-major matrix. Row vectors are (1 x n).
template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, T(0)) {}
    Mat(int r, int c, std::vector<T> d) : rows(r), cols(c), data(std::move(d)) {
        assert(data.size() == static_cast<size_t>(r) * c);
    }

    static Mat zeros(int r, int c) { return Mat(r, c); }

    static Mat full(int r, int c, T v) {
        Mat m(r, c);
        std::fill(m.data.begin(), m.data.end(), v);
        return m;
    }

    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    static Mat row(std::vector<T> v) {
        int n = static_cast<int>(v.size());
        return Mat(1, n, std::move(v));
    }

    // Xavier-style uniform, scale sqrt(1/fan_in)
    static Mat xavier(int r, int c, Rng &rng) {
        Mat m(r, c);
        T bound = static_cast<T>(std::sqrt(1.0 / std::max(1, r)));
        for (auto &v : m.data) v = static_cast<T>(rng.uniform(-bound, bound));
        return m;
    }

    static Mat randn(int r, int c, Rng &rng, double stddev = 1.0) {
        Mat m(r, c);
        for (auto &v : m.data) v = static_cast<T>(rng.normal(0.0, stddev));
        return m;
    }

    T &operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    const T &operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return data.size(); }

    T *row_ptr(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const T *row_ptr(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    bool same_shape(const Mat &o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (const auto &v : data)
            if (!is_finite(v)) return false;
        return true;
    }

    Mat transposed() const {
        Mat t(cols, rows);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
        return t;
    }
};

// c += a * b, ikj order so the inner loop streams rows of b
template <typename T>
void matmul_acc(const Mat<T> &a, const Mat<T> &b, Mat<T> &c) {
    assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
    for (int i = 0; i < a.rows; ++i) {
        T *crow = c.row_ptr(i);
        const T *arow = a.row_ptr(i);
        for (int k = 0; k < a.cols; ++k) {
            T av = arow[k];
            if (av == T(0)) continue;
            const T *brow = b.row_ptr(k);
            for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
Mat<T> matmul(const Mat<T> &a, const Mat<T> &b) {
    Mat<T> c(a.rows, b.cols);
    matmul_acc(a, b, c);
    return c;
}

// c += a * b^T
template <typename T>
void matmul_bt_acc(const Mat<T> &a, const Mat<T> &b, Mat<T> &c) {
    assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const T *arow = a.row_ptr(i);
        T *crow = c.row_ptr(i);
        for (int j = 0; j < b.rows; ++j) {
            const T *brow = b.row_ptr(j);
            T s = T(0);
            for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            crow[j] += s;
        }
    }
}

// c += a^T * b
template <typename T>
void matmul_at_acc(const Mat<T> &a, const Mat<T> &b, Mat<T> &c) {
    assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const T *arow = a.row_ptr(k);
        const T *brow = b.row_ptr(k);
        for (int i = 0; i < a.cols; ++i) {
            T av = arow[i];
            if (av == T(0)) continue;
            T *crow = c.row_ptr(i);
            for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
T dot(const std::vector<T> &a, const std::vector<T> &b) {
    assert(a.size() == b.size());
    T s = T(0);
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
T frobenius_norm(const Mat<T> &m) {
    T s = T(0);
    for (const auto &v : m.data) s += v * v;
    return std::sqrt(s);
}

} // namespace mumu
