#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "mumu/mat.hpp"

namespace mumu {

/// Reverse-mode autodiff over Mat<T>. A Tape is built per forward pass and
/// discarded after backward(); node ids are topologically ordered by
/// construction. Leaves flagged requires_grad=false never receive gradient,
/// which is what the stage-freeze checks rely on.
template <typename T>
class Tape {
  public:
    using Id = int;

    Id leaf(std::shared_ptr<const Mat<T>> m, bool requires_grad = true) {
        Node n;
        n.ext = std::move(m);
        n.needs_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size()) - 1;
    }

    Id constant(Mat<T> m) {
        Node n;
        n.val = std::move(m);
        n.needs_grad = false;
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size()) - 1;
    }

    const Mat<T> &val(Id id) const {
        const Node &n = nodes_[id];
        return n.ext ? *n.ext : n.val;
    }

    /// Gradient of a node; zeros if backward never reached it.
    Mat<T> grad_of(Id id) const {
        const Node &n = nodes_[id];
        if (n.grad) return *n.grad;
        return Mat<T>::zeros(val(id).rows, val(id).cols);
    }

    bool has_grad(Id id) const { return nodes_[id].grad.has_value(); }

    // ---- elementwise / linear ----

    Id add(Id a, Id b) {
        check_same_shape(a, b, "add");
        Mat<T> out = val(a);
        const Mat<T> &vb = val(b);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
        return make(std::move(out), {a, b}, [a, b](Tape &t, const Mat<T> &g) {
            t.accumulate(a, g);
            t.accumulate(b, g);
        });
    }

    Id sub(Id a, Id b) {
        check_same_shape(a, b, "sub");
        Mat<T> out = val(a);
        const Mat<T> &vb = val(b);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= vb.data[i];
        return make(std::move(out), {a, b}, [a, b](Tape &t, const Mat<T> &g) {
            t.accumulate(a, g);
            Mat<T> ng = g;
            for (auto &v : ng.data) v = -v;
            t.accumulate(b, ng);
        });
    }

    /// (R x C) + broadcast (1 x C)
    Id add_rowvec(Id a, Id b) {
        const Mat<T> &va = val(a), &vb = val(b);
        if (vb.rows != 1 || vb.cols != va.cols) throw InvalidInput("add_rowvec: shape mismatch");
        Mat<T> out = va;
        for (int i = 0; i < out.rows; ++i)
            for (int j = 0; j < out.cols; ++j) out(i, j) += vb(0, j);
        return make(std::move(out), {a, b}, [a, b](Tape &t, const Mat<T> &g) {
            t.accumulate(a, g);
            Mat<T> gb(1, g.cols);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) gb(0, j) += g(i, j);
            t.accumulate(b, gb);
        });
    }

    Id scale(Id a, T s) {
        Mat<T> out = val(a);
        for (auto &v : out.data) v *= s;
        return make(std::move(out), {a}, [a, s](Tape &t, const Mat<T> &g) {
            Mat<T> ga = g;
            for (auto &v : ga.data) v *= s;
            t.accumulate(a, ga);
        });
    }

    /// y = s * a with s a learnable (1 x 1) node
    Id scale_by(Id a, Id s) {
        const Mat<T> &vs = val(s);
        if (vs.rows != 1 || vs.cols != 1) throw InvalidInput("scale_by: scalar node expected");
        T sv = vs(0, 0);
        Mat<T> out = val(a);
        for (auto &v : out.data) v *= sv;
        return make(std::move(out), {a, s}, [a, s, sv](Tape &t, const Mat<T> &g) {
            Mat<T> ga = g;
            for (auto &v : ga.data) v *= sv;
            t.accumulate(a, ga);
            const Mat<T> &va = t.val(a);
            T gs = T(0);
            for (size_t i = 0; i < g.data.size(); ++i) gs += g.data[i] * va.data[i];
            Mat<T> gsm(1, 1);
            gsm(0, 0) = gs;
            t.accumulate(s, gsm);
        });
    }

    Id hadamard(Id a, Id b) {
        check_same_shape(a, b, "hadamard");
        Mat<T> out = val(a);
        const Mat<T> &vb = val(b);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= vb.data[i];
        return make(std::move(out), {a, b}, [a, b](Tape &t, const Mat<T> &g) {
            const Mat<T> &va = t.val(a), &vb2 = t.val(b);
            Mat<T> ga = g, gb = g;
            for (size_t i = 0; i < g.data.size(); ++i) {
                ga.data[i] *= vb2.data[i];
                gb.data[i] *= va.data[i];
            }
            t.accumulate(a, ga);
            t.accumulate(b, gb);
        });
    }

    Id matmul(Id a, Id b) {
        const Mat<T> &va = val(a), &vb = val(b);
        if (va.cols != vb.rows) throw InvalidInput("matmul: inner dims differ");
        Mat<T> out(va.rows, vb.cols);
        matmul_acc(va, vb, out);
        return make(std::move(out), {a, b}, [a, b](Tape &t, const Mat<T> &g) {
            if (t.wants(a)) {
                Mat<T> ga(t.val(a).rows, t.val(a).cols);
                matmul_bt_acc(g, t.val(b), ga); // dA = g * B^T
                t.accumulate(a, ga);
            }
            if (t.wants(b)) {
                Mat<T> gb(t.val(b).rows, t.val(b).cols);
                matmul_at_acc(t.val(a), g, gb); // dB = A^T * g
                t.accumulate(b, gb);
            }
        });
    }

    Id transpose(Id a) {
        Mat<T> out = val(a).transposed();
        return make(std::move(out), {a},
                    [a](Tape &t, const Mat<T> &g) { t.accumulate(a, g.transposed()); });
    }

    // ---- nonlinearities ----

    Id tanh_(Id a) {
        Mat<T> out = val(a);
        for (auto &v : out.data) v = std::tanh(v);
        return make(std::move(out), {a}, [a, self = next_id()](Tape &t, const Mat<T> &g) {
            const Mat<T> &y = t.val(self);
            Mat<T> ga = g;
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] *= T(1) - y.data[i] * y.data[i];
            t.accumulate(a, ga);
        });
    }

    Id sigmoid_(Id a) {
        Mat<T> out = val(a);
        for (auto &v : out.data) v = T(1) / (T(1) + std::exp(-v));
        return make(std::move(out), {a}, [a, self = next_id()](Tape &t, const Mat<T> &g) {
            const Mat<T> &y = t.val(self);
            Mat<T> ga = g;
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] *= y.data[i] * (T(1) - y.data[i]);
            t.accumulate(a, ga);
        });
    }

    /// smooth gelu: x * sigmoid(1.702 x)
    Id gelu_(Id a) {
        const T k = static_cast<T>(1.702);
        Mat<T> out = val(a);
        for (auto &v : out.data) v = v / (T(1) + std::exp(-k * v));
        return make(std::move(out), {a}, [a, k](Tape &t, const Mat<T> &g) {
            const Mat<T> &x = t.val(a);
            Mat<T> ga = g;
            for (size_t i = 0; i < g.data.size(); ++i) {
                T s = T(1) / (T(1) + std::exp(-k * x.data[i]));
                ga.data[i] *= s + x.data[i] * k * s * (T(1) - s);
            }
            t.accumulate(a, ga);
        });
    }

    // ---- row softmax / normalization ----

    /// row-wise softmax of (a + additive_mask); pass empty mask for none
    Id softmax_rows(Id a, const Mat<T> *additive_mask = nullptr) {
        const Mat<T> &va = val(a);
        Mat<T> out(va.rows, va.cols);
        for (int i = 0; i < va.rows; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < va.cols; ++j) {
                T z = va(i, j) + (additive_mask ? (*additive_mask)(i, j) : T(0));
                out(i, j) = z;
                mx = std::max(mx, z);
            }
            T sum = T(0);
            for (int j = 0; j < va.cols; ++j) {
                out(i, j) = std::exp(out(i, j) - mx);
                sum += out(i, j);
            }
            for (int j = 0; j < va.cols; ++j) out(i, j) /= sum;
        }
        return make(std::move(out), {a}, [a, self = next_id()](Tape &t, const Mat<T> &g) {
            const Mat<T> &y = t.val(self);
            Mat<T> ga(g.rows, g.cols);
            for (int i = 0; i < g.rows; ++i) {
                T d = T(0);
                for (int j = 0; j < g.cols; ++j) d += g(i, j) * y(i, j);
                for (int j = 0; j < g.cols; ++j) ga(i, j) = (g(i, j) - d) * y(i, j);
            }
            t.accumulate(a, ga);
        });
    }

    Id layernorm_rows(Id x, Id gain, Id bias, T eps = static_cast<T>(1e-5)) {
        const Mat<T> &vx = val(x);
        const Mat<T> &vg = val(gain), &vb = val(bias);
        if (vg.rows != 1 || vg.cols != vx.cols || vb.rows != 1 || vb.cols != vx.cols)
            throw InvalidInput("layernorm: gain/bias must be (1 x cols)");
        Mat<T> xhat(vx.rows, vx.cols);
        Mat<T> out(vx.rows, vx.cols);
        std::vector<T> inv_std(vx.rows);
        for (int i = 0; i < vx.rows; ++i) {
            T mean = T(0);
            for (int j = 0; j < vx.cols; ++j) mean += vx(i, j);
            mean /= static_cast<T>(vx.cols);
            T var = T(0);
            for (int j = 0; j < vx.cols; ++j) {
                T d = vx(i, j) - mean;
                var += d * d;
            }
            var /= static_cast<T>(vx.cols);
            T is = T(1) / std::sqrt(var + eps);
            inv_std[i] = is;
            for (int j = 0; j < vx.cols; ++j) {
                xhat(i, j) = (vx(i, j) - mean) * is;
                out(i, j) = vg(0, j) * xhat(i, j) + vb(0, j);
            }
        }
        auto xh = std::make_shared<Mat<T>>(std::move(xhat));
        auto istd = std::make_shared<std::vector<T>>(std::move(inv_std));
        return make(std::move(out), {x, gain, bias},
                    [x, gain, bias, xh, istd](Tape &t, const Mat<T> &g) {
                        const Mat<T> &vg = t.val(gain);
                        int R = g.rows, C = g.cols;
                        if (t.wants(gain)) {
                            Mat<T> gg(1, C);
                            for (int i = 0; i < R; ++i)
                                for (int j = 0; j < C; ++j) gg(0, j) += g(i, j) * (*xh)(i, j);
                            t.accumulate(gain, gg);
                        }
                        if (t.wants(bias)) {
                            Mat<T> gb(1, C);
                            for (int i = 0; i < R; ++i)
                                for (int j = 0; j < C; ++j) gb(0, j) += g(i, j);
                            t.accumulate(bias, gb);
                        }
                        if (t.wants(x)) {
                            Mat<T> gx(R, C);
                            for (int i = 0; i < R; ++i) {
                                T mean_d = T(0), mean_dx = T(0);
                                for (int j = 0; j < C; ++j) {
                                    T dxh = g(i, j) * vg(0, j);
                                    mean_d += dxh;
                                    mean_dx += dxh * (*xh)(i, j);
                                }
                                mean_d /= static_cast<T>(C);
                                mean_dx /= static_cast<T>(C);
                                for (int j = 0; j < C; ++j) {
                                    T dxh = g(i, j) * vg(0, j);
                                    gx(i, j) = (dxh - mean_d - (*xh)(i, j) * mean_dx) * (*istd)[i];
                                }
                            }
                            t.accumulate(x, gx);
                        }
                    });
    }

    // ---- shape ops ----

    Id slice_rows(Id a, int r0, int n) {
        const Mat<T> &va = val(a);
        if (r0 < 0 || n < 1 || r0 + n > va.rows) throw InvalidInput("slice_rows: out of range");
        Mat<T> out(n, va.cols);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < va.cols; ++j) out(i, j) = va(r0 + i, j);
        return make(std::move(out), {a}, [a, r0, n](Tape &t, const Mat<T> &g) {
            const Mat<T> &va2 = t.val(a);
            Mat<T> ga(va2.rows, va2.cols);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < g.cols; ++j) ga(r0 + i, j) = g(i, j);
            t.accumulate(a, ga);
        });
    }

    Id slice_cols(Id a, int c0, int n) {
        const Mat<T> &va = val(a);
        if (c0 < 0 || n < 1 || c0 + n > va.cols) throw InvalidInput("slice_cols: out of range");
        Mat<T> out(va.rows, n);
        for (int i = 0; i < va.rows; ++i)
            for (int j = 0; j < n; ++j) out(i, j) = va(i, c0 + j);
        return make(std::move(out), {a}, [a, c0, n](Tape &t, const Mat<T> &g) {
            const Mat<T> &va2 = t.val(a);
            Mat<T> ga(va2.rows, va2.cols);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < n; ++j) ga(i, c0 + j) = g(i, j);
            t.accumulate(a, ga);
        });
    }

    Id concat_rows(const std::vector<Id> &parts) {
        if (parts.empty()) throw InvalidInput("concat_rows: empty");
        int cols = val(parts[0]).cols;
        int rows = 0;
        for (Id p : parts) {
            if (val(p).cols != cols) throw InvalidInput("concat_rows: col mismatch");
            rows += val(p).rows;
        }
        Mat<T> out(rows, cols);
        int r = 0;
        for (Id p : parts) {
            const Mat<T> &vp = val(p);
            for (int i = 0; i < vp.rows; ++i, ++r)
                for (int j = 0; j < cols; ++j) out(r, j) = vp(i, j);
        }
        return make(std::move(out), parts, [parts](Tape &t, const Mat<T> &g) {
            int r = 0;
            for (Id p : parts) {
                const Mat<T> &vp = t.val(p);
                if (t.wants(p)) {
                    Mat<T> gp(vp.rows, vp.cols);
                    for (int i = 0; i < vp.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) gp(i, j) = g(r + i, j);
                    t.accumulate(p, gp);
                }
                r += vp.rows;
            }
        });
    }

    Id concat_cols(const std::vector<Id> &parts) {
        if (parts.empty()) throw InvalidInput("concat_cols: empty");
        int rows = val(parts[0]).rows;
        int cols = 0;
        for (Id p : parts) {
            if (val(p).rows != rows) throw InvalidInput("concat_cols: row mismatch");
            cols += val(p).cols;
        }
        Mat<T> out(rows, cols);
        int c = 0;
        for (Id p : parts) {
            const Mat<T> &vp = val(p);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < vp.cols; ++j) out(i, c + j) = vp(i, j);
            c += vp.cols;
        }
        return make(std::move(out), parts, [parts](Tape &t, const Mat<T> &g) {
            int c = 0;
            for (Id p : parts) {
                const Mat<T> &vp = t.val(p);
                if (t.wants(p)) {
                    Mat<T> gp(vp.rows, vp.cols);
                    for (int i = 0; i < vp.rows; ++i)
                        for (int j = 0; j < vp.cols; ++j) gp(i, j) = g(i, c + j);
                    t.accumulate(p, gp);
                }
                c += vp.cols;
            }
        });
    }

    Id mean_rows(Id a) {
        const Mat<T> &va = val(a);
        Mat<T> out(1, va.cols);
        for (int i = 0; i < va.rows; ++i)
            for (int j = 0; j < va.cols; ++j) out(0, j) += va(i, j);
        for (auto &v : out.data) v /= static_cast<T>(va.rows);
        return make(std::move(out), {a}, [a](Tape &t, const Mat<T> &g) {
            const Mat<T> &va2 = t.val(a);
            Mat<T> ga(va2.rows, va2.cols);
            T inv = T(1) / static_cast<T>(va2.rows);
            for (int i = 0; i < va2.rows; ++i)
                for (int j = 0; j < va2.cols; ++j) ga(i, j) = g(0, j) * inv;
            t.accumulate(a, ga);
        });
    }

    Id sum_all(Id a) {
        const Mat<T> &va = val(a);
        Mat<T> out(1, 1);
        for (const auto &v : va.data) out(0, 0) += v;
        return make(std::move(out), {a}, [a](Tape &t, const Mat<T> &g) {
            const Mat<T> &va2 = t.val(a);
            t.accumulate(a, Mat<T>::full(va2.rows, va2.cols, g(0, 0)));
        });
    }

    Id mean_all(Id a) {
        const Mat<T> &va = val(a);
        return scale(sum_all(a), T(1) / static_cast<T>(va.size()));
    }

    /// rows of an embedding table; backward scatter-adds
    Id gather_rows(Id table, const std::vector<int> &ids) {
        const Mat<T> &vt = val(table);
        for (int id : ids)
            if (id < 0 || id >= vt.rows) throw InvalidInput("gather_rows: id out of range");
        Mat<T> out(static_cast<int>(ids.size()), vt.cols);
        for (size_t i = 0; i < ids.size(); ++i)
            for (int j = 0; j < vt.cols; ++j) out(static_cast<int>(i), j) = vt(ids[i], j);
        return make(std::move(out), {table}, [table, ids](Tape &t, const Mat<T> &g) {
            const Mat<T> &vt2 = t.val(table);
            Mat<T> gt(vt2.rows, vt2.cols);
            for (size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < vt2.cols; ++j) gt(ids[i], j) += g(static_cast<int>(i), j);
            t.accumulate(table, gt);
        });
    }

    /// (L x C) -> (L_out x C*k); column j*C+c holds x[i*stride - pad + j, c]
    Id im2col(Id a, int kernel, int stride, int pad) {
        const Mat<T> &va = val(a);
        int L = va.rows, C = va.cols;
        int L_out = (L + 2 * pad - kernel) / stride + 1;
        if (L_out < 1) throw InvalidInput("im2col: sequence too short");
        Mat<T> out(L_out, C * kernel);
        for (int i = 0; i < L_out; ++i)
            for (int j = 0; j < kernel; ++j) {
                int src = i * stride - pad + j;
                if (src < 0 || src >= L) continue;
                for (int c = 0; c < C; ++c) out(i, j * C + c) = va(src, c);
            }
        return make(std::move(out), {a}, [a, kernel, stride, pad](Tape &t, const Mat<T> &g) {
            const Mat<T> &va2 = t.val(a);
            int L = va2.rows, C = va2.cols;
            Mat<T> ga(L, C);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < kernel; ++j) {
                    int src = i * stride - pad + j;
                    if (src < 0 || src >= L) continue;
                    for (int c = 0; c < C; ++c) ga(src, c) += g(i, j * C + c);
                }
            t.accumulate(a, ga);
        });
    }

    // ---- losses ----

    /// mean negative log-likelihood over rows where mask[i] != 0
    Id cross_entropy(Id logits, const std::vector<int> &targets, const std::vector<char> &mask) {
        const Mat<T> &vl = val(logits);
        if (static_cast<int>(targets.size()) != vl.rows || mask.size() != targets.size())
            throw InvalidInput("cross_entropy: target/mask length mismatch");
        int n_active = 0;
        T loss = T(0);
        for (int i = 0; i < vl.rows; ++i) {
            if (!mask[i]) continue;
            if (targets[i] < 0 || targets[i] >= vl.cols) throw InvalidInput("cross_entropy: target id out of range");
            ++n_active;
            T mx = vl(i, 0);
            for (int j = 1; j < vl.cols; ++j) mx = std::max(mx, vl(i, j));
            T lse = T(0);
            for (int j = 0; j < vl.cols; ++j) lse += std::exp(vl(i, j) - mx);
            lse = std::log(lse) + mx;
            loss += lse - vl(i, targets[i]);
        }
        if (n_active == 0) throw InvalidInput("cross_entropy: empty mask");
        Mat<T> out(1, 1);
        out(0, 0) = loss / static_cast<T>(n_active);
        return make(std::move(out), {logits},
                    [logits, targets, mask, n_active](Tape &t, const Mat<T> &g) {
                        const Mat<T> &vl2 = t.val(logits);
                        Mat<T> gl(vl2.rows, vl2.cols);
                        T w = g(0, 0) / static_cast<T>(n_active);
                        for (int i = 0; i < vl2.rows; ++i) {
                            if (!mask[i]) continue;
                            T mx = vl2(i, 0);
                            for (int j = 1; j < vl2.cols; ++j) mx = std::max(mx, vl2(i, j));
                            T sum = T(0);
                            for (int j = 0; j < vl2.cols; ++j) sum += std::exp(vl2(i, j) - mx);
                            for (int j = 0; j < vl2.cols; ++j)
                                gl(i, j) = w * (std::exp(vl2(i, j) - mx) / sum -
                                                (j == targets[i] ? T(1) : T(0)));
                        }
                        t.accumulate(logits, gl);
                    });
    }

    /// mean((a-b)^2) over all entries
    Id mse(Id a, Id b) {
        check_same_shape(a, b, "mse");
        const Mat<T> &va = val(a), &vb = val(b);
        T s = T(0);
        for (size_t i = 0; i < va.data.size(); ++i) {
            T d = va.data[i] - vb.data[i];
            s += d * d;
        }
        Mat<T> out(1, 1);
        out(0, 0) = s / static_cast<T>(va.size());
        return make(std::move(out), {a, b}, [a, b](Tape &t, const Mat<T> &g) {
            const Mat<T> &va2 = t.val(a), &vb2 = t.val(b);
            T w = T(2) * g(0, 0) / static_cast<T>(va2.size());
            if (t.wants(a)) {
                Mat<T> ga(va2.rows, va2.cols);
                for (size_t i = 0; i < va2.data.size(); ++i)
                    ga.data[i] = w * (va2.data[i] - vb2.data[i]);
                t.accumulate(a, ga);
            }
            if (t.wants(b)) {
                Mat<T> gb(va2.rows, va2.cols);
                for (size_t i = 0; i < va2.data.size(); ++i)
                    gb.data[i] = -w * (va2.data[i] - vb2.data[i]);
                t.accumulate(b, gb);
            }
        });
    }

    void backward(Id root) {
        const Mat<T> &vr = val(root);
        if (vr.rows != 1 || vr.cols != 1) throw InvalidInput("backward: root must be scalar");
        nodes_[root].grad = Mat<T>::full(1, 1, T(1));
        for (Id id = root; id >= 0; --id) {
            Node &n = nodes_[id];
            if (n.grad && n.back) n.back(*this, *n.grad);
        }
    }

    size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Mat<T> val;
        std::shared_ptr<const Mat<T>> ext;
        std::optional<Mat<T>> grad;
        bool needs_grad = false;
        std::function<void(Tape &, const Mat<T> &)> back;
    };

    Id next_id() const { return static_cast<Id>(nodes_.size()); }

    bool wants(Id id) const { return nodes_[id].needs_grad; }

    void accumulate(Id id, const Mat<T> &g) {
        Node &n = nodes_[id];
        if (!n.needs_grad) return;
        if (!n.grad) n.grad = Mat<T>::zeros(g.rows, g.cols);
        for (size_t i = 0; i < g.data.size(); ++i) n.grad->data[i] += g.data[i];
    }

    Id make(Mat<T> value, const std::vector<Id> &parents,
            std::function<void(Tape &, const Mat<T> &)> back) {
        Node n;
        n.val = std::move(value);
        for (Id p : parents)
            if (nodes_[p].needs_grad) {
                n.needs_grad = true;
                break;
            }
        if (n.needs_grad) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size()) - 1;
    }

    void check_same_shape(Id a, Id b, const char *op) const {
        if (!val(a).same_shape(val(b))) throw InvalidInput(std::string(op) + ": shape mismatch");
    }

    std::vector<Node> nodes_;
};

} // namespace mumu
