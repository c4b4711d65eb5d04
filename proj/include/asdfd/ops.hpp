#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "asdfd/tensor.hpp"

namespace asdfd {

// Per-sample key mask for attention: attend[b*len+p] == 1 means position p of
// sample b is visible as an attention key. Padded / tail positions carry 0 and
// receive -inf attention logits.
struct AttentionMask {
    int batch = 0;
    int len = 0;
    std::vector<uint8_t> attend;

    AttentionMask() = default;
    AttentionMask(int b, int l, uint8_t fill = 1)
        : batch(b), len(l), attend(static_cast<size_t>(b) * l, fill) {}

    bool at(int b, int p) const { return attend[static_cast<size_t>(b) * len + p] != 0; }
    void set(int b, int p, bool v) { attend[static_cast<size_t>(b) * len + p] = v ? 1 : 0; }
};

namespace detail {

// C(n,m) += A(n,k) * B(k,m). ikj order, rows owned by one thread each, so the
// result is bitwise independent of the thread count.
template <class S>
void gemm(const S* A, const S* B, S* C, int n, int k, int m) {
#pragma omp parallel for schedule(static) if (static_cast<long long>(n) * k * m > (1 << 18) && n >= 32)
    for (int i = 0; i < n; ++i) {
        const S* a = A + static_cast<size_t>(i) * k;
        S* c = C + static_cast<size_t>(i) * m;
        for (int p = 0; p < k; ++p) {
            const S av = a[p];
            const S* b = B + static_cast<size_t>(p) * m;
            for (int j = 0; j < m; ++j) c[j] += av * b[j];
        }
    }
}

// C(n,k) += A(n,m) * B(k,m)^T. Row-by-row dot products.
template <class S>
void gemm_a_bt(const S* A, const S* B, S* C, int n, int m, int k) {
#pragma omp parallel for schedule(static) if (static_cast<long long>(n) * k * m > (1 << 18) && n >= 32)
    for (int i = 0; i < n; ++i) {
        const S* a = A + static_cast<size_t>(i) * m;
        S* c = C + static_cast<size_t>(i) * k;
        for (int j = 0; j < k; ++j) {
            const S* b = B + static_cast<size_t>(j) * m;
            S acc = S(0);
            for (int p = 0; p < m; ++p) acc += a[p] * b[p];
            c[j] += acc;
        }
    }
}

// C(k,m) += A(n,k)^T * B(n,m). Threads own output rows (k dimension).
template <class S>
void gemm_at_b(const S* A, const S* B, S* C, int n, int k, int m) {
#pragma omp parallel for schedule(static) if (static_cast<long long>(n) * k * m > (1 << 18) && k >= 16)
    for (int j = 0; j < k; ++j) {
        S* c = C + static_cast<size_t>(j) * m;
        for (int i = 0; i < n; ++i) {
            const S av = A[static_cast<size_t>(i) * k + j];
            const S* b = B + static_cast<size_t>(i) * m;
            for (int p = 0; p < m; ++p) c[p] += av * b[p];
        }
    }
}

template <class S>
int rows_of(const Tensor<S>& t, int width, const char* what) {
    if (t.rank() < 1 || t.shape().back() != width)
        throw shape_error(std::string(what) + ": last dimension mismatch, got " + t.shape_str());
    return static_cast<int>(t.numel() / static_cast<size_t>(width));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / structural ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) throw shape_error("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor<S> out(a.shape());
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
    out.attach({a, b}, [a, b](TensorData<S>& self) mutable {
        for (auto t : {&a, &b}) {
            if (!t->requires_grad()) continue;
            auto& g = t->grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
    return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    Tensor<S> out(a.shape());
    const S* pa = a.data();
    S* po = out.data();
    for (size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * c;
    out.attach({a}, [a, c](TensorData<S>& self) mutable {
        if (!a.requires_grad()) return;
        auto& g = a.grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
    });
    return out;
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& a) {
    S acc = S(0);
    const S* pa = a.data();
    for (size_t i = 0; i < a.numel(); ++i) acc += pa[i];
    Tensor<S> out = Tensor<S>::scalar(acc);
    out.attach({a}, [a](TensorData<S>& self) mutable {
        if (!a.requires_grad()) return;
        auto& g = a.grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
    });
    return out;
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& a) {
    if (a.numel() == 0) throw shape_error("mean_all: empty tensor");
    return scale(sum_all(a), S(1) / static_cast<S>(a.numel()));
}

template <class S>
Tensor<S> tanh_act(const Tensor<S>& a) {
    Tensor<S> out(a.shape());
    const S* pa = a.data();
    S* po = out.data();
    for (size_t i = 0; i < out.numel(); ++i) po[i] = std::tanh(pa[i]);
    std::vector<S> y = out.values();
    out.attach({a}, [a, y = std::move(y)](TensorData<S>& self) mutable {
        if (!a.requires_grad()) return;
        auto& g = a.grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (S(1) - y[i] * y[i]);
    });
    return out;
}

// Exact GELU, x/2 * (1 + erf(x / sqrt(2))).
template <class S>
Tensor<S> gelu(const Tensor<S>& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    Tensor<S> out(a.shape());
    const S* pa = a.data();
    S* po = out.data();
    for (size_t i = 0; i < out.numel(); ++i) {
        double x = static_cast<double>(pa[i]);
        po[i] = static_cast<S>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
    }
    out.attach({a}, [a](TensorData<S>& self) mutable {
        if (!a.requires_grad()) return;
        auto& g = a.grad();
        const S* px = a.data();
        for (size_t i = 0; i < g.size(); ++i) {
            double x = static_cast<double>(px[i]);
            double d = 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
            g[i] += self.grad[i] * static_cast<S>(d);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

// Y = X * W + bias, applied over the last dimension; leading dimensions are
// flattened into rows.
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias) {
    if (w.rank() != 2) throw shape_error("linear: weight must be rank 2, got " + w.shape_str());
    const int din = w.dim(0), dout = w.dim(1);
    if (bias.numel() != static_cast<size_t>(dout)) throw shape_error("linear: bias width mismatch");
    const int n = detail::rows_of(x, din, "linear");

    std::vector<int> out_shape = x.shape();
    out_shape.back() = dout;
    Tensor<S> out(out_shape);
    S* po = out.data();
    const S* pb = bias.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dout; ++j) po[static_cast<size_t>(i) * dout + j] = pb[j];
    detail::gemm(x.data(), w.data(), po, n, din, dout);

    out.attach({x, w, bias}, [x, w, bias, n, din, dout](TensorData<S>& self) mutable {
        const S* dy = self.grad.data();
        if (x.requires_grad()) detail::gemm_a_bt(dy, w.data(), x.grad().data(), n, dout, din);
        if (w.requires_grad()) detail::gemm_at_b(x.data(), dy, w.grad().data(), n, din, dout);
        if (bias.requires_grad()) {
            auto& gb = bias.grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < dout; ++j) gb[j] += dy[static_cast<size_t>(i) * dout + j];
        }
    });
    return out;
}

// C = A * B for 2-D matrices.
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw shape_error("matmul: incompatible shapes " + a.shape_str() + " x " + b.shape_str());
    const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor<S> out({n, m});
    detail::gemm(a.data(), b.data(), out.data(), n, k, m);
    out.attach({a, b}, [a, b, n, k, m](TensorData<S>& self) mutable {
        const S* dy = self.grad.data();
        if (a.requires_grad()) detail::gemm_a_bt(dy, b.data(), a.grad().data(), n, m, k);
        if (b.requires_grad()) detail::gemm_at_b(a.data(), dy, b.grad().data(), n, k, m);
    });
    return out;
}

// Per-row layer normalisation over the last dimension.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, S eps) {
    if (!(eps > S(0))) throw std::invalid_argument("layer_norm: eps must be positive");
    const int d = static_cast<int>(gain.numel());
    if (bias.numel() != static_cast<size_t>(d)) throw shape_error("layer_norm: gain/bias width mismatch");
    const int n = detail::rows_of(x, d, "layer_norm");

    Tensor<S> out(x.shape());
    auto xhat = std::make_shared<std::vector<S>>(x.numel());
    auto invstd = std::make_shared<std::vector<S>>(n);
    const S* px = x.data();
    const S* pg = gain.data();
    const S* pb = bias.data();
    S* po = out.data();
    for (int i = 0; i < n; ++i) {
        const S* row = px + static_cast<size_t>(i) * d;
        S mu = S(0);
        for (int j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<S>(d);
        S var = S(0);
        for (int j = 0; j < d; ++j) {
            S c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<S>(d);
        const S is = S(1) / std::sqrt(var + eps);
        (*invstd)[i] = is;
        S* orow = po + static_cast<size_t>(i) * d;
        S* hrow = xhat->data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            hrow[j] = (row[j] - mu) * is;
            orow[j] = pg[j] * hrow[j] + pb[j];
        }
    }

    out.attach({x, gain, bias}, [x, gain, bias, xhat, invstd, n, d](TensorData<S>& self) mutable {
        const S* dy = self.grad.data();
        const S* pg = gain.data();
        if (x.requires_grad()) {
            auto& gx = x.grad();
            for (int i = 0; i < n; ++i) {
                const S* dyr = dy + static_cast<size_t>(i) * d;
                const S* hr = xhat->data() + static_cast<size_t>(i) * d;
                S* gxr = gx.data() + static_cast<size_t>(i) * d;
                S sum_dh = S(0), sum_dh_h = S(0);
                for (int j = 0; j < d; ++j) {
                    const S dh = dyr[j] * pg[j];
                    sum_dh += dh;
                    sum_dh_h += dh * hr[j];
                }
                const S is = (*invstd)[i];
                const S inv_d = S(1) / static_cast<S>(d);
                for (int j = 0; j < d; ++j) {
                    const S dh = dyr[j] * pg[j];
                    gxr[j] += is * (dh - inv_d * sum_dh - hr[j] * inv_d * sum_dh_h);
                }
            }
        }
        if (gain.requires_grad()) {
            auto& gg = gain.grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    gg[j] += dy[static_cast<size_t>(i) * d + j] * (*xhat)[static_cast<size_t>(i) * d + j];
        }
        if (bias.requires_grad()) {
            auto& gb = bias.grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) gb[j] += dy[static_cast<size_t>(i) * d + j];
        }
    });
    return out;
}

// Multi-head scaled dot-product attention with key-side masking. Q, K, V are
// (B, L, D); masked key positions get -inf logits, so they contribute exactly
// zero weight and receive exactly zero gradient.
template <class S>
Tensor<S> attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, const AttentionMask& mask,
                    int num_heads) {
    if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape())
        throw shape_error("attention: Q/K/V must share a (B,L,D) shape");
    const int b = q.dim(0), l = q.dim(1), d = q.dim(2);
    if (num_heads <= 0 || d % num_heads != 0) throw shape_error("attention: head count must divide width");
    if (mask.batch != b || mask.len != l) throw shape_error("attention: mask shape mismatch");
    const int h = num_heads, dh = d / num_heads;
    const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));
    for (int bi = 0; bi < b; ++bi) {
        bool any = false;
        for (int p = 0; p < l; ++p) any = any || mask.at(bi, p);
        if (!any) throw precondition_error("attention: sample has no attendable position");
    }

    Tensor<S> out(q.shape());
    // Softmax weights saved for backward: (B, H, L, L).
    auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(b) * h * l * l);
    const S* pq = q.data();
    const S* pk = k.data();
    const S* pv = v.data();
    S* po = out.data();
    const S neg_inf = -std::numeric_limits<S>::infinity();

#pragma omp parallel for schedule(static) if (b * h >= 4)
    for (int bh = 0; bh < b * h; ++bh) {
        const int bi = bh / h, hi = bh % h;
        const size_t base = static_cast<size_t>(bi) * l * d + static_cast<size_t>(hi) * dh;
        S* a = probs->data() + static_cast<size_t>(bh) * l * l;
        for (int i = 0; i < l; ++i) {
            const S* qi = pq + base + static_cast<size_t>(i) * d;
            S* arow = a + static_cast<size_t>(i) * l;
            S mx = neg_inf;
            for (int j = 0; j < l; ++j) {
                S s;
                if (mask.at(bi, j)) {
                    const S* kj = pk + base + static_cast<size_t>(j) * d;
                    S acc = S(0);
                    for (int c = 0; c < dh; ++c) acc += qi[c] * kj[c];
                    s = acc * inv_sqrt_dh;
                } else {
                    s = neg_inf;
                }
                arow[j] = s;
                mx = std::max(mx, s);
            }
            S z = S(0);
            for (int j = 0; j < l; ++j) {
                const S e = arow[j] == neg_inf ? S(0) : std::exp(arow[j] - mx);
                arow[j] = e;
                z += e;
            }
            const S inv_z = S(1) / z;
            S* orow = po + base + static_cast<size_t>(i) * d;
            for (int c = 0; c < dh; ++c) orow[c] = S(0);
            for (int j = 0; j < l; ++j) {
                arow[j] *= inv_z;
                if (arow[j] != S(0)) {
                    const S* vj = pv + base + static_cast<size_t>(j) * d;
                    for (int c = 0; c < dh; ++c) orow[c] += arow[j] * vj[c];
                }
            }
        }
    }

    out.attach({q, k, v}, [q, k, v, probs, b, l, d, h, dh, inv_sqrt_dh](TensorData<S>& self) mutable {
        const S* dy = self.grad.data();
        const bool gq = q.requires_grad(), gk = k.requires_grad(), gv = v.requires_grad();
        S* pgq = gq ? q.grad().data() : nullptr;
        S* pgk = gk ? k.grad().data() : nullptr;
        S* pgv = gv ? v.grad().data() : nullptr;
        const S* pq = q.data();
        const S* pk = k.data();
        const S* pv = v.data();
#pragma omp parallel for schedule(static) if (b * h >= 4)
        for (int bh = 0; bh < b * h; ++bh) {
            const int bi = bh / h, hi = bh % h;
            const size_t base = static_cast<size_t>(bi) * l * d + static_cast<size_t>(hi) * dh;
            const S* a = probs->data() + static_cast<size_t>(bh) * l * l;
            std::vector<S> ds(static_cast<size_t>(l) * l);
            for (int i = 0; i < l; ++i) {
                const S* arow = a + static_cast<size_t>(i) * l;
                const S* dor = dy + base + static_cast<size_t>(i) * d;
                S* dsrow = ds.data() + static_cast<size_t>(i) * l;
                S dot = S(0);
                for (int j = 0; j < l; ++j) {
                    S da = S(0);
                    if (arow[j] != S(0)) {
                        const S* vj = pv + base + static_cast<size_t>(j) * d;
                        for (int c = 0; c < dh; ++c) da += dor[c] * vj[c];
                    }
                    dsrow[j] = da;
                    dot += da * arow[j];
                }
                for (int j = 0; j < l; ++j) dsrow[j] = arow[j] * (dsrow[j] - dot);
            }
            if (gv) {
                for (int j = 0; j < l; ++j) {
                    S* gvr = pgv + base + static_cast<size_t>(j) * d;
                    for (int i = 0; i < l; ++i) {
                        const S aij = a[static_cast<size_t>(i) * l + j];
                        if (aij == S(0)) continue;
                        const S* dor = dy + base + static_cast<size_t>(i) * d;
                        for (int c = 0; c < dh; ++c) gvr[c] += aij * dor[c];
                    }
                }
            }
            if (gq) {
                for (int i = 0; i < l; ++i) {
                    S* gqr = pgq + base + static_cast<size_t>(i) * d;
                    const S* dsrow = ds.data() + static_cast<size_t>(i) * l;
                    for (int j = 0; j < l; ++j) {
                        if (dsrow[j] == S(0)) continue;
                        const S w = dsrow[j] * inv_sqrt_dh;
                        const S* kj = pk + base + static_cast<size_t>(j) * d;
                        for (int c = 0; c < dh; ++c) gqr[c] += w * kj[c];
                    }
                }
            }
            if (gk) {
                for (int i = 0; i < l; ++i) {
                    const S* qi = pq + base + static_cast<size_t>(i) * d;
                    const S* dsrow = ds.data() + static_cast<size_t>(i) * l;
                    for (int j = 0; j < l; ++j) {
                        if (dsrow[j] == S(0)) continue;
                        const S w = dsrow[j] * inv_sqrt_dh;
                        S* gkr = pgk + base + static_cast<size_t>(j) * d;
                        for (int c = 0; c < dh; ++c) gkr[c] += w * qi[c];
                    }
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// gather / scatter over sequence positions
// ---------------------------------------------------------------------------

// Picks one row per sample: X (B,L,D), positions[b] in [0,L) -> (B,D).
template <class S>
Tensor<S> gather_positions(const Tensor<S>& x, const std::vector<int>& positions) {
    if (x.rank() != 3) throw shape_error("gather_positions: expected (B,L,D), got " + x.shape_str());
    const int b = x.dim(0), l = x.dim(1), d = x.dim(2);
    if (static_cast<int>(positions.size()) != b) throw shape_error("gather_positions: one position per sample");
    for (int p : positions)
        if (p < 0 || p >= l) throw std::invalid_argument("gather_positions: position out of range");

    Tensor<S> out({b, d});
    const S* px = x.data();
    S* po = out.data();
    for (int i = 0; i < b; ++i)
        std::copy_n(px + (static_cast<size_t>(i) * l + positions[i]) * d, d, po + static_cast<size_t>(i) * d);
    out.attach({x}, [x, positions, l, d, b](TensorData<S>& self) mutable {
        if (!x.requires_grad()) return;
        auto& gx = x.grad();
        for (int i = 0; i < b; ++i) {
            S* row = gx.data() + (static_cast<size_t>(i) * l + positions[i]) * d;
            const S* dyr = self.grad.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) row[j] += dyr[j];
        }
    });
    return out;
}

// Replaces one row per sample with the matching row of `rows`; gradient flows
// to X everywhere except the replaced rows, and to `rows` at those rows.
template <class S>
Tensor<S> replace_positions(const Tensor<S>& x, const std::vector<int>& positions, const Tensor<S>& rows) {
    if (x.rank() != 3) throw shape_error("replace_positions: expected (B,L,D), got " + x.shape_str());
    const int b = x.dim(0), l = x.dim(1), d = x.dim(2);
    if (static_cast<int>(positions.size()) != b) throw shape_error("replace_positions: one position per sample");
    if (rows.rank() != 2 || rows.dim(0) != b || rows.dim(1) != d)
        throw shape_error("replace_positions: rows must be (B,D)");
    for (int p : positions)
        if (p < 0 || p >= l) throw std::invalid_argument("replace_positions: position out of range");

    Tensor<S> out(x.shape());
    out.values() = x.values();
    const S* pr = rows.data();
    S* po = out.data();
    for (int i = 0; i < b; ++i)
        std::copy_n(pr + static_cast<size_t>(i) * d, d, po + (static_cast<size_t>(i) * l + positions[i]) * d);
    out.attach({x, rows}, [x, rows, positions, b, l, d](TensorData<S>& self) mutable {
        if (x.requires_grad()) {
            auto& gx = x.grad();
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
            for (int i = 0; i < b; ++i) {
                S* row = gx.data() + (static_cast<size_t>(i) * l + positions[i]) * d;
                const S* dyr = self.grad.data() + (static_cast<size_t>(i) * l + positions[i]) * d;
                for (int j = 0; j < d; ++j) row[j] -= dyr[j];
            }
        }
        if (rows.requires_grad()) {
            auto& gr = rows.grad();
            for (int i = 0; i < b; ++i) {
                const S* dyr = self.grad.data() + (static_cast<size_t>(i) * l + positions[i]) * d;
                S* grr = gr.data() + static_cast<size_t>(i) * d;
                for (int j = 0; j < d; ++j) grr[j] += dyr[j];
            }
        }
    });
    return out;
}

// Embedding-layer lookup before layer norm: tok[ids[b,l]] + pos[l].
template <class S>
Tensor<S> embedding_lookup(const Tensor<S>& tok, const Tensor<S>& pos, const std::vector<int>& ids, int b, int l) {
    if (tok.rank() != 2 || pos.rank() != 2 || tok.dim(1) != pos.dim(1))
        throw shape_error("embedding_lookup: table shapes inconsistent");
    const int vocab = tok.dim(0), d = tok.dim(1);
    if (l > pos.dim(0)) throw shape_error("embedding_lookup: sequence longer than position table");
    if (static_cast<int>(ids.size()) != b * l) throw shape_error("embedding_lookup: id count mismatch");
    for (int id : ids)
        if (id < 0 || id >= vocab) throw std::invalid_argument("embedding_lookup: token id out of range");

    Tensor<S> out({b, l, d});
    const S* pt = tok.data();
    const S* pp = pos.data();
    S* po = out.data();
    for (int i = 0; i < b * l; ++i) {
        const S* trow = pt + static_cast<size_t>(ids[i]) * d;
        const S* prow = pp + static_cast<size_t>(i % l) * d;
        S* orow = po + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) orow[j] = trow[j] + prow[j];
    }
    out.attach({tok, pos}, [tok, pos, ids, b, l, d](TensorData<S>& self) mutable {
        if (tok.requires_grad()) {
            auto& gt = tok.grad();
            for (int i = 0; i < b * l; ++i) {
                S* row = gt.data() + static_cast<size_t>(ids[i]) * d;
                const S* dyr = self.grad.data() + static_cast<size_t>(i) * d;
                for (int j = 0; j < d; ++j) row[j] += dyr[j];
            }
        }
        if (pos.requires_grad()) {
            auto& gp = pos.grad();
            for (int i = 0; i < b * l; ++i) {
                S* row = gp.data() + static_cast<size_t>(i % l) * d;
                const S* dyr = self.grad.data() + static_cast<size_t>(i) * d;
                for (int j = 0; j < d; ++j) row[j] += dyr[j];
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// probabilistic ops and losses
// ---------------------------------------------------------------------------

namespace detail {

// Row-wise stable log-softmax of logits/temperature. Returns log-probs.
template <class S>
std::vector<S> log_softmax_rows(const S* z, int n, int c, S temperature) {
    std::vector<S> lp(static_cast<size_t>(n) * c);
    for (int i = 0; i < n; ++i) {
        const S* row = z + static_cast<size_t>(i) * c;
        S* out = lp.data() + static_cast<size_t>(i) * c;
        S mx = row[0] / temperature;
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j] / temperature);
        S sum = S(0);
        for (int j = 0; j < c; ++j) {
            out[j] = row[j] / temperature - mx;
            sum += std::exp(out[j]);
        }
        const S lse = std::log(sum);
        for (int j = 0; j < c; ++j) out[j] -= lse;
    }
    return lp;
}

}  // namespace detail

// Row-wise softmax with temperature. Differentiable.
template <class S>
Tensor<S> softmax(const Tensor<S>& logits, S temperature = S(1)) {
    if (!(temperature > S(0))) throw std::invalid_argument("softmax: temperature must be positive");
    if (logits.rank() < 1) throw shape_error("softmax: rank must be >= 1");
    const int c = logits.shape().back();
    const int n = static_cast<int>(logits.numel() / static_cast<size_t>(c));
    auto lp = detail::log_softmax_rows(logits.data(), n, c, temperature);
    Tensor<S> out(logits.shape());
    S* po = out.data();
    for (size_t i = 0; i < out.numel(); ++i) po[i] = std::exp(lp[i]);
    out.attach({logits}, [logits, n, c, temperature, y = out.values()](TensorData<S>& self) mutable {
        if (!logits.requires_grad()) return;
        auto& g = logits.grad();
        for (int i = 0; i < n; ++i) {
            const S* dyr = self.grad.data() + static_cast<size_t>(i) * c;
            const S* yr = y.data() + static_cast<size_t>(i) * c;
            S* gr = g.data() + static_cast<size_t>(i) * c;
            S dot = S(0);
            for (int j = 0; j < c; ++j) dot += dyr[j] * yr[j];
            for (int j = 0; j < c; ++j) gr[j] += yr[j] * (dyr[j] - dot) / temperature;
        }
    });
    return out;
}

// Mean cross-entropy against hard class indices.
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw shape_error("cross_entropy: logits must be (B,C)");
    const int n = logits.dim(0), c = logits.dim(1);
    if (static_cast<int>(labels.size()) != n) throw shape_error("cross_entropy: one label per row");
    for (int y : labels)
        if (y < 0 || y >= c) throw std::invalid_argument("cross_entropy: class index out of range");

    auto lp = detail::log_softmax_rows(logits.data(), n, c, S(1));
    S loss = S(0);
    for (int i = 0; i < n; ++i) loss -= lp[static_cast<size_t>(i) * c + labels[i]];
    loss /= static_cast<S>(n);

    Tensor<S> out = Tensor<S>::scalar(loss);
    out.attach({logits}, [logits, labels, lp = std::move(lp), n, c](TensorData<S>& self) mutable {
        if (!logits.requires_grad()) return;
        const S g = self.grad[0] / static_cast<S>(n);
        auto& gl = logits.grad();
        for (int i = 0; i < n; ++i) {
            S* gr = gl.data() + static_cast<size_t>(i) * c;
            const S* lpr = lp.data() + static_cast<size_t>(i) * c;
            for (int j = 0; j < c; ++j) gr[j] += g * (std::exp(lpr[j]) - (j == labels[i] ? S(1) : S(0)));
        }
    });
    return out;
}

// Mean cross-entropy against soft target rows (each row a distribution).
template <class S>
Tensor<S> cross_entropy_soft(const Tensor<S>& logits, const Tensor<S>& targets) {
    if (logits.rank() != 2 || logits.shape() != targets.shape())
        throw shape_error("cross_entropy_soft: logits/targets shape mismatch");
    const int n = logits.dim(0), c = logits.dim(1);
    const S* pt = targets.data();
    for (int i = 0; i < n; ++i) {
        S sum = S(0);
        for (int j = 0; j < c; ++j) sum += pt[static_cast<size_t>(i) * c + j];
        if (std::abs(static_cast<double>(sum) - 1.0) > 1e-3)
            throw std::invalid_argument("cross_entropy_soft: target row does not sum to 1");
    }

    auto lp = detail::log_softmax_rows(logits.data(), n, c, S(1));
    S loss = S(0);
    for (size_t i = 0; i < lp.size(); ++i) loss -= pt[i] * lp[i];
    loss /= static_cast<S>(n);

    Tensor<S> out = Tensor<S>::scalar(loss);
    out.attach({logits, targets}, [logits, targets, lp = std::move(lp), n, c](TensorData<S>& self) mutable {
        const S g = self.grad[0] / static_cast<S>(n);
        if (logits.requires_grad()) {
            auto& gl = logits.grad();
            const S* pt = targets.data();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) {
                    const size_t idx = static_cast<size_t>(i) * c + j;
                    gl[idx] += g * (std::exp(lp[idx]) - pt[idx]);
                }
        }
        if (targets.requires_grad()) {
            auto& gt = targets.grad();
            for (size_t i = 0; i < gt.size(); ++i) gt[i] -= g * lp[i];
        }
    });
    return out;
}

// Mean over rows of tau^2 * KL(softmax(teacher/tau) || softmax(student/tau)).
// Differentiable with respect to both logit arguments.
template <class S>
Tensor<S> kl_divergence(const Tensor<S>& teacher_logits, const Tensor<S>& student_logits, S temperature) {
    if (!(temperature > S(0))) throw std::invalid_argument("kl_divergence: temperature must be positive");
    if (teacher_logits.rank() != 2 || teacher_logits.shape() != student_logits.shape())
        throw shape_error("kl_divergence: logit shape mismatch");
    const int n = teacher_logits.dim(0), c = teacher_logits.dim(1);

    auto lpt = detail::log_softmax_rows(teacher_logits.data(), n, c, temperature);
    auto lps = detail::log_softmax_rows(student_logits.data(), n, c, temperature);
    std::vector<S> row_kl(n, S(0));
    S loss = S(0);
    for (int i = 0; i < n; ++i) {
        S acc = S(0);
        for (int j = 0; j < c; ++j) {
            const size_t idx = static_cast<size_t>(i) * c + j;
            acc += std::exp(lpt[idx]) * (lpt[idx] - lps[idx]);
        }
        row_kl[i] = acc;
        loss += acc;
    }
    loss = loss * temperature * temperature / static_cast<S>(n);

    Tensor<S> out = Tensor<S>::scalar(loss);
    out.attach({teacher_logits, student_logits},
               [teacher_logits, student_logits, lpt = std::move(lpt), lps = std::move(lps),
                row_kl = std::move(row_kl), n, c, temperature](TensorData<S>& self) mutable {
                   const S g = self.grad[0] * temperature / static_cast<S>(n);
                   if (student_logits.requires_grad()) {
                       auto& gs = student_logits.grad();
                       for (size_t i = 0; i < gs.size(); ++i) gs[i] += g * (std::exp(lps[i]) - std::exp(lpt[i]));
                   }
                   if (teacher_logits.requires_grad()) {
                       auto& gt = teacher_logits.grad();
                       for (int i = 0; i < n; ++i)
                           for (int j = 0; j < c; ++j) {
                               const size_t idx = static_cast<size_t>(i) * c + j;
                               gt[idx] += g * std::exp(lpt[idx]) * ((lpt[idx] - lps[idx]) - row_kl[i]);
                           }
                   }
               });
    return out;
}

// Mean over rows of || a/|a| - b/|b| ||^2 = 2 - 2 cos(a,b). Accepts matching
// (B,D) blocks or two plain vectors. Zero rows are rejected: a silently
// normalised zero would hide initialisation bugs upstream.
template <class S>
Tensor<S> normalized_sqdist(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) throw shape_error("normalized_sqdist: shape mismatch");
    if (a.rank() < 1 || a.rank() > 2) throw shape_error("normalized_sqdist: expected vector or (B,D)");
    const int d = a.shape().back();
    const int n = static_cast<int>(a.numel() / static_cast<size_t>(d));

    std::vector<S> na(n), nb(n), cos_ab(n);
    const S* pa = a.data();
    const S* pb = b.data();
    S loss = S(0);
    for (int i = 0; i < n; ++i) {
        const S* ra = pa + static_cast<size_t>(i) * d;
        const S* rb = pb + static_cast<size_t>(i) * d;
        S aa = S(0), bb = S(0), ab = S(0);
        for (int j = 0; j < d; ++j) {
            aa += ra[j] * ra[j];
            bb += rb[j] * rb[j];
            ab += ra[j] * rb[j];
        }
        na[i] = std::sqrt(aa);
        nb[i] = std::sqrt(bb);
        if (!(na[i] > S(0)) || !(nb[i] > S(0)))
            throw degenerate_input_error("normalized_sqdist: zero vector");
        cos_ab[i] = ab / (na[i] * nb[i]);
        loss += S(2) - S(2) * cos_ab[i];
    }
    loss /= static_cast<S>(n);

    Tensor<S> out = Tensor<S>::scalar(loss);
    out.attach({a, b}, [a, b, na = std::move(na), nb = std::move(nb), cos_ab = std::move(cos_ab), n,
                        d](TensorData<S>& self) mutable {
        const S g = self.grad[0] / static_cast<S>(n);
        const S* pa = a.data();
        const S* pb = b.data();
        for (int i = 0; i < n; ++i) {
            const S* ra = pa + static_cast<size_t>(i) * d;
            const S* rb = pb + static_cast<size_t>(i) * d;
            // d/da [2 - 2 a.b/(|a||b|)] = -2 (b_hat - cos * a_hat) / |a|
            if (a.requires_grad()) {
                S* gr = a.grad().data() + static_cast<size_t>(i) * d;
                for (int j = 0; j < d; ++j) {
                    const S ah = ra[j] / na[i], bh = rb[j] / nb[i];
                    gr[j] += g * (S(-2) * (bh - cos_ab[i] * ah) / na[i]);
                }
            }
            if (b.requires_grad()) {
                S* gr = b.grad().data() + static_cast<size_t>(i) * d;
                for (int j = 0; j < d; ++j) {
                    const S ah = ra[j] / na[i], bh = rb[j] / nb[i];
                    gr[j] += g * (S(-2) * (ah - cos_ab[i] * bh) / nb[i]);
                }
            }
        }
    });
    return out;
}

// Argmax of each row; plain utility, no gradient.
template <class S>
std::vector<int> argmax_rows(const Tensor<S>& logits) {
    if (logits.rank() != 2) throw shape_error("argmax_rows: expected (B,C)");
    const int n = logits.dim(0), c = logits.dim(1);
    std::vector<int> out(n);
    const S* p = logits.data();
    for (int i = 0; i < n; ++i) {
        const S* row = p + static_cast<size_t>(i) * c;
        out[i] = static_cast<int>(std::max_element(row, row + c) - row);
    }
    return out;
}

}  // namespace asdfd
