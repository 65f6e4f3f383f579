#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <type_traits>
#include <vector>

#include "kinet/autodiff.hpp"
#include "kinet/errors.hpp"
#include "kinet/tensor.hpp"

namespace kinet {

template <typename T>
inline void touch(const Var<T>& v) {
    ++v->forward_touches;
}

// Accumulator type for reductions: float tensors accumulate in double; wider
// tensor types keep their own precision (the gradient-check oracle runs at
// long double and must not round through double).
template <typename T>
using acc_t = std::conditional_t<std::is_same_v<T, float>, double, T>;

namespace detail {

// C[M,N] += A[M,K] * B[K,N]. Accumulates in T; this is the convolution hot
// path and must stay vectorizable over j.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const T av = arow[i];
            T* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] += A[M,K] * B[K,N] with a double accumulator. Used on the small
// matrices of the graph/head paths where summation-order robustness matters
// more than speed.
template <typename T>
void gemm_nn_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    using A = acc_t<T>;
    std::vector<A> acc(static_cast<size_t>(n));
    for (int64_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), A(0));
        const T* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const A av = static_cast<A>(arow[p]);
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += av * static_cast<A>(brow[j]);
        }
        T* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += static_cast<T>(acc[static_cast<size_t>(j)]);
    }
}

template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    using A = acc_t<T>;
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            A acc = A(0);
            for (int64_t p = 0; p < k; ++p) acc += static_cast<A>(arow[p]) * static_cast<A>(brow[p]);
            c[i * n + j] += static_cast<T>(acc);
        }
    }
}

template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    using A = acc_t<T>;
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            A acc = A(0);
            for (int64_t p = 0; p < k; ++p) acc += static_cast<A>(a[p * m + i]) * static_cast<A>(b[p * n + j]);
            c[i * n + j] += static_cast<T>(acc);
        }
    }
}

// x: one sample [C,H,W] -> col [C*kh*kw, Ho*Wo], zero padded.
template <typename T>
void im2col(const T* x, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t ho, int64_t wo, T* col) {
    for (int64_t c = 0; c < c_in; ++c) {
        for (int64_t dy = 0; dy < kh; ++dy) {
            for (int64_t dx = 0; dx < kw; ++dx) {
                T* dst = col + ((c * kh + dy) * kw + dx) * ho * wo;
                for (int64_t oy = 0; oy < ho; ++oy) {
                    const int64_t iy = oy * stride - pad + dy;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst + oy * wo, dst + (oy + 1) * wo, T(0));
                        continue;
                    }
                    const T* src = x + (c * h + iy) * w;
                    for (int64_t ox = 0; ox < wo; ++ox) {
                        const int64_t ix = ox * stride - pad + dx;
                        dst[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add of a col buffer back into one sample's gradient [C,H,W].
template <typename T>
void col2im_acc(const T* col, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t ho, int64_t wo, T* dx) {
    for (int64_t c = 0; c < c_in; ++c) {
        for (int64_t dy = 0; dy < kh; ++dy) {
            for (int64_t dx_k = 0; dx_k < kw; ++dx_k) {
                const T* src = col + ((c * kh + dy) * kw + dx_k) * ho * wo;
                for (int64_t oy = 0; oy < ho; ++oy) {
                    const int64_t iy = oy * stride - pad + dy;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = dx + (c * h + iy) * w;
                    for (int64_t ox = 0; ox < wo; ++ox) {
                        const int64_t ix = ox * stride - pad + dx_k;
                        if (ix >= 0 && ix < w) dst[ix] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

template <typename T>
Var<T> make_out(Tensor<T> value, bool requires_grad) {
    auto n = make_leaf(std::move(value), false);
    n->requires_grad = requires_grad;
    return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    touch(a);
    touch(b);
    if (!a->value.same_shape(b->value)) {
        throw ShapeError("add: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                         shape_str(b->value.shape()));
    }
    Tensor<T> y(a->value.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = a->value[i] + b->value[i];
    auto out = detail::make_out(std::move(y), a->requires_grad || b->requires_grad);
    if (tape.recording && out->requires_grad) {
        tape.record([a, b, out] {
            const int64_t n = out->grad.numel();
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    touch(a);
    touch(b);
    if (!a->value.same_shape(b->value)) {
        throw ShapeError("mul: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                         shape_str(b->value.shape()));
    }
    Tensor<T> y(a->value.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = a->value[i] * b->value[i];
    auto out = detail::make_out(std::move(y), a->requires_grad || b->requires_grad);
    if (tape.recording && out->requires_grad) {
        tape.record([a, b, out] {
            const int64_t n = out->grad.numel();
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * b->value[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < n; ++i) b->grad[i] += out->grad[i] * a->value[i];
            }
        });
    }
    return out;
}

// y = sum_i coeff[i] * x[i], all same shape. Exactly linear in every input.
template <typename T>
Var<T> weighted_sum(Tape<T>& tape, const std::vector<Var<T>>& xs, const std::vector<T>& coeffs) {
    if (xs.empty() || xs.size() != coeffs.size()) throw ShapeError("weighted_sum: empty or mismatched terms");
    bool req = false;
    for (const auto& x : xs) {
        touch(x);
        req = req || x->requires_grad;
        if (!x->value.same_shape(xs[0]->value)) throw ShapeError("weighted_sum: shape mismatch among terms");
    }
    Tensor<T> y(xs[0]->value.shape());
    const int64_t n = y.numel();
    for (size_t t = 0; t < xs.size(); ++t) {
        for (int64_t i = 0; i < n; ++i) y[i] += coeffs[t] * xs[t]->value[i];
    }
    auto out = detail::make_out(std::move(y), req);
    if (tape.recording && req) {
        tape.record([xs, coeffs, out] {
            const int64_t n = out->grad.numel();
            for (size_t t = 0; t < xs.size(); ++t) {
                if (!xs[t]->requires_grad) continue;
                xs[t]->ensure_grad();
                for (int64_t i = 0; i < n; ++i) xs[t]->grad[i] += coeffs[t] * out->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
    touch(x);
    Tensor<T> y(x->value.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = x->value[i] > T(0) ? x->value[i] : T(0);
    auto out = detail::make_out(std::move(y), x->requires_grad);
    if (tape.recording && out->requires_grad) {
        // subgradient at 0 pinned to 0
        tape.record([x, out] {
            x->ensure_grad();
            const int64_t n = out->grad.numel();
            for (int64_t i = 0; i < n; ++i) {
                if (x->value[i] > T(0)) x->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

// scalar loss helper: y = sum(x ⊙ r) with a fixed projection tensor r.
template <typename T>
Var<T> inner_const(Tape<T>& tape, const Var<T>& x, const Tensor<T>& r) {
    touch(x);
    if (!x->value.same_shape(r)) throw ShapeError("inner_const: projection shape mismatch");
    acc_t<T> acc = 0;
    const int64_t n = x->value.numel();
    for (int64_t i = 0; i < n; ++i) acc += static_cast<acc_t<T>>(x->value[i]) * static_cast<acc_t<T>>(r[i]);
    auto out = detail::make_out(Tensor<T>::scalar(static_cast<T>(acc)), x->requires_grad);
    if (tape.recording && out->requires_grad) {
        tape.record([x, out, r] {
            x->ensure_grad();
            const T g = out->grad[0];
            const int64_t n = x->grad.numel();
            for (int64_t i = 0; i < n; ++i) x->grad[i] += g * r[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

// x [B,Cin,H,W], w [Cout,Cin,kh,kw], bias [Cout] or null.
template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, const Var<T>& w, const Var<T>& bias, int64_t stride,
              int64_t pad) {
    touch(x);
    touch(w);
    if (bias) touch(bias);
    require_rank(x->value, 4, "conv2d input");
    require_rank(w->value, 4, "conv2d weight");
    const int64_t b = x->value.dim(0), c_in = x->value.dim(1), h = x->value.dim(2), wd = x->value.dim(3);
    const int64_t c_out = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
    if (w->value.dim(1) != c_in) {
        throw ShapeError("conv2d: weight expects " + std::to_string(w->value.dim(1)) +
                         " input channels, got " + std::to_string(c_in));
    }
    const int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const int64_t wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) {
        throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " does not fit input " + shape_str(x->value.shape()));
    }
    const int64_t k = c_in * kh * kw, p = ho * wo;

    Tensor<T> y({b, c_out, ho, wo});
    std::vector<T> col(static_cast<size_t>(k * p));
    for (int64_t n = 0; n < b; ++n) {
        detail::im2col(x->value.data() + n * c_in * h * wd, c_in, h, wd, kh, kw, stride, pad, ho, wo,
                       col.data());
        T* yn = y.data() + n * c_out * p;
        detail::gemm_nn(w->value.data(), col.data(), yn, c_out, k, p);
        if (bias) {
            for (int64_t f = 0; f < c_out; ++f) {
                const T bv = bias->value[f];
                for (int64_t i = 0; i < p; ++i) yn[f * p + i] += bv;
            }
        }
    }

    const bool req = x->requires_grad || w->requires_grad || (bias && bias->requires_grad);
    auto out = detail::make_out(std::move(y), req);
    if (tape.recording && req) {
        tape.record([x, w, bias, out, stride, pad] {
            const int64_t b = x->value.dim(0), c_in = x->value.dim(1), h = x->value.dim(2),
                          wd = x->value.dim(3);
            const int64_t c_out = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
            const int64_t ho = out->value.dim(2), wo = out->value.dim(3);
            const int64_t k = c_in * kh * kw, p = ho * wo;
            if (x->requires_grad) x->ensure_grad();
            if (w->requires_grad) w->ensure_grad();
            if (bias && bias->requires_grad) bias->ensure_grad();
            std::vector<T> col(static_cast<size_t>(k * p));
            std::vector<T> dcol(static_cast<size_t>(k * p));
            for (int64_t n = 0; n < b; ++n) {
                const T* dy = out->grad.data() + n * c_out * p;
                if (w->requires_grad) {
                    detail::im2col(x->value.data() + n * c_in * h * wd, c_in, h, wd, kh, kw, stride,
                                   pad, ho, wo, col.data());
                    detail::gemm_nt(dy, col.data(), w->grad.data(), c_out, p, k);
                }
                if (x->requires_grad) {
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    detail::gemm_tn(w->value.data(), dy, dcol.data(), k, c_out, p);
                    detail::col2im_acc(dcol.data(), c_in, h, wd, kh, kw, stride, pad, ho, wo,
                                       x->grad.data() + n * c_in * h * wd);
                }
                if (bias && bias->requires_grad) {
                    for (int64_t f = 0; f < c_out; ++f) {
                        T acc = T(0);
                        for (int64_t i = 0; i < p; ++i) acc += dy[f * p + i];
                        bias->grad[f] += acc;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

// Parameter/buffer bundle for one BN layer. Running statistics are plain
// tensors (buffers), not graph leaves; they are updated in training mode only.
template <typename T>
struct BatchNorm {
    Var<T> gamma;
    Var<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);
};

// Channelwise normalization over (B,H,W). Training mode uses biased batch
// statistics and updates the running buffers; eval mode is a pure affine map
// of the running statistics.
template <typename T>
Var<T> batch_norm2d(Tape<T>& tape, const Var<T>& x, BatchNorm<T>& bn, bool training) {
    touch(x);
    touch(bn.gamma);
    touch(bn.beta);
    require_rank(x->value, 4, "batch_norm input");
    const int64_t b = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    if (bn.gamma->value.numel() != c) {
        throw ShapeError("batch_norm: expected " + std::to_string(bn.gamma->value.numel()) +
                         " channels, got " + std::to_string(c));
    }
    const int64_t m = b * h * w;
    const int64_t hw = h * w;

    auto xhat = std::make_shared<Tensor<T>>(x->value.shape());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(c));

    using A = acc_t<T>;
    for (int64_t ch = 0; ch < c; ++ch) {
        A mean, var;
        if (training) {
            A s = A(0);
            for (int64_t n = 0; n < b; ++n) {
                const T* src = x->value.data() + (n * c + ch) * hw;
                for (int64_t i = 0; i < hw; ++i) s += static_cast<A>(src[i]);
            }
            mean = s / static_cast<A>(m);
            A sq = A(0);
            for (int64_t n = 0; n < b; ++n) {
                const T* src = x->value.data() + (n * c + ch) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    const A d = static_cast<A>(src[i]) - mean;
                    sq += d * d;
                }
            }
            var = sq / static_cast<A>(m);
            bn.running_mean[ch] =
                static_cast<T>((A(1) - static_cast<A>(bn.momentum)) * static_cast<A>(bn.running_mean[ch]) +
                               static_cast<A>(bn.momentum) * mean);
            bn.running_var[ch] =
                static_cast<T>((A(1) - static_cast<A>(bn.momentum)) * static_cast<A>(bn.running_var[ch]) +
                               static_cast<A>(bn.momentum) * var);
        } else {
            mean = static_cast<A>(bn.running_mean[ch]);
            var = static_cast<A>(bn.running_var[ch]);
        }
        const T istd = static_cast<T>(A(1) / std::sqrt(var + static_cast<A>(bn.eps)));
        (*inv_std)[static_cast<size_t>(ch)] = istd;
        const T mu = static_cast<T>(mean);
        for (int64_t n = 0; n < b; ++n) {
            const T* src = x->value.data() + (n * c + ch) * hw;
            T* dst = xhat->data() + (n * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mu) * istd;
        }
    }

    Tensor<T> y(x->value.shape());
    for (int64_t ch = 0; ch < c; ++ch) {
        const T g = bn.gamma->value[ch], be = bn.beta->value[ch];
        for (int64_t n = 0; n < b; ++n) {
            const T* src = xhat->data() + (n * c + ch) * hw;
            T* dst = y.data() + (n * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] = g * src[i] + be;
        }
    }

    const bool req = x->requires_grad || bn.gamma->requires_grad || bn.beta->requires_grad;
    auto out = detail::make_out(std::move(y), req);
    if (tape.recording && req) {
        Var<T> gamma = bn.gamma, beta = bn.beta;
        tape.record([x, gamma, beta, out, xhat, inv_std, training] {
            const int64_t b = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
                          w = x->value.dim(3);
            const int64_t hw = h * w;
            const int64_t m = b * hw;
            if (x->requires_grad) x->ensure_grad();
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            using A = acc_t<T>;
            for (int64_t ch = 0; ch < c; ++ch) {
                A sum_dy = A(0), sum_dy_xhat = A(0);
                for (int64_t n = 0; n < b; ++n) {
                    const T* dy = out->grad.data() + (n * c + ch) * hw;
                    const T* xh = xhat->data() + (n * c + ch) * hw;
                    for (int64_t i = 0; i < hw; ++i) {
                        sum_dy += static_cast<A>(dy[i]);
                        sum_dy_xhat += static_cast<A>(dy[i]) * static_cast<A>(xh[i]);
                    }
                }
                if (gamma->requires_grad) gamma->grad[ch] += static_cast<T>(sum_dy_xhat);
                if (beta->requires_grad) beta->grad[ch] += static_cast<T>(sum_dy);
                if (!x->requires_grad) continue;
                const T g = gamma->value[ch];
                const T istd = (*inv_std)[static_cast<size_t>(ch)];
                if (training) {
                    const T mean_dy = static_cast<T>(sum_dy / static_cast<A>(m));
                    const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<A>(m));
                    for (int64_t n = 0; n < b; ++n) {
                        const T* dy = out->grad.data() + (n * c + ch) * hw;
                        const T* xh = xhat->data() + (n * c + ch) * hw;
                        T* dx = x->grad.data() + (n * c + ch) * hw;
                        for (int64_t i = 0; i < hw; ++i) {
                            dx[i] += g * istd * (dy[i] - mean_dy - xh[i] * mean_dy_xhat);
                        }
                    }
                } else {
                    for (int64_t n = 0; n < b; ++n) {
                        const T* dy = out->grad.data() + (n * c + ch) * hw;
                        T* dx = x->grad.data() + (n * c + ch) * hw;
                        for (int64_t i = 0; i < hw; ++i) dx[i] += g * istd * dy[i];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pooling / reshaping
// ---------------------------------------------------------------------------

// [B,C,H,W] -> [B,C] spatial mean.
template <typename T>
Var<T> global_avg_pool(Tape<T>& tape, const Var<T>& x) {
    touch(x);
    require_rank(x->value, 4, "global_avg_pool input");
    const int64_t b = x->value.dim(0), c = x->value.dim(1), hw = x->value.dim(2) * x->value.dim(3);
    Tensor<T> y({b, c});
    for (int64_t n = 0; n < b; ++n) {
        for (int64_t ch = 0; ch < c; ++ch) {
            const T* src = x->value.data() + (n * c + ch) * hw;
            acc_t<T> acc = 0;
            for (int64_t i = 0; i < hw; ++i) acc += static_cast<acc_t<T>>(src[i]);
            y.at(n, ch) = static_cast<T>(acc / static_cast<acc_t<T>>(hw));
        }
    }
    auto out = detail::make_out(std::move(y), x->requires_grad);
    if (tape.recording && out->requires_grad) {
        tape.record([x, out, hw] {
            x->ensure_grad();
            const int64_t b = out->value.dim(0), c = out->value.dim(1);
            const T inv = T(1) / static_cast<T>(hw);
            for (int64_t n = 0; n < b; ++n) {
                for (int64_t ch = 0; ch < c; ++ch) {
                    const T g = out->grad.at(n, ch) * inv;
                    T* dst = x->grad.data() + (n * c + ch) * hw;
                    for (int64_t i = 0; i < hw; ++i) dst[i] += g;
                }
            }
        });
    }
    return out;
}

// concat along channel axis of rank-4 maps with identical (B,H,W).
template <typename T>
Var<T> concat_channels(Tape<T>& tape, const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    bool req = false;
    int64_t c_total = 0;
    for (const auto& x : xs) {
        touch(x);
        require_rank(x->value, 4, "concat_channels input");
        if (x->value.dim(0) != xs[0]->value.dim(0) || x->value.dim(2) != xs[0]->value.dim(2) ||
            x->value.dim(3) != xs[0]->value.dim(3)) {
            throw ShapeError("concat_channels: mismatched extents " + shape_str(x->value.shape()) +
                             " vs " + shape_str(xs[0]->value.shape()));
        }
        c_total += x->value.dim(1);
        req = req || x->requires_grad;
    }
    const int64_t b = xs[0]->value.dim(0), h = xs[0]->value.dim(2), w = xs[0]->value.dim(3);
    const int64_t hw = h * w;
    Tensor<T> y({b, c_total, h, w});
    for (int64_t n = 0; n < b; ++n) {
        int64_t coff = 0;
        for (const auto& x : xs) {
            const int64_t c = x->value.dim(1);
            std::memcpy(y.data() + (n * c_total + coff) * hw, x->value.data() + n * c * hw,
                        static_cast<size_t>(c * hw) * sizeof(T));
            coff += c;
        }
    }
    auto out = detail::make_out(std::move(y), req);
    if (tape.recording && req) {
        tape.record([xs, out, hw, c_total] {
            const int64_t b = out->value.dim(0);
            for (int64_t n = 0; n < b; ++n) {
                int64_t coff = 0;
                for (const auto& x : xs) {
                    const int64_t c = x->value.dim(1);
                    if (x->requires_grad) {
                        x->ensure_grad();
                        const T* src = out->grad.data() + (n * c_total + coff) * hw;
                        T* dst = x->grad.data() + n * c * hw;
                        for (int64_t i = 0; i < c * hw; ++i) dst[i] += src[i];
                    }
                    coff += c;
                }
            }
        });
    }
    return out;
}

// stack rank-2 blocks along rows.
template <typename T>
Var<T> concat_rows(Tape<T>& tape, const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_rows: no inputs");
    bool req = false;
    int64_t rows = 0;
    const int64_t cols = xs[0]->value.dim(1);
    for (const auto& x : xs) {
        touch(x);
        require_rank(x->value, 2, "concat_rows input");
        if (x->value.dim(1) != cols) {
            throw ShapeError("concat_rows: column mismatch " + shape_str(x->value.shape()) + " vs " +
                             shape_str(xs[0]->value.shape()));
        }
        rows += x->value.dim(0);
        req = req || x->requires_grad;
    }
    Tensor<T> y({rows, cols});
    int64_t roff = 0;
    for (const auto& x : xs) {
        std::memcpy(y.data() + roff * cols, x->value.data(),
                    static_cast<size_t>(x->value.numel()) * sizeof(T));
        roff += x->value.dim(0);
    }
    auto out = detail::make_out(std::move(y), req);
    if (tape.recording && req) {
        tape.record([xs, out, cols] {
            int64_t roff = 0;
            for (const auto& x : xs) {
                const int64_t n = x->value.numel();
                if (x->requires_grad) {
                    x->ensure_grad();
                    const T* src = out->grad.data() + roff * cols;
                    for (int64_t i = 0; i < n; ++i) x->grad[i] += src[i];
                }
                roff += x->value.dim(0);
            }
        });
    }
    return out;
}

// rows [begin, end) of a rank-2 tensor.
template <typename T>
Var<T> slice_rows(Tape<T>& tape, const Var<T>& x, int64_t begin, int64_t end) {
    touch(x);
    require_rank(x->value, 2, "slice_rows input");
    if (begin < 0 || end > x->value.dim(0) || begin >= end) {
        throw ShapeError("slice_rows: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") for " + shape_str(x->value.shape()));
    }
    const int64_t cols = x->value.dim(1);
    Tensor<T> y({end - begin, cols});
    std::memcpy(y.data(), x->value.data() + begin * cols, static_cast<size_t>(y.numel()) * sizeof(T));
    auto out = detail::make_out(std::move(y), x->requires_grad);
    if (tape.recording && out->requires_grad) {
        tape.record([x, out, begin, cols] {
            x->ensure_grad();
            const int64_t n = out->grad.numel();
            T* dst = x->grad.data() + begin * cols;
            for (int64_t i = 0; i < n; ++i) dst[i] += out->grad[i];
        });
    }
    return out;
}

// [G*n, k] -> [G, k], mean over each contiguous group of n rows.
template <typename T>
Var<T> mean_rows_grouped(Tape<T>& tape, const Var<T>& x, int64_t group) {
    touch(x);
    require_rank(x->value, 2, "mean_rows_grouped input");
    if (group <= 0 || x->value.dim(0) % group != 0) {
        throw ShapeError("mean_rows_grouped: rows " + std::to_string(x->value.dim(0)) +
                         " not divisible by group " + std::to_string(group));
    }
    const int64_t g = x->value.dim(0) / group, k = x->value.dim(1);
    Tensor<T> y({g, k});
    for (int64_t i = 0; i < g; ++i) {
        for (int64_t j = 0; j < k; ++j) {
            acc_t<T> acc = 0;
            for (int64_t s = 0; s < group; ++s) acc += static_cast<acc_t<T>>(x->value.at(i * group + s, j));
            y.at(i, j) = static_cast<T>(acc / static_cast<acc_t<T>>(group));
        }
    }
    auto out = detail::make_out(std::move(y), x->requires_grad);
    if (tape.recording && out->requires_grad) {
        tape.record([x, out, group] {
            x->ensure_grad();
            const int64_t g = out->value.dim(0), k = out->value.dim(1);
            const T inv = T(1) / static_cast<T>(group);
            for (int64_t i = 0; i < g; ++i) {
                for (int64_t j = 0; j < k; ++j) {
                    const T gv = out->grad.at(i, j) * inv;
                    for (int64_t s = 0; s < group; ++s) x->grad.at(i * group + s, j) += gv;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// dense algebra (small matrices; double accumulation)
// ---------------------------------------------------------------------------

// a [M,K] * b [K,N]  (trans_b: b is [N,K] and used transposed).
template <typename T>
Var<T> matmul(Tape<T>& tape, const Var<T>& a, const Var<T>& b, bool trans_b = false) {
    touch(a);
    touch(b);
    require_rank(a->value, 2, "matmul lhs");
    require_rank(b->value, 2, "matmul rhs");
    const int64_t m = a->value.dim(0), k = a->value.dim(1);
    const int64_t n = trans_b ? b->value.dim(0) : b->value.dim(1);
    const int64_t bk = trans_b ? b->value.dim(1) : b->value.dim(0);
    if (bk != k) {
        throw ShapeError("matmul: inner extents differ, " + shape_str(a->value.shape()) + " x " +
                         shape_str(b->value.shape()) + (trans_b ? "^T" : ""));
    }
    Tensor<T> y({m, n});
    if (trans_b) {
        detail::gemm_nt_acc(a->value.data(), b->value.data(), y.data(), m, k, n);
    } else {
        detail::gemm_nn_acc(a->value.data(), b->value.data(), y.data(), m, k, n);
    }
    auto out = detail::make_out(std::move(y), a->requires_grad || b->requires_grad);
    if (tape.recording && out->requires_grad) {
        tape.record([a, b, out, trans_b, m, k, n] {
            // y = a b      : da += dy b^T ; db += a^T dy
            // y = a b^T    : da += dy b   ; db += dy^T a
            if (a->requires_grad) {
                a->ensure_grad();
                if (trans_b) {
                    detail::gemm_nn_acc(out->grad.data(), b->value.data(), a->grad.data(), m, n, k);
                } else {
                    detail::gemm_nt_acc(out->grad.data(), b->value.data(), a->grad.data(), m, n, k);
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                if (trans_b) {
                    detail::gemm_tn_acc(out->grad.data(), a->value.data(), b->grad.data(), n, m, k);
                } else {
                    detail::gemm_tn_acc(a->value.data(), out->grad.data(), b->grad.data(), k, m, n);
                }
            }
        });
    }
    return out;
}

// x [M,K] * w [K,N] + bias [N]; bias may be null.
template <typename T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
    auto out = matmul(tape, x, w, false);
    if (!bias) return out;
    touch(bias);
    if (bias->value.numel() != out->value.dim(1)) {
        throw ShapeError("linear: bias extent " + std::to_string(bias->value.numel()) +
                         " != output width " + std::to_string(out->value.dim(1)));
    }
    const int64_t m = out->value.dim(0), n = out->value.dim(1);
    Tensor<T> y(out->value.shape());
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) y.at(i, j) = out->value.at(i, j) + bias->value[j];
    }
    auto res = detail::make_out(std::move(y), out->requires_grad || bias->requires_grad);
    if (tape.recording && res->requires_grad) {
        tape.record([out, bias, res, m, n] {
            if (out->requires_grad) {
                out->ensure_grad();
                for (int64_t i = 0; i < m * n; ++i) out->grad[i] += res->grad[i];
            }
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t j = 0; j < n; ++j) bias->grad[j] += res->grad.at(i, j);
                }
            }
        });
    }
    return res;
}

// ---------------------------------------------------------------------------
// losses and softmax machinery
// ---------------------------------------------------------------------------

// Row-wise softmax over the active entries of a {0,1} mask; masked entries of
// the result are exactly zero. Computed with max subtraction per row.
template <typename T>
Var<T> masked_row_softmax(Tape<T>& tape, const Var<T>& scores, const Tensor<T>& mask) {
    touch(scores);
    require_rank(scores->value, 2, "masked_row_softmax scores");
    if (!scores->value.same_shape(mask)) {
        throw ShapeError("masked_row_softmax: mask shape " + shape_str(mask.shape()) +
                         " != scores shape " + shape_str(scores->value.shape()));
    }
    const int64_t n = scores->value.dim(0), c = scores->value.dim(1);
    using A = acc_t<T>;
    Tensor<T> y({n, c});
    for (int64_t i = 0; i < n; ++i) {
        A mx = -std::numeric_limits<A>::infinity();
        for (int64_t j = 0; j < c; ++j) {
            if (mask.at(i, j) != T(0)) mx = std::max(mx, static_cast<A>(scores->value.at(i, j)));
        }
        // every row must have support; the edge-mask invariants guarantee it
        assert(std::isfinite(static_cast<double>(mx)) && "masked_row_softmax: row without active entries");
        A z = A(0);
        for (int64_t j = 0; j < c; ++j) {
            if (mask.at(i, j) != T(0)) {
                const A e = std::exp(static_cast<A>(scores->value.at(i, j)) - mx);
                y.at(i, j) = static_cast<T>(e);
                z += e;
            } else {
                y.at(i, j) = T(0);
            }
        }
        for (int64_t j = 0; j < c; ++j) {
            if (mask.at(i, j) != T(0)) y.at(i, j) = static_cast<T>(static_cast<A>(y.at(i, j)) / z);
        }
    }
    auto out = detail::make_out(std::move(y), scores->requires_grad);
    if (tape.recording && out->requires_grad) {
        Tensor<T> mask_copy = mask;
        tape.record([scores, out, mask_copy] {
            scores->ensure_grad();
            const int64_t n = out->value.dim(0), c = out->value.dim(1);
            using A = acc_t<T>;
            for (int64_t i = 0; i < n; ++i) {
                A dot = A(0);
                for (int64_t j = 0; j < c; ++j) {
                    dot += static_cast<A>(out->grad.at(i, j)) * static_cast<A>(out->value.at(i, j));
                }
                for (int64_t j = 0; j < c; ++j) {
                    if (mask_copy.at(i, j) == T(0)) continue;
                    scores->grad.at(i, j) += static_cast<T>(
                        static_cast<A>(out->value.at(i, j)) *
                        (static_cast<A>(out->grad.at(i, j)) - dot));
                }
            }
        });
    }
    return out;
}

// mean over rows of softmax cross-entropy, logits [M,k], labels in [0,k).
template <typename T>
Var<T> softmax_cross_entropy(Tape<T>& tape, const Var<T>& logits, const std::vector<int>& labels) {
    touch(logits);
    require_rank(logits->value, 2, "softmax_cross_entropy logits");
    const int64_t m = logits->value.dim(0), k = logits->value.dim(1);
    if (static_cast<int64_t>(labels.size()) != m) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(m) + " rows");
    }
    for (int lab : labels) {
        if (lab < 0 || lab >= k) {
            throw ValidationError("softmax_cross_entropy: label " + std::to_string(lab) +
                                  " out of range [0," + std::to_string(k) + ")");
        }
    }
    using A = acc_t<T>;
    auto probs = std::make_shared<Tensor<T>>(Shape{m, k});
    A loss = A(0);
    for (int64_t i = 0; i < m; ++i) {
        A mx = -std::numeric_limits<A>::infinity();
        for (int64_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<A>(logits->value.at(i, j)));
        A z = A(0);
        for (int64_t j = 0; j < k; ++j) {
            const A e = std::exp(static_cast<A>(logits->value.at(i, j)) - mx);
            probs->at(i, j) = static_cast<T>(e);
            z += e;
        }
        for (int64_t j = 0; j < k; ++j) probs->at(i, j) = static_cast<T>(static_cast<A>(probs->at(i, j)) / z);
        loss += std::log(z) + mx - static_cast<A>(logits->value.at(i, labels[static_cast<size_t>(i)]));
    }
    loss /= static_cast<A>(m);
    auto out = detail::make_out(Tensor<T>::scalar(static_cast<T>(loss)), logits->requires_grad);
    if (tape.recording && out->requires_grad) {
        tape.record([logits, out, probs, labels] {
            logits->ensure_grad();
            const int64_t m = logits->value.dim(0), k = logits->value.dim(1);
            const T scale = out->grad[0] / static_cast<T>(m);
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < k; ++j) {
                    T p = probs->at(i, j);
                    if (j == labels[static_cast<size_t>(i)]) p -= T(1);
                    logits->grad.at(i, j) += scale * p;
                }
            }
        });
    }
    return out;
}

// per-pixel softmax cross-entropy, logits [B,C,h,w], target class ids [B,h,w];
// mean over all B*h*w pixels (equal pixel counts make this identical to the
// per-segment-then-average form).
template <typename T>
Var<T> pixel_cross_entropy(Tape<T>& tape, const Var<T>& logits, const Tensor<uint8_t>& target) {
    touch(logits);
    require_rank(logits->value, 4, "pixel_cross_entropy logits");
    const int64_t b = logits->value.dim(0), c = logits->value.dim(1), h = logits->value.dim(2),
                  w = logits->value.dim(3);
    if (target.shape() != Shape{b, h, w}) {
        throw ShapeError("pixel_cross_entropy: target shape " + shape_str(target.shape()) +
                         " does not match logits " + shape_str(logits->value.shape()));
    }
    const int64_t hw = h * w;
    for (int64_t i = 0; i < target.numel(); ++i) {
        if (target[i] >= c) {
            throw ValidationError("pixel_cross_entropy: class id " + std::to_string(int(target[i])) +
                                  " out of range [0," + std::to_string(c) + ")");
        }
    }
    using A = acc_t<T>;
    auto probs = std::make_shared<Tensor<T>>(logits->value.shape());
    A loss = A(0);
    for (int64_t n = 0; n < b; ++n) {
        for (int64_t i = 0; i < hw; ++i) {
            A mx = -std::numeric_limits<A>::infinity();
            for (int64_t ch = 0; ch < c; ++ch) {
                mx = std::max(mx, static_cast<A>(logits->value[(n * c + ch) * hw + i]));
            }
            A z = A(0);
            for (int64_t ch = 0; ch < c; ++ch) {
                const A e = std::exp(static_cast<A>(logits->value[(n * c + ch) * hw + i]) - mx);
                (*probs)[(n * c + ch) * hw + i] = static_cast<T>(e);
                z += e;
            }
            const int64_t t = target[n * hw + i];
            for (int64_t ch = 0; ch < c; ++ch) {
                (*probs)[(n * c + ch) * hw + i] =
                    static_cast<T>(static_cast<A>((*probs)[(n * c + ch) * hw + i]) / z);
            }
            loss += std::log(z) + mx - static_cast<A>(logits->value[(n * c + t) * hw + i]);
        }
    }
    loss /= static_cast<A>(b * hw);
    auto out = detail::make_out(Tensor<T>::scalar(static_cast<T>(loss)), logits->requires_grad);
    if (tape.recording && out->requires_grad) {
        Tensor<uint8_t> tgt = target;
        tape.record([logits, out, probs, tgt] {
            logits->ensure_grad();
            const int64_t b = logits->value.dim(0), c = logits->value.dim(1),
                          hw = logits->value.dim(2) * logits->value.dim(3);
            const T scale = out->grad[0] / static_cast<T>(b * hw);
            for (int64_t n = 0; n < b; ++n) {
                for (int64_t i = 0; i < hw; ++i) {
                    const int64_t t = tgt[n * hw + i];
                    for (int64_t ch = 0; ch < c; ++ch) {
                        T p = (*probs)[(n * c + ch) * hw + i];
                        if (ch == t) p -= T(1);
                        logits->grad[(n * c + ch) * hw + i] += scale * p;
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace kinet
