#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <vector>

#include "hcgm/core/tensor.hpp"

namespace hcgm {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C (m x n, row-major) = alpha * op(A) * op(B), optionally accumulating.
template <typename T>
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, T alpha, const T* A, const T* B,
          T* C, bool acc) {
    Eigen::Map<const RowMat<T>> a(A, ta ? k : m, ta ? m : k);
    Eigen::Map<const RowMat<T>> b(B, tb ? n : k, tb ? k : n);
    Eigen::Map<RowMat<T>> c(C, m, n);
    if (!ta && !tb) {
        if (acc) c.noalias() += alpha * (a * b);
        else c.noalias() = alpha * (a * b);
    } else if (ta && !tb) {
        if (acc) c.noalias() += alpha * (a.transpose() * b);
        else c.noalias() = alpha * (a.transpose() * b);
    } else if (!ta && tb) {
        if (acc) c.noalias() += alpha * (a * b.transpose());
        else c.noalias() = alpha * (a * b.transpose());
    } else {
        if (acc) c.noalias() += alpha * (a.transpose() * b.transpose());
        else c.noalias() = alpha * (a.transpose() * b.transpose());
    }
}

// im2col for output rows [r0, r1): col is (Ci*k*k) x (nrows*Wo), row-major.
template <typename T>
void im2col_rows(const T* x, int64_t Ci, int64_t H, int64_t W, int k, int pad, int64_t Wo,
                 int64_t r0, int64_t r1, T* col) {
    const int64_t P = (r1 - r0) * Wo;
    for (int64_t ci = 0; ci < Ci; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* dst = col + ((ci * k + ky) * k + kx) * P;
                for (int64_t oy = r0; oy < r1; ++oy, dst += Wo) {
                    const int64_t iy = oy + ky - pad;
                    if (iy < 0 || iy >= H) {
                        std::memset(dst, 0, sizeof(T) * static_cast<size_t>(Wo));
                        continue;
                    }
                    const int64_t ox0 = std::max<int64_t>(0, pad - kx);
                    const int64_t ox1 = std::min<int64_t>(Wo, W + pad - kx);
                    if (ox0 > 0) std::memset(dst, 0, sizeof(T) * static_cast<size_t>(ox0));
                    if (ox1 > ox0)
                        std::memcpy(dst + ox0, x + (ci * H + iy) * W + ox0 + kx - pad,
                                    sizeof(T) * static_cast<size_t>(ox1 - ox0));
                    if (ox1 < Wo)
                        std::memset(dst + ox1, 0, sizeof(T) * static_cast<size_t>(Wo - ox1));
                }
            }
        }
    }
}

// Transpose of im2col_rows: scatter-add col gradients back into dx.
template <typename T>
void col2im_rows(const T* col, int64_t Ci, int64_t H, int64_t W, int k, int pad, int64_t Wo,
                 int64_t r0, int64_t r1, T* dx) {
    const int64_t P = (r1 - r0) * Wo;
    for (int64_t ci = 0; ci < Ci; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* src = col + ((ci * k + ky) * k + kx) * P;
                for (int64_t oy = r0; oy < r1; ++oy, src += Wo) {
                    const int64_t iy = oy + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    const int64_t ox0 = std::max<int64_t>(0, pad - kx);
                    const int64_t ox1 = std::min<int64_t>(Wo, W + pad - kx);
                    T* drow = dx + (ci * H + iy) * W + kx - pad;
                    for (int64_t ox = ox0; ox < ox1; ++ox) drow[ox] += src[ox];
                }
            }
        }
    }
}

// im2col scratch budget in scalars (~64 MB for float). Mutable so tests can
// force multi-chunk execution on small tensors.
inline int64_t conv_col_budget = int64_t(1) << 24;

inline int64_t conv_chunk_rows(int64_t ci_kk, int64_t Wo, int64_t Ho) {
    int64_t rows = conv_col_budget / std::max<int64_t>(1, ci_kk * Wo);
    return std::max<int64_t>(1, std::min(rows, Ho));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise + reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_shape(a.shape() == b.shape(),
                "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    const T* ap = a.data();
    const T* bp = b.data();
    T* op = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
    detail::wire<T>(out, {a.node(), b.node()}, [an = a.node(), bn = b.node()](auto& self) {
        const int64_t n = self.numel();
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape());
    const T* ap = a.data();
    T* op = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * s;
    detail::wire<T>(out, {a.node()}, [an = a.node(), s](auto& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        const int64_t n = self.numel();
        for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * s;
    });
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xp = x.data();
    T* op = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = xp[i] > T(0) ? xp[i] : T(0);
    detail::wire<T>(out, {x.node()}, [xn = x.node()](auto& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        const int64_t n = self.numel();
        for (int64_t i = 0; i < n; ++i)
            if (xn->value[i] > T(0)) g[i] += self.grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xp = x.data();
    T* op = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = T(1) / (T(1) + std::exp(-xp[i]));
    detail::wire<T>(out, {x.node()}, [xn = x.node(), on = out.node()](auto& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        const int64_t n = self.numel();
        for (int64_t i = 0; i < n; ++i) {
            const T s = on->value[i];
            g[i] += self.grad[i] * s * (T(1) - s);
        }
    });
    return out;
}

template <typename T>
Tensor<T> vsum(const Tensor<T>& x) {
    Tensor<T> out(Shape{1});
    const T* xp = x.data();
    T acc = T(0);
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) acc += xp[i];
    out.set(0, acc);
    detail::wire<T>(out, {x.node()}, [xn = x.node()](auto& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        const T go = self.grad[0];
        for (size_t i = 0; i < g.size(); ++i) g[i] += go;
    });
    return out;
}

template <typename T>
Tensor<T> vmean(const Tensor<T>& x) {
    return mul_scalar(vsum(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// conv2d: stride 1, square kernel, symmetric zero padding
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int pad) {
    check_shape(x.ndim() == 4, "conv2d: input must be NCHW, got " + shape_str(x.shape()));
    check_shape(w.ndim() == 4 && w.dim(2) == w.dim(3), "conv2d: weight must be (Co,Ci,k,k)");
    check_shape(w.dim(1) == x.dim(1), "conv2d: channel mismatch, input " + shape_str(x.shape()) +
                                          " weight " + shape_str(w.shape()));
    const int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Co = w.dim(0);
    const int k = static_cast<int>(w.dim(2));
    const int64_t Ho = H + 2 * pad - k + 1;
    const int64_t Wo = W + 2 * pad - k + 1;
    check_shape(Ho >= 1 && Wo >= 1, "conv2d: kernel larger than padded input");
    if (b.defined()) check_shape(b.ndim() == 1 && b.dim(0) == Co, "conv2d: bias must be (Co)");

    Tensor<T> out(Shape{N, Co, Ho, Wo});
    const int64_t hw = H * W, ohw = Ho * Wo, ck = Ci * k * k;
    const T* xp = x.data();
    const T* wp = w.data();
    T* op = out.data();

    if (k == 1 && pad == 0) {
        for (int64_t n = 0; n < N; ++n)
            detail::gemm<T>(false, false, Co, ohw, Ci, T(1), wp, xp + n * Ci * hw,
                            op + n * Co * ohw, false);
    } else {
        const int64_t chunk = detail::conv_chunk_rows(ck, Wo, Ho);
        std::vector<T> col(static_cast<size_t>(ck * chunk * Wo));
        std::vector<T> ybuf(static_cast<size_t>(Co * chunk * Wo));
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t r0 = 0; r0 < Ho; r0 += chunk) {
                const int64_t r1 = std::min(Ho, r0 + chunk);
                const int64_t P = (r1 - r0) * Wo;
                detail::im2col_rows(xp + n * Ci * hw, Ci, H, W, k, pad, Wo, r0, r1, col.data());
                detail::gemm<T>(false, false, Co, P, ck, T(1), wp, col.data(), ybuf.data(), false);
                for (int64_t co = 0; co < Co; ++co)
                    std::memcpy(op + (n * Co + co) * ohw + r0 * Wo, ybuf.data() + co * P,
                                sizeof(T) * static_cast<size_t>(P));
            }
        }
    }
    if (b.defined()) {
        const T* bp = b.data();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t co = 0; co < Co; ++co) {
                T* dst = op + (n * Co + co) * ohw;
                const T bias = bp[co];
                for (int64_t i = 0; i < ohw; ++i) dst[i] += bias;
            }
    }

    std::vector<std::shared_ptr<detail::Node<T>>> parents{x.node(), w.node()};
    if (b.defined()) parents.push_back(b.node());
    detail::wire<T>(
        out, std::move(parents),
        [xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr, N, Ci, H, W, Co, k,
         pad, Ho, Wo](auto& self) {
            const int64_t hw = H * W, ohw = Ho * Wo, ck = Ci * k * k;
            const std::vector<T>& dy = self.grad;
            if (bn && bn->requires_grad) {
                auto& db = bn->ensure_grad();
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t co = 0; co < Co; ++co) {
                        const T* g = dy.data() + (n * Co + co) * ohw;
                        T acc = T(0);
                        for (int64_t i = 0; i < ohw; ++i) acc += g[i];
                        db[co] += acc;
                    }
            }
            const bool need_dw = wn->requires_grad;
            const bool need_dx = xn->requires_grad;
            if (!need_dw && !need_dx) return;
            const T* xp = xn->value.data();
            const T* wp = wn->value.data();
            T* dw = need_dw ? wn->ensure_grad().data() : nullptr;
            T* dx = need_dx ? xn->ensure_grad().data() : nullptr;

            if (k == 1 && pad == 0) {
                for (int64_t n = 0; n < N; ++n) {
                    const T* g = dy.data() + n * Co * ohw;
                    if (need_dw)
                        detail::gemm<T>(false, true, Co, Ci, ohw, T(1), g, xp + n * Ci * hw, dw,
                                        true);
                    if (need_dx)
                        detail::gemm<T>(true, false, Ci, ohw, Co, T(1), wp, g, dx + n * Ci * hw,
                                        true);
                }
                return;
            }
            const int64_t chunk = detail::conv_chunk_rows(ck, Wo, Ho);
            std::vector<T> col(static_cast<size_t>(ck * chunk * Wo));
            std::vector<T> gbuf(static_cast<size_t>(Co * chunk * Wo));
            std::vector<T> dcol(need_dx ? static_cast<size_t>(ck * chunk * Wo) : 0);
            for (int64_t n = 0; n < N; ++n) {
                for (int64_t r0 = 0; r0 < Ho; r0 += chunk) {
                    const int64_t r1 = std::min(Ho, r0 + chunk);
                    const int64_t P = (r1 - r0) * Wo;
                    for (int64_t co = 0; co < Co; ++co)
                        std::memcpy(gbuf.data() + co * P, dy.data() + (n * Co + co) * ohw + r0 * Wo,
                                    sizeof(T) * static_cast<size_t>(P));
                    if (need_dw) {
                        detail::im2col_rows(xp + n * Ci * hw, Ci, H, W, k, pad, Wo, r0, r1,
                                            col.data());
                        detail::gemm<T>(false, true, Co, ck, P, T(1), gbuf.data(), col.data(), dw,
                                        true);
                    }
                    if (need_dx) {
                        detail::gemm<T>(true, false, ck, P, Co, T(1), wp, gbuf.data(), dcol.data(),
                                        false);
                        detail::col2im_rows(dcol.data(), Ci, H, W, k, pad, Wo, r0, r1,
                                            dx + n * Ci * hw);
                    }
                }
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// batch norm (2d): training uses batch statistics and updates running stats
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                       T momentum = T(0.1), T eps = T(1e-5)) {
    check_shape(x.ndim() == 4, "batch_norm2d: input must be NCHW");
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    check_shape(gamma.numel() == C && beta.numel() == C && running_mean.numel() == C &&
                    running_var.numel() == C,
                "batch_norm2d: parameter size mismatch");
    const int64_t plane = H * W;
    const int64_t M = N * plane;  // elements per channel

    std::vector<T> mean(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));
    const T* xp = x.data();
    if (training) {
        check_shape(M >= 1, "batch_norm2d: empty input");
        for (int64_t c = 0; c < C; ++c) {
            T s = T(0);
            for (int64_t n = 0; n < N; ++n) {
                const T* p = xp + (n * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) s += p[i];
            }
            const T mu = s / static_cast<T>(M);
            T v = T(0);
            for (int64_t n = 0; n < N; ++n) {
                const T* p = xp + (n * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const T d = p[i] - mu;
                    v += d * d;
                }
            }
            const T var = v / static_cast<T>(M);
            mean[c] = mu;
            invstd[c] = T(1) / std::sqrt(var + eps);
            // running stats keep the unbiased variance
            const T var_u = M > 1 ? v / static_cast<T>(M - 1) : var;
            running_mean.set(c, (T(1) - momentum) * running_mean.at(c) + momentum * mu);
            running_var.set(c, (T(1) - momentum) * running_var.at(c) + momentum * var_u);
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            mean[c] = running_mean.at(c);
            invstd[c] = T(1) / std::sqrt(running_var.at(c) + eps);
        }
    }

    Tensor<T> out(x.shape());
    T* op = out.data();
    const T* gp = gamma.data();
    const T* bp = beta.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const T* p = xp + (n * C + c) * plane;
            T* o = op + (n * C + c) * plane;
            const T mu = mean[c], is = invstd[c], g = gp[c], bb = bp[c];
            for (int64_t i = 0; i < plane; ++i) o[i] = (p[i] - mu) * is * g + bb;
        }

    detail::wire<T>(out, {x.node(), gamma.node(), beta.node()},
                    [xn = x.node(), gn = gamma.node(), bn = beta.node(), mean, invstd, training, N,
                     C, plane, M](auto& self) {
                        const std::vector<T>& dy = self.grad;
                        const T* xp = xn->value.data();
                        std::vector<T>* dxv = xn->requires_grad ? &xn->ensure_grad() : nullptr;
                        std::vector<T>* dgv = gn->requires_grad ? &gn->ensure_grad() : nullptr;
                        std::vector<T>* dbv = bn->requires_grad ? &bn->ensure_grad() : nullptr;
                        for (int64_t c = 0; c < C; ++c) {
                            const T mu = mean[c], is = invstd[c];
                            T s1 = T(0), s2 = T(0);
                            for (int64_t n = 0; n < N; ++n) {
                                const T* g = dy.data() + (n * C + c) * plane;
                                const T* p = xp + (n * C + c) * plane;
                                for (int64_t i = 0; i < plane; ++i) {
                                    s1 += g[i];
                                    s2 += g[i] * (p[i] - mu) * is;
                                }
                            }
                            if (dbv) (*dbv)[c] += s1;
                            if (dgv) (*dgv)[c] += s2;
                            if (!dxv) continue;
                            const T gam = gn->value[c];
                            if (training) {
                                const T inv_m = T(1) / static_cast<T>(M);
                                for (int64_t n = 0; n < N; ++n) {
                                    const T* g = dy.data() + (n * C + c) * plane;
                                    const T* p = xp + (n * C + c) * plane;
                                    T* d = dxv->data() + (n * C + c) * plane;
                                    for (int64_t i = 0; i < plane; ++i) {
                                        const T xh = (p[i] - mu) * is;
                                        d[i] += gam * is * (g[i] - s1 * inv_m - xh * s2 * inv_m);
                                    }
                                }
                            } else {
                                for (int64_t n = 0; n < N; ++n) {
                                    const T* g = dy.data() + (n * C + c) * plane;
                                    T* d = dxv->data() + (n * C + c) * plane;
                                    for (int64_t i = 0; i < plane; ++i) d[i] += gam * is * g[i];
                                }
                            }
                        }
                    });
    return out;
}

// ---------------------------------------------------------------------------
// max pool 2x2 stride 2
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> max_pool2x2(const Tensor<T>& x) {
    check_shape(x.ndim() == 4, "max_pool2x2: input must be NCHW");
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    check_shape(H % 2 == 0 && W % 2 == 0,
                "max_pool2x2: spatial size must be even, got " + shape_str(x.shape()));
    const int64_t Ho = H / 2, Wo = W / 2;
    Tensor<T> out(Shape{N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
    const T* xp = x.data();
    T* op = out.data();
    int64_t oi = 0;
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* p = xp + nc * H * W;
        for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox, ++oi) {
                const int64_t base = (2 * oy) * W + 2 * ox;
                int64_t best = base;
                T bv = p[base];
                const int64_t cand[3] = {base + 1, base + W, base + W + 1};
                for (int64_t c2 : cand)
                    if (p[c2] > bv) {
                        bv = p[c2];
                        best = c2;
                    }
                op[oi] = bv;
                (*argmax)[static_cast<size_t>(oi)] = nc * H * W + best;
            }
    }
    detail::wire<T>(out, {x.node()}, [xn = x.node(), argmax](auto& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        const int64_t n = self.numel();
        for (int64_t i = 0; i < n; ++i) g[(*argmax)[static_cast<size_t>(i)]] += self.grad[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// bilinear resize, align_corners=false (area-proportional, borders clamped)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
struct LerpAxis {
    std::vector<int64_t> i0, i1;
    std::vector<T> w1;  // weight of i1; weight of i0 is 1-w1
};

template <typename T>
LerpAxis<T> make_lerp_axis(int64_t in, int64_t out) {
    LerpAxis<T> ax;
    ax.i0.resize(static_cast<size_t>(out));
    ax.i1.resize(static_cast<size_t>(out));
    ax.w1.resize(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        int64_t lo = static_cast<int64_t>(src);
        if (lo > in - 1) lo = in - 1;
        ax.i0[static_cast<size_t>(o)] = lo;
        ax.i1[static_cast<size_t>(o)] = std::min(lo + 1, in - 1);
        ax.w1[static_cast<size_t>(o)] = static_cast<T>(src - static_cast<double>(lo));
    }
    return ax;
}

}  // namespace detail

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int64_t oh, int64_t ow) {
    check_shape(x.ndim() == 4, "resize_bilinear: input must be NCHW");
    check_shape(oh >= 1 && ow >= 1, "resize_bilinear: output size must be positive");
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (oh == H && ow == W) {
        // identity resample; still copies so the graph edge stays explicit
        Tensor<T> out = x.clone();
        detail::wire<T>(out, {x.node()}, [xn = x.node()](auto& self) {
            if (!xn->requires_grad) return;
            auto& g = xn->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        });
        return out;
    }
    auto ay = std::make_shared<detail::LerpAxis<T>>(detail::make_lerp_axis<T>(H, oh));
    auto axx = std::make_shared<detail::LerpAxis<T>>(detail::make_lerp_axis<T>(W, ow));
    Tensor<T> out(Shape{N, C, oh, ow});
    const T* xp = x.data();
    T* op = out.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* p = xp + nc * H * W;
        T* o = op + nc * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t y0 = ay->i0[oy], y1 = ay->i1[oy];
            const T ly = ay->w1[oy];
            for (int64_t ox = 0; ox < ow; ++ox) {
                const int64_t x0 = axx->i0[ox], x1 = axx->i1[ox];
                const T lx = axx->w1[ox];
                const T top = p[y0 * W + x0] * (T(1) - lx) + p[y0 * W + x1] * lx;
                const T bot = p[y1 * W + x0] * (T(1) - lx) + p[y1 * W + x1] * lx;
                o[oy * ow + ox] = top * (T(1) - ly) + bot * ly;
            }
        }
    }
    detail::wire<T>(out, {x.node()}, [xn = x.node(), ay, axx, N, C, H, W, oh, ow](auto& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            T* d = g.data() + nc * H * W;
            const T* go = self.grad.data() + nc * oh * ow;
            for (int64_t oy = 0; oy < oh; ++oy) {
                const int64_t y0 = ay->i0[oy], y1 = ay->i1[oy];
                const T ly = ay->w1[oy];
                for (int64_t ox = 0; ox < ow; ++ox) {
                    const int64_t x0 = axx->i0[ox], x1 = axx->i1[ox];
                    const T lx = axx->w1[ox];
                    const T gv = go[oy * ow + ox];
                    d[y0 * W + x0] += gv * (T(1) - ly) * (T(1) - lx);
                    d[y0 * W + x1] += gv * (T(1) - ly) * lx;
                    d[y1 * W + x0] += gv * ly * (T(1) - lx);
                    d[y1 * W + x1] += gv * ly * lx;
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// channel concatenation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
    check_shape(!xs.empty(), "concat_channels: empty input list");
    const int64_t N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    int64_t Ctot = 0;
    for (const auto& x : xs) {
        check_shape(x.ndim() == 4 && x.dim(0) == N && x.dim(2) == H && x.dim(3) == W,
                    "concat_channels: incompatible shape " + shape_str(x.shape()));
        Ctot += x.dim(1);
    }
    Tensor<T> out(Shape{N, Ctot, H, W});
    const int64_t plane = H * W;
    T* op = out.data();
    for (int64_t n = 0; n < N; ++n) {
        int64_t coff = 0;
        for (const auto& x : xs) {
            const int64_t Ci = x.dim(1);
            std::memcpy(op + (n * Ctot + coff) * plane, x.data() + n * Ci * plane,
                        sizeof(T) * static_cast<size_t>(Ci * plane));
            coff += Ci;
        }
    }
    std::vector<std::shared_ptr<detail::Node<T>>> parents;
    for (const auto& x : xs) parents.push_back(x.node());
    detail::wire<T>(out, parents, [parents, N, Ctot, plane](auto& self) {
        for (int64_t n = 0; n < N; ++n) {
            int64_t coff = 0;
            for (const auto& p : parents) {
                const int64_t Ci = static_cast<int64_t>(p->value.size()) / (N * plane);
                if (p->requires_grad) {
                    auto& g = p->ensure_grad();
                    const T* src = self.grad.data() + (n * Ctot + coff) * plane;
                    T* dst = g.data() + n * Ci * plane;
                    for (int64_t i = 0; i < Ci * plane; ++i) dst[i] += src[i];
                }
                coff += Ci;
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// token attention: softmax(Q^T K / sqrt(d)) applied to V
// q, k, v: (B, d, N) with tokens as columns; output (B, d, N)
// ---------------------------------------------------------------------------

namespace detail {

// row-wise softmax with max subtraction, in place
template <typename T>
void softmax_rows(T* s, int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i) {
        T* r = s + i * cols;
        T m = r[0];
        for (int64_t j = 1; j < cols; ++j) m = std::max(m, r[j]);
        T z = T(0);
        for (int64_t j = 0; j < cols; ++j) {
            r[j] = std::exp(r[j] - m);
            z += r[j];
        }
        const T inv = T(1) / z;
        for (int64_t j = 0; j < cols; ++j) r[j] *= inv;
    }
}

}  // namespace detail

template <typename T>
Tensor<T> attention_tokens(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    check_shape(q.ndim() >= 3 && q.shape() == k.shape() && q.shape() == v.shape(),
                "attention_tokens: q,k,v must share shape (B,d,spatial...)");
    const int64_t B = q.dim(0), d = q.dim(1), Nt = q.numel() / (B * d);
    check_shape(Nt >= 1 && d >= 1, "attention_tokens: empty token grid");
    const T scale = T(1) / std::sqrt(static_cast<T>(d));

    Tensor<T> out(q.shape());
    const bool save = grad_enabled() &&
                      (q.requires_grad() || k.requires_grad() || v.requires_grad());
    auto probs = save ? std::make_shared<std::vector<T>>(static_cast<size_t>(B * Nt * Nt))
                      : nullptr;
    std::vector<T> a(static_cast<size_t>(Nt * Nt));
    for (int64_t b = 0; b < B; ++b) {
        const T* qp = q.data() + b * d * Nt;
        const T* kp = k.data() + b * d * Nt;
        const T* vp = v.data() + b * d * Nt;
        detail::gemm<T>(true, false, Nt, Nt, d, scale, qp, kp, a.data(), false);
        detail::softmax_rows(a.data(), Nt, Nt);
        detail::gemm<T>(false, true, d, Nt, Nt, T(1), vp, a.data(), out.data() + b * d * Nt,
                        false);
        if (save)
            std::memcpy(probs->data() + b * Nt * Nt, a.data(),
                        sizeof(T) * static_cast<size_t>(Nt * Nt));
    }

    detail::wire<T>(
        out, {q.node(), k.node(), v.node()},
        [qn = q.node(), kn = k.node(), vn = v.node(), probs, B, d, Nt, scale](auto& self) {
            std::vector<T> da(static_cast<size_t>(Nt * Nt));
            std::vector<T> ds(static_cast<size_t>(Nt * Nt));
            for (int64_t b = 0; b < B; ++b) {
                const T* A = probs->data() + b * Nt * Nt;
                const T* gO = self.grad.data() + b * d * Nt;
                const T* qp = qn->value.data() + b * d * Nt;
                const T* kp = kn->value.data() + b * d * Nt;
                const T* vp = vn->value.data() + b * d * Nt;
                if (vn->requires_grad)
                    detail::gemm<T>(false, false, d, Nt, Nt, T(1), gO, A,
                                    vn->ensure_grad().data() + b * d * Nt, true);
                if (!qn->requires_grad && !kn->requires_grad) continue;
                // dA = gO^T V; dS_ij = A_ij (dA_ij - sum_j' dA_ij' A_ij')
                detail::gemm<T>(true, false, Nt, Nt, d, T(1), gO, vp, da.data(), false);
                for (int64_t i = 0; i < Nt; ++i) {
                    const T* ar = A + i * Nt;
                    const T* dar = da.data() + i * Nt;
                    T dot = T(0);
                    for (int64_t j = 0; j < Nt; ++j) dot += ar[j] * dar[j];
                    T* dsr = ds.data() + i * Nt;
                    for (int64_t j = 0; j < Nt; ++j) dsr[j] = ar[j] * (dar[j] - dot);
                }
                if (qn->requires_grad)
                    detail::gemm<T>(false, true, d, Nt, Nt, scale, kp, ds.data(),
                                    qn->ensure_grad().data() + b * d * Nt, true);
                if (kn->requires_grad)
                    detail::gemm<T>(false, false, d, Nt, Nt, scale, qp, ds.data(),
                                    kn->ensure_grad().data() + b * d * Nt, true);
            }
        });
    return out;
}

// Forward-only attention probabilities (B*N*N), for inspection in tests.
template <typename T>
std::vector<T> attention_probs(const Tensor<T>& q, const Tensor<T>& k) {
    check_shape(q.ndim() >= 3 && q.shape() == k.shape(), "attention_probs: bad shapes");
    const int64_t B = q.dim(0), d = q.dim(1), Nt = q.numel() / (B * d);
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    std::vector<T> a(static_cast<size_t>(B * Nt * Nt));
    for (int64_t b = 0; b < B; ++b) {
        detail::gemm<T>(true, false, Nt, Nt, d, scale, q.data() + b * d * Nt,
                        k.data() + b * d * Nt, a.data() + b * Nt * Nt, false);
        detail::softmax_rows(a.data() + b * Nt * Nt, Nt, Nt);
    }
    return a;
}

}  // namespace hcgm
