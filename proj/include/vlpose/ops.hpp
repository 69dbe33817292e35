#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "vlpose/autograd.hpp"

namespace vlpose {

namespace kernels {

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A^T * B, A is [k x m], B is [k x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = arow[i];
            if (av == T(0)) continue;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A * B^T, A is [m x k], B is [n x k]. B is transposed once so the
// inner loop runs over contiguous rows like gemm_nn.
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    std::vector<T> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_nn(m, k, n, a, bt.data(), c);
}

}  // namespace kernels

namespace detail {

inline void require_same(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::require_same(a.shape(), b.shape(), "add");
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return make_result<T>(std::move(out), {a, b}, "add", [a, b](const Tensor<T>& g) {
        for (const Var<T>* v : {&a, &b})
            if (auto* gv = grad_of(*v))
                for (std::size_t i = 0; i < g.numel(); ++i) (*gv)[i] += g[i];
    });
}

/// a + b where b's shape equals the trailing dims of a's shape (bias / positional add).
template <typename T>
Var<T> add_broadcast(const Var<T>& a, const Var<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin()))
        throw DimensionError("add_broadcast: " + shape_str(bs) + " is not a suffix of " + shape_str(as));
    const std::size_t inner = b.numel();
    const std::size_t outer = a.numel() / inner;
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += bv[i];
    return make_result<T>(std::move(out), {a, b}, "add_broadcast", [a, b, outer, inner](const Tensor<T>& g) {
        if (auto* ga = grad_of(a))
            for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
        if (auto* gb = grad_of(b))
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) (*gb)[i] += g[o * inner + i];
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a.value();
    for (auto& v : out.values()) v *= s;
    return make_result<T>(std::move(out), {a}, "scale", [a, s](const Tensor<T>& g) {
        if (auto* ga = grad_of(a))
            for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += s * g[i];
    });
}

/// Gradient at exactly zero is 0.
template <typename T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out = x.value();
    const bool monitor = KinkMonitor::active();
    for (auto& v : out.values()) {
        if (monitor) KinkMonitor::observe(static_cast<double>(v));
        v = v > T(0) ? v : T(0);
    }
    return make_result<T>(std::move(out), {x}, "relu", [x](const Tensor<T>& g) {
        if (auto* gx = grad_of(x)) {
            const auto& xv = x.value();
            for (std::size_t i = 0; i < g.numel(); ++i)
                if (xv[i] > T(0)) (*gx)[i] += g[i];
        }
    });
}

/// tanh-approximated GELU (transformer feed-forward activation).
template <typename T>
Var<T> gelu(const Var<T>& x) {
    constexpr T k0 = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k1 = T(0.044715);
    Tensor<T> out = x.value();
    for (auto& v : out.values()) {
        const T t = std::tanh(k0 * (v + k1 * v * v * v));
        v = T(0.5) * v * (T(1) + t);
    }
    return make_result<T>(std::move(out), {x}, "gelu", [x](const Tensor<T>& g) {
        if (auto* gx = grad_of(x)) {
            const auto& xv = x.value();
            for (std::size_t i = 0; i < g.numel(); ++i) {
                const T v = xv[i];
                const T t = std::tanh(k0 * (v + k1 * v * v * v));
                const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * k0 * (T(1) + T(3) * k1 * v * v);
                (*gx)[i] += g[i] * d;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Products

/// Standard 2-D matrix product.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor<T> out({m, n});
    kernels::gemm_nn(m, k, n, a.value().data(), b.value().data(), out.data());
    return make_result<T>(std::move(out), {a, b}, "matmul", [a, b, m, k, n](const Tensor<T>& g) {
        if (auto* ga = grad_of(a)) kernels::gemm_nt(m, n, k, g.data(), b.value().data(), ga->data());
        if (auto* gb = grad_of(b)) kernels::gemm_tn(k, m, n, a.value().data(), g.data(), gb->data());
    });
}

/// Batched product [B x m x k] * [B x k x n].
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1])
        throw DimensionError("bmm: cannot multiply " + shape_str(as) + " by " + shape_str(bs));
    const std::size_t B = as[0], m = as[1], k = as[2], n = bs[2];
    Tensor<T> out({B, m, n});
    for (std::size_t i = 0; i < B; ++i)
        kernels::gemm_nn(m, k, n, a.value().data() + i * m * k, b.value().data() + i * k * n, out.data() + i * m * n);
    return make_result<T>(std::move(out), {a, b}, "bmm", [a, b, B, m, k, n](const Tensor<T>& g) {
        auto* ga = grad_of(a);
        auto* gb = grad_of(b);
        for (std::size_t i = 0; i < B; ++i) {
            const T* gi = g.data() + i * m * n;
            if (ga) kernels::gemm_nt(m, n, k, gi, b.value().data() + i * k * n, ga->data() + i * m * k);
            if (gb) kernels::gemm_tn(k, m, n, a.value().data() + i * m * k, gi, gb->data() + i * k * n);
        }
    });
}

/// Affine map over the last dimension: x[..., in] * w[in x out] + b[out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = {}) {
    const Shape& xs = x.shape();
    if (xs.empty() || w.shape().size() != 2 || xs.back() != w.shape()[0])
        throw DimensionError("linear: input " + shape_str(xs) + " incompatible with weight " + shape_str(w.shape()));
    const std::size_t in = w.shape()[0], outd = w.shape()[1];
    if (b.defined() && b.shape() != Shape{outd})
        throw DimensionError("linear: bias " + shape_str(b.shape()) + " expected [" + std::to_string(outd) + "]");
    const std::size_t rows = x.numel() / in;
    Shape os = xs;
    os.back() = outd;
    Tensor<T> out(os);
    if (b.defined())
        for (std::size_t r = 0; r < rows; ++r)
            std::copy(b.value().data(), b.value().data() + outd, out.data() + r * outd);
    kernels::gemm_nn(rows, in, outd, x.value().data(), w.value().data(), out.data());
    std::vector<Var<T>> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return make_result<T>(std::move(out), parents, "linear", [x, w, b, rows, in, outd](const Tensor<T>& g) {
        if (auto* gx = grad_of(x)) kernels::gemm_nt(rows, outd, in, g.data(), w.value().data(), gx->data());
        if (auto* gw = grad_of(w)) kernels::gemm_tn(in, rows, outd, x.value().data(), g.data(), gw->data());
        if (b.defined())
            if (auto* gb = grad_of(b))
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < outd; ++j) (*gb)[j] += g[r * outd + j];
    });
}

// ---------------------------------------------------------------------------
// Normalizations

/// Max-subtracted softmax over the last dimension.
template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
    if (x.shape().empty() || x.shape().back() == 0) throw DimensionError("softmax_lastdim: empty last dimension");
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    Tensor<T> out = x.value();
    for (std::size_t r = 0; r < rows; ++r) {
        T* row = out.data() + r * n;
        const T mx = *std::max_element(row, row + n);
        T s = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            s += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= s;
    }
    auto y = std::make_shared<Tensor<T>>(out);
    return make_result<T>(std::move(out), {x}, "softmax", [x, y, n, rows](const Tensor<T>& g) {
        if (auto* gx = grad_of(x))
            for (std::size_t r = 0; r < rows; ++r) {
                const T* yr = y->data() + r * n;
                const T* gr = g.data() + r * n;
                T dot = T(0);
                for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                for (std::size_t j = 0; j < n; ++j) (*gx)[r * n + j] += yr[j] * (gr[j] - dot);
            }
    });
}

/// Per-token layer normalization with population variance; a constant row
/// normalizes to zero (variance is clamped by eps).
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    if (x.shape().empty()) throw DimensionError("layer_norm: scalar input");
    const std::size_t c = x.shape().back();
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
        throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                             " do not match channels of " + shape_str(x.shape()));
    const std::size_t rows = x.numel() / c;
    auto xhat = std::make_shared<Tensor<T>>(x.shape());
    auto inv = std::make_shared<std::vector<T>>(rows);
    Tensor<T> out(x.shape());
    const auto& xv = x.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xv.data() + r * c;
        T mean = T(0);
        for (std::size_t j = 0; j < c; ++j) mean += xr[j];
        mean /= T(c);
        T var = T(0);
        for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= T(c);
        const T iv = T(1) / std::sqrt(var + eps);
        (*inv)[r] = iv;
        for (std::size_t j = 0; j < c; ++j) {
            const T h = (xr[j] - mean) * iv;
            (*xhat)[r * c + j] = h;
            out[r * c + j] = h * gamma.value()[j] + beta.value()[j];
        }
    }
    return make_result<T>(std::move(out), {x, gamma, beta}, "layer_norm",
                          [x, gamma, beta, xhat, inv, rows, c](const Tensor<T>& g) {
        auto* gx = grad_of(x);
        auto* gg = grad_of(gamma);
        auto* gb = grad_of(beta);
        std::vector<T> dxh(c);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* gr = g.data() + r * c;
            const T* hr = xhat->data() + r * c;
            if (gg)
                for (std::size_t j = 0; j < c; ++j) (*gg)[j] += gr[j] * hr[j];
            if (gb)
                for (std::size_t j = 0; j < c; ++j) (*gb)[j] += gr[j];
            if (gx) {
                T m1 = T(0), m2 = T(0);
                for (std::size_t j = 0; j < c; ++j) {
                    dxh[j] = gr[j] * gamma.value()[j];
                    m1 += dxh[j];
                    m2 += dxh[j] * hr[j];
                }
                m1 /= T(c);
                m2 /= T(c);
                for (std::size_t j = 0; j < c; ++j) (*gx)[r * c + j] += (*inv)[r] * (dxh[j] - m1 - hr[j] * m2);
            }
        }
    });
}

/// Row-wise unit normalization over the last dimension.
template <typename T>
Var<T> l2_normalize_lastdim(const Var<T>& x, T eps = T(1e-12)) {
    const std::size_t c = x.shape().back();
    const std::size_t rows = x.numel() / c;
    Tensor<T> out = x.value();
    auto norms = std::make_shared<std::vector<T>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        T s = T(0);
        for (std::size_t j = 0; j < c; ++j) s += out[r * c + j] * out[r * c + j];
        const T nrm = std::max(std::sqrt(s), eps);
        (*norms)[r] = nrm;
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] /= nrm;
    }
    auto y = std::make_shared<Tensor<T>>(out);
    return make_result<T>(std::move(out), {x}, "l2_normalize", [x, y, norms, rows, c](const Tensor<T>& g) {
        if (auto* gx = grad_of(x))
            for (std::size_t r = 0; r < rows; ++r) {
                T dot = T(0);
                for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * (*y)[r * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    (*gx)[r * c + j] += (g[r * c + j] - (*y)[r * c + j] * dot) / (*norms)[r];
            }
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Var<T> reshape(const Var<T>& x, Shape s) {
    Tensor<T> out = x.value().reshaped(std::move(s));
    return make_result<T>(std::move(out), {x}, "reshape", [x](const Tensor<T>& g) {
        if (auto* gx = grad_of(x))
            for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i];
    });
}

namespace detail {

// For each output linear index, the matching input linear index.
inline std::vector<std::size_t> permute_index(const Shape& in, const std::vector<std::size_t>& perm, Shape& out_shape) {
    const std::size_t r = in.size();
    if (perm.size() != r) throw DimensionError("permute: rank mismatch");
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
    out_shape.assign(r, 0);
    std::vector<bool> used(r, false);
    for (std::size_t i = 0; i < r; ++i) {
        if (perm[i] >= r || used[perm[i]]) throw DimensionError("permute: invalid permutation");
        used[perm[i]] = true;
        out_shape[i] = in[perm[i]];
    }
    const std::size_t total = shape_numel(in);
    std::vector<std::size_t> idx(total);
    std::vector<std::size_t> counter(r, 0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < total; ++o) {
        idx[o] = off;
        for (std::size_t d = r; d-- > 0;) {
            ++counter[d];
            off += in_stride[perm[d]];
            if (counter[d] < out_shape[d]) break;
            off -= in_stride[perm[d]] * out_shape[d];
            counter[d] = 0;
        }
    }
    return idx;
}

}  // namespace detail

/// Generic axis permutation: out.dim(i) = in.dim(perm[i]).
template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm) {
    Shape os;
    auto idx = std::make_shared<std::vector<std::size_t>>(detail::permute_index(x.shape(), perm, os));
    Tensor<T> out(os);
    const auto& xv = x.value();
    for (std::size_t o = 0; o < idx->size(); ++o) out[o] = xv[(*idx)[o]];
    return make_result<T>(std::move(out), {x}, "permute", [x, idx](const Tensor<T>& g) {
        if (auto* gx = grad_of(x))
            for (std::size_t o = 0; o < idx->size(); ++o) (*gx)[(*idx)[o]] += g[o];
    });
}

template <typename T>
Var<T> transpose_last2(const Var<T>& x) {
    const std::size_t r = x.shape().size();
    if (r < 2) throw DimensionError("transpose_last2: rank < 2");
    std::vector<std::size_t> perm(r);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::swap(perm[r - 1], perm[r - 2]);
    return permute(x, perm);
}

/// Concatenate along `axis`; all other dims must agree.
template <typename T>
Var<T> concat(const Var<T>& a, const Var<T>& b, std::size_t axis) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() != bs.size() || axis >= as.size())
        throw DimensionError("concat: incompatible " + shape_str(as) + " and " + shape_str(bs));
    for (std::size_t i = 0; i < as.size(); ++i)
        if (i != axis && as[i] != bs[i])
            throw DimensionError("concat: incompatible " + shape_str(as) + " and " + shape_str(bs));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= as[i];
    for (std::size_t i = axis + 1; i < as.size(); ++i) inner *= as[i];
    const std::size_t na = as[axis] * inner, nb = bs[axis] * inner;
    Shape os = as;
    os[axis] += bs[axis];
    Tensor<T> out(os);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(a.value().data() + o * na, na, out.data() + o * (na + nb));
        std::copy_n(b.value().data() + o * nb, nb, out.data() + o * (na + nb) + na);
    }
    return make_result<T>(std::move(out), {a, b}, "concat", [a, b, outer, na, nb](const Tensor<T>& g) {
        auto* ga = grad_of(a);
        auto* gb = grad_of(b);
        for (std::size_t o = 0; o < outer; ++o) {
            const T* src = g.data() + o * (na + nb);
            if (ga)
                for (std::size_t i = 0; i < na; ++i) (*ga)[o * na + i] += src[i];
            if (gb)
                for (std::size_t i = 0; i < nb; ++i) (*gb)[o * nb + i] += src[na + i];
        }
    });
}

/// Contiguous range [start, start+len) along `axis`.
template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t len) {
    const Shape& xs = x.shape();
    if (axis >= xs.size() || start + len > xs[axis])
        throw DimensionError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                             ") out of bounds for axis " + std::to_string(axis) + " of " + shape_str(xs));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
    for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
    const std::size_t full = xs[axis] * inner, part = len * inner, off = start * inner;
    Shape os = xs;
    os[axis] = len;
    Tensor<T> out(os);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(x.value().data() + o * full + off, part, out.data() + o * part);
    return make_result<T>(std::move(out), {x}, "slice", [x, outer, full, part, off](const Tensor<T>& g) {
        if (auto* gx = grad_of(x))
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < part; ++i) (*gx)[o * full + off + i] += g[o * part + i];
    });
}

// ---------------------------------------------------------------------------
// Spatial ops. Feature maps are [N x C x H x W].

/// Transposed convolution, kernel 4, stride 2, padding 1: output spatial dims
/// are exactly doubled. Weight layout [C_in x C_out x 4 x 4].
template <typename T>
Var<T> deconv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias = {}) {
    constexpr std::size_t K = 4, S = 2, P = 1, KK = K * K;
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || ws[2] != K || ws[3] != K)
        throw DimensionError("deconv2d: expected x [N,Cin,h,w] and w [Cin,Cout,4,4], got " + shape_str(xs) + " and " +
                             shape_str(ws));
    if (xs[1] != ws[0])
        throw DimensionError("deconv2d: input channels " + shape_str(xs) + " do not match weight " + shape_str(ws));
    const std::size_t N = xs[0], ci = xs[1], h = xs[2], wd = xs[3], co = ws[1];
    if (bias.defined() && bias.shape() != Shape{co}) throw DimensionError("deconv2d: bias shape " + shape_str(bias.shape()));
    const std::size_t oh = h * S, ow = wd * S, hw = h * wd, ncol = co * KK;

    // Scatter table: for each (input pixel, kernel tap) the output offset in a plane, or npos.
    auto taps = std::make_shared<std::vector<std::size_t>>(hw * KK, std::string::npos);
    for (std::size_t iy = 0; iy < h; ++iy)
        for (std::size_t ix = 0; ix < wd; ++ix)
            for (std::size_t ky = 0; ky < K; ++ky)
                for (std::size_t kx = 0; kx < K; ++kx) {
                    const long oy = long(iy * S + ky) - long(P);
                    const long ox = long(ix * S + kx) - long(P);
                    if (oy >= 0 && ox >= 0 && oy < long(oh) && ox < long(ow))
                        (*taps)[(iy * wd + ix) * KK + ky * K + kx] = std::size_t(oy) * ow + std::size_t(ox);
                }

    Tensor<T> out({N, co, oh, ow});
    std::vector<T> xcl(hw * ci), cols(hw * ncol);
    for (std::size_t n = 0; n < N; ++n) {
        const T* xn = x.value().data() + n * ci * hw;
        for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t p = 0; p < hw; ++p) xcl[p * ci + c] = xn[c * hw + p];
        std::fill(cols.begin(), cols.end(), T(0));
        kernels::gemm_nn(hw, ci, ncol, xcl.data(), w.value().data(), cols.data());
        T* on = out.data() + n * co * oh * ow;
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t c = 0; c < co; ++c)
                for (std::size_t k = 0; k < KK; ++k) {
                    const std::size_t t = (*taps)[p * KK + k];
                    if (t != std::string::npos) on[c * oh * ow + t] += cols[p * ncol + c * KK + k];
                }
        if (bias.defined())
            for (std::size_t c = 0; c < co; ++c)
                for (std::size_t q = 0; q < oh * ow; ++q) on[c * oh * ow + q] += bias.value()[c];
    }
    std::vector<Var<T>> parents{x, w};
    if (bias.defined()) parents.push_back(bias);
    return make_result<T>(std::move(out), parents, "deconv2d",
                          [x, w, bias, taps, N, ci, co, hw, oh, ow, ncol](const Tensor<T>& g) {
        auto* gx = grad_of(x);
        auto* gw = grad_of(w);
        Tensor<T>* gb = bias.defined() ? grad_of(bias) : nullptr;
        std::vector<T> dcols(hw * ncol), xcl(hw * ci), dxcl(hw * ci);
        for (std::size_t n = 0; n < N; ++n) {
            const T* gn = g.data() + n * co * oh * ow;
            for (std::size_t p = 0; p < hw; ++p)
                for (std::size_t c = 0; c < co; ++c)
                    for (std::size_t k = 0; k < KK; ++k) {
                        const std::size_t t = (*taps)[p * KK + k];
                        dcols[p * ncol + c * KK + k] = t != std::string::npos ? gn[c * oh * ow + t] : T(0);
                    }
            if (gx) {
                std::fill(dxcl.begin(), dxcl.end(), T(0));
                kernels::gemm_nt(hw, ncol, ci, dcols.data(), w.value().data(), dxcl.data());
                T* gxn = gx->data() + n * ci * hw;
                for (std::size_t c = 0; c < ci; ++c)
                    for (std::size_t p = 0; p < hw; ++p) gxn[c * hw + p] += dxcl[p * ci + c];
            }
            if (gw) {
                const T* xn = x.value().data() + n * ci * hw;
                for (std::size_t c = 0; c < ci; ++c)
                    for (std::size_t p = 0; p < hw; ++p) xcl[p * ci + c] = xn[c * hw + p];
                kernels::gemm_tn(ci, hw, ncol, xcl.data(), dcols.data(), gw->data());
            }
            if (gb)
                for (std::size_t c = 0; c < co; ++c)
                    for (std::size_t q = 0; q < oh * ow; ++q) (*gb)[c] += gn[c * oh * ow + q];
        }
    });
}

/// Pointwise convolution; weight [C_out x C_in], bias [C_out].
template <typename T>
Var<T> conv2d_1x1(const Var<T>& x, const Var<T>& w, const Var<T>& bias = {}) {
    const Shape& xs = x.shape();
    if (xs.size() != 4 || w.shape().size() != 2 || w.shape()[1] != xs[1])
        throw DimensionError("conv2d_1x1: input " + shape_str(xs) + " incompatible with weight " + shape_str(w.shape()));
    const std::size_t N = xs[0], ci = xs[1], hw = xs[2] * xs[3], co = w.shape()[0];
    if (bias.defined() && bias.shape() != Shape{co}) throw DimensionError("conv2d_1x1: bias shape " + shape_str(bias.shape()));
    Tensor<T> out({N, co, xs[2], xs[3]});
    for (std::size_t n = 0; n < N; ++n) {
        T* on = out.data() + n * co * hw;
        if (bias.defined())
            for (std::size_t c = 0; c < co; ++c) std::fill_n(on + c * hw, hw, bias.value()[c]);
        kernels::gemm_nn(co, ci, hw, w.value().data(), x.value().data() + n * ci * hw, on);
    }
    std::vector<Var<T>> parents{x, w};
    if (bias.defined()) parents.push_back(bias);
    return make_result<T>(std::move(out), parents, "conv2d_1x1", [x, w, bias, N, ci, co, hw](const Tensor<T>& g) {
        auto* gx = grad_of(x);
        auto* gw = grad_of(w);
        Tensor<T>* gb = bias.defined() ? grad_of(bias) : nullptr;
        for (std::size_t n = 0; n < N; ++n) {
            const T* gn = g.data() + n * co * hw;
            if (gx) kernels::gemm_tn(ci, co, hw, w.value().data(), gn, gx->data() + n * ci * hw);
            if (gw) kernels::gemm_nt(co, hw, ci, gn, x.value().data() + n * ci * hw, gw->data());
            if (gb)
                for (std::size_t c = 0; c < co; ++c)
                    for (std::size_t q = 0; q < hw; ++q) (*gb)[c] += gn[c * hw + q];
        }
    });
}

/// Running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormStats {
    Tensor<T> running_mean;
    Tensor<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

    explicit BatchNormStats(std::size_t channels = 0)
        : running_mean({channels}, T(0)), running_var({channels}, T(1)) {}
};

/// Batch normalization over (N, H, W) per channel. Training mode normalizes with
/// batch statistics and updates the running estimates; eval mode is a fixed affine map.
template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats, bool train) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw DimensionError("batch_norm2d: expected [N,C,H,W], got " + shape_str(xs));
    const std::size_t N = xs[0], C = xs[1], hw = xs[2] * xs[3];
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C} || stats.running_mean.shape() != Shape{C})
        throw DimensionError("batch_norm2d: parameter shapes do not match channels of " + shape_str(xs));
    const std::size_t M = N * hw;
    const auto& xv = x.value();
    auto inv = std::make_shared<std::vector<T>>(C);
    auto xhat = std::make_shared<Tensor<T>>(xs);
    Tensor<T> out(xs);
    for (std::size_t c = 0; c < C; ++c) {
        T mean, var;
        if (train) {
            mean = T(0);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t q = 0; q < hw; ++q) mean += xv[(n * C + c) * hw + q];
            mean /= T(M);
            var = T(0);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t q = 0; q < hw; ++q) {
                    const T d = xv[(n * C + c) * hw + q] - mean;
                    var += d * d;
                }
            var /= T(M);
            const T unbiased = M > 1 ? var * T(M) / T(M - 1) : var;
            stats.running_mean[c] = (T(1) - stats.momentum) * stats.running_mean[c] + stats.momentum * mean;
            stats.running_var[c] = (T(1) - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
        } else {
            mean = stats.running_mean[c];
            var = stats.running_var[c];
        }
        const T iv = T(1) / std::sqrt(var + stats.eps);
        (*inv)[c] = iv;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t q = 0; q < hw; ++q) {
                const std::size_t i = (n * C + c) * hw + q;
                const T h = (xv[i] - mean) * iv;
                (*xhat)[i] = h;
                out[i] = h * gamma.value()[c] + beta.value()[c];
            }
    }
    return make_result<T>(std::move(out), {x, gamma, beta}, train ? "batch_norm2d_train" : "batch_norm2d_eval",
                          [x, gamma, beta, inv, xhat, N, C, hw, M, train](const Tensor<T>& g) {
        auto* gx = grad_of(x);
        auto* gg = grad_of(gamma);
        auto* gb = grad_of(beta);
        for (std::size_t c = 0; c < C; ++c) {
            T sg = T(0), sgh = T(0);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t q = 0; q < hw; ++q) {
                    const std::size_t i = (n * C + c) * hw + q;
                    sg += g[i];
                    sgh += g[i] * (*xhat)[i];
                }
            if (gg) (*gg)[c] += sgh;
            if (gb) (*gb)[c] += sg;
            if (!gx) continue;
            const T gm = gamma.value()[c];
            const T iv = (*inv)[c];
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t q = 0; q < hw; ++q) {
                    const std::size_t i = (n * C + c) * hw + q;
                    if (train)
                        (*gx)[i] += gm * iv * (g[i] - sg / T(M) - (*xhat)[i] * sgh / T(M));
                    else
                        (*gx)[i] += gm * iv * g[i];
                }
        }
    });
}

/// Stochastic depth: scales sample n (axis 0) by multipliers[n] (0 or 1/keep).
/// Callers pass an empty multiplier list in eval mode, which returns x itself.
template <typename T>
Var<T> drop_path(const Var<T>& x, const std::vector<T>& multipliers) {
    if (multipliers.empty()) return x;
    const std::size_t N = x.shape().at(0);
    if (multipliers.size() != N) throw DimensionError("drop_path: multiplier count does not match batch");
    const std::size_t per = x.numel() / N;
    Tensor<T> out = x.value();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < per; ++i) out[n * per + i] *= multipliers[n];
    return make_result<T>(std::move(out), {x}, "drop_path", [x, multipliers, N, per](const Tensor<T>& g) {
        if (auto* gx = grad_of(x))
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t i = 0; i < per; ++i) (*gx)[n * per + i] += multipliers[n] * g[n * per + i];
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
    Tensor<T> out({1}, x.value().sum());
    return make_result<T>(std::move(out), {x}, "sum", [x](const Tensor<T>& g) {
        if (auto* gx = grad_of(x))
            for (auto& v : gx->values()) v += g[0];
    });
}

/// sum(coeffs * x), a scalar probe used by gradient checks.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& coeffs) {
    detail::require_same(x.shape(), coeffs.shape(), "weighted_sum");
    T s = T(0);
    for (std::size_t i = 0; i < x.numel(); ++i) s += coeffs[i] * x.value()[i];
    return make_result<T>(Tensor<T>({1}, s), {x}, "weighted_sum", [x, coeffs](const Tensor<T>& g) {
        if (auto* gx = grad_of(x))
            for (std::size_t i = 0; i < coeffs.numel(); ++i) (*gx)[i] += g[0] * coeffs[i];
    });
}

/// Mean squared error over masked heatmap cells. pred/target are [N x K x h x w],
/// mask is [N x K]; an all-zero mask gives zero loss and zero gradient.
template <typename T>
Var<T> masked_mse(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
    detail::require_same(pred.shape(), target.shape(), "masked_mse");
    const Shape& ps = pred.shape();
    if (ps.size() != 4 || mask.shape() != Shape{ps[0], ps[1]})
        throw DimensionError("masked_mse: mask " + shape_str(mask.shape()) + " does not match " + shape_str(ps));
    const std::size_t maps = ps[0] * ps[1], cells = ps[2] * ps[3];
    T wsum = T(0);
    for (std::size_t m = 0; m < maps; ++m) wsum += mask[m];
    const T denom = wsum * T(cells);
    T loss = T(0);
    if (denom > T(0))
        for (std::size_t m = 0; m < maps; ++m) {
            if (mask[m] == T(0)) continue;
            T s = T(0);
            for (std::size_t q = 0; q < cells; ++q) {
                const T d = pred.value()[m * cells + q] - target[m * cells + q];
                s += d * d;
            }
            loss += mask[m] * s;
        }
    if (denom > T(0)) loss /= denom;
    return make_result<T>(Tensor<T>({1}, loss), {pred}, "masked_mse",
                          [pred, target, mask, maps, cells, denom](const Tensor<T>& g) {
        auto* gp = grad_of(pred);
        if (!gp || denom <= T(0)) return;
        for (std::size_t m = 0; m < maps; ++m) {
            if (mask[m] == T(0)) continue;
            const T k = g[0] * T(2) * mask[m] / denom;
            for (std::size_t q = 0; q < cells; ++q)
                (*gp)[m * cells + q] += k * (pred.value()[m * cells + q] - target[m * cells + q]);
        }
    });
}

}  // namespace vlpose
