#ifndef DDAIG_OPS_CONV_HPP
#define DDAIG_OPS_CONV_HPP

#include <Eigen/Core>

#include "ddaig/tensor.hpp"

namespace ddaig::ops {

enum class Padding { zero, reflect };

/// Maps a possibly out-of-range index onto [0, n) under the padding rule, or -1 for a zero tap.
/// Reflection excludes the edge sample; a dimension of size 1 reflects onto itself.
inline long pad_index(long i, long n, Padding mode) {
    if (i >= 0 && i < n) return i;
    if (mode == Padding::zero) return -1;
    if (n == 1) return 0;
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
    return std::clamp<long>(i, 0, n - 1);
}

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Conv2dCache {
    Shape input_shape;
    std::size_t kernel = 0;
    std::size_t pad = 0;
    Padding mode = Padding::zero;
    RowMatrix<T> cols;  // (C*k*k) x (N*Ho*Wo)
};

namespace detail {

// Source index for every output position at kernel offset `off` (-1: zero padding), plus
// the range [lo, hi) where the source index is simply i + off - pad.
struct TapMap {
    std::vector<long> src;
    std::size_t lo = 0, hi = 0;
};

inline TapMap tap_map(std::size_t out, std::size_t off, std::size_t pad, std::size_t n, Padding mode) {
    TapMap m;
    m.src.resize(out);
    bool seen = false;
    for (std::size_t i = 0; i < out; ++i) {
        const long raw = static_cast<long>(i + off) - static_cast<long>(pad);
        m.src[i] = pad_index(raw, static_cast<long>(n), mode);
        if (raw >= 0 && raw < static_cast<long>(n)) {
            if (!seen) m.lo = i;
            seen = true;
            m.hi = i + 1;
        }
    }
    return m;
}

template <class T>
void im2col(const Tensor<T>& x, std::size_t k, std::size_t pad, Padding mode, RowMatrix<T>& cols) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
    const std::size_t plane = ho * wo;
    cols.resize(static_cast<Eigen::Index>(c * k * k), static_cast<Eigen::Index>(n * plane));
    for (std::size_t ki = 0; ki < k; ++ki) {
        const TapMap rows = tap_map(ho, ki, pad, h, mode);
        for (std::size_t kj = 0; kj < k; ++kj) {
            const TapMap colm = tap_map(wo, kj, pad, w, mode);
            const long shift = static_cast<long>(kj) - static_cast<long>(pad);
            for (std::size_t ci = 0; ci < c; ++ci) {
                T* row = cols.row(static_cast<Eigen::Index>((ci * k + ki) * k + kj)).data();
                for (std::size_t b = 0; b < n; ++b) {
                    const T* src = x.data() + (b * c + ci) * h * w;
                    T* dst = row + b * plane;
                    for (std::size_t i = 0; i < ho; ++i) {
                        T* out = dst + i * wo;
                        const long si = rows.src[i];
                        if (si < 0) {
                            std::fill(out, out + wo, T(0));
                            continue;
                        }
                        const T* srow = src + static_cast<std::size_t>(si) * w;
                        for (std::size_t j = 0; j < colm.lo; ++j) out[j] = colm.src[j] < 0 ? T(0) : srow[colm.src[j]];
                        if (colm.hi > colm.lo)
                            std::copy(srow + static_cast<long>(colm.lo) + shift, srow + static_cast<long>(colm.hi) + shift,
                                      out + colm.lo);
                        for (std::size_t j = std::max(colm.hi, colm.lo); j < wo; ++j)
                            out[j] = colm.src[j] < 0 ? T(0) : srow[colm.src[j]];
                    }
                }
            }
        }
    }
}

template <class T>
void col2im(const RowMatrix<T>& cols, const Shape& shape, std::size_t k, std::size_t pad, Padding mode,
            Tensor<T>& gx) {
    const std::size_t n = shape[0], c = shape[1], h = shape[2], w = shape[3];
    const std::size_t ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
    const std::size_t plane = ho * wo;
    gx = Tensor<T>(shape);
    // Same accumulation order as a (ci, ki, kj, b, i, j) sweep, so results do not depend on
    // the tap maps.
    for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t ki = 0; ki < k; ++ki) {
            const TapMap rows = tap_map(ho, ki, pad, h, mode);
            for (std::size_t kj = 0; kj < k; ++kj) {
                const TapMap colm = tap_map(wo, kj, pad, w, mode);
                const long shift = static_cast<long>(kj) - static_cast<long>(pad);
                const T* row = cols.row(static_cast<Eigen::Index>((ci * k + ki) * k + kj)).data();
                for (std::size_t b = 0; b < n; ++b) {
                    T* dst = gx.data() + (b * c + ci) * h * w;
                    const T* src = row + b * plane;
                    for (std::size_t i = 0; i < ho; ++i) {
                        const long si = rows.src[i];
                        if (si < 0) continue;
                        T* __restrict drow = dst + static_cast<std::size_t>(si) * w;
                        const T* __restrict in = src + i * wo;
                        for (std::size_t j = 0; j < colm.lo; ++j)
                            if (colm.src[j] >= 0) drow[colm.src[j]] += in[j];
                        for (std::size_t j = colm.lo; j < colm.hi; ++j) drow[static_cast<long>(j) + shift] += in[j];
                        for (std::size_t j = std::max(colm.hi, colm.lo); j < wo; ++j)
                            if (colm.src[j] >= 0) drow[colm.src[j]] += in[j];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// Stride-1 2-D convolution. weight is (O, C, k, k), bias is (O).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t pad,
                 Padding mode, Conv2dCache<T>* cache = nullptr) {
    require_rank(x, 4, "conv2d input");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t o = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != c) {
        throw Error("conv2d: input has " + std::to_string(c) + " channels, weight expects " +
                    std::to_string(weight.dim(1)));
    }
    if (h + 2 * pad < k || w + 2 * pad < k) throw Error("conv2d: input smaller than kernel");
    const std::size_t ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
    const std::size_t plane = ho * wo;

    RowMatrix<T> local;
    RowMatrix<T>& cols = cache ? cache->cols : local;
    detail::im2col(x, k, pad, mode, cols);

    Eigen::Map<const RowMatrix<T>> wm(weight.data(), static_cast<Eigen::Index>(o),
                                      static_cast<Eigen::Index>(c * k * k));
    RowMatrix<T> ym = wm * cols;

    Tensor<T> y({n, o, ho, wo});
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oi = 0; oi < o; ++oi) {
            const T* src = ym.row(static_cast<Eigen::Index>(oi)).data() + b * plane;
            T* dst = y.data() + (b * o + oi) * plane;
            const T bv = bias[oi];
            for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bv;
        }
    }
    if (cache) {
        cache->input_shape = x.shape();
        cache->kernel = k;
        cache->pad = pad;
        cache->mode = mode;
    }
    return y;
}

/// Backward of conv2d. Weight/bias gradients are accumulated when the pointers are non-null;
/// the input gradient is produced when grad_input is non-null.
template <class T>
void conv2d_backward(const Conv2dCache<T>& cache, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     Tensor<T>* grad_weight, Tensor<T>* grad_bias, Tensor<T>* grad_input) {
    const std::size_t n = grad_out.dim(0), o = grad_out.dim(1);
    const std::size_t plane = grad_out.dim(2) * grad_out.dim(3);
    const std::size_t ckk = weight.size() / o;

    RowMatrix<T> gy(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(n * plane));
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oi = 0; oi < o; ++oi) {
            const T* src = grad_out.data() + (b * o + oi) * plane;
            std::copy(src, src + plane, gy.row(static_cast<Eigen::Index>(oi)).data() + b * plane);
        }
    }
    if (grad_weight) {
        Eigen::Map<RowMatrix<T>> gw(grad_weight->data(), static_cast<Eigen::Index>(o),
                                    static_cast<Eigen::Index>(ckk));
        gw.noalias() += gy * cache.cols.transpose();
    }
    if (grad_bias) {
        for (std::size_t oi = 0; oi < o; ++oi) (*grad_bias)[oi] += gy.row(static_cast<Eigen::Index>(oi)).sum();
    }
    if (grad_input) {
        Eigen::Map<const RowMatrix<T>> wm(weight.data(), static_cast<Eigen::Index>(o),
                                          static_cast<Eigen::Index>(ckk));
        RowMatrix<T> gcols = wm.transpose() * gy;
        detail::col2im(gcols, cache.input_shape, cache.kernel, cache.pad, cache.mode, *grad_input);
    }
}

}  // namespace ddaig::ops

#endif
