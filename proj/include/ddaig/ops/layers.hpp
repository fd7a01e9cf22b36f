#ifndef DDAIG_OPS_LAYERS_HPP
#define DDAIG_OPS_LAYERS_HPP

#include <cmath>
#include <cstdint>
#include <limits>

#include <Eigen/Core>

#include "ddaig/ops/conv.hpp"
#include "ddaig/tensor.hpp"

namespace ddaig::ops {

// ---- activations -----------------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return y;
}

/// Uses the forward output, which is positive exactly where the input was.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& gy) {
    Tensor<T> gx(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] = y[i] > T(0) ? gy[i] : T(0);
    return gx;
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
    return y;
}

template <class T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& gy) {
    Tensor<T> gx(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] = gy[i] * (T(1) - y[i] * y[i]);
    return gx;
}

// ---- pooling ---------------------------------------------------------------

struct MaxPoolCache {
    Shape input_shape;
    std::vector<std::uint32_t> argmax;  // flat input offset per output element
};

/// 2x2 stride-2 max pooling in ceil mode: a trailing odd row/column forms a partial window.
template <class T>
Tensor<T> maxpool2x2(const Tensor<T>& x, MaxPoolCache* cache = nullptr) {
    require_rank(x, 4, "maxpool input");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = (h + 1) / 2, wo = (w + 1) / 2;
    Tensor<T> y({n, c, ho, wo});
    if (cache) {
        cache->input_shape = x.shape();
        cache->argmax.assign(y.size(), 0);
    }
    std::size_t out = 0;
    for (std::size_t p = 0; p < n * c; ++p) {
        const std::size_t base = p * h * w;
        for (std::size_t i = 0; i < ho; ++i) {
            for (std::size_t j = 0; j < wo; ++j, ++out) {
                std::size_t best = base + (2 * i) * w + 2 * j;
                for (std::size_t di = 0; di < 2; ++di) {
                    for (std::size_t dj = 0; dj < 2; ++dj) {
                        std::size_t ii = 2 * i + di, jj = 2 * j + dj;
                        if (ii >= h || jj >= w) continue;
                        std::size_t idx = base + ii * w + jj;
                        if (x[idx] > x[best]) best = idx;
                    }
                }
                y[out] = x[best];
                if (cache) cache->argmax[out] = static_cast<std::uint32_t>(best);
            }
        }
    }
    return y;
}

template <class T>
Tensor<T> maxpool2x2_backward(const MaxPoolCache& cache, const Tensor<T>& gy) {
    Tensor<T> gx(cache.input_shape);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[cache.argmax[i]] += gy[i];
    return gx;
}

/// Mean over the spatial plane: (N, C, H, W) -> (N, C).
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor<T> y({n, c});
    for (std::size_t p = 0; p < n * c; ++p) {
        T s = 0;
        const T* src = x.data() + p * plane;
        for (std::size_t i = 0; i < plane; ++i) s += src[i];
        y[p] = s / static_cast<T>(plane);
    }
    return y;
}

template <class T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& gy) {
    Tensor<T> gx(input_shape);
    const std::size_t plane = input_shape[2] * input_shape[3];
    for (std::size_t p = 0; p < gy.size(); ++p) {
        const T g = gy[p] / static_cast<T>(plane);
        T* dst = gx.data() + p * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = g;
    }
    return gx;
}

/// Concatenates a feature map (N, C, H, W) with a per-sample vector (N, K) tiled to H x W.
template <class T>
Tensor<T> concat_tiled(const Tensor<T>& x, const Tensor<T>& v) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), k = v.dim(1);
    const std::size_t plane = h * w;
    Tensor<T> y({n, c + k, h, w});
    for (std::size_t b = 0; b < n; ++b) {
        std::copy(x.data() + b * c * plane, x.data() + (b + 1) * c * plane, y.data() + b * (c + k) * plane);
        for (std::size_t q = 0; q < k; ++q) {
            T* dst = y.data() + (b * (c + k) + c + q) * plane;
            std::fill(dst, dst + plane, v[b * k + q]);
        }
    }
    return y;
}

/// Splits the gradient of concat_tiled into the map part and the summed vector part.
template <class T>
void concat_tiled_backward(const Tensor<T>& gy, std::size_t c, Tensor<T>& gx, Tensor<T>& gv) {
    const std::size_t n = gy.dim(0), total = gy.dim(1), h = gy.dim(2), w = gy.dim(3);
    const std::size_t k = total - c, plane = h * w;
    gx = Tensor<T>({n, c, h, w});
    gv = Tensor<T>({n, k});
    for (std::size_t b = 0; b < n; ++b) {
        std::copy(gy.data() + b * total * plane, gy.data() + (b * total + c) * plane, gx.data() + b * c * plane);
        for (std::size_t q = 0; q < k; ++q) {
            const T* src = gy.data() + (b * total + c + q) * plane;
            T s = 0;
            for (std::size_t i = 0; i < plane; ++i) s += src[i];
            gv[b * k + q] = s;
        }
    }
}

// ---- instance normalization ------------------------------------------------

template <class T>
struct InstanceNormCache {
    Tensor<T> normalized;
    std::vector<T> inv_std;
};

/// Per-sample, per-channel normalization without affine parameters.
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps, InstanceNormCache<T>* cache = nullptr) {
    require_rank(x, 4, "instance_norm input");
    const std::size_t planes = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor<T> y(x.shape());
    if (cache) cache->inv_std.assign(planes, T(0));
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = x.data() + p * plane;
        T* dst = y.data() + p * plane;
        T mean = 0;
        for (std::size_t i = 0; i < plane; ++i) mean += src[i];
        mean /= static_cast<T>(plane);
        T var = 0;
        for (std::size_t i = 0; i < plane; ++i) {
            T d = src[i] - mean;
            var += d * d;
        }
        var /= static_cast<T>(plane);
        const T inv = T(1) / std::sqrt(var + eps);
        for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - mean) * inv;
        if (cache) cache->inv_std[p] = inv;
    }
    if (cache) cache->normalized = y;
    return y;
}

template <class T>
Tensor<T> instance_norm_backward(const InstanceNormCache<T>& cache, const Tensor<T>& gy) {
    const Tensor<T>& xhat = cache.normalized;
    const std::size_t planes = gy.dim(0) * gy.dim(1), plane = gy.dim(2) * gy.dim(3);
    Tensor<T> gx(gy.shape());
    for (std::size_t p = 0; p < planes; ++p) {
        const T* g = gy.data() + p * plane;
        const T* xh = xhat.data() + p * plane;
        T* dst = gx.data() + p * plane;
        T mean_g = 0, mean_gx = 0;
        for (std::size_t i = 0; i < plane; ++i) {
            mean_g += g[i];
            mean_gx += g[i] * xh[i];
        }
        mean_g /= static_cast<T>(plane);
        mean_gx /= static_cast<T>(plane);
        const T inv = cache.inv_std[p];
        for (std::size_t i = 0; i < plane; ++i) dst[i] = inv * (g[i] - mean_g - xh[i] * mean_gx);
    }
    return gx;
}

// ---- fully connected -------------------------------------------------------

/// y = x W^T + b with x (N, I) or any (N, ...) flattened per sample, W (O, I), b (O).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    const std::size_t n = x.dim(0), in = x.size() / n, o = weight.dim(0);
    if (weight.dim(1) != in) {
        throw Error("linear: input width " + std::to_string(in) + " does not match weight " +
                    shape_string(weight.shape()));
    }
    Eigen::Map<const RowMatrix<T>> xm(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
    Eigen::Map<const RowMatrix<T>> wm(weight.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(in));
    Tensor<T> y({n, o});
    Eigen::Map<RowMatrix<T>> ym(y.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(o));
    ym.noalias() = xm * wm.transpose();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t oi = 0; oi < o; ++oi) y[b * o + oi] += bias[oi];
    return y;
}

template <class T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& gy, Tensor<T>* grad_weight,
                     Tensor<T>* grad_bias, Tensor<T>* grad_input) {
    const std::size_t n = x.dim(0), in = x.size() / n, o = weight.dim(0);
    Eigen::Map<const RowMatrix<T>> gym(gy.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(o));
    if (grad_weight) {
        Eigen::Map<const RowMatrix<T>> xm(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
        Eigen::Map<RowMatrix<T>> gw(grad_weight->data(), static_cast<Eigen::Index>(o),
                                    static_cast<Eigen::Index>(in));
        gw.noalias() += gym.transpose() * xm;
    }
    if (grad_bias) {
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t oi = 0; oi < o; ++oi) (*grad_bias)[oi] += gy[b * o + oi];
    }
    if (grad_input) {
        Eigen::Map<const RowMatrix<T>> wm(weight.data(), static_cast<Eigen::Index>(o),
                                          static_cast<Eigen::Index>(in));
        *grad_input = Tensor<T>(x.shape());
        Eigen::Map<RowMatrix<T>> gx(grad_input->data(), static_cast<Eigen::Index>(n),
                                    static_cast<Eigen::Index>(in));
        gx.noalias() = gym * wm;
    }
}

}  // namespace ddaig::ops

#endif
