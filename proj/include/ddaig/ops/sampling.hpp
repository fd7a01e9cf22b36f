#ifndef DDAIG_OPS_SAMPLING_HPP
#define DDAIG_OPS_SAMPLING_HPP

#include <array>
#include <cmath>
#include <numbers>

#include "ddaig/tensor.hpp"

namespace ddaig {

/// Row-major 2x3 affine map from output to source coordinates, in normalized units where the
/// image spans [-1, 1] corner pixel centre to corner pixel centre.
struct AffineParams {
    std::array<double, 6> m{1, 0, 0, 0, 1, 0};

    static AffineParams identity() { return {}; }

    /// Rotation about the image centre by the given angle (degrees).
    static AffineParams rotation(double degrees) {
        const double r = degrees * std::numbers::pi / 180.0;
        const double c = std::cos(r), s = std::sin(r);
        return {{c, -s, 0, s, c, 0}};
    }

    bool operator==(const AffineParams&) const = default;
};

namespace ops {

/// Value read for taps that fall outside the image.
inline constexpr double kBackground = -1.0;

namespace detail {

struct GridGeometry {
    double cx, cy, sx, sy;
};

inline GridGeometry grid_geometry(std::size_t h, std::size_t w) {
    GridGeometry g;
    g.cx = (static_cast<double>(w) - 1.0) / 2.0;
    g.cy = (static_cast<double>(h) - 1.0) / 2.0;
    g.sx = w > 1 ? g.cx : 0.5;
    g.sy = h > 1 ? g.cy : 0.5;
    return g;
}

}  // namespace detail

/// Bilinear sampling of x (N, C, H, W) under one affine map per sample; theta is (N, 6).
/// Source pixel coordinates are formed directly in pixel space so the identity map reads
/// every pixel exactly; zero-weight taps are skipped.
template <class T>
Tensor<T> affine_grid_sample(const Tensor<T>& x, const Tensor<T>& theta) {
    require_rank(x, 4, "grid_sample input");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const auto g = detail::grid_geometry(h, w);
    const T rx = static_cast<T>(g.sx / g.sy), ry = static_cast<T>(g.sy / g.sx);
    Tensor<T> y(x.shape());
    const T bg = static_cast<T>(kBackground);
    for (std::size_t b = 0; b < n; ++b) {
        const T* th = theta.data() + b * 6;
        for (std::size_t i = 0; i < h; ++i) {
            const T di = static_cast<T>(i) - static_cast<T>(g.cy);
            for (std::size_t j = 0; j < w; ++j) {
                const T dj = static_cast<T>(j) - static_cast<T>(g.cx);
                const T px = static_cast<T>(g.cx) + th[0] * dj + th[1] * rx * di + static_cast<T>(g.sx) * th[2];
                const T py = static_cast<T>(g.cy) + th[3] * ry * dj + th[4] * di + static_cast<T>(g.sy) * th[5];
                const T fx = std::floor(px), fy = std::floor(py);
                const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
                const T ax = px - fx, ay = py - fy;
                const T wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
                const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
                const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const T* src = x.data() + (b * c + ch) * h * w;
                    T acc = 0;
                    bool first = true;
                    for (int t = 0; t < 4; ++t) {
                        if (wts[t] == T(0)) continue;
                        const bool inside = xs[t] >= 0 && ys[t] >= 0 && xs[t] < static_cast<long>(w) &&
                                            ys[t] < static_cast<long>(h);
                        const T v = inside ? src[ys[t] * static_cast<long>(w) + xs[t]] : bg;
                        acc = first ? wts[t] * v : acc + wts[t] * v;
                        first = false;
                    }
                    y.at(b, ch, i, j) = acc;
                }
            }
        }
    }
    return y;
}

/// Gradients of affine_grid_sample with respect to the image and the affine parameters.
template <class T>
void affine_grid_sample_backward(const Tensor<T>& x, const Tensor<T>& theta, const Tensor<T>& gy,
                                 Tensor<T>* grad_x, Tensor<T>* grad_theta) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const auto g = detail::grid_geometry(h, w);
    const T rx = static_cast<T>(g.sx / g.sy), ry = static_cast<T>(g.sy / g.sx);
    const T bg = static_cast<T>(kBackground);
    if (grad_x) *grad_x = Tensor<T>(x.shape());
    if (grad_theta) *grad_theta = Tensor<T>(theta.shape());
    for (std::size_t b = 0; b < n; ++b) {
        const T* th = theta.data() + b * 6;
        for (std::size_t i = 0; i < h; ++i) {
            const T di = static_cast<T>(i) - static_cast<T>(g.cy);
            for (std::size_t j = 0; j < w; ++j) {
                const T dj = static_cast<T>(j) - static_cast<T>(g.cx);
                const T px = static_cast<T>(g.cx) + th[0] * dj + th[1] * rx * di + static_cast<T>(g.sx) * th[2];
                const T py = static_cast<T>(g.cy) + th[3] * ry * dj + th[4] * di + static_cast<T>(g.sy) * th[5];
                const T fx = std::floor(px), fy = std::floor(py);
                const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
                const T ax = px - fx, ay = py - fy;
                T gpx = 0, gpy = 0;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const T* src = x.data() + (b * c + ch) * h * w;
                    const T go = gy.at(b, ch, i, j);
                    auto read = [&](long yy, long xx) -> T {
                        if (xx < 0 || yy < 0 || xx >= static_cast<long>(w) || yy >= static_cast<long>(h)) return bg;
                        return src[yy * static_cast<long>(w) + xx];
                    };
                    const T v00 = read(y0, x0), v01 = read(y0, x0 + 1), v10 = read(y0 + 1, x0),
                            v11 = read(y0 + 1, x0 + 1);
                    gpx += go * ((v01 - v00) * (1 - ay) + (v11 - v10) * ay);
                    gpy += go * ((v10 - v00) * (1 - ax) + (v11 - v01) * ax);
                    if (grad_x) {
                        T* dst = grad_x->data() + (b * c + ch) * h * w;
                        auto scatter = [&](long yy, long xx, T wt) {
                            if (xx < 0 || yy < 0 || xx >= static_cast<long>(w) || yy >= static_cast<long>(h)) return;
                            dst[yy * static_cast<long>(w) + xx] += go * wt;
                        };
                        scatter(y0, x0, (1 - ax) * (1 - ay));
                        scatter(y0, x0 + 1, ax * (1 - ay));
                        scatter(y0 + 1, x0, (1 - ax) * ay);
                        scatter(y0 + 1, x0 + 1, ax * ay);
                    }
                }
                if (grad_theta) {
                    T* gt = grad_theta->data() + b * 6;
                    gt[0] += gpx * dj;
                    gt[1] += gpx * rx * di;
                    gt[2] += gpx * static_cast<T>(g.sx);
                    gt[3] += gpy * ry * dj;
                    gt[4] += gpy * di;
                    gt[5] += gpy * static_cast<T>(g.sy);
                }
            }
        }
    }
}

/// Applies one affine map to every image of a batch.
template <class T>
Tensor<T> warp(const Tensor<T>& x, const AffineParams& a) {
    Tensor<T> theta({x.dim(0), 6});
    for (std::size_t b = 0; b < x.dim(0); ++b)
        for (std::size_t k = 0; k < 6; ++k) theta[b * 6 + k] = static_cast<T>(a.m[k]);
    return affine_grid_sample(x, theta);
}

}  // namespace ops
}  // namespace ddaig

#endif
