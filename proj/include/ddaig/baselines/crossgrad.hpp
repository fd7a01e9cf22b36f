#ifndef DDAIG_BASELINES_CROSSGRAD_HPP
#define DDAIG_BASELINES_CROSSGRAD_HPP

#include <cmath>

#include "ddaig/train/objectives.hpp"

namespace ddaig {

/// Gradient of the summed domain cross-entropy with respect to the input, i.e. the
/// per-example gradient of J_D(h(x_b), d_b) for every sample b. h is not modified.
template <class T>
Tensor<T> domain_input_gradient(const ConvClassifier<T>& h, const Tensor<T>& x, std::span<const int> domains) {
    Tensor<T> g;
    classification_loss<T>(h, x, domains, nullptr, &g, static_cast<T>(x.dim(0)));
    return g;
}

/// x~ = x + epsilon * grad_x J_D(h(x), d). With normalize_grad each sample's gradient is
/// scaled to unit sup-norm first, so epsilon bounds the per-pixel change.
template <class T>
Tensor<T> crossgrad_perturb(const ConvClassifier<T>& h, const Tensor<T>& x, std::span<const int> domains,
                            double epsilon, bool normalize_grad = true) {
    if (!(epsilon >= 0.0)) throw Error("crossgrad: epsilon must be non-negative");
    if (epsilon == 0.0) return x;
    Tensor<T> g = domain_input_gradient(h, x, domains);
    const std::size_t n = x.dim(0), per = x.size() / n;
    Tensor<T> out = x;
    for (std::size_t b = 0; b < n; ++b) {
        T scale = static_cast<T>(epsilon);
        if (normalize_grad) {
            T mx = 0;
            for (std::size_t k = 0; k < per; ++k) mx = std::max(mx, std::abs(g[b * per + k]));
            scale = mx > T(0) ? scale / mx : T(0);
        }
        for (std::size_t k = 0; k < per; ++k) out[b * per + k] += scale * g[b * per + k];
    }
    return out;
}

}  // namespace ddaig

#endif
