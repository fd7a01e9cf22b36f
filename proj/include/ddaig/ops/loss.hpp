#ifndef DDAIG_OPS_LOSS_HPP
#define DDAIG_OPS_LOSS_HPP

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "ddaig/tensor.hpp"

namespace ddaig::ops {

/// -log softmax(logits)[target], stabilized by subtracting the max logit.
template <class T>
T cross_entropy(std::span<const T> logits, std::size_t target) {
    if (target >= logits.size()) throw Error("cross_entropy: target index out of range");
    const T mx = *std::max_element(logits.begin(), logits.end());
    T sum = 0;
    for (T z : logits) sum += std::exp(z - mx);
    return std::log(sum) - (logits[target] - mx);
}

/// Mean cross-entropy over a (N, K) logit batch. When grad is non-null it receives
/// d(mean loss)/d(logits), i.e. (softmax - onehot) / N.
template <class T>
T cross_entropy(const Tensor<T>& logits, std::span<const int> targets, Tensor<T>* grad = nullptr) {
    require_rank(logits, 2, "cross_entropy logits");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (targets.size() != n) throw Error("cross_entropy: target count does not match batch size");
    if (grad) *grad = Tensor<T>(logits.shape());
    T total = 0;
    for (std::size_t b = 0; b < n; ++b) {
        const T* z = logits.data() + b * k;
        const auto target = static_cast<std::size_t>(targets[b]);
        if (targets[b] < 0 || target >= k) throw Error("cross_entropy: target index out of range");
        const T mx = *std::max_element(z, z + k);
        T sum = 0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
        const T lse = std::log(sum);
        total += lse - (z[target] - mx);
        if (grad) {
            T* g = grad->data() + b * k;
            for (std::size_t j = 0; j < k; ++j) {
                g[j] = std::exp(z[j] - mx - lse) / static_cast<T>(n);
            }
            g[target] -= T(1) / static_cast<T>(n);
        }
    }
    return total / static_cast<T>(n);
}

}  // namespace ddaig::ops

#endif
