#ifndef DDAIG_TRAIN_OBJECTIVES_HPP
#define DDAIG_TRAIN_OBJECTIVES_HPP

#include <span>

#include "ddaig/data/dataset.hpp"
#include "ddaig/nn/classifier.hpp"
#include "ddaig/nn/dotnet.hpp"
#include "ddaig/ops/loss.hpp"

namespace ddaig {

/// Mean cross-entropy of net(x) against targets. Parameter gradients are accumulated into
/// grads (scaled by `weight`) and d/dx written to grad_input, each when non-null.
template <class T>
T classification_loss(const ConvClassifier<T>& net, const Tensor<T>& x, std::span<const int> targets,
                      ParameterSet<T>* grads, Tensor<T>* grad_input, T weight = T(1)) {
    const bool backward = grads || grad_input;
    typename ConvClassifier<T>::Trace trace;
    Tensor<T> logits = net.forward(x, backward ? &trace : nullptr);
    Tensor<T> g;
    const T loss = ops::cross_entropy(logits, targets, backward ? &g : nullptr);
    if (backward) {
        if (weight != T(1))
            for (auto& v : g.values()) v *= weight;
        net.backward(trace, g, grads, grad_input);
    }
    return loss;
}

template <class T>
struct DotnetObjective {
    T label_loss = 0;   // cross-entropy of f on x~ against y
    T domain_loss = 0;  // cross-entropy of h on x~ against d
    T value() const { return label_loss - domain_loss; }
};

/// J~_L(f(x~), y) - J~_D(h(x~), d) with x~ = x + lambda * T(x). Gradients flow to the
/// DoTNet parameters only; f and h are read but never receive gradients.
template <class T>
DotnetObjective<T> dotnet_objective(const ConvClassifier<T>& f, const ConvClassifier<T>& h, const DotNet<T>& t,
                                    const Batch<T>& batch, double lambda, ParameterSet<T>* grad_theta = nullptr,
                                    Tensor<T>* transformed = nullptr) {
    typename DotNet<T>::Trace trace;
    Tensor<T> xt = transform(t, batch.images, lambda, grad_theta ? &trace : nullptr);
    DotnetObjective<T> out;
    if (!grad_theta) {
        out.label_loss = classification_loss<T>(f, xt, batch.labels, nullptr, nullptr);
        out.domain_loss = classification_loss<T>(h, xt, batch.domains, nullptr, nullptr);
    } else {
        Tensor<T> g_label, g_domain;
        out.label_loss = classification_loss<T>(f, xt, batch.labels, nullptr, &g_label);
        out.domain_loss = classification_loss<T>(h, xt, batch.domains, nullptr, &g_domain);
        for (std::size_t k = 0; k < g_label.size(); ++k) g_label[k] -= g_domain[k];
        transform_backward(t, trace, g_label, lambda, grad_theta, false);
    }
    if (transformed) *transformed = std::move(xt);
    return out;
}

template <class T>
struct ClassifierObjective {
    T raw_loss = 0;          // J_L on x
    T transformed_loss = 0;  // J~_L on x~ (0 when alpha == 0)
    T value = 0;             // (1 - alpha) J_L + alpha J~_L
};

/// (1 - alpha) J_L(f(x), y) + alpha J~_L(f(x~), y) with x~ supplied by the caller (already
/// transformed with the current DoTNet). Gradients flow to f only. A term whose weight is
/// exactly zero is not evaluated for gradients, so alpha = 0 reproduces a plain J_L step
/// bit for bit.
template <class T>
ClassifierObjective<T> classifier_objective(const ConvClassifier<T>& f, const Batch<T>& batch,
                                            const Tensor<T>& transformed, double alpha,
                                            ParameterSet<T>* grad_phi = nullptr) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("alpha must lie in [0, 1]");
    ClassifierObjective<T> out;
    const T a = static_cast<T>(alpha);
    if (alpha > 0.0 && transformed == batch.images) {
        // x~ == x (lambda = 0 or epsilon = 0): both terms are the same function of f, so one
        // unweighted pass gives the exact value and keeps these runs bitwise equal to vanilla.
        out.raw_loss = classification_loss<T>(f, batch.images, batch.labels, grad_phi, nullptr);
        out.transformed_loss = out.raw_loss;
        out.value = (T(1) - a) * out.raw_loss + a * out.transformed_loss;
        return out;
    }
    out.raw_loss = classification_loss<T>(f, batch.images, batch.labels, alpha < 1.0 ? grad_phi : nullptr, nullptr,
                                          T(1) - a);
    if (alpha > 0.0) {
        out.transformed_loss = classification_loss<T>(f, transformed, batch.labels, grad_phi, nullptr, a);
    }
    out.value = (T(1) - a) * out.raw_loss + a * out.transformed_loss;
    return out;
}

/// Overload that transforms the batch with `t` first.
template <class T>
ClassifierObjective<T> classifier_objective(const ConvClassifier<T>& f, const DotNet<T>& t, const Batch<T>& batch,
                                            double lambda, double alpha, ParameterSet<T>* grad_phi = nullptr) {
    Tensor<T> xt = alpha > 0.0 ? transform(t, batch.images, lambda) : Tensor<T>{};
    return classifier_objective(f, batch, xt, alpha, grad_phi);
}

/// J_D(h(x), d) on original data only.
template <class T>
T domain_objective(const ConvClassifier<T>& h, const Batch<T>& batch, ParameterSet<T>* grad_varphi = nullptr) {
    if (h.config().num_outputs < 2) throw Error("domain objective needs at least 2 domains");
    return classification_loss<T>(h, batch.images, batch.domains, grad_varphi, nullptr);
}

}  // namespace ddaig

#endif
