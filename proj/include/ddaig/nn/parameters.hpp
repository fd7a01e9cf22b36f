#ifndef DDAIG_NN_PARAMETERS_HPP
#define DDAIG_NN_PARAMETERS_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ddaig/rng.hpp"
#include "ddaig/tensor.hpp"

namespace ddaig {

enum class Mode { train, eval };

/// Ordered collection of named tensors. Networks own one for their weights; gradient
/// buffers are a zeros_like() copy with identical names and order.
template <class T>
class ParameterSet {
public:
    std::size_t add(std::string name, Shape shape) {
        for (const auto& n : names_) {
            if (n == name) throw Error("duplicate parameter name '" + name + "'");
        }
        names_.push_back(std::move(name));
        tensors_.emplace_back(std::move(shape));
        return tensors_.size() - 1;
    }

    std::size_t size() const { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    const std::vector<std::string>& names() const { return names_; }
    Tensor<T>& operator[](std::size_t i) { return tensors_[i]; }
    const Tensor<T>& operator[](std::size_t i) const { return tensors_[i]; }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return i;
        throw Error("unknown parameter '" + name + "'");
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

    ParameterSet zeros_like() const {
        ParameterSet out;
        out.names_ = names_;
        for (const auto& t : tensors_) out.tensors_.emplace_back(t.shape());
        return out;
    }

    void zero() {
        for (auto& t : tensors_) t.fill(T(0));
    }

    /// Adds s * other to every tensor.
    void add_scaled(T s, const ParameterSet& other) {
        for (std::size_t i = 0; i < tensors_.size(); ++i) axpy(tensors_[i], s, other.tensors_[i]);
    }

    template <class U>
    ParameterSet<U> cast() const {
        ParameterSet<U> out;
        for (std::size_t i = 0; i < tensors_.size(); ++i) {
            out.add(names_[i], tensors_[i].shape());
            out[i] = tensors_[i].template cast<U>();
        }
        return out;
    }

    bool operator==(const ParameterSet&) const = default;

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
};

/// FNV-1a over the raw bytes of every tensor, in order.
template <class T>
std::uint64_t checksum(const ParameterSet<T>& ps) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(ps[i].data());
        for (std::size_t k = 0; k < ps[i].size() * sizeof(T); ++k) {
            h ^= bytes[k];
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

/// He-style uniform fan-in initialization: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <class T>
void init_fan_in_uniform(Tensor<T>& weight, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : weight.values()) v = static_cast<T>(uniform(rng, -bound, bound));
}

/// SGD with momentum and L2 weight decay (decay is added to the gradient before the momentum
/// buffer is updated).
template <class T>
class Sgd {
public:
    Sgd() = default;
    Sgd(const ParameterSet<T>& params, double momentum, double weight_decay)
        : momentum_(momentum), weight_decay_(weight_decay), buffers_(params.zeros_like()) {}

    void step(ParameterSet<T>& params, const ParameterSet<T>& grads, double lr) {
        const T m = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_), eta = static_cast<T>(lr);
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& p = params[i];
            Tensor<T>& buf = buffers_[i];
            const Tensor<T>& g = grads[i];
            for (std::size_t k = 0; k < p.size(); ++k) {
                buf[k] = m * buf[k] + (g[k] + wd * p[k]);
            }
            if (lr != 0.0) {
                for (std::size_t k = 0; k < p.size(); ++k) p[k] -= eta * buf[k];
            }
        }
    }

    ParameterSet<T>& buffers() { return buffers_; }
    const ParameterSet<T>& buffers() const { return buffers_; }
    double momentum() const { return momentum_; }
    double weight_decay() const { return weight_decay_; }

private:
    double momentum_ = 0.9;
    double weight_decay_ = 0.0;
    ParameterSet<T> buffers_;
};

}  // namespace ddaig

#endif
