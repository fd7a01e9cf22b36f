#ifndef DDAIG_NN_CLASSIFIER_HPP
#define DDAIG_NN_CLASSIFIER_HPP

#include <array>
#include <string>
#include <vector>

#include "ddaig/nn/parameters.hpp"
#include "ddaig/ops/conv.hpp"
#include "ddaig/ops/layers.hpp"

namespace ddaig {

using ImageShape = std::array<std::size_t, 3>;  // C, H, W

struct ClassifierConfig {
    ImageShape input_shape{3, 32, 32};
    std::size_t num_outputs = 10;
    std::size_t conv_channels = 64;
    std::size_t num_conv_blocks = 4;

    std::size_t feature_dim() const {
        const std::size_t f = std::size_t{1} << num_conv_blocks;
        return conv_channels * (input_shape[1] / f) * (input_shape[2] / f);
    }

    void validate() const {
        if (input_shape[0] == 0) throw Error("classifier: input must have at least one channel");
        if (num_outputs == 0) throw Error("classifier: num_outputs must be positive");
        if (conv_channels == 0 || num_conv_blocks == 0) throw Error("classifier: empty architecture");
        const std::size_t f = std::size_t{1} << num_conv_blocks;
        if (input_shape[1] % f != 0 || input_shape[2] % f != 0 || input_shape[1] < f || input_shape[2] < f) {
            throw Error("classifier: spatial size " + std::to_string(input_shape[1]) + "x" +
                        std::to_string(input_shape[2]) + " is not divisible by 2^" +
                        std::to_string(num_conv_blocks));
        }
    }
};

/// [conv3x3 -> ReLU -> maxpool2x2] x blocks -> flatten -> linear. Used for both the label
/// and the domain classifier.
template <class T>
class ConvClassifier {
public:
    struct Trace {
        struct Block {
            ops::Conv2dCache<T> conv;
            Tensor<T> activation;
            ops::MaxPoolCache pool;
        };
        std::vector<Block> blocks;
        Tensor<T> features;
    };

    ConvClassifier() = default;
    explicit ConvClassifier(ClassifierConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        std::size_t in = cfg_.input_shape[0];
        for (std::size_t b = 0; b < cfg_.num_conv_blocks; ++b) {
            const std::string p = "conv" + std::to_string(b + 1);
            params_.add(p + ".weight", {cfg_.conv_channels, in, 3, 3});
            params_.add(p + ".bias", {cfg_.conv_channels});
            in = cfg_.conv_channels;
        }
        params_.add("fc.weight", {cfg_.num_outputs, cfg_.feature_dim()});
        params_.add("fc.bias", {cfg_.num_outputs});
    }

    void init(Rng& rng) {
        std::size_t in = cfg_.input_shape[0];
        for (std::size_t b = 0; b < cfg_.num_conv_blocks; ++b) {
            init_fan_in_uniform(params_[2 * b], in * 9, rng);
            params_[2 * b + 1].fill(T(0));
            in = cfg_.conv_channels;
        }
        init_fan_in_uniform(params_[fc_index()], cfg_.feature_dim(), rng);
        params_[fc_index() + 1].fill(T(0));
    }

    const ClassifierConfig& config() const { return cfg_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }
    Mode mode() const { return mode_; }
    void set_mode(Mode m) { mode_ = m; }

    /// Flattened penultimate activations, (N, feature_dim).
    Tensor<T> features(const Tensor<T>& x, Trace* trace = nullptr) const {
        check_input(x);
        if (trace) trace->blocks.assign(cfg_.num_conv_blocks, {});
        Tensor<T> h = x;
        for (std::size_t b = 0; b < cfg_.num_conv_blocks; ++b) {
            auto* blk = trace ? &trace->blocks[b] : nullptr;
            h = ops::conv2d(h, params_[2 * b], params_[2 * b + 1], 1, ops::Padding::zero,
                            blk ? &blk->conv : nullptr);
            h = ops::relu(h);
            if (blk) blk->activation = h;
            h = ops::maxpool2x2(h, blk ? &blk->pool : nullptr);
        }
        h.reshape({x.dim(0), cfg_.feature_dim()});
        if (trace) trace->features = h;
        return h;
    }

    /// Logits, (N, num_outputs).
    Tensor<T> forward(const Tensor<T>& x, Trace* trace = nullptr) const {
        Tensor<T> feats = features(x, trace);
        return ops::linear(feats, params_[fc_index()], params_[fc_index() + 1]);
    }

    /// Backpropagates d(loss)/d(logits). Parameter gradients are accumulated into grads
    /// when non-null; the input gradient is written when grad_input is non-null.
    void backward(const Trace& trace, const Tensor<T>& grad_logits, ParameterSet<T>* grads,
                  Tensor<T>* grad_input) const {
        const std::size_t fc = fc_index();
        Tensor<T> g;
        ops::linear_backward(trace.features, params_[fc], grad_logits, grads ? &(*grads)[fc] : nullptr,
                             grads ? &(*grads)[fc + 1] : nullptr, &g);
        const std::size_t n = trace.features.dim(0);
        const std::size_t f = std::size_t{1} << cfg_.num_conv_blocks;
        g.reshape({n, cfg_.conv_channels, cfg_.input_shape[1] / f, cfg_.input_shape[2] / f});
        for (std::size_t b = cfg_.num_conv_blocks; b-- > 0;) {
            const auto& blk = trace.blocks[b];
            g = ops::maxpool2x2_backward(blk.pool, g);
            g = ops::relu_backward(blk.activation, g);
            const bool need_input = b > 0 || grad_input != nullptr;
            Tensor<T> gin;
            ops::conv2d_backward(blk.conv, params_[2 * b], g, grads ? &(*grads)[2 * b] : nullptr,
                                 grads ? &(*grads)[2 * b + 1] : nullptr, need_input ? &gin : nullptr);
            if (!need_input) return;
            g = std::move(gin);
        }
        if (grad_input) *grad_input = std::move(g);
    }

private:
    std::size_t fc_index() const { return 2 * cfg_.num_conv_blocks; }

    void check_input(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(1) != cfg_.input_shape[0] || x.dim(2) != cfg_.input_shape[1] ||
            x.dim(3) != cfg_.input_shape[2]) {
            throw Error("classifier: input " + shape_string(x.shape()) + " does not match configured shape [Nx" +
                        std::to_string(cfg_.input_shape[0]) + "x" + std::to_string(cfg_.input_shape[1]) + "x" +
                        std::to_string(cfg_.input_shape[2]) + "]");
        }
    }

    ClassifierConfig cfg_;
    ParameterSet<T> params_;
    Mode mode_ = Mode::train;
};

template <class T>
ConvClassifier<T> build_label_classifier(const ClassifierConfig& cfg, Rng& rng) {
    ConvClassifier<T> net(cfg);
    net.init(rng);
    return net;
}

/// Multi-class classifier over source domains; binary real/fake is not supported.
template <class T>
ConvClassifier<T> build_domain_classifier(const ClassifierConfig& cfg, Rng& rng) {
    if (cfg.num_outputs < 2) {
        throw Error("domain classifier needs at least 2 source domains, got " + std::to_string(cfg.num_outputs));
    }
    ConvClassifier<T> net(cfg);
    net.init(rng);
    return net;
}

}  // namespace ddaig

#endif
