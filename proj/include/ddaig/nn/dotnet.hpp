#ifndef DDAIG_NN_DOTNET_HPP
#define DDAIG_NN_DOTNET_HPP

#include <string>
#include <vector>

#include "ddaig/nn/parameters.hpp"
#include "ddaig/ops/conv.hpp"
#include "ddaig/ops/layers.hpp"
#include "ddaig/ops/sampling.hpp"

namespace ddaig {

struct DotNetConfig {
    std::size_t input_channels = 3;
    std::size_t base_channels = 32;
    std::size_t num_res_blocks = 2;
    bool use_stn = false;
    std::size_t stn_channels = 16;

    void validate() const {
        if (input_channels == 0) throw Error("dotnet: input_channels must be positive");
        if (base_channels == 0) throw Error("dotnet: base_channels must be positive");
        if (use_stn && stn_channels == 0) throw Error("dotnet: stn_channels must be positive");
    }
};

inline constexpr double kInstanceNormEps = 1e-5;

/// Domain transformation network: a fully convolutional perturbation generator
///
///   conv3x3 -> IN -> ReLU
///   n x residual block [conv3x3 -> IN -> ReLU -> conv3x3 -> IN] (+ skip) -> ReLU
///   concat(features, tiled global-average context) -> conv1x1 -> IN -> ReLU
///   conv1x1 -> tanh
///
/// with every 3x3 convolution reflection-padded and stride 1. With use_stn, a spatial
/// transformer warps the input first and the perturbation is computed on the warped image.
template <class T>
class DotNet {
public:
    struct ConvStage {
        ops::Conv2dCache<T> conv;
        ops::InstanceNormCache<T> norm;
        Tensor<T> activation;  // post-ReLU
    };
    struct ResidualStage {
        ConvStage first;
        ops::Conv2dCache<T> conv2;
        ops::InstanceNormCache<T> norm2;
        Tensor<T> activation;  // ReLU(skip + branch)
    };
    struct PerturbTrace {
        ConvStage stem;
        std::vector<ResidualStage> blocks;
        Shape features_shape;
        ConvStage fuse;
        ops::Conv2dCache<T> out_conv;
        Tensor<T> output;  // tanh output
    };
    struct StnTrace {
        Tensor<T> input;
        ops::Conv2dCache<T> conv1, conv2;
        Tensor<T> act1, act2;
        ops::MaxPoolCache pool1, pool2;
        Shape pooled_shape;
        Tensor<T> context;
        Tensor<T> theta;
    };
    struct Trace {
        PerturbTrace perturb;
        StnTrace stn;
    };

    DotNet() = default;
    explicit DotNet(DotNetConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t c = cfg_.input_channels, b = cfg_.base_channels;
        stem_ = add_conv("stem", b, c, 3);
        for (std::size_t i = 0; i < cfg_.num_res_blocks; ++i) {
            const std::string p = "res" + std::to_string(i + 1);
            res_.push_back({add_conv(p + ".conv1", b, b, 3), add_conv(p + ".conv2", b, b, 3)});
        }
        fuse_ = add_conv("fuse", b, 2 * b, 1);
        out_ = add_conv("out", c, b, 1);
        if (cfg_.use_stn) {
            const std::size_t s = cfg_.stn_channels;
            stn_conv1_ = add_conv("stn.conv1", s, c, 3);
            stn_conv2_ = add_conv("stn.conv2", s, s, 3);
            stn_fc_ = params_.add("stn.fc.weight", {6, s});
            params_.add("stn.fc.bias", {6});
        }
    }

    /// Fan-in uniform weights, zero biases, zero output layer (so T(x) = 0 at start) and an
    /// STN whose final layer emits the identity transform.
    void init(Rng& rng) {
        const std::size_t c = cfg_.input_channels, b = cfg_.base_channels;
        init_conv(stem_, c * 9, rng);
        for (auto& blk : res_) {
            init_conv(blk.first, b * 9, rng);
            init_conv(blk.second, b * 9, rng);
        }
        init_conv(fuse_, 2 * b, rng);
        params_[out_].fill(T(0));
        params_[out_ + 1].fill(T(0));
        if (cfg_.use_stn) {
            init_conv(stn_conv1_, c * 9, rng);
            init_conv(stn_conv2_, cfg_.stn_channels * 9, rng);
            params_[stn_fc_].fill(T(0));
            auto& bias = params_[stn_fc_ + 1];
            const auto id = AffineParams::identity();
            for (std::size_t k = 0; k < 6; ++k) bias[k] = static_cast<T>(id.m[k]);
        }
    }

    const DotNetConfig& config() const { return cfg_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }
    Mode mode() const { return mode_; }
    void set_mode(Mode m) { mode_ = m; }
    bool has_stn() const { return cfg_.use_stn; }

    /// The perturbation T(x) in (-1, 1), same shape as x.
    Tensor<T> perturbation(const Tensor<T>& x, PerturbTrace* trace = nullptr) const {
        check_input(x);
        if (trace) trace->blocks.assign(res_.size(), {});
        Tensor<T> h = conv_stage(x, stem_, 1, trace ? &trace->stem : nullptr);
        for (std::size_t i = 0; i < res_.size(); ++i) {
            auto* rt = trace ? &trace->blocks[i] : nullptr;
            Tensor<T> a = conv_stage(h, res_[i].first, 1, rt ? &rt->first : nullptr);
            Tensor<T> z = ops::conv2d(a, params_[res_[i].second], params_[res_[i].second + 1], 1,
                                      ops::Padding::reflect, rt ? &rt->conv2 : nullptr);
            z = ops::instance_norm(z, T(kInstanceNormEps), rt ? &rt->norm2 : nullptr);
            for (std::size_t k = 0; k < z.size(); ++k) z[k] += h[k];
            h = ops::relu(z);
            if (rt) rt->activation = h;
        }
        if (trace) trace->features_shape = h.shape();
        Tensor<T> cat = ops::concat_tiled(h, ops::global_avg_pool(h));
        Tensor<T> f = conv_stage(cat, fuse_, 0, trace ? &trace->fuse : nullptr);
        Tensor<T> o = ops::conv2d(f, params_[out_], params_[out_ + 1], 0, ops::Padding::zero,
                                  trace ? &trace->out_conv : nullptr);
        o = ops::tanh(o);
        if (trace) trace->output = o;
        return o;
    }

    /// Backward of perturbation(). Returns d/dx when want_input is set, else an empty tensor.
    Tensor<T> perturbation_backward(const PerturbTrace& trace, const Tensor<T>& grad_out, ParameterSet<T>* grads,
                                    bool want_input) const {
        Tensor<T> g = ops::tanh_backward(trace.output, grad_out);
        Tensor<T> gf;
        ops::conv2d_backward(trace.out_conv, params_[out_], g, grad_ptr(grads, out_), grad_ptr(grads, out_ + 1), &gf);
        Tensor<T> gcat = conv_stage_backward(trace.fuse, fuse_, gf, grads, true);
        Tensor<T> gh, gctx;
        ops::concat_tiled_backward(gcat, cfg_.base_channels, gh, gctx);
        Tensor<T> gpool = ops::global_avg_pool_backward(trace.features_shape, gctx);
        for (std::size_t k = 0; k < gh.size(); ++k) gh[k] += gpool[k];
        for (std::size_t i = res_.size(); i-- > 0;) {
            const auto& rt = trace.blocks[i];
            Tensor<T> gz = ops::relu_backward(rt.activation, gh);
            Tensor<T> gb = ops::instance_norm_backward(rt.norm2, gz);
            Tensor<T> ga;
            ops::conv2d_backward(rt.conv2, params_[res_[i].second], gb, grad_ptr(grads, res_[i].second),
                                 grad_ptr(grads, res_[i].second + 1), &ga);
            Tensor<T> gskip = conv_stage_backward(rt.first, res_[i].first, ga, grads, true);
            for (std::size_t k = 0; k < gz.size(); ++k) gskip[k] += gz[k];
            gh = std::move(gskip);
        }
        return conv_stage_backward(trace.stem, stem_, gh, grads, want_input);
    }

    /// Spatial transformer: predicted affine parameters (N, 6) and the warped image.
    Tensor<T> spatial_transform(const Tensor<T>& x, StnTrace* trace = nullptr, Tensor<T>* theta_out = nullptr) const {
        if (!cfg_.use_stn) throw Error("dotnet: network was built without a spatial transformer");
        check_input(x);
        StnTrace local;
        StnTrace& t = trace ? *trace : local;
        t.input = x;
        Tensor<T> h = ops::conv2d(x, params_[stn_conv1_], params_[stn_conv1_ + 1], 1, ops::Padding::zero, &t.conv1);
        t.act1 = ops::relu(h);
        h = ops::maxpool2x2(t.act1, &t.pool1);
        h = ops::conv2d(h, params_[stn_conv2_], params_[stn_conv2_ + 1], 1, ops::Padding::zero, &t.conv2);
        t.act2 = ops::relu(h);
        h = ops::maxpool2x2(t.act2, &t.pool2);
        t.pooled_shape = h.shape();
        t.context = ops::global_avg_pool(h);
        t.theta = ops::linear(t.context, params_[stn_fc_], params_[stn_fc_ + 1]);
        if (theta_out) *theta_out = t.theta;
        return ops::affine_grid_sample(x, t.theta);
    }

    /// Backward of spatial_transform given d/d(warped). Returns d/dx when want_input is set.
    Tensor<T> spatial_transform_backward(const StnTrace& t, const Tensor<T>& grad_warped, ParameterSet<T>* grads,
                                         bool want_input) const {
        Tensor<T> gx_sample, gtheta;
        ops::affine_grid_sample_backward(t.input, t.theta, grad_warped, want_input ? &gx_sample : nullptr, &gtheta);
        Tensor<T> gctx;
        ops::linear_backward(t.context, params_[stn_fc_], gtheta, grad_ptr(grads, stn_fc_),
                             grad_ptr(grads, stn_fc_ + 1), &gctx);
        Tensor<T> g = ops::global_avg_pool_backward(t.pooled_shape, gctx);
        g = ops::maxpool2x2_backward(t.pool2, g);
        g = ops::relu_backward(t.act2, g);
        Tensor<T> g1;
        ops::conv2d_backward(t.conv2, params_[stn_conv2_], g, grad_ptr(grads, stn_conv2_),
                             grad_ptr(grads, stn_conv2_ + 1), &g1);
        g1 = ops::maxpool2x2_backward(t.pool1, g1);
        g1 = ops::relu_backward(t.act1, g1);
        Tensor<T> g0;
        ops::conv2d_backward(t.conv1, params_[stn_conv1_], g1, grad_ptr(grads, stn_conv1_),
                             grad_ptr(grads, stn_conv1_ + 1), want_input ? &g0 : nullptr);
        if (!want_input) return {};
        for (std::size_t k = 0; k < g0.size(); ++k) g0[k] += gx_sample[k];
        return g0;
    }

private:
    struct ResidualIndex {
        std::size_t first, second;
    };

    std::size_t add_conv(const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
        const std::size_t idx = params_.add(name + ".weight", {out, in, k, k});
        params_.add(name + ".bias", {out});
        return idx;
    }

    void init_conv(std::size_t idx, std::size_t fan_in, Rng& rng) {
        init_fan_in_uniform(params_[idx], fan_in, rng);
        params_[idx + 1].fill(T(0));
    }

    static Tensor<T>* grad_ptr(ParameterSet<T>* grads, std::size_t i) { return grads ? &(*grads)[i] : nullptr; }

    Tensor<T> conv_stage(const Tensor<T>& x, std::size_t idx, std::size_t pad, ConvStage* st) const {
        Tensor<T> z = ops::conv2d(x, params_[idx], params_[idx + 1], pad, ops::Padding::reflect,
                                  st ? &st->conv : nullptr);
        z = ops::instance_norm(z, T(kInstanceNormEps), st ? &st->norm : nullptr);
        z = ops::relu(z);
        if (st) st->activation = z;
        return z;
    }

    Tensor<T> conv_stage_backward(const ConvStage& st, std::size_t idx, const Tensor<T>& grad_out,
                                  ParameterSet<T>* grads, bool want_input) const {
        Tensor<T> g = ops::relu_backward(st.activation, grad_out);
        g = ops::instance_norm_backward(st.norm, g);
        Tensor<T> gin;
        ops::conv2d_backward(st.conv, params_[idx], g, grad_ptr(grads, idx), grad_ptr(grads, idx + 1),
                             want_input ? &gin : nullptr);
        return gin;
    }

    void check_input(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(1) != cfg_.input_channels || x.dim(2) == 0 || x.dim(3) == 0) {
            throw Error("dotnet: input " + shape_string(x.shape()) + " must be N x " +
                        std::to_string(cfg_.input_channels) + " x H x W");
        }
    }

    DotNetConfig cfg_;
    ParameterSet<T> params_;
    Mode mode_ = Mode::train;
    std::size_t stem_ = 0, fuse_ = 0, out_ = 0;
    std::vector<ResidualIndex> res_;
    std::size_t stn_conv1_ = 0, stn_conv2_ = 0, stn_fc_ = 0;
};

template <class T>
DotNet<T> build_dotnet(const DotNetConfig& cfg, Rng& rng) {
    DotNet<T> net(cfg);
    net.init(rng);
    return net;
}

/// x~ = W(x) + lambda * T(W(x)), where W is the spatial transformer when present and the
/// identity otherwise. Each entry stays within lambda of W(x) in the working precision; the
/// result is not clamped to the image range.
template <class T>
Tensor<T> transform(const DotNet<T>& net, const Tensor<T>& x, double lambda,
                    typename DotNet<T>::Trace* trace = nullptr) {
    if (!(lambda >= 0.0)) throw Error("transform: lambda must be non-negative");
    Tensor<T> base = net.has_stn() ? net.spatial_transform(x, trace ? &trace->stn : nullptr) : x;
    if (lambda == 0.0 && trace == nullptr) return base;
    Tensor<T> p = net.perturbation(base, trace ? &trace->perturb : nullptr);
    const T l = static_cast<T>(lambda);
    for (std::size_t k = 0; k < base.size(); ++k) {
        const T x = base[k];
        T y = x + l * p[k];
        // A saturated tanh times a rounded lambda can land an ulp past the bound.
        while (std::abs(static_cast<double>(y) - static_cast<double>(x)) > lambda) y = std::nextafter(y, x);
        base[k] = y;
    }
    return base;
}

/// Backward of transform() given d/d(x~). DotNet parameter gradients are accumulated into
/// grads when non-null; d/dx is returned when want_input is set.
template <class T>
Tensor<T> transform_backward(const DotNet<T>& net, const typename DotNet<T>::Trace& trace,
                             const Tensor<T>& grad_out, double lambda, ParameterSet<T>* grads, bool want_input) {
    const T l = static_cast<T>(lambda);
    Tensor<T> gp(grad_out.shape());
    for (std::size_t k = 0; k < gp.size(); ++k) gp[k] = l * grad_out[k];
    const bool need_base = want_input || net.has_stn();
    Tensor<T> gbase = net.perturbation_backward(trace.perturb, gp, grads, need_base);
    if (!need_base) return {};
    for (std::size_t k = 0; k < gbase.size(); ++k) gbase[k] += grad_out[k];
    if (!net.has_stn()) return gbase;
    return net.spatial_transform_backward(trace.stn, gbase, grads, want_input);
}

}  // namespace ddaig

#endif
