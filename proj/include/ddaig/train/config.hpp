#ifndef DDAIG_TRAIN_CONFIG_HPP
#define DDAIG_TRAIN_CONFIG_HPP

#include <cstdint>
#include <set>
#include <string>

#include "json.hpp"

#include "ddaig/json_util.hpp"
#include "ddaig/nn/classifier.hpp"
#include "ddaig/nn/dotnet.hpp"

namespace ddaig {

using json = nlohmann::json;

enum class Method { vanilla, crossgrad, ddaig };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::vanilla: return "vanilla";
        case Method::crossgrad: return "crossgrad";
        case Method::ddaig: return "ddaig";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    if (s == "vanilla") return Method::vanilla;
    if (s == "crossgrad") return Method::crossgrad;
    if (s == "ddaig") return Method::ddaig;
    throw Error("unknown method '" + s + "' (expected vanilla, crossgrad or ddaig)");
}

struct CrossGradConfig {
    double epsilon = 1.0;
    bool normalize_grad = true;
};

/// Every knob of the alternating training loop.
struct TrainConfig {
    double eta = 0.05;
    double lambda = 0.3;
    double alpha = 0.5;
    std::size_t batch_size = 128;
    std::size_t epochs = 50;
    std::size_t max_iters = 0;          // 0: epochs * (train_size / batch_size)
    long warmup_iters = -1;             // < 0: warmup_epochs worth of iterations
    std::size_t warmup_epochs = 3;
    double lr_decay_factor = 0.1;
    std::size_t lr_decay_every_epochs = 20;
    double weight_decay = 5e-4;
    bool dotnet_weight_decay = true;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    bool augment_crop = false;
    bool augment_flip = false;
    bool balanced_sampling = false;
    std::size_t conv_channels = 64;
    std::size_t num_conv_blocks = 4;
    DotNetConfig dotnet{};  // input_channels is taken from the data
    CrossGradConfig crossgrad{};

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("alpha must lie in [0, 1]");
        if (!(lambda >= 0.0)) throw Error("lambda must be non-negative");
        if (!(eta >= 0.0)) throw Error("eta must be non-negative");
        if (batch_size == 0) throw Error("batch_size must be positive");
        if (epochs == 0 && max_iters == 0) throw Error("either epochs or max_iters must be positive");
        if (lr_decay_every_epochs == 0) throw Error("lr_decay_every_epochs must be positive");
        if (!(crossgrad.epsilon >= 0.0)) throw Error("crossgrad epsilon must be non-negative");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("momentum must lie in [0, 1)");
    }
};

inline json to_json(const TrainConfig& c) {
    return {{"eta", c.eta},
            {"lambda", c.lambda},
            {"alpha", c.alpha},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"max_iters", c.max_iters},
            {"warmup_iters", c.warmup_iters},
            {"warmup_epochs", c.warmup_epochs},
            {"lr_decay_factor", c.lr_decay_factor},
            {"lr_decay_every_epochs", c.lr_decay_every_epochs},
            {"weight_decay", c.weight_decay},
            {"dotnet_weight_decay", c.dotnet_weight_decay},
            {"momentum", c.momentum},
            {"seed", c.seed},
            {"augment_crop", c.augment_crop},
            {"augment_flip", c.augment_flip},
            {"balanced_sampling", c.balanced_sampling},
            {"classifier", {{"conv_channels", c.conv_channels}, {"num_conv_blocks", c.num_conv_blocks}}},
            {"dotnet",
             {{"base_channels", c.dotnet.base_channels},
              {"num_res_blocks", c.dotnet.num_res_blocks},
              {"use_stn", c.dotnet.use_stn},
              {"stn_channels", c.dotnet.stn_channels}}},
            {"crossgrad", {{"epsilon", c.crossgrad.epsilon}, {"normalize_grad", c.crossgrad.normalize_grad}}}};
}

/// Strict parse: unknown keys anywhere are rejected. Missing keys keep `base` values.
inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {}) {
    reject_unknown_keys(j,
                        {"eta", "lambda", "alpha", "batch_size", "epochs", "max_iters", "warmup_iters",
                         "warmup_epochs", "lr_decay_factor", "lr_decay_every_epochs", "weight_decay",
                         "dotnet_weight_decay", "momentum", "seed", "augment_crop", "augment_flip",
                         "balanced_sampling", "classifier", "dotnet", "crossgrad"},
                        "train config");
    TrainConfig c = base;
    read_opt(j, "eta", c.eta);
    read_opt(j, "lambda", c.lambda);
    read_opt(j, "alpha", c.alpha);
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "epochs", c.epochs);
    read_opt(j, "max_iters", c.max_iters);
    read_opt(j, "warmup_iters", c.warmup_iters);
    read_opt(j, "warmup_epochs", c.warmup_epochs);
    read_opt(j, "lr_decay_factor", c.lr_decay_factor);
    read_opt(j, "lr_decay_every_epochs", c.lr_decay_every_epochs);
    read_opt(j, "weight_decay", c.weight_decay);
    read_opt(j, "dotnet_weight_decay", c.dotnet_weight_decay);
    read_opt(j, "momentum", c.momentum);
    read_opt(j, "seed", c.seed);
    read_opt(j, "augment_crop", c.augment_crop);
    read_opt(j, "augment_flip", c.augment_flip);
    read_opt(j, "balanced_sampling", c.balanced_sampling);
    if (auto it = j.find("classifier"); it != j.end()) {
        reject_unknown_keys(*it, {"conv_channels", "num_conv_blocks"}, "train config classifier");
        read_opt(*it, "conv_channels", c.conv_channels);
        read_opt(*it, "num_conv_blocks", c.num_conv_blocks);
    }
    if (auto it = j.find("dotnet"); it != j.end()) {
        reject_unknown_keys(*it, {"base_channels", "num_res_blocks", "use_stn", "stn_channels"},
                            "train config dotnet");
        read_opt(*it, "base_channels", c.dotnet.base_channels);
        read_opt(*it, "num_res_blocks", c.dotnet.num_res_blocks);
        read_opt(*it, "use_stn", c.dotnet.use_stn);
        read_opt(*it, "stn_channels", c.dotnet.stn_channels);
    }
    if (auto it = j.find("crossgrad"); it != j.end()) {
        reject_unknown_keys(*it, {"epsilon", "normalize_grad"}, "train config crossgrad");
        read_opt(*it, "epsilon", c.crossgrad.epsilon);
        read_opt(*it, "normalize_grad", c.crossgrad.normalize_grad);
    }
    c.validate();
    return c;
}

}  // namespace ddaig

#endif
