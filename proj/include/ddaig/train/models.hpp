#ifndef DDAIG_TRAIN_MODELS_HPP
#define DDAIG_TRAIN_MODELS_HPP

#include <optional>

#include "ddaig/train/checkpoint.hpp"
#include "ddaig/train/config.hpp"

namespace ddaig {

/// Networks rebuilt from a checkpoint written by Trainer::checkpoint().
struct SavedModels {
    Method method = Method::vanilla;
    TrainConfig config;
    std::vector<std::string> domains;  // source domains, in label order
    std::vector<std::string> classes;
    ImageShape image_shape{};
    ConvClassifier<float> label;
    std::optional<ConvClassifier<float>> domain;
    std::optional<DotNet<float>> dotnet;
};

inline SavedModels load_models(const Checkpoint& ck) {
    SavedModels m;
    try {
        m.method = method_from_string(ck.meta.at("method").get<std::string>());
        m.config = train_config_from_json(ck.meta.at("config"));
        m.domains = ck.meta.at("domains").get<std::vector<std::string>>();
        m.classes = ck.meta.at("classes").get<std::vector<std::string>>();
        m.image_shape = ck.meta.at("image_shape").get<ImageShape>();
    } catch (const json::exception& e) {
        throw Error(std::string("checkpoint meta is incomplete: ") + e.what());
    }
    ClassifierConfig cc{m.image_shape, m.classes.size(), m.config.conv_channels, m.config.num_conv_blocks};
    m.label = ConvClassifier<float>(cc);
    restore_entries(ck.tensors, "label/", m.label.params());
    if (m.method != Method::vanilla) {
        cc.num_outputs = m.domains.size();
        m.domain.emplace(cc);
        restore_entries(ck.tensors, "domain/", m.domain->params());
    }
    if (m.method == Method::ddaig) {
        DotNetConfig dc = m.config.dotnet;
        dc.input_channels = m.image_shape[0];
        m.dotnet.emplace(dc);
        restore_entries(ck.tensors, "dotnet/", m.dotnet->params());
    }
    return m;
}

}  // namespace ddaig

#endif
