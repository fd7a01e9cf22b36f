#ifndef DDAIG_BASELINES_BASELINES_HPP
#define DDAIG_BASELINES_BASELINES_HPP

#include "ddaig/baselines/crossgrad.hpp"
#include "ddaig/train/trainer.hpp"

namespace ddaig {

/// Source aggregation: the training loop with only the label-classifier update on raw data.
/// Works with a single source domain.
template <class T = float>
TrainResult<T> train_vanilla(const MultiDomainDataset& sources, const TrainConfig& cfg,
                             const TrainOutputs& out = {}) {
    return train<T>(sources, Method::vanilla, cfg, out);
}

/// Same loop shape as DDAIG, with x~ taken from crossgrad_perturb against the domain
/// classifier instead of a DoTNet. Uses cfg.crossgrad for epsilon and normalization.
template <class T = float>
TrainResult<T> train_crossgrad(const MultiDomainDataset& sources, const TrainConfig& cfg,
                               const TrainOutputs& out = {}) {
    return train<T>(sources, Method::crossgrad, cfg, out);
}

}  // namespace ddaig

#endif
