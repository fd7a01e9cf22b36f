#ifndef DDAIG_DDAIG_HPP
#define DDAIG_DDAIG_HPP

#include "ddaig/baselines/baselines.hpp"
#include "ddaig/data/dataset.hpp"
#include "ddaig/data/sampler.hpp"
#include "ddaig/data/synth.hpp"
#include "ddaig/eval/metrics.hpp"
#include "ddaig/eval/protocol.hpp"
#include "ddaig/nn/classifier.hpp"
#include "ddaig/nn/dotnet.hpp"
#include "ddaig/report/export.hpp"
#include "ddaig/train/checkpoint.hpp"
#include "ddaig/train/models.hpp"
#include "ddaig/train/trainer.hpp"

#endif
