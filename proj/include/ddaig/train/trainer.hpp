#ifndef DDAIG_TRAIN_TRAINER_HPP
#define DDAIG_TRAIN_TRAINER_HPP

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddaig/baselines/crossgrad.hpp"
#include "ddaig/data/sampler.hpp"
#include "ddaig/train/checkpoint.hpp"
#include "ddaig/train/config.hpp"
#include "ddaig/train/objectives.hpp"

namespace ddaig {

/// Losses of one training iteration. Optional fields are absent when the method or the
/// warm-up gate skipped the corresponding term.
struct LossReport {
    std::size_t iter = 0;
    double lr = 0;
    bool warmup = false;
    double label_loss = 0;                          // J_L on the raw batch
    std::optional<double> transformed_label_loss;   // J~_L
    std::optional<double> domain_loss;              // J_D on the raw batch
    std::optional<double> transformed_domain_loss;  // J~_D
    std::optional<double> dotnet_objective;         // J~_L - J~_D

    bool finite() const {
        auto ok = [](const std::optional<double>& v) { return !v || std::isfinite(*v); };
        return std::isfinite(label_loss) && ok(transformed_label_loss) && ok(domain_loss) &&
               ok(transformed_domain_loss) && ok(dotnet_objective);
    }

    bool operator==(const LossReport&) const = default;
};

inline json to_json(const LossReport& r) {
    json j = {{"iter", r.iter}, {"lr", r.lr}, {"warmup", r.warmup}, {"J_L", r.label_loss}};
    auto put = [&](const char* key, const std::optional<double>& v) {
        j[key] = v ? json(*v) : json(nullptr);
    };
    put("J~_L", r.transformed_label_loss);
    put("J_D", r.domain_loss);
    put("J~_D", r.transformed_domain_loss);
    put("dotnet_objective", r.dotnet_objective);
    return j;
}

/// Thrown when a loss becomes NaN or infinite. Carries the offending report.
class TrainingAborted : public Error {
public:
    explicit TrainingAborted(LossReport r)
        : Error("training diverged at iteration " + std::to_string(r.iter) + ": " + to_json(r).dump()),
          report_(std::move(r)) {}
    const LossReport& report() const { return report_; }

private:
    LossReport report_;
};

/// Which DoTNet parameter version produced each transformed batch of the last step.
/// Versions count completed DoTNet updates.
struct StepTrace {
    std::optional<std::size_t> generator_batch_version;
    std::optional<std::size_t> classifier_batch_version;
    double max_perturbation = 0;  // max |x~ - x| over the batch used for the DoTNet update
};

/// The alternating training loop for one of the three methods.
///
/// The trainer keeps a pointer to `sources`, which must outlive it. Only the "train" split is
/// sampled.
template <class T>
class Trainer {
public:
    Trainer(const MultiDomainDataset& sources, Method method, TrainConfig cfg)
        : data_(&sources), method_(method), cfg_(std::move(cfg)) {
        cfg_.validate();
        const auto& train = sources.split("train");
        if (cfg_.batch_size > train.size()) {
            throw Error("batch_size " + std::to_string(cfg_.batch_size) + " exceeds the training split size " +
                        std::to_string(train.size()));
        }
        const std::size_t num_domains = sources.domains.size();
        if (method_ != Method::vanilla && num_domains < 2) {
            throw Error(to_string(method_) + " needs at least 2 source domains");
        }
        iters_per_epoch_ = std::max<std::size_t>(1, train.size() / cfg_.batch_size);
        total_iters_ = cfg_.max_iters > 0 ? cfg_.max_iters : cfg_.epochs * iters_per_epoch_;
        warmup_iters_ = cfg_.warmup_iters >= 0 ? static_cast<std::size_t>(cfg_.warmup_iters)
                                               : cfg_.warmup_epochs * iters_per_epoch_;
        if (method_ != Method::vanilla && warmup_iters_ >= total_iters_) {
            throw Error("warm-up (" + std::to_string(warmup_iters_) + " iterations) must be shorter than training (" +
                        std::to_string(total_iters_) + " iterations)");
        }

        ClassifierConfig ccfg{sources.image_shape, sources.classes.size(), cfg_.conv_channels, cfg_.num_conv_blocks};
        Rng label_rng = make_rng(cfg_.seed, Stream::label_init);
        label_ = build_label_classifier<T>(ccfg, label_rng);
        label_opt_ = Sgd<T>(label_.params(), cfg_.momentum, cfg_.weight_decay);
        if (method_ != Method::vanilla) {
            ccfg.num_outputs = num_domains;
            Rng domain_rng = make_rng(cfg_.seed, Stream::domain_init);
            domain_ = build_domain_classifier<T>(ccfg, domain_rng);
            domain_opt_ = Sgd<T>(domain_->params(), cfg_.momentum, cfg_.weight_decay);
        }
        if (method_ == Method::ddaig) {
            DotNetConfig dcfg = cfg_.dotnet;
            dcfg.input_channels = sources.image_shape[0];
            Rng dotnet_rng = make_rng(cfg_.seed, Stream::dotnet_init);
            dotnet_ = build_dotnet<T>(dcfg, dotnet_rng);
            dotnet_opt_ = Sgd<T>(dotnet_->params(), cfg_.momentum, cfg_.dotnet_weight_decay ? cfg_.weight_decay : 0.0);
        }
        sampler_.emplace(train, num_domains, derive_seed(cfg_.seed, static_cast<std::uint64_t>(Stream::sampler)),
                         cfg_.balanced_sampling);
        augment_rng_ = make_rng(cfg_.seed, Stream::augmentation);
    }

    Method method() const { return method_; }
    const TrainConfig& config() const { return cfg_; }
    std::size_t iters_per_epoch() const { return iters_per_epoch_; }
    std::size_t total_iters() const { return total_iters_; }
    std::size_t warmup_iters() const { return warmup_iters_; }
    std::size_t iteration() const { return iter_; }
    bool done() const { return iter_ >= total_iters_; }

    /// Step-decay schedule shared by all optimizers.
    double learning_rate(std::size_t k) const {
        const std::size_t epoch = k / iters_per_epoch_;
        return cfg_.eta * std::pow(cfg_.lr_decay_factor, static_cast<double>(epoch / cfg_.lr_decay_every_epochs));
    }

    ConvClassifier<T>& label_classifier() { return label_; }
    const ConvClassifier<T>& label_classifier() const { return label_; }
    bool has_domain_classifier() const { return domain_.has_value(); }
    ConvClassifier<T>& domain_classifier() { return domain_.value(); }
    const ConvClassifier<T>& domain_classifier() const { return domain_.value(); }
    bool has_dotnet() const { return dotnet_.has_value(); }
    DotNet<T>& dotnet() { return dotnet_.value(); }
    const DotNet<T>& dotnet() const { return dotnet_.value(); }
    std::size_t dotnet_version() const { return dotnet_version_; }
    const StepTrace& last_trace() const { return trace_; }

    /// Extra fields merged into every checkpoint's meta block.
    json& meta_extra() { return meta_extra_; }

    /// Draws the next minibatch (with augmentation when enabled).
    Batch<T> next_batch() {
        Batch<T> b = make_batch<T>(data_->split("train"), sampler_->next(cfg_.batch_size), data_->image_shape);
        augment(b.images);
        return b;
    }

    /// One iteration on the next sampled batch.
    LossReport step() {
        Batch<T> b = next_batch();
        return step(b);
    }

    /// One iteration of the configured method on `batch` at the current iteration index.
    LossReport step(const Batch<T>& batch) {
        LossReport r;
        r.iter = iter_;
        r.lr = learning_rate(iter_);
        r.warmup = method_ != Method::vanilla && iter_ < warmup_iters_;
        trace_ = {};
        switch (method_) {
            case Method::vanilla: vanilla_step(batch, r); break;
            case Method::crossgrad: crossgrad_step(batch, r); break;
            case Method::ddaig: ddaig_step(batch, r); break;
        }
        ++iter_;
        return r;
    }

    // ---- the sub-steps of one iteration, exposed for isolation tests ----

    /// theta <- theta - lr * grad_theta (J~_L - J~_D) on x~ = x + lambda T(x).
    DotnetObjective<T> update_dotnet(const Batch<T>& batch, double lr) {
        ParameterSet<T> g = dotnet_->params().zeros_like();
        Tensor<T> xt;
        auto obj = dotnet_objective(label_, *domain_, *dotnet_, batch, cfg_.lambda, &g, &xt);
        trace_.generator_batch_version = dotnet_version_;
        trace_.max_perturbation = static_cast<double>(max_abs_diff(xt, batch.images));
        guard({static_cast<double>(obj.label_loss), static_cast<double>(obj.domain_loss)}, g);
        dotnet_opt_.step(dotnet_->params(), g, lr);
        ++dotnet_version_;
        return obj;
    }

    /// phi <- phi - lr * grad_phi of J_L (warm-up) or (1 - alpha) J_L + alpha J~_L, where x~ is
    /// recomputed with the current DoTNet or supplied by `perturbed`.
    ClassifierObjective<T> update_label_classifier(const Batch<T>& batch, double lr, bool warmup,
                                                   const Tensor<T>* perturbed = nullptr) {
        ParameterSet<T> g = label_.params().zeros_like();
        ClassifierObjective<T> obj;
        if (warmup || method_ == Method::vanilla) {
            obj.raw_loss = classification_loss<T>(label_, batch.images, batch.labels, &g, nullptr);
            obj.value = obj.raw_loss;
        } else if (perturbed) {
            obj = classifier_objective(label_, batch, *perturbed, cfg_.alpha, &g);
        } else {
            Tensor<T> xt = cfg_.alpha > 0.0 ? transform(*dotnet_, batch.images, cfg_.lambda) : Tensor<T>{};
            trace_.classifier_batch_version = dotnet_version_;
            obj = classifier_objective(label_, batch, xt, cfg_.alpha, &g);
        }
        guard({static_cast<double>(obj.raw_loss), static_cast<double>(obj.transformed_loss)}, g);
        label_opt_.step(label_.params(), g, lr);
        return obj;
    }

    /// varphi <- varphi - lr * grad_varphi J_D on raw data.
    T update_domain_classifier(const Batch<T>& batch, double lr) {
        ParameterSet<T> g = domain_->params().zeros_like();
        const T loss = domain_objective(*domain_, batch, &g);
        guard({static_cast<double>(loss)}, g);
        domain_opt_.step(domain_->params(), g, lr);
        return loss;
    }

    /// Runs until done(). `on_report` sees every LossReport; `on_epoch` is called after the
    /// last iteration of each epoch with the 1-based epoch number.
    void run(const std::function<void(const LossReport&)>& on_report = {},
             const std::function<void(std::size_t)>& on_epoch = {}) {
        while (!done()) {
            const LossReport r = step();
            if (on_report) on_report(r);
            if (on_epoch && iter_ % iters_per_epoch_ == 0) on_epoch(iter_ / iters_per_epoch_);
        }
    }

    Checkpoint checkpoint() const {
        Checkpoint ck;
        ck.iter = iter_;
        append_entries(ck.tensors, "label/", label_.params());
        append_entries(ck.optimizer, "label/", label_opt_.buffers());
        if (domain_) {
            append_entries(ck.tensors, "domain/", domain_->params());
            append_entries(ck.optimizer, "domain/", domain_opt_.buffers());
        }
        if (dotnet_) {
            append_entries(ck.tensors, "dotnet/", dotnet_->params());
            append_entries(ck.optimizer, "dotnet/", dotnet_opt_.buffers());
        }
        ck.rng = {{"sampler", sampler_->state()}, {"augmentation", rng_state(augment_rng_)}};
        ck.meta = meta_extra_;
        ck.meta["method"] = to_string(method_);
        ck.meta["config"] = to_json(cfg_);
        ck.meta["dotnet_version"] = dotnet_version_;
        ck.meta["domains"] = data_->domains;
        ck.meta["classes"] = data_->classes;
        ck.meta["image_shape"] = data_->image_shape;
        return ck;
    }

    /// Restores parameters, optimizer buffers, RNG streams and the iteration counter.
    void restore(const Checkpoint& ck) {
        const std::string m = ck.meta.value("method", "");
        if (m != to_string(method_)) {
            throw Error("checkpoint was written by method '" + m + "', trainer runs '" + to_string(method_) + "'");
        }
        restore_entries(ck.tensors, "label/", label_.params());
        restore_entries(ck.optimizer, "label/", label_opt_.buffers());
        if (domain_) {
            restore_entries(ck.tensors, "domain/", domain_->params());
            restore_entries(ck.optimizer, "domain/", domain_opt_.buffers());
        }
        if (dotnet_) {
            restore_entries(ck.tensors, "dotnet/", dotnet_->params());
            restore_entries(ck.optimizer, "dotnet/", dotnet_opt_.buffers());
        }
        sampler_->restore(ck.rng.at("sampler"));
        augment_rng_ = rng_from_state(ck.rng.at("augmentation").get<std::string>());
        dotnet_version_ = ck.meta.value("dotnet_version", std::size_t{0});
        iter_ = ck.iter;
    }

private:
    void vanilla_step(const Batch<T>& batch, LossReport& r) {
        r.label_loss = static_cast<double>(update_label_classifier(batch, r.lr, true).raw_loss);
        abort_if_nonfinite(r);
    }

    void crossgrad_step(const Batch<T>& batch, LossReport& r) {
        std::optional<Tensor<T>> xt;
        if (!r.warmup) {
            xt = crossgrad_perturb(*domain_, batch.images, batch.domains, cfg_.crossgrad.epsilon,
                                   cfg_.crossgrad.normalize_grad);
        }
        auto fo = update_label_classifier(batch, r.lr, r.warmup, xt ? &*xt : nullptr);
        r.label_loss = static_cast<double>(fo.raw_loss);
        if (!r.warmup && cfg_.alpha > 0.0) r.transformed_label_loss = static_cast<double>(fo.transformed_loss);
        r.domain_loss = static_cast<double>(update_domain_classifier(batch, r.lr));
        abort_if_nonfinite(r);
    }

    void ddaig_step(const Batch<T>& batch, LossReport& r) {
        const auto t = update_dotnet(batch, r.lr);
        r.transformed_label_loss = static_cast<double>(t.label_loss);
        r.transformed_domain_loss = static_cast<double>(t.domain_loss);
        r.dotnet_objective = static_cast<double>(t.value());
        r.label_loss = static_cast<double>(update_label_classifier(batch, r.lr, r.warmup).raw_loss);
        r.domain_loss = static_cast<double>(update_domain_classifier(batch, r.lr));
        abort_if_nonfinite(r);
    }

    // Checked before each optimizer step so a divergent loss or gradient never reaches the
    // parameters. Max pooling can hide a NaN input from the loss but not from the gradient.
    void guard(std::initializer_list<double> losses, const ParameterSet<T>& grads) const {
        bool ok = true;
        double bad = 0;
        for (double v : losses) {
            if (!std::isfinite(v)) {
                ok = false;
                bad = v;
            }
        }
        for (std::size_t i = 0; ok && i < grads.size(); ++i)
            for (T v : grads[i].values())
                if (!std::isfinite(static_cast<double>(v))) {
                    ok = false;
                    bad = static_cast<double>(v);
                    break;
                }
        if (ok) return;
        LossReport r;
        r.iter = iter_;
        r.lr = learning_rate(iter_);
        r.label_loss = bad;
        throw TrainingAborted(r);
    }

    void abort_if_nonfinite(const LossReport& r) const {
        if (!r.finite()) throw TrainingAborted(r);
    }

    // Random crop (4-pixel background padding) and horizontal flip, per sample.
    void augment(Tensor<T>& x) {
        if (!cfg_.augment_crop && !cfg_.augment_flip) return;
        const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        constexpr long kPad = 4;
        std::vector<T> sample(c * h * w);
        for (std::size_t i = 0; i < n; ++i) {
            T* px = x.data() + i * c * h * w;
            std::copy(px, px + sample.size(), sample.begin());
            long dy = 0, dx = 0;
            if (cfg_.augment_crop) {
                dy = static_cast<long>(uniform_index(augment_rng_, 2 * kPad + 1)) - kPad;
                dx = static_cast<long>(uniform_index(augment_rng_, 2 * kPad + 1)) - kPad;
            }
            const bool flip = cfg_.augment_flip && uniform01(augment_rng_) < 0.5;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t yy = 0; yy < h; ++yy)
                    for (std::size_t xx = 0; xx < w; ++xx) {
                        const long sy = static_cast<long>(yy) + dy;
                        long sx = static_cast<long>(xx) + dx;
                        if (flip) sx = static_cast<long>(w) - 1 - sx;
                        const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
                        px[(ch * h + yy) * w + xx] =
                            inside ? sample[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)]
                                   : T(-1);
                    }
        }
    }

    const MultiDomainDataset* data_;
    Method method_;
    TrainConfig cfg_;
    std::size_t iters_per_epoch_ = 1, total_iters_ = 0, warmup_iters_ = 0;
    std::size_t iter_ = 0;
    std::size_t dotnet_version_ = 0;

    ConvClassifier<T> label_;
    Sgd<T> label_opt_;
    std::optional<ConvClassifier<T>> domain_;
    Sgd<T> domain_opt_;
    std::optional<DotNet<T>> dotnet_;
    Sgd<T> dotnet_opt_;
    std::optional<BatchSampler> sampler_;
    Rng augment_rng_;
    StepTrace trace_;
    json meta_extra_ = json::object();
};

/// Output of a complete training run.
template <class T>
struct TrainResult {
    Trainer<T> trainer;
    std::vector<LossReport> reports;
};

/// Optional on-disk outputs of train(): per-epoch checkpoints and a JSON-lines loss log.
struct TrainOutputs {
    std::filesystem::path checkpoint_dir;  // empty: no checkpoints
    std::filesystem::path loss_log;        // empty: no log
    json meta = json::object();            // merged into every checkpoint
};

/// Runs the full loop. Checkpoints are written after every epoch as epoch_NNN.ckpt plus a
/// final.ckpt.
template <class T = float>
TrainResult<T> train(const MultiDomainDataset& sources, Method method, const TrainConfig& cfg,
                     const TrainOutputs& out = {}) {
    TrainResult<T> result{Trainer<T>(sources, method, cfg), {}};
    auto& trainer = result.trainer;
    trainer.meta_extra() = out.meta;
    std::ofstream log;
    if (!out.loss_log.empty()) {
        log.open(out.loss_log, std::ios::binary);
        if (!log) throw Error("cannot write loss log '" + out.loss_log.string() + "'");
    }
    auto on_report = [&](const LossReport& r) {
        result.reports.push_back(r);
        if (log.is_open()) log << to_json(r).dump() << '\n';
    };
    auto on_epoch = [&](std::size_t epoch) {
        if (out.checkpoint_dir.empty()) return;
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%03zu.ckpt", epoch);
        save_checkpoint(trainer.checkpoint(), out.checkpoint_dir / name);
    };
    try {
        trainer.run(on_report, on_epoch);
    } catch (const TrainingAborted& e) {
        if (log.is_open()) log << to_json(e.report()).dump() << '\n';
        throw;
    }
    if (!out.checkpoint_dir.empty()) save_checkpoint(trainer.checkpoint(), out.checkpoint_dir / "final.ckpt");
    return result;
}

}  // namespace ddaig

#endif
