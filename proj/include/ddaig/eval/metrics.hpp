#ifndef DDAIG_EVAL_METRICS_HPP
#define DDAIG_EVAL_METRICS_HPP

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"

#include "ddaig/data/dataset.hpp"
#include "ddaig/nn/classifier.hpp"
#include "ddaig/ops/sampling.hpp"

namespace ddaig {

/// Row-wise argmax of (N, K) logits; ties go to the lowest index.
template <class T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
    require_rank(logits, 2, "argmax_rows");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (logits[i * k + j] > logits[i * k + best]) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

/// Fraction of rows whose argmax equals the target.
template <class T>
double accuracy_from_logits(const Tensor<T>& logits, std::span<const int> targets) {
    if (targets.empty()) throw Error("accuracy of an empty example set is undefined");
    const auto pred = argmax_rows(logits);
    if (pred.size() != targets.size()) throw Error("accuracy: logits and targets disagree in length");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == targets[i];
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

/// Top-1 accuracy of f on `examples`, evaluated in chunks of `chunk` images.
template <class T>
double accuracy(const ConvClassifier<T>& f, const std::vector<LabeledImage>& examples, std::size_t chunk = 256) {
    if (examples.empty()) throw Error("accuracy of an empty example set is undefined");
    const ImageShape shape = f.config().input_shape;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < examples.size(); start += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(examples.size(), start + chunk); ++i) idx.push_back(i);
        const Batch<T> b = make_batch<T>(examples, idx, shape);
        const auto pred = argmax_rows(f.forward(b.images));
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

/// Rotates every image about its center (bilinear, background -1).
inline std::vector<LabeledImage> rotate_examples(const std::vector<LabeledImage>& examples, const ImageShape& shape,
                                                 double degrees) {
    if (degrees == 0.0) return examples;
    std::vector<LabeledImage> out = examples;
    const AffineParams rot = AffineParams::rotation(degrees);
    for (auto& im : out) {
        Tensor<float> x({1, shape[0], shape[1], shape[2]}, im.pixels);
        const Tensor<float> y = ops::warp(x, rot);
        im.pixels.assign(y.data(), y.data() + y.size());
    }
    return out;
}

/// Two-sided 97.5% Student-t quantile with `dof` degrees of freedom.
inline double t_quantile_975(std::size_t dof) {
    boost::math::students_t dist(static_cast<double>(dof));
    return boost::math::quantile(dist, 0.975);
}

struct MeanInterval {
    double mean = 0;
    double ci95_halfwidth = 0;
};

/// Mean and t-interval half-width t_{0.975,n-1} * sd / sqrt(n) (sample sd). A single value
/// has half-width 0.
inline MeanInterval mean_ci95(const std::vector<double>& values) {
    if (values.empty()) throw Error("mean of an empty list is undefined");
    const double n = static_cast<double>(values.size());
    MeanInterval r;
    r.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() < 2) return r;
    double ss = 0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    const double sd = std::sqrt(ss / (n - 1));
    r.ci95_halfwidth = t_quantile_975(values.size() - 1) * sd / std::sqrt(n);
    return r;
}

struct FailedSeed {
    std::uint64_t seed = 0;
    std::string message;
    bool operator==(const FailedSeed&) const = default;
};

/// Accuracies of one held-out domain (or one table cell) across seeds.
struct EvalReport {
    std::string held_out_domain;
    std::vector<std::uint64_t> seeds;          // seeds that finished, aligned with per_seed_accuracy
    std::vector<double> per_seed_accuracy;
    std::vector<FailedSeed> failed_seeds;
    double mean = 0;
    double ci95_halfwidth = 0;
    json config = json::object();

    /// Recomputes mean and half-width from per_seed_accuracy (NaN when every seed failed).
    void finalize() {
        if (per_seed_accuracy.empty()) {
            mean = ci95_halfwidth = std::nan("");
            return;
        }
        const auto mi = mean_ci95(per_seed_accuracy);
        mean = mi.mean;
        ci95_halfwidth = mi.ci95_halfwidth;
    }
};

inline json to_json(const EvalReport& r) {
    json failed = json::array();
    for (const auto& f : r.failed_seeds) failed.push_back({{"seed", f.seed}, {"error", f.message}});
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    return {{"held_out_domain", r.held_out_domain},
            {"seeds", r.seeds},
            {"per_seed_accuracy", r.per_seed_accuracy},
            {"failed_seeds", failed},
            {"mean", num(r.mean)},
            {"ci95_halfwidth", num(r.ci95_halfwidth)},
            {"config", r.config}};
}

/// Mean of the per-report means (the "Avg." column).
inline double average_of_means(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw Error("average of no reports");
    double s = 0;
    for (const auto& r : reports) s += r.mean;
    return s / static_cast<double>(reports.size());
}

}  // namespace ddaig

#endif
