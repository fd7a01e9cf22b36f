#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ddaig/ddaig.hpp"

namespace ddaig {
inline void PrintTo(const Checkpoint::Entry& e, std::ostream* os) { *os << e.name; }
}  // namespace ddaig

namespace testing_support {

using ddaig::Tensor;

inline Tensor<double> random_tensor(const ddaig::Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(shape);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

/// Central differences of `loss` with respect to every entry of `x` (perturbed in place).
template <class Loss>
std::vector<double> numeric_gradient(Tensor<double>& x, Loss&& loss, double step = 1e-6) {
    std::vector<double> g(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double keep = x[k];
        x[k] = keep + step;
        const double up = loss();
        x[k] = keep - step;
        const double down = loss();
        x[k] = keep;
        g[k] = (up - down) / (2 * step);
    }
    return g;
}

/// ||a - n|| / max(||a||, ||n||, floor). The floor keeps structurally zero gradients (a conv
/// bias followed by instance norm) from turning finite-difference noise into relative error 1.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                             double floor = 1e-5) {
    double diff = 0, na = 0, nn = 0;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
        diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
        na += analytic[k] * analytic[k];
        nn += numeric[k] * numeric[k];
    }
    const double scale = std::max({std::sqrt(na), std::sqrt(nn), floor});
    return std::sqrt(diff) / scale;
}

inline std::vector<double> values(const Tensor<double>& t) { return {t.values().begin(), t.values().end()}; }

/// Student-t 0.975 quantile by bisection on a Simpson-integrated density. Independent of the
/// library quantile used by the evaluation code.
inline double t_quantile_975_oracle(std::size_t dof) {
    const double v = static_cast<double>(dof);
    const double log_norm = std::lgamma((v + 1) / 2) - std::lgamma(v / 2) - 0.5 * std::log(v * M_PI);
    auto pdf = [&](double t) { return std::exp(log_norm - (v + 1) / 2 * std::log1p(t * t / v)); };
    auto cdf = [&](double x) {
        const int n = 20000;
        const double h = x / n;
        double s = pdf(0) + pdf(x);
        for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
        return 0.5 + s * h / 3;
    };
    double lo = 0, hi = 20;
    while (cdf(hi) < 0.975) hi *= 2;
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (cdf(mid) < 0.975 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("ddaig_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// A small generated benchmark, cached per parameter set for the life of the process.
inline const ddaig::MultiDomainDataset& tiny_benchmark(std::size_t per_class = 10, std::size_t size = 16,
                                                       std::size_t domains = 3, std::size_t classes = 4) {
    static std::map<std::string, ddaig::MultiDomainDataset> cache;
    const std::string key = std::to_string(per_class) + "_" + std::to_string(size) + "_" + std::to_string(domains) +
                            "_" + std::to_string(classes);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    ddaig::SynthBenchmarkSpec spec;
    spec.num_domains = domains;
    spec.num_classes = classes;
    spec.images_per_class_per_domain = per_class;
    spec.image_shape = {3, size, size};
    spec.seed = 11;
    auto ds = ddaig::generate_synthetic_benchmark(spec, temp_dir("bench_" + key));
    return cache.emplace(key, std::move(ds)).first->second;
}

/// Training config small enough for unit tests on 16x16 images.
inline ddaig::TrainConfig tiny_config() {
    ddaig::TrainConfig c;
    c.batch_size = 8;
    c.max_iters = 12;
    c.warmup_iters = 4;
    c.conv_channels = 4;
    c.num_conv_blocks = 2;
    c.dotnet.base_channels = 4;
    c.dotnet.num_res_blocks = 1;
    c.dotnet.stn_channels = 4;
    c.seed = 3;
    return c;
}

}  // namespace testing_support
