#ifndef DDAIG_REPORT_EXPORT_HPP
#define DDAIG_REPORT_EXPORT_HPP

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "ddaig/data/dataset.hpp"
#include "ddaig/nn/classifier.hpp"
#include "ddaig/nn/dotnet.hpp"

namespace ddaig {

/// Width of the white gap between panels.
inline constexpr std::size_t kPanelSeparator = 2;

/// One C x H x W image in display bytes.
struct Panel {
    std::size_t channels = 0, height = 0, width = 0;
    std::vector<std::uint8_t> bytes;  // CHW
};

/// Clamps to [-1, 1] and maps to [0, 255].
inline Panel clamped_panel(const float* chw, std::size_t c, std::size_t h, std::size_t w) {
    Panel p{c, h, w, std::vector<std::uint8_t>(c * h * w)};
    for (std::size_t k = 0; k < p.bytes.size(); ++k) p.bytes[k] = to_byte(chw[k]);
    return p;
}

/// Per-image min-max stretch to [0, 255]; a constant image renders as 127.
inline Panel minmax_panel(const float* chw, std::size_t c, std::size_t h, std::size_t w) {
    Panel p{c, h, w, std::vector<std::uint8_t>(c * h * w)};
    const auto [lo, hi] = std::minmax_element(chw, chw + p.bytes.size());
    const float range = *hi - *lo;
    for (std::size_t k = 0; k < p.bytes.size(); ++k) {
        p.bytes[k] = range > 0.0f ? static_cast<std::uint8_t>(std::lround((chw[k] - *lo) / range * 255.0f)) : 127;
    }
    return p;
}

/// Panels side by side, separated by white columns.
inline Image8 compose_panels(const std::vector<Panel>& panels) {
    if (panels.empty()) throw Error("compose_panels: nothing to draw");
    const std::size_t c = panels[0].channels, h = panels[0].height, w = panels[0].width;
    Image8 img;
    img.channels = c;
    img.height = h;
    img.width = panels.size() * w + (panels.size() - 1) * kPanelSeparator;
    img.pixels.assign(img.width * img.height * c, 255);
    for (std::size_t i = 0; i < panels.size(); ++i) {
        const std::size_t x0 = i * (w + kPanelSeparator);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) img.at(y, x0 + x, ch) = panels[i].bytes[(ch * h + y) * w + x];
    }
    return img;
}

namespace detail {

inline std::filesystem::path numbered(const std::filesystem::path& dir, const char* stem, std::size_t i) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%04zu.png", stem, i);
    return dir / name;
}

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create directory '" + dir.string() + "': " + ec.message());
}

}  // namespace detail

/// Writes one PNG per example: [x | clamp(x~) | min-max T(x)], x~ = W(x) + lambda T(W(x)).
/// Returns the written paths.
inline std::vector<std::filesystem::path> export_triptychs(const DotNet<float>& net,
                                                           const std::vector<LabeledImage>& examples,
                                                           const ImageShape& shape, double lambda,
                                                           const std::filesystem::path& out_dir) {
    if (examples.empty()) throw Error("export_triptychs: no examples");
    detail::ensure_dir(out_dir);
    const auto [c, h, w] = shape;
    const std::size_t per = c * h * w;
    const Batch<float> b = make_batch<float>(examples, shape);
    const Tensor<float> base = net.has_stn() ? net.spatial_transform(b.images) : b.images;
    const Tensor<float> pert = net.perturbation(base);
    const float lam = static_cast<float>(lambda);
    std::vector<std::filesystem::path> out;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        std::vector<float> xt(per);
        for (std::size_t k = 0; k < per; ++k) xt[k] = base[i * per + k] + lam * pert[i * per + k];
        const Image8 img = compose_panels({clamped_panel(b.images.data() + i * per, c, h, w),
                                           clamped_panel(xt.data(), c, h, w),
                                           minmax_panel(pert.data() + i * per, c, h, w)});
        out.push_back(detail::numbered(out_dir, "triptych", i));
        write_png(out.back(), img);
    }
    return out;
}

/// Writes one PNG per example: [x | STN(x) | STN(x) + lambda T | min-max T].
inline std::vector<std::filesystem::path> export_stn_gallery(const DotNet<float>& net,
                                                             const std::vector<LabeledImage>& examples,
                                                             const ImageShape& shape, double lambda,
                                                             const std::filesystem::path& out_dir) {
    if (!net.has_stn()) throw Error("export_stn_gallery: the DoTNet has no spatial transformer");
    if (examples.empty()) throw Error("export_stn_gallery: no examples");
    detail::ensure_dir(out_dir);
    const auto [c, h, w] = shape;
    const std::size_t per = c * h * w;
    const Batch<float> b = make_batch<float>(examples, shape);
    const Tensor<float> warped = net.spatial_transform(b.images);
    const Tensor<float> pert = net.perturbation(warped);
    const float lam = static_cast<float>(lambda);
    std::vector<std::filesystem::path> out;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        std::vector<float> xt(per);
        for (std::size_t k = 0; k < per; ++k) xt[k] = warped[i * per + k] + lam * pert[i * per + k];
        const Image8 img = compose_panels(
            {clamped_panel(b.images.data() + i * per, c, h, w), clamped_panel(warped.data() + i * per, c, h, w),
             clamped_panel(xt.data(), c, h, w), minmax_panel(pert.data() + i * per, c, h, w)});
        out.push_back(detail::numbered(out_dir, "stn", i));
        write_png(out.back(), img);
    }
    return out;
}

/// Penultimate activations of a classifier for original and transformed images.
struct FeatureDump {
    struct Row {
        std::vector<float> features;
        int domain_label = 0;
        bool is_transformed = false;
        int class_label = 0;
        bool operator==(const Row&) const = default;
    };
    std::size_t feature_dim = 0;
    std::string source_checkpoint;
    std::vector<Row> rows;

    bool operator==(const FeatureDump&) const = default;
};

/// Features of h for every example, then for every example transformed by `net` at lambda.
inline FeatureDump domain_features(const ConvClassifier<float>& h, const DotNet<float>& net,
                                   const std::vector<LabeledImage>& examples, double lambda,
                                   std::size_t chunk = 256) {
    if (examples.empty()) throw Error("export_domain_features: no examples");
    FeatureDump dump;
    dump.feature_dim = h.config().feature_dim();
    const ImageShape shape = h.config().input_shape;
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t start = 0; start < examples.size(); start += chunk) {
            std::vector<std::size_t> idx;
            for (std::size_t i = start; i < std::min(examples.size(), start + chunk); ++i) idx.push_back(i);
            const Batch<float> b = make_batch<float>(examples, idx, shape);
            const Tensor<float> x = pass == 0 ? b.images : transform(net, b.images, lambda);
            const Tensor<float> f = h.features(x);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                FeatureDump::Row r;
                r.features.assign(f.data() + i * dump.feature_dim, f.data() + (i + 1) * dump.feature_dim);
                r.domain_label = b.domains[i];
                r.is_transformed = pass == 1;
                r.class_label = b.labels[i];
                dump.rows.push_back(std::move(r));
            }
        }
    }
    return dump;
}

/// CSV: a header row f0..f{dim-1},domain_label,is_transformed,class_label, then one row per
/// feature vector.
inline std::string feature_csv(const FeatureDump& dump) {
    std::string s;
    for (std::size_t k = 0; k < dump.feature_dim; ++k) s += "f" + std::to_string(k) + ",";
    s += "domain_label,is_transformed,class_label\n";
    char buf[32];
    for (const auto& r : dump.rows) {
        for (float v : r.features) {
            std::snprintf(buf, sizeof buf, "%.9g,", static_cast<double>(v));
            s += buf;
        }
        s += std::to_string(r.domain_label) + "," + (r.is_transformed ? "1" : "0") + "," +
             std::to_string(r.class_label) + "\n";
    }
    return s;
}

inline FeatureDump export_domain_features(const ConvClassifier<float>& h, const DotNet<float>& net,
                                          const std::vector<LabeledImage>& examples, double lambda,
                                          const std::filesystem::path& out_path) {
    FeatureDump dump = domain_features(h, net, examples, lambda);
    if (out_path.has_parent_path()) detail::ensure_dir(out_path.parent_path());
    write_text_file(out_path, feature_csv(dump));
    return dump;
}

}  // namespace ddaig

#endif
