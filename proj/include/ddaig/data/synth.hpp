#ifndef DDAIG_DATA_SYNTH_HPP
#define DDAIG_DATA_SYNTH_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "ddaig/data/dataset.hpp"
#include "ddaig/data/png_io.hpp"
#include "ddaig/json_util.hpp"
#include "ddaig/rng.hpp"

namespace ddaig {

enum class Background { flat, patches, clutter, texture };

inline const char* to_string(Background b) {
    switch (b) {
        case Background::flat: return "flat";
        case Background::patches: return "patches";
        case Background::clutter: return "clutter";
        case Background::texture: return "texture";
    }
    return "?";
}

inline Background background_from_string(const std::string& s) {
    if (s == "flat") return Background::flat;
    if (s == "patches") return Background::patches;
    if (s == "clutter") return Background::clutter;
    if (s == "texture") return Background::texture;
    throw Error("unknown background kind '" + s + "'");
}

/// Rendering style of one synthetic domain.
struct DomainRecipe {
    std::string name;
    Background background = Background::flat;
    std::array<double, 3> tint{1, 1, 1};  // glyph colour; any negative component draws a random colour per image
    double noise = 0.0;                   // std of additive Gaussian pixel noise, in [0, 1] units
    double stroke = 2.2;                  // stroke width in pixels at 32x32

    bool same_style(const DomainRecipe& o) const {
        return background == o.background && tint == o.tint && noise == o.noise && stroke == o.stroke;
    }
};

/// Four recipes loosely mirroring clean handwriting, colour-patch blending, cluttered street
/// numbers and tinted synthetic fonts. Further domains cycle the four kinds with heavier
/// strokes and more noise.
inline std::vector<DomainRecipe> default_recipes(std::size_t num_domains) {
    const std::vector<DomainRecipe> base = {
        {"clean", Background::flat, {1, 1, 1}, 0.0, 2.2},
        {"patches", Background::patches, {1, 1, 1}, 0.02, 2.2},
        {"clutter", Background::clutter, {-1, -1, -1}, 0.06, 3.4},
        {"texture", Background::texture, {1.0, 0.85, 0.3}, 0.03, 2.6},
    };
    std::vector<DomainRecipe> out;
    for (std::size_t i = 0; i < num_domains; ++i) {
        DomainRecipe r = base[i % base.size()];
        const std::size_t round = i / base.size();
        if (round > 0) {
            r.name += "_" + std::to_string(round + 1);
            r.stroke += 0.6 * static_cast<double>(round);
            r.noise += 0.04 * static_cast<double>(round);
        }
        out.push_back(r);
    }
    return out;
}

struct SynthBenchmarkSpec {
    std::size_t num_domains = 4;
    std::size_t num_classes = 10;
    std::size_t images_per_class_per_domain = 600;
    ImageShape image_shape{3, 32, 32};
    std::uint64_t seed = 0;
    double train_fraction = 0.8;
    std::vector<DomainRecipe> domain_recipes;  // empty: default_recipes(num_domains)

    std::vector<DomainRecipe> recipes() const {
        return domain_recipes.empty() ? default_recipes(num_domains) : domain_recipes;
    }

    void validate() const {
        if (num_domains < 2) throw Error("synthetic benchmark needs at least 2 domains");
        if (num_classes < 1 || num_classes > 10) throw Error("synthetic benchmark supports 1 to 10 digit classes");
        if (images_per_class_per_domain == 0) throw Error("images_per_class_per_domain must be positive");
        if (image_shape[0] != 1 && image_shape[0] != 3) throw Error("image channels must be 1 or 3");
        if (image_shape[1] < 8 || image_shape[2] < 8) throw Error("images must be at least 8x8");
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error("train_fraction must be in (0, 1)");
        const auto rs = recipes();
        if (rs.size() != num_domains) throw Error("domain_recipes count does not match num_domains");
        std::set<std::string> names;
        for (std::size_t i = 0; i < rs.size(); ++i) {
            if (rs[i].name.empty() || rs[i].name.find('/') != std::string::npos) {
                throw Error("invalid domain name '" + rs[i].name + "'");
            }
            if (!names.insert(rs[i].name).second) throw Error("duplicate domain name '" + rs[i].name + "'");
            for (std::size_t j = 0; j < i; ++j) {
                if (rs[i].same_style(rs[j])) {
                    throw Error("domain recipes '" + rs[j].name + "' and '" + rs[i].name + "' are identical");
                }
            }
        }
    }
};

inline json to_json(const SynthBenchmarkSpec& s) {
    json recipes = json::array();
    for (const auto& r : s.recipes()) {
        recipes.push_back({{"name", r.name},
                           {"background", to_string(r.background)},
                           {"tint", r.tint},
                           {"noise", r.noise},
                           {"stroke", r.stroke}});
    }
    return {{"num_domains", s.num_domains},
            {"num_classes", s.num_classes},
            {"images_per_class_per_domain", s.images_per_class_per_domain},
            {"image_shape", {s.image_shape[0], s.image_shape[1], s.image_shape[2]}},
            {"seed", s.seed},
            {"train_fraction", s.train_fraction},
            {"domain_recipes", recipes}};
}

/// Strict parse of a benchmark spec; missing keys keep their defaults.
inline SynthBenchmarkSpec synth_spec_from_json(const json& j) {
    reject_unknown_keys(j,
                        {"num_domains", "num_classes", "images_per_class_per_domain", "image_shape", "seed",
                         "train_fraction", "domain_recipes"},
                        "benchmark spec");
    SynthBenchmarkSpec s;
    read_opt(j, "num_domains", s.num_domains);
    read_opt(j, "num_classes", s.num_classes);
    read_opt(j, "images_per_class_per_domain", s.images_per_class_per_domain);
    read_opt(j, "image_shape", s.image_shape);
    read_opt(j, "seed", s.seed);
    read_opt(j, "train_fraction", s.train_fraction);
    if (auto it = j.find("domain_recipes"); it != j.end()) {
        if (!it->is_array()) throw Error("benchmark spec: domain_recipes must be an array");
        for (const auto& rj : *it) {
            reject_unknown_keys(rj, {"name", "background", "tint", "noise", "stroke"}, "domain recipe");
            DomainRecipe r;
            read_opt(rj, "name", r.name);
            std::string bg = to_string(r.background);
            read_opt(rj, "background", bg);
            r.background = background_from_string(bg);
            read_opt(rj, "tint", r.tint);
            read_opt(rj, "noise", r.noise);
            read_opt(rj, "stroke", r.stroke);
            s.domain_recipes.push_back(r);
        }
        if (!j.contains("num_domains")) s.num_domains = s.domain_recipes.size();
    }
    s.validate();
    return s;
}

namespace synth {

using Point = std::array<double, 2>;
using Polyline = std::vector<Point>;

inline Polyline ellipse(double cx, double cy, double rx, double ry, int segments = 16) {
    Polyline p;
    for (int i = 0; i <= segments; ++i) {
        const double a = 2.0 * std::numbers::pi * i / segments;
        p.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
    return p;
}

/// Stroke templates of the digits 0-9 in unit coordinates (x right, y down).
inline const std::vector<std::vector<Polyline>>& glyph_templates() {
    static const std::vector<std::vector<Polyline>> t = {
        {ellipse(0.5, 0.5, 0.26, 0.37)},
        {{{0.36, 0.28}, {0.53, 0.13}, {0.53, 0.87}}},
        {{{0.26, 0.32}, {0.32, 0.18}, {0.5, 0.12}, {0.68, 0.18}, {0.74, 0.32}, {0.7, 0.46}, {0.26, 0.86},
          {0.77, 0.86}}},
        {{{0.26, 0.18}, {0.5, 0.12}, {0.7, 0.2}, {0.72, 0.34}, {0.6, 0.46}, {0.44, 0.48}, {0.6, 0.5},
          {0.74, 0.62}, {0.72, 0.78}, {0.52, 0.88}, {0.26, 0.82}}},
        {{{0.62, 0.87}, {0.62, 0.13}, {0.24, 0.62}, {0.8, 0.62}}},
        {{{0.72, 0.14}, {0.32, 0.14}, {0.28, 0.46}, {0.5, 0.42}, {0.68, 0.5}, {0.74, 0.66}, {0.66, 0.82},
          {0.48, 0.88}, {0.26, 0.8}}},
        {{{0.68, 0.16}, {0.5, 0.12}, {0.34, 0.24}, {0.27, 0.5}, {0.3, 0.74}, {0.48, 0.88}, {0.66, 0.8},
          {0.72, 0.64}, {0.62, 0.5}, {0.46, 0.48}, {0.3, 0.58}}},
        {{{0.24, 0.14}, {0.76, 0.14}, {0.44, 0.87}}},
        {ellipse(0.5, 0.3, 0.2, 0.17), ellipse(0.5, 0.68, 0.24, 0.2)},
        {ellipse(0.5, 0.33, 0.22, 0.2), {{0.72, 0.33}, {0.68, 0.6}, {0.56, 0.87}}},
    };
    return t;
}

/// A float RGB canvas with values in [0, 1].
struct Canvas {
    std::size_t h, w;
    std::vector<double> rgb;  // HWC
    Canvas(std::size_t h_, std::size_t w_) : h(h_), w(w_), rgb(h_ * w_ * 3, 0.0) {}
    double& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * w + x) * 3 + c]; }
};

inline double segment_distance(double px, double py, const Point& a, const Point& b) {
    const double vx = b[0] - a[0], vy = b[1] - a[1];
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - a[0]) * vx + (py - a[1]) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (a[0] + t * vx), dy = py - (a[1] + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

/// Anti-aliased coverage mask of one digit under a random similarity+shear jitter.
inline std::vector<double> glyph_mask(std::size_t cls, std::size_t h, std::size_t w, double stroke, double offset_x,
                                      Rng& rng) {
    const double scale = uniform(rng, 0.72, 0.92) * static_cast<double>(std::min(h, w));
    const double rot = uniform(rng, -12.0, 12.0) * std::numbers::pi / 180.0;
    const double shear = uniform(rng, -0.15, 0.15);
    const double tx = uniform(rng, -1.5, 1.5) + offset_x, ty = uniform(rng, -1.5, 1.5);
    const double thick = stroke * uniform(rng, 0.85, 1.15) * static_cast<double>(std::min(h, w)) / 32.0;
    const double cr = std::cos(rot), sr = std::sin(rot);
    const double cx = static_cast<double>(w) / 2.0, cy = static_cast<double>(h) / 2.0;

    std::vector<Polyline> lines = glyph_templates().at(cls);
    for (auto& line : lines) {
        for (auto& p : line) {
            double u = p[0] - 0.5 + uniform(rng, -0.02, 0.02);
            double v = p[1] - 0.5 + uniform(rng, -0.02, 0.02);
            u += shear * v;
            const double x = (cr * u - sr * v) * scale, y = (sr * u + cr * v) * scale;
            p = {cx + x + tx, cy + y + ty};
        }
    }
    std::vector<double> mask(h * w, 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            double d = 1e9;
            for (const auto& line : lines)
                for (std::size_t k = 0; k + 1 < line.size(); ++k) d = std::min(d, segment_distance(px, py, line[k], line[k + 1]));
            mask[y * w + x] = std::clamp(thick / 2.0 + 0.5 - d, 0.0, 1.0);
        }
    }
    return mask;
}

inline std::array<double, 3> random_color(Rng& rng) {
    return {uniform01(rng), uniform01(rng), uniform01(rng)};
}

inline void fill_patches(Canvas& cv, Rng& rng) {
    const auto base = random_color(rng);
    for (std::size_t y = 0; y < cv.h; ++y)
        for (std::size_t x = 0; x < cv.w; ++x)
            for (std::size_t c = 0; c < 3; ++c) cv.at(y, x, c) = base[c];
    const int patches = 3 + static_cast<int>(uniform_index(rng, 4));
    for (int p = 0; p < patches; ++p) {
        const auto col = random_color(rng);
        const auto x0 = uniform_index(rng, cv.w), y0 = uniform_index(rng, cv.h);
        const auto pw = 4 + uniform_index(rng, cv.w / 2), ph = 4 + uniform_index(rng, cv.h / 2);
        for (std::size_t y = y0; y < std::min(cv.h, y0 + ph); ++y)
            for (std::size_t x = x0; x < std::min(cv.w, x0 + pw); ++x)
                for (std::size_t c = 0; c < 3; ++c) cv.at(y, x, c) = col[c];
    }
}

inline void fill_texture(Canvas& cv, Rng& rng) {
    const auto a = random_color(rng), b = random_color(rng);
    const double ang = uniform(rng, 0.0, std::numbers::pi);
    const double freq = uniform(rng, 0.35, 0.9), phase = uniform(rng, 0.0, 6.3);
    const double ang2 = uniform(rng, 0.0, std::numbers::pi), freq2 = uniform(rng, 0.2, 0.6);
    for (std::size_t y = 0; y < cv.h; ++y) {
        for (std::size_t x = 0; x < cv.w; ++x) {
            const double s1 = std::sin(freq * (std::cos(ang) * x + std::sin(ang) * y) + phase);
            const double s2 = std::sin(freq2 * (std::cos(ang2) * x + std::sin(ang2) * y));
            const double t = 0.5 + 0.3 * s1 + 0.2 * s2;
            for (std::size_t c = 0; c < 3; ++c) cv.at(y, x, c) = std::clamp(a[c] * t + b[c] * (1 - t), 0.0, 1.0) * 0.8;
        }
    }
}

/// Renders one image of class `cls` in the given style as 8-bit interleaved pixels.
inline Image8 render(const DomainRecipe& r, std::size_t cls, std::size_t num_classes, const ImageShape& shape,
                     Rng& rng) {
    const std::size_t h = shape[1], w = shape[2];
    Canvas cv(h, w);
    std::array<double, 3> tint = r.tint;
    if (tint[0] < 0 || tint[1] < 0 || tint[2] < 0) tint = random_color(rng);
    const auto mask = glyph_mask(cls, h, w, r.stroke, 0.0, rng);

    switch (r.background) {
        case Background::flat: {
            for (std::size_t i = 0; i < h * w; ++i)
                for (std::size_t c = 0; c < 3; ++c) cv.rgb[i * 3 + c] = mask[i] * tint[c];
            break;
        }
        case Background::patches: {
            fill_patches(cv, rng);
            for (std::size_t i = 0; i < h * w; ++i)
                for (std::size_t c = 0; c < 3; ++c) cv.rgb[i * 3 + c] = std::abs(cv.rgb[i * 3 + c] - mask[i] * tint[c]);
            break;
        }
        case Background::clutter: {
            auto bg = random_color(rng);
            // Keep the glyph readable against the background.
            double diff = 0;
            for (std::size_t c = 0; c < 3; ++c) diff += std::abs(bg[c] - tint[c]);
            if (diff < 0.9)
                for (std::size_t c = 0; c < 3; ++c) tint[c] = 1.0 - bg[c];
            for (std::size_t i = 0; i < h * w; ++i)
                for (std::size_t c = 0; c < 3; ++c) cv.rgb[i * 3 + c] = bg[c];
            for (double side : {-1.0, 1.0}) {
                const auto other = uniform_index(rng, num_classes);
                const double off = side * uniform(rng, 0.55, 0.7) * static_cast<double>(w);
                const auto m2 = glyph_mask(other, h, w, r.stroke, off, rng);
                for (std::size_t i = 0; i < h * w; ++i)
                    for (std::size_t c = 0; c < 3; ++c)
                        cv.rgb[i * 3 + c] = cv.rgb[i * 3 + c] * (1 - m2[i]) + tint[c] * m2[i];
            }
            for (std::size_t i = 0; i < h * w; ++i)
                for (std::size_t c = 0; c < 3; ++c)
                    cv.rgb[i * 3 + c] = cv.rgb[i * 3 + c] * (1 - mask[i]) + tint[c] * mask[i];
            break;
        }
        case Background::texture: {
            fill_texture(cv, rng);
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const std::size_t i = y * w + x;
                    const double shadow = (y > 0 && x > 0) ? mask[(y - 1) * w + (x - 1)] : 0.0;
                    for (std::size_t c = 0; c < 3; ++c) {
                        double v = cv.rgb[i * 3 + c] * (1 - 0.6 * shadow);
                        cv.rgb[i * 3 + c] = v * (1 - mask[i]) + tint[c] * mask[i];
                    }
                }
            }
            break;
        }
    }
    if (r.noise > 0) {
        for (auto& v : cv.rgb) v += r.noise * normal(rng);
    }

    Image8 img;
    img.width = w;
    img.height = h;
    img.channels = shape[0];
    img.pixels.resize(w * h * shape[0]);
    for (std::size_t i = 0; i < h * w; ++i) {
        if (shape[0] == 3) {
            for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = to_byte(2.0 * cv.rgb[i * 3 + c] - 1.0);
        } else {
            const double g = 0.299 * cv.rgb[i * 3] + 0.587 * cv.rgb[i * 3 + 1] + 0.114 * cv.rgb[i * 3 + 2];
            img.pixels[i] = to_byte(2.0 * g - 1.0);
        }
    }
    return img;
}

}  // namespace synth

/// Writes the benchmark as an image-folder dataset under out_dir and returns it as loaded
/// from disk. out_dir must be absent or empty unless overwrite is set and it already holds a
/// dataset (a manifest.json), in which case its contents are replaced.
inline MultiDomainDataset generate_synthetic_benchmark(const SynthBenchmarkSpec& spec, const fs::path& out_dir,
                                                       bool overwrite = false) {
    spec.validate();
    if (fs::exists(out_dir)) {
        if (!fs::is_directory(out_dir)) throw Error("'" + out_dir.string() + "' exists and is not a directory");
        if (!fs::is_empty(out_dir)) {
            if (!overwrite) throw Error("output directory '" + out_dir.string() + "' is not empty");
            if (!fs::exists(out_dir / "manifest.json")) {
                throw Error("refusing to overwrite '" + out_dir.string() + "': it does not contain a dataset manifest");
            }
            for (const auto& entry : fs::directory_iterator(out_dir)) fs::remove_all(entry.path());
        }
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Error("cannot create '" + out_dir.string() + "': " + ec.message());

    const auto recipes = spec.recipes();
    MultiDomainDataset ds;
    ds.image_shape = spec.image_shape;
    for (const auto& r : recipes) ds.domains.push_back(r.name);
    for (std::size_t c = 0; c < spec.num_classes; ++c) ds.classes.push_back(std::to_string(c));
    auto& train = ds.splits["train"];
    auto& val = ds.splits["val"];

    const std::size_t n = spec.images_per_class_per_domain;
    const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
    for (std::size_t d = 0; d < recipes.size(); ++d) {
        for (std::size_t c = 0; c < spec.num_classes; ++c) {
            const fs::path dir = out_dir / ds.domains[d] / ds.classes[c];
            fs::create_directories(dir, ec);
            if (ec) throw Error("cannot create '" + dir.string() + "': " + ec.message());
            std::vector<std::size_t> order(n);
            for (std::size_t i = 0; i < n; ++i) order[i] = i;
            Rng split_rng(derive_seed(spec.seed, 0x5b17ULL, d, c));
            shuffle(order.begin(), order.end(), split_rng);
            std::vector<bool> is_train(n, false);
            for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;
            for (std::size_t i = 0; i < n; ++i) {
                Rng rng(derive_seed(spec.seed, d + 1, c + 1, i + 1));
                const Image8 img = synth::render(recipes[d], c, spec.num_classes, spec.image_shape, rng);
                char file[32];
                std::snprintf(file, sizeof file, "%05zu.png", i);
                write_png(dir / file, img);
                LabeledImage li;
                li.path = ds.domains[d] + "/" + ds.classes[c] + "/" + file;
                (is_train[i] ? train : val).push_back(std::move(li));
            }
        }
    }
    json m = manifest_json(ds);
    m["seed"] = spec.seed;
    m["generator"] = to_json(spec);
    write_text_file(out_dir / "manifest.json", m.dump(2) + "\n");
    return load_image_folder(out_dir);
}

}  // namespace ddaig

#endif
