#ifndef DDAIG_DATA_DATASET_HPP
#define DDAIG_DATA_DATASET_HPP

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddaig/data/png_io.hpp"
#include "ddaig/nn/classifier.hpp"
#include "ddaig/tensor.hpp"

namespace ddaig {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// One CHW image in [-1, 1] with its class and domain label.
struct LabeledImage {
    std::vector<float> pixels;
    int class_label = 0;
    int domain_label = 0;
    std::string path;  // relative path in the on-disk layout; identifies the file

    bool operator==(const LabeledImage&) const = default;
};

struct MultiDomainDataset {
    std::vector<std::string> domains;
    std::vector<std::string> classes;
    ImageShape image_shape{3, 32, 32};
    std::map<std::string, std::vector<LabeledImage>> splits;

    std::size_t image_size() const { return image_shape[0] * image_shape[1] * image_shape[2]; }

    const std::vector<LabeledImage>& split(const std::string& name) const {
        auto it = splits.find(name);
        if (it == splits.end()) throw Error("dataset has no split named '" + name + "'");
        return it->second;
    }

    std::size_t domain_index(const std::string& name) const {
        auto it = std::find(domains.begin(), domains.end(), name);
        if (it == domains.end()) throw Error("unknown domain '" + name + "'");
        return static_cast<std::size_t>(it - domains.begin());
    }

    /// Every image of one domain across all splits, in split-name then file order.
    std::vector<LabeledImage> domain_images(std::size_t domain) const {
        std::vector<LabeledImage> out;
        for (const auto& [name, items] : splits)
            for (const auto& im : items)
                if (im.domain_label == static_cast<int>(domain)) out.push_back(im);
        return out;
    }

    bool operator==(const MultiDomainDataset&) const = default;
};

/// A batch of images stacked as (N, C, H, W).
template <class T>
struct Batch {
    Tensor<T> images;
    std::vector<int> labels;
    std::vector<int> domains;

    std::size_t size() const { return labels.size(); }
};

template <class T>
Batch<T> make_batch(const std::vector<LabeledImage>& items, const std::vector<std::size_t>& indices,
                    const ImageShape& shape) {
    const std::size_t per = shape[0] * shape[1] * shape[2];
    Batch<T> b;
    b.images = Tensor<T>({indices.size(), shape[0], shape[1], shape[2]});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& it = items.at(indices[i]);
        std::copy(it.pixels.begin(), it.pixels.end(), b.images.data() + i * per);
        b.labels.push_back(it.class_label);
        b.domains.push_back(it.domain_label);
    }
    return b;
}

template <class T>
Batch<T> make_batch(const std::vector<LabeledImage>& items, const ImageShape& shape) {
    std::vector<std::size_t> idx(items.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return make_batch<T>(items, idx, shape);
}

// ---- on-disk layout ---------------------------------------------------------

inline json manifest_json(const MultiDomainDataset& ds) {
    json m;
    m["domains"] = ds.domains;
    m["classes"] = ds.classes;
    m["image_shape"] = {ds.image_shape[0], ds.image_shape[1], ds.image_shape[2]};
    json splits = json::object();
    for (const auto& [name, items] : ds.splits) {
        std::vector<std::string> paths;
        for (const auto& it : items) paths.push_back(it.path);
        splits[name] = paths;
    }
    m["splits"] = splits;
    return m;
}

inline void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write '" + path.string() + "'");
    os << text;
    if (!os) throw Error("failed writing '" + path.string() + "'");
}

inline std::string read_text_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read '" + path.string() + "'");
    return std::string(std::istreambuf_iterator<char>(is), {});
}

/// Loads `root/<domain>/<class>/*.png` as listed in `root/manifest.json`. Pixels are mapped
/// from [0, 255] to [-1, 1]; single-channel images are replicated to the manifest's channel
/// count.
inline MultiDomainDataset load_image_folder(const fs::path& root) {
    const fs::path manifest_path = root / "manifest.json";
    if (!fs::exists(manifest_path)) throw Error("missing manifest: " + manifest_path.string());
    json m;
    try {
        m = json::parse(read_text_file(manifest_path));
    } catch (const json::exception& e) {
        throw Error("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    MultiDomainDataset ds;
    try {
        ds.domains = m.at("domains").get<std::vector<std::string>>();
        ds.classes = m.at("classes").get<std::vector<std::string>>();
        auto shape = m.at("image_shape").get<std::vector<std::size_t>>();
        if (shape.size() != 3) throw Error("manifest image_shape must have 3 entries");
        ds.image_shape = {shape[0], shape[1], shape[2]};
        if (ds.image_shape[0] != 1 && ds.image_shape[0] != 3) throw Error("manifest channel count must be 1 or 3");
        for (const auto& [name, list] : m.at("splits").items()) {
            auto& items = ds.splits[name];
            for (const auto& rel : list.get<std::vector<std::string>>()) {
                const fs::path p(rel);
                auto it = p.begin();
                if (std::distance(p.begin(), p.end()) != 3) {
                    throw Error("manifest path '" + rel + "' is not <domain>/<class>/<file>");
                }
                const std::string dname = (*it++).string();
                const std::string cname = (*it).string();
                LabeledImage im;
                im.path = rel;
                auto di = std::find(ds.domains.begin(), ds.domains.end(), dname);
                auto ci = std::find(ds.classes.begin(), ds.classes.end(), cname);
                if (di == ds.domains.end()) throw Error("'" + rel + "': domain not declared in manifest");
                if (ci == ds.classes.end()) throw Error("'" + rel + "': class not declared in manifest");
                im.domain_label = static_cast<int>(di - ds.domains.begin());
                im.class_label = static_cast<int>(ci - ds.classes.begin());

                const Image8 img = read_png(root / p);
                const auto [c, h, w] = ds.image_shape;
                if (img.height != h || img.width != w || (img.channels != 1 && img.channels != c)) {
                    throw Error("image '" + (root / p).string() + "' has shape " + std::to_string(img.channels) +
                                "x" + std::to_string(img.height) + "x" + std::to_string(img.width) + ", expected " +
                                std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w));
                }
                im.pixels.resize(c * h * w);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t src_c = img.channels == 1 ? 0 : ch;
                    for (std::size_t y = 0; y < h; ++y)
                        for (std::size_t x = 0; x < w; ++x)
                            im.pixels[(ch * h + y) * w + x] = from_byte(img.at(y, x, src_c));
                }
                items.push_back(std::move(im));
            }
        }
    } catch (const json::exception& e) {
        throw Error("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    return ds;
}

/// Training data for leave-one-domain-out: the train split of every domain except the
/// held-out one, with domain labels renumbered densely over the remaining sources.
struct SourceView {
    MultiDomainDataset sources;           // domains = remaining sources; splits "train", "val"
    std::vector<LabeledImage> held_out;   // all images of the held-out domain (original labels)
    std::string held_out_name;
};

inline SourceView make_source_view(const MultiDomainDataset& ds, const std::string& held_out) {
    const std::size_t h = ds.domain_index(held_out);
    if (ds.domains.size() < 2) throw Error("leave-one-domain-out needs at least 2 domains");
    SourceView v;
    v.held_out_name = held_out;
    v.sources.classes = ds.classes;
    v.sources.image_shape = ds.image_shape;
    std::vector<int> remap(ds.domains.size(), -1);
    for (std::size_t d = 0; d < ds.domains.size(); ++d) {
        if (d == h) continue;
        remap[d] = static_cast<int>(v.sources.domains.size());
        v.sources.domains.push_back(ds.domains[d]);
    }
    for (const auto& [name, items] : ds.splits) {
        auto& out = v.sources.splits[name];
        for (const auto& im : items) {
            if (static_cast<std::size_t>(im.domain_label) == h) continue;
            LabeledImage copy = im;
            copy.domain_label = remap[static_cast<std::size_t>(im.domain_label)];
            out.push_back(std::move(copy));
        }
    }
    v.held_out = ds.domain_images(h);
    return v;
}

}  // namespace ddaig

#endif
