#ifndef DDAIG_TRAIN_CHECKPOINT_HPP
#define DDAIG_TRAIN_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddaig/nn/parameters.hpp"
#include "ddaig/tensor.hpp"

namespace ddaig {

using json = nlohmann::json;

/// Serialized training state.
///
/// File layout: one line of compact JSON (the header), a '\n', then the raw tensor data as
/// little-endian float32 in directory order (parameter tensors first, then optimizer
/// buffers). Header fields: format, version, iter, tensors / optimizer (directories of
/// name, shape, dtype, offset), rng, meta (config echo and network layout).
struct Checkpoint {
    static constexpr int kVersion = 1;

    struct Entry {
        std::string name;
        Tensor<float> value;
        bool operator==(const Entry&) const = default;
    };

    std::size_t iter = 0;
    std::vector<Entry> tensors;
    std::vector<Entry> optimizer;
    json rng = json::object();
    json meta = json::object();

    const Entry* find(const std::string& name) const {
        for (const auto& e : tensors)
            if (e.name == name) return &e;
        return nullptr;
    }

    bool operator==(const Checkpoint&) const = default;
};

template <class T>
void append_entries(std::vector<Checkpoint::Entry>& out, const std::string& prefix, const ParameterSet<T>& ps) {
    for (std::size_t i = 0; i < ps.size(); ++i) out.push_back({prefix + ps.name(i), ps[i].template cast<float>()});
}

/// Copies prefixed entries into ps. Every name/shape mismatch is collected into one error.
template <class T>
void restore_entries(const std::vector<Checkpoint::Entry>& entries, const std::string& prefix, ParameterSet<T>& ps) {
    std::string problems;
    std::vector<bool> used(ps.size(), false);
    for (const auto& e : entries) {
        if (e.name.rfind(prefix, 0) != 0) continue;
        const std::string local = e.name.substr(prefix.size());
        std::size_t idx = ps.size();
        for (std::size_t i = 0; i < ps.size(); ++i)
            if (ps.name(i) == local) idx = i;
        if (idx == ps.size()) {
            problems += "\n  unexpected tensor " + e.name + " " + shape_string(e.value.shape());
            continue;
        }
        if (ps[idx].shape() != e.value.shape()) {
            problems += "\n  shape mismatch for " + e.name + ": checkpoint " + shape_string(e.value.shape()) +
                        ", network " + shape_string(ps[idx].shape());
            continue;
        }
        used[idx] = true;
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (!used[i] && problems.find(prefix + ps.name(i)) == std::string::npos) {
            bool present = false;
            for (const auto& e : entries) present = present || e.name == prefix + ps.name(i);
            if (!present) problems += "\n  missing tensor " + prefix + ps.name(i) + " " + shape_string(ps[i].shape());
        }
    }
    if (!problems.empty()) throw Error("checkpoint does not match the network architecture:" + problems);
    for (const auto& e : entries) {
        if (e.name.rfind(prefix, 0) != 0) continue;
        auto idx = ps.index_of(e.name.substr(prefix.size()));
        ps[idx] = e.value.template cast<T>();
    }
}

namespace detail {

inline json directory(const std::vector<Checkpoint::Entry>& entries, std::uint64_t& offset) {
    json dir = json::array();
    for (const auto& e : entries) {
        dir.push_back({{"name", e.name}, {"shape", e.value.shape()}, {"dtype", "float32"}, {"offset", offset}});
        offset += e.value.size() * 4;
    }
    return dir;
}

inline void put_floats(std::string& out, const Tensor<float>& t) {
    for (float v : t.values()) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
    }
}

inline std::vector<Checkpoint::Entry> read_directory(const json& dir, const std::string& data, std::uint64_t& expected) {
    std::vector<Checkpoint::Entry> out;
    for (const auto& d : dir) {
        if (d.at("dtype").get<std::string>() != "float32") throw Error("checkpoint: unsupported dtype");
        const auto shape = d.at("shape").get<Shape>();
        const auto offset = d.at("offset").get<std::uint64_t>();
        const std::size_t count = shape_volume(shape);
        if (offset != expected) throw Error("checkpoint: tensor directory is not contiguous");
        expected += count * 4;
        if (expected > data.size()) throw Error("checkpoint is truncated");
        std::vector<float> values(count);
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[offset + i * 4 + b])) << (8 * b);
            std::memcpy(&values[i], &bits, 4);
        }
        out.push_back({d.at("name").get<std::string>(), Tensor<float>(shape, std::move(values))});
    }
    return out;
}

}  // namespace detail

inline std::string serialize(const Checkpoint& ck) {
    std::uint64_t offset = 0;
    json header;
    header["format"] = "ddaig-checkpoint";
    header["version"] = Checkpoint::kVersion;
    header["iter"] = ck.iter;
    header["tensors"] = detail::directory(ck.tensors, offset);
    header["optimizer"] = detail::directory(ck.optimizer, offset);
    header["rng"] = ck.rng;
    header["meta"] = ck.meta;
    std::string out = header.dump();
    out.push_back('\n');
    out.reserve(out.size() + offset);
    for (const auto& e : ck.tensors) detail::put_floats(out, e.value);
    for (const auto& e : ck.optimizer) detail::put_floats(out, e.value);
    return out;
}

inline Checkpoint deserialize(const std::string& bytes) {
    const auto nl = bytes.find('\n');
    if (nl == std::string::npos) throw Error("checkpoint is truncated (no header terminator)");
    json header;
    try {
        header = json::parse(bytes.substr(0, nl));
    } catch (const json::exception& e) {
        throw Error(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    try {
        if (header.at("format").get<std::string>() != "ddaig-checkpoint") throw Error("not a ddaig checkpoint");
        const int version = header.at("version").get<int>();
        if (version != Checkpoint::kVersion) {
            throw Error("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(Checkpoint::kVersion) + ")");
        }
        const std::string data = bytes.substr(nl + 1);
        Checkpoint ck;
        ck.iter = header.at("iter").get<std::size_t>();
        std::uint64_t expected = 0;
        ck.tensors = detail::read_directory(header.at("tensors"), data, expected);
        ck.optimizer = detail::read_directory(header.at("optimizer"), data, expected);
        if (expected != data.size()) throw Error("checkpoint has trailing bytes after tensor data");
        ck.rng = header.at("rng");
        ck.meta = header.at("meta");
        return ck;
    } catch (const json::exception& e) {
        throw Error(std::string("malformed checkpoint header: ") + e.what());
    }
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    const std::string bytes = serialize(ck);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write checkpoint '" + path.string() + "'");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error("failed writing checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint '" + path.string() + "'");
    std::string bytes((std::istreambuf_iterator<char>(is)), {});
    return deserialize(bytes);
}

}  // namespace ddaig

#endif
