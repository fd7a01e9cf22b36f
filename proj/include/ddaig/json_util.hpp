#ifndef DDAIG_JSON_UTIL_HPP
#define DDAIG_JSON_UTIL_HPP

#include <set>
#include <string>

#include "json.hpp"

#include "ddaig/tensor.hpp"

namespace ddaig {

using json = nlohmann::json;

/// Throws if `j` is not an object or holds a key outside `allowed`.
inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw Error(where + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw Error(where + ": unknown key '" + key + "'");
    }
}

template <class V>
void read_opt(const json& j, const char* key, V& out) {
    if (auto it = j.find(key); it != j.end()) {
        try {
            out = it->get<V>();
        } catch (const json::exception& e) {
            throw Error(std::string("config key '") + key + "': " + e.what());
        }
    }
}

}  // namespace ddaig

#endif
