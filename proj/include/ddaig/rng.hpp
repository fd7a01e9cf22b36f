#ifndef DDAIG_RNG_HPP
#define DDAIG_RNG_HPP

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "ddaig/tensor.hpp"

namespace ddaig {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                                    std::uint64_t c = 0) {
    return derive_seed(derive_seed(derive_seed(seed, a), b), c);
}

/// Named sub-streams of a training seed.
enum class Stream : std::uint64_t {
    label_init = 1,
    domain_init = 2,
    dotnet_init = 3,
    sampler = 4,
    augmentation = 5,
};

inline Rng make_rng(std::uint64_t seed, Stream stream) {
    return Rng(derive_seed(seed, static_cast<std::uint64_t>(stream)));
}

// The mappings below are written out so streams are identical across standard libraries.

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

inline double normal(Rng& rng) {
    double u1 = uniform01(rng);
    double u2 = uniform01(rng);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

template <class It>
void shuffle(It first, It last, Rng& rng) {
    auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = uniform_index(rng, i);
        std::swap(first[i - 1], first[j]);
    }
}

inline std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline Rng rng_from_state(const std::string& state) {
    Rng rng;
    std::istringstream is(state);
    is >> rng;
    if (!is) throw Error("malformed rng state");
    return rng;
}

}  // namespace ddaig

#endif
