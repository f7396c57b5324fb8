#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "scenegate/common.hpp"

namespace scenegate {

// splitmix64 finalizer. Used both as a hash mixer and as the counter-based
// generator core: output i of a stream keyed by k is mix64(k + (i+1)*GAMMA).
inline constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// FNV-1a over bytes; stable across platforms.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Stable key for a (namespace, text) pair.
inline std::uint64_t text_key(std::string_view ns, std::string_view text) {
    std::string joined;
    joined.reserve(ns.size() + 1 + text.size());
    joined.append(ns);
    joined.push_back('\x1f');
    joined.append(text);
    return fnv1a64(joined);
}

// Counter-based RNG: every draw is a pure function of (key, counter), so
// streams are reproducible, random-access and bit-stable across platforms.
// Floating-point outputs are built from integer bits with exact IEEE ops only.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : key_(key) {}

    std::uint64_t next_u64() { return at(counter_++); }

    // Value of draw i without advancing the stream.
    std::uint64_t at(std::uint64_t i) const {
        return mix64(key_ + (i + 1) * 0x9e3779b97f4a7c15ULL);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return to_unit(next_u64()); }

    static double to_unit(std::uint64_t bits) {
        return static_cast<double>(bits >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Index in [0, n).
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw ContractError("uniform_index: n must be positive");
        return static_cast<std::size_t>(next_u64() % n);
    }

    // Approximate standard normal via the Irwin-Hall sum of 12 uniforms.
    // Mean 0, variance 1, support [-6, 6]; uses only exact float arithmetic,
    // which keeps generated data bit-stable across platforms.
    double normal() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += uniform();
        return s - 6.0;
    }

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

// Independent sub-stream derived from a parent key and a label.
inline std::uint64_t derive_key(std::uint64_t parent, std::string_view label) {
    return mix64(parent ^ fnv1a64(label));
}

inline std::uint64_t derive_key(std::uint64_t parent, std::uint64_t index) {
    return mix64(parent ^ mix64(index));
}

}  // namespace scenegate
