#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace geoprobe::rng {

// Counter-based generator built on the splitmix64 mixing function. Every
// consumer derives its own stream key from (seed, tag, indices), so output
// never depends on evaluation order or worker count.

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(a) ^ (0x9e3779b97f4a7c15ULL + b));
}

// FNV-1a, used to fold human-readable stream tags into keys.
constexpr std::uint64_t hash_tag(std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t stream_key(std::uint64_t seed, std::string_view tag) {
    return mix(seed, hash_tag(tag));
}

constexpr std::uint64_t stream_key(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
    return mix(stream_key(seed, tag), index);
}

class Stream {
public:
    explicit Stream(std::uint64_t key) : key_(key) {}

    std::uint64_t next_u64() { return splitmix64(key_ ^ splitmix64(counter_++)); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    // Standard normal via Box-Muller; the paired value is cached.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_unit();
        double u2 = next_unit();
        if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Fisher-Yates draw of n distinct indices from [0, pop). Returns them in
// draw order.
inline std::vector<std::size_t> draw_without_replacement(std::size_t pop, std::size_t n, Stream& s) {
    std::vector<std::size_t> idx(pop);
    for (std::size_t i = 0; i < pop; ++i) idx[i] = i;
    for (std::size_t i = 0; i < n && i + 1 < pop; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(s.below(pop - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    return idx;
}

}  // namespace geoprobe::rng
