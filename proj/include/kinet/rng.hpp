#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace kinet {

inline uint64_t fnv1a(std::string_view s, uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    return mix64(a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
}

// Derives an independent stream seed from a base seed and a scope label,
// optionally refined by integer keys (epoch, segment index, ...).
inline uint64_t seed_for(uint64_t base, std::string_view scope) {
    return hash_combine(base, fnv1a(scope));
}
inline uint64_t seed_for(uint64_t base, std::string_view scope, uint64_t k0) {
    return hash_combine(seed_for(base, scope), mix64(k0));
}
inline uint64_t seed_for(uint64_t base, std::string_view scope, uint64_t k0, uint64_t k1) {
    return hash_combine(seed_for(base, scope, k0), mix64(k1));
}

// splitmix64 generator with hand-rolled distributions. std:: distributions are
// not pinned across standard library implementations, so none are used here:
// every draw in the project must reproduce bit-exactly from a seed.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform in [0, n). Modulo bias is ~2^-60 for the tiny n used here.
    int64_t uniform_int(int64_t n) {
        if (n <= 1) return 0;
        return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

    bool coin() { return (next_u64() & 1ull) != 0; }

    // Box-Muller; consumes two uniforms per pair, caches the spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // uniform in [-hi, -lo] ∪ [lo, hi]; keeps probes away from kinks.
    double uniform_with_margin(double lo, double hi) {
        double v = uniform(lo, hi);
        return coin() ? v : -v;
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace kinet
