#pragma once

#include <cstdint>
#include <vector>

namespace loopkit {

// Deterministic generator with a fixed algorithm (splitmix64) so that
// sequences are reproducible across platforms and standard-library
// versions. Standard <random> distributions are implementation-defined
// and would break golden-sequence tests.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound) {
        // Rejection sampling to avoid modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % bound;
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Derive an independent stream, e.g. one per iteration index.
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        Rng mix(seed ^ (0x2545f4914f6cdd1dULL * (stream + 1)));
        return Rng(mix.next_u64());
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            using std::swap;
            swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_;
};

// FNV-1a, used wherever a stable content digest is needed (dedup keys,
// golden hashes). Stable across processes and platforms.
inline std::uint64_t fnv1a(const void* data, std::size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace loopkit
