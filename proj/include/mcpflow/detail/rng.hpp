#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "mcpflow/detail/sha256.hpp"

namespace mcpflow::detail {

// SplitMix64. All shuffles and samples in the pipeline go through this
// generator so results are identical across standard libraries and
// platforms (std::shuffle and std::uniform_int_distribution are not).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, bound). Modulo bias is negligible for pipeline-sized bounds.
    uint64_t below(uint64_t bound) { return bound ? next() % bound : 0; }

    double unit_real() { return double(next() >> 11) * (1.0 / 9007199254740992.0); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
};

// Derive a stream seed from a global seed plus a label, e.g. (seed, stage,
// sample_id), so per-item streams are stable and uncoupled.
inline uint64_t derive_seed(uint64_t global_seed, std::string_view label) {
    Sha256 h;
    uint8_t seed_bytes[8];
    for (int i = 0; i < 8; ++i) seed_bytes[i] = static_cast<uint8_t>(global_seed >> (8 * i));
    h.update(seed_bytes, 8);
    h.update(label);
    auto d = h.digest();
    uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out = (out << 8) | d[i];
    return out;
}

}  // namespace mcpflow::detail
