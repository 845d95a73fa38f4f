#pragma once

#include <random>
#include <string_view>

#include "aurora/common.hpp"

namespace aurora {

// Deterministic RNG. Every random decision in a scenario flows from the
// scenario seed through named substreams so that adding a consumer does not
// perturb unrelated streams.
class DetRng {
public:
    explicit DetRng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    uint32_t next_u32() { return static_cast<uint32_t>(eng_() >> 32); }

    // Uniform in [lo, hi], both inclusive. Plain modulo reduction; the bias
    // is irrelevant here and the result is identical on every platform.
    uint64_t uniform(uint64_t lo, uint64_t hi) {
        if (hi <= lo) return lo;
        return lo + eng_() % (hi - lo + 1);
    }

    void fill(uint8_t* out, size_t n) {
        size_t i = 0;
        while (i < n) {
            uint64_t v = eng_();
            for (int b = 0; b < 8 && i < n; ++b, ++i) out[i] = static_cast<uint8_t>(v >> (8 * b));
        }
    }

    Bytes bytes(size_t n) {
        Bytes out(n);
        fill(out.data(), n);
        return out;
    }

    // Derive an independent substream. FNV-1a over the label, mixed with the
    // parent stream so distinct labels never collide in practice.
    DetRng fork(std::string_view label) {
        uint64_t h = 1469598103934665603ull;
        for (char c : label) {
            h ^= static_cast<uint8_t>(c);
            h *= 1099511628211ull;
        }
        return DetRng(h ^ eng_());
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace aurora
