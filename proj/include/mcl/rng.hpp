#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace mcl {

// Self-contained counter-style RNG so simulation streams are reproducible
// bit-for-bit across compilers. Streams are keyed by (seed, episode,
// trajectory) and never share state.
struct SplitMix64 {
    uint64_t s;
    explicit SplitMix64(uint64_t seed) : s(seed) {}
    uint64_t next() {
        s += 0x9e3779b97f4a7c15ULL;
        uint64_t z = s;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
};

inline uint64_t mix_seed(uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    SplitMix64 m(a);
    uint64_t z = m.next();
    z ^= b + 0x9e3779b97f4a7c15ULL + (z << 6) + (z >> 2);
    SplitMix64 m2(z);
    z = m2.next();
    z ^= c + 0x9e3779b97f4a7c15ULL + (z << 6) + (z >> 2);
    SplitMix64 m3(z);
    return m3.next();
}

class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t bits() { return state_.next(); }

    // uniform in (0,1); never returns 0 or 1
    double uniform() {
        const uint64_t x = bits() >> 11; // 53 bits
        return (static_cast<double>(x) + 0.5) * 0x1.0p-53;
    }

    // standard normal via Box-Muller (no cached second value, keeps draws
    // addressable per call)
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    uint64_t below(uint64_t n) { return bits() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    SplitMix64 state_;
};

} // namespace mcl
