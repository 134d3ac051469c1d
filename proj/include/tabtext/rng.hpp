#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tabtext {

/// Seeded generator with platform-independent derived draws. The standard
/// distributions are implementation-defined, so index/real sampling is done
/// here directly on top of mt19937_64.
class Rng {
  public:
    explicit Rng(uint64_t seed) : m_engine(seed) {}

    /// Independent stream for a named sub-task (e.g. one question id).
    static Rng derive(uint64_t seed, std::string_view key);

    uint64_t next() { return m_engine(); }

    /// Uniform integer in [0, n). n must be positive.
    uint64_t uniform_index(uint64_t n);

    /// Uniform double in [0, 1).
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    template <typename Container>
    void shuffle(Container& items)
    {
        for (size_t i = items.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

  private:
    std::mt19937_64 m_engine;
};

}  // namespace tabtext
