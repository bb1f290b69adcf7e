#pragma once

#include <cmath>
#include <cstdint>

namespace bdsde {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

enum class Stream : std::uint64_t { backward = 0x57, forward = 0x42, property = 0x50 };

// Counter-based generator: every draw is a pure function of
// (seed, stream, path, step, component), so any partition of the work
// reproduces the same numbers.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, Stream stream) : key_(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream)))) {}

    std::uint64_t bits(std::uint64_t path, std::uint64_t step, std::uint64_t comp) const {
        std::uint64_t h = splitmix64(key_ ^ path);
        h = splitmix64(h ^ (step * 0x632be59bd9b4e019ULL));
        return splitmix64(h ^ (comp * 0x85157af5ULL + 0x1234567ULL));
    }

    double uniform(std::uint64_t path, std::uint64_t step, std::uint64_t comp) const {
        return (static_cast<double>(bits(path, step, comp) >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal(std::uint64_t path, std::uint64_t step, std::uint64_t comp) const {
        const double u1 = uniform(path, step, 2 * comp);
        const double u2 = uniform(path, step, 2 * comp + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

private:
    std::uint64_t key_;
};

}  // namespace bdsde
