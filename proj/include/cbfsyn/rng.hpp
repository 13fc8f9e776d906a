#pragma once

#include <cstdint>
#include <string_view>

namespace cbfsyn {

/// Counter-based SplitMix64: the i-th draw of a stream is a pure function of (key, i), so
/// batches can be generated in any order or in parallel and still agree bit for bit.
class CounterRng {
public:
    static constexpr std::string_view algorithm = "splitmix64";

    explicit CounterRng(std::uint64_t key = 0) : key_(key) {}

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t bits(std::uint64_t counter) const {
        return mix(key_ + (counter + 1) * 0x9E3779B97F4A7C15ULL);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform(std::uint64_t counter) const {
        return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
    }

    /// Independent child stream.
    CounterRng split(std::uint64_t stream) const {
        return CounterRng(mix(key_ ^ mix(stream + 0x632BE59BD9B4E019ULL)));
    }

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
};

}  // namespace cbfsyn
