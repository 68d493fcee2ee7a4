#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace stylecode {

// Philox4x32-10 counter-based generator. The output for a given
// (key, stream, counter) triple is a pure function, so draws are
// reproducible across runs and platforms.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key, std::uint64_t stream = 0) noexcept
        : key_(key), stream_(stream) {}

    std::uint32_t next_u32() noexcept;
    std::uint64_t next_u64() noexcept;

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept;
    // Unbiased uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n) noexcept;
    double normal() noexcept;
    bool bernoulli(double p) noexcept { return uniform() < p; }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t stream() const noexcept { return stream_; }
    std::uint64_t counter() const noexcept { return counter_; }

    static std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) noexcept;

private:
    void refill() noexcept;

    std::uint64_t key_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    std::size_t buffered_ = 0;
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

// Stable 64-bit mixing used to derive sub-seeds from (seed, tag) pairs.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) noexcept;

} // namespace stylecode
