#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "qncd/tensor.hpp"

namespace qncd {

/// Counter-based generator (Philox4x32-10). The output is a pure function of
/// (seed, stream, position), so workers keyed by disjoint streams draw
/// independent, reproducible sequences without sharing state.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

    /// Independent generator on another stream of the same seed.
    Rng fork(std::uint64_t stream) const noexcept { return Rng(seed_, stream); }
    Rng fork(std::string_view label, std::uint64_t index = 0) const noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform on the open interval (0, 1).
    double uniform() noexcept;
    /// Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept;
    double normal() noexcept;

private:
    void refill() noexcept;

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int used_ = 4;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

/// 64-bit FNV-1a, used for stream labels and architecture/config hashes.
std::uint64_t fnv1a(std::string_view text, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

Tensor randn(Rng &rng, const Shape &shape);
Tensor rand_uniform(Rng &rng, const Shape &shape, double lo, double hi);

}  // namespace qncd
