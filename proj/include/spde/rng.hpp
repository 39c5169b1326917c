#pragma once

#include <array>
#include <cstdint>

namespace spde {

/// Philox4x32 with 10 rounds.
[[nodiscard]] std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                                          std::array<std::uint32_t, 2> key) noexcept;

/// Standard normal draw that is a pure function of its arguments.
/// Counter words: (step, factor, path low, path high); key: the seed.
[[nodiscard]] double standard_normal(std::uint64_t seed, std::uint64_t path, std::uint32_t step,
                                     std::uint32_t factor) noexcept;

}  // namespace spde
