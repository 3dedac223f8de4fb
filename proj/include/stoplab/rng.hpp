#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace stoplab {

/// Philox4x32-10 counter-based block cipher. Stateless: every draw is a pure
/// function of (key, counter), so streams keyed by (seed, path, step, channel)
/// stay decorrelated and reproducible no matter how work is scheduled.
std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> counter,
                                   std::array<uint32_t, 2> key);

/// One standard normal draw for the stream cell (seed, path, step, channel).
double normal_draw(uint64_t seed, uint64_t path, uint32_t step, uint32_t channel);

/// Uniform draw in (0,1) for the same addressing scheme.
double uniform_draw(uint64_t seed, uint64_t path, uint32_t step, uint32_t channel);

/// Stable fan-out of a master seed to a named task stream.
uint64_t derive_seed(uint64_t master, std::string_view task);

} // namespace stoplab
