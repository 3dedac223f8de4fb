#include "stoplab/rng.hpp"

#include <cmath>
#include <numbers>

namespace stoplab {

namespace {

constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
    const uint64_t p = static_cast<uint64_t>(a) * b;
    hi = static_cast<uint32_t>(p >> 32);
    lo = static_cast<uint32_t>(p);
}

inline uint64_t splitmix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::array<uint32_t, 4> cell_block(uint64_t seed, uint64_t path,
                                          uint32_t step, uint32_t channel) {
    const std::array<uint32_t, 4> ctr{
        static_cast<uint32_t>(path), static_cast<uint32_t>(path >> 32), step, channel};
    const std::array<uint32_t, 2> key{
        static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)};
    return philox4x32(ctr, key);
}

// 53-bit mantissa uniform in (0,1); never returns 0 so log() is safe.
inline double to_unit(uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

} // namespace

std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> counter,
                                   std::array<uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kPhiloxM0, counter[0], hi0, lo0);
        mulhilo(kPhiloxM1, counter[2], hi1, lo1);
        counter = {hi1 ^ counter[1] ^ key[0], lo1, hi0 ^ counter[3] ^ key[1], lo0};
        key[0] += kPhiloxW0;
        key[1] += kPhiloxW1;
    }
    return counter;
}

double normal_draw(uint64_t seed, uint64_t path, uint32_t step, uint32_t channel) {
    const auto b = cell_block(seed, path, step, channel);
    const uint64_t w0 = (static_cast<uint64_t>(b[0]) << 32) | b[1];
    const uint64_t w1 = (static_cast<uint64_t>(b[2]) << 32) | b[3];
    const double u = to_unit(w0);
    const double v = to_unit(w1);
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

double uniform_draw(uint64_t seed, uint64_t path, uint32_t step, uint32_t channel) {
    const auto b = cell_block(seed, path, step, channel);
    return to_unit((static_cast<uint64_t>(b[0]) << 32) | b[1]);
}

uint64_t derive_seed(uint64_t master, std::string_view task) {
    uint64_t h = 0xCBF29CE484222325ull; // FNV-1a
    for (const char c : task) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return splitmix64(master ^ h);
}

} // namespace stoplab
