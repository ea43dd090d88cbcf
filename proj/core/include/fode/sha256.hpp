#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace fode {

// FIPS 180-4 SHA-256 of a byte buffer.
std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> bytes);

} // namespace fode
