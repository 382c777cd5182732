#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tepo::base64 {

/// Standard alphabet with '=' padding.
std::string encode(std::span<const std::uint8_t> bytes);

/// Strict inverse of encode(): length must be a multiple of 4, padding only
/// at the end, no whitespace. Throws std::invalid_argument otherwise.
std::vector<std::uint8_t> decode(std::string_view text);

/// Length of the encoding of n bytes.
constexpr std::size_t encoded_size(std::size_t n) noexcept { return (n + 2) / 3 * 4; }

}  // namespace tepo::base64
