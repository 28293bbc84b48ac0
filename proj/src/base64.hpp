#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cprloop::detail {

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
// Throws std::invalid_argument on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::vector<std::uint8_t> pack_f64_le(const double* values, std::size_t n);
std::vector<double> unpack_f64_le(const std::vector<std::uint8_t>& bytes);

}  // namespace cprloop::detail
