#pragma once

#include <cstdint>
#include <string_view>

#include "kga/errors.hpp"

namespace kga {

enum class Label : std::uint8_t { benign = 0, malignant = 1 };

inline constexpr std::size_t label_index(Label y) {
  return static_cast<std::size_t>(y);
}

inline constexpr std::string_view label_name(Label y) {
  return y == Label::benign ? "benign" : "malignant";
}

inline Label label_from_byte(std::uint8_t b) {
  if (b > 1) throw ContractError("label byte must be 0 or 1, got " + std::to_string(b));
  return static_cast<Label>(b);
}

}  // namespace kga
