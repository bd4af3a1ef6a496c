#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace evb {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

/// FNV-1a, 64 bit. Pass a previous result as `state` to continue hashing.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t state = kFnvOffset);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t state = kFnvOffset);

/// 16 lowercase hex digits.
std::string hex64(std::uint64_t value);

}  // namespace evb
