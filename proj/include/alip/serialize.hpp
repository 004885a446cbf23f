#pragma once

#include <charconv>
#include <string>

#include "alip/error.hpp"

namespace alip {

// Shortest decimal form that parses back to the identical double. Used for
// every floating-point value we write to text artifacts so that files
// regenerate byte-identically and round-trip bit-exactly.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw Error("failed to format floating-point value");
    return std::string(buf, ptr);
}

inline bool try_parse_double(const std::string& field, double& out) {
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
    return ec == std::errc{} && ptr == field.data() + field.size();
}

inline bool try_parse_u64(const std::string& field, std::uint64_t& out) {
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
    return ec == std::errc{} && ptr == field.data() + field.size();
}

}  // namespace alip
