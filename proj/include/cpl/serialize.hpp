#pragma once

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <string_view>

#include "cpl/error.hpp"

namespace cpl::io {

// Doubles travel as C99 hex-float text so every round trip is bit-exact.
inline std::string hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

inline double parse_double(std::string_view text) {
    std::string s(text);
    if (s.empty()) throw DeserializeError("empty numeric field");
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || errno == ERANGE)
        throw DeserializeError("malformed number '" + s + "'");
    return v;
}

inline std::int64_t parse_int(std::string_view text) {
    std::string s(text);
    if (s.empty()) throw DeserializeError("empty integer field");
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || errno == ERANGE)
        throw DeserializeError("malformed integer '" + s + "'");
    return v;
}

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace cpl::io
