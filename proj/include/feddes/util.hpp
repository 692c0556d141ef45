#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace feddes {

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string fnv1a64_hex(std::string_view bytes);

// Shortest round-trippable decimal; used for byte-stable CSV/JSON output.
std::string format_double(double v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

} // namespace feddes
