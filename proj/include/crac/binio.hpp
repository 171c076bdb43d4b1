#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace crac {

// Little-endian primitives shared by the CRSD and CRCK file formats.

inline void put_u8(std::ostream& os, std::uint8_t v) {
    os.put(static_cast<char>(v));
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
    put_u8(os, static_cast<std::uint8_t>(v & 0xff));
    put_u8(os, static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) put_u8(os, static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::ostream& os, float v) {
    put_u32(os, std::bit_cast<std::uint32_t>(v));
}

inline std::uint8_t get_u8(std::istream& is, const char* what) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error(std::string(what) + ": truncated payload");
    return static_cast<std::uint8_t>(c);
}

inline std::uint16_t get_u16(std::istream& is, const char* what) {
    const std::uint16_t lo = get_u8(is, what);
    const std::uint16_t hi = get_u8(is, what);
    return static_cast<std::uint16_t>(lo | (hi << 8));
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(get_u8(is, what)) << (8 * i);
    return v;
}

inline float get_f32(std::istream& is, const char* what) {
    return std::bit_cast<float>(get_u32(is, what));
}

}  // namespace crac
