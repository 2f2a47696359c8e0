#pragma once

// Little-endian primitive encoding independent of host byte order.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "melreport/errors.hpp"

namespace melreport::binio {

inline void put_u32(std::ostream& os, std::uint32_t v)
{
    const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b.data(), 4);
}

inline void put_i32(std::ostream& os, std::int32_t v) { put_u32(os, static_cast<std::uint32_t>(v)); }

inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

inline void put_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

inline void read_exact(std::istream& is, char* dst, std::size_t n, const std::string& what)
{
    is.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) throw DataError(what + ": unexpected end of file");
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what)
{
    std::array<unsigned char, 4> b{};
    read_exact(is, reinterpret_cast<char*>(b.data()), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::int32_t get_i32(std::istream& is, const std::string& what)
{
    return static_cast<std::int32_t>(get_u32(is, what));
}

inline float get_f32(std::istream& is, const std::string& what) { return std::bit_cast<float>(get_u32(is, what)); }

inline std::uint8_t get_u8(std::istream& is, const std::string& what)
{
    char c = 0;
    read_exact(is, &c, 1, what);
    return static_cast<std::uint8_t>(c);
}

}  // namespace melreport::binio
