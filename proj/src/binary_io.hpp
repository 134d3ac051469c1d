#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "tabtext/error.hpp"

namespace tabtext::detail {

template <typename T>
void write_le(std::ostream& out, T value)
{
    static_assert(std::is_integral_v<T>);
    unsigned char buf[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i) {
        buf[i] = static_cast<unsigned char>((static_cast<std::make_unsigned_t<T>>(value) >> (8 * i)) & 0xFF);
    }
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

inline void write_f32(std::ostream& out, float value)
{
    write_le(out, std::bit_cast<uint32_t>(value));
}

template <typename T>
T read_le(std::istream& in)
{
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
        throw Error(ErrorKind::Format, "unexpected end of file");
    }
    std::make_unsigned_t<T> v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::make_unsigned_t<T>>(buf[i]) << (8 * i);
    }
    return static_cast<T>(v);
}

inline float read_f32(std::istream& in)
{
    return std::bit_cast<float>(read_le<uint32_t>(in));
}

inline void write_magic(std::ostream& out)
{
    out.write("OTTE", 4);
}

inline void expect_magic(std::istream& in, const std::string& what)
{
    char magic[4] = {};
    if (!in.read(magic, 4) || std::memcmp(magic, "OTTE", 4) != 0) {
        throw Error(ErrorKind::Format, what + ": bad magic");
    }
}

}  // namespace tabtext::detail
