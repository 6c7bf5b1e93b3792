#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace fkbridge::detail {

// Little-endian fixed-width encoding, independent of host byte order.

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f32(std::ostream& out, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(out, u);
}

inline void put_f64(std::ostream& out, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u64(out, u);
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error(std::string(what) + ": truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& in, const char* what) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error(std::string(what) + ": truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline float get_f32(std::istream& in, const char* what) {
    const std::uint32_t u = get_u32(in, what);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

inline double get_f64(std::istream& in, const char* what) {
    const std::uint64_t u = get_u64(in, what);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace fkbridge::detail
