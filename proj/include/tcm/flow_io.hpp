#ifndef TCM_FLOW_IO_HPP
#define TCM_FLOW_IO_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "error.hpp"
#include "grid.hpp"

namespace tcm {

// Little-endian byte helpers shared by the flow and weight-graph formats.
namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

inline void put_i32(std::vector<std::uint8_t>& out, std::int32_t v) {
    put_u32(out, static_cast<std::uint32_t>(v));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
    }
    return v;
}

inline std::int32_t get_i32(const std::vector<std::uint8_t>& in, std::size_t pos) {
    return static_cast<std::int32_t>(get_u32(in, pos));
}

inline float get_f32(const std::vector<std::uint8_t>& in, std::size_t pos) {
    return std::bit_cast<float>(get_u32(in, pos));
}

inline std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), {}};
}

inline void dump(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw RuntimeFailure("cannot write " + path.string());
    }
}

}

/// "PIEH", int32 width, int32 height, then row-major float32 (u,v) pairs,
/// all little-endian.
inline std::vector<std::uint8_t> encode_flow(const FlowField& f) {
    std::vector<std::uint8_t> out;
    out.reserve(12 + 8 * f.size());
    for (char c : {'P', 'I', 'E', 'H'}) {
        out.push_back(static_cast<std::uint8_t>(c));
    }
    detail::put_i32(out, f.width());
    detail::put_i32(out, f.height());
    for (std::size_t i = 0; i < f.size(); ++i) {
        detail::put_f32(out, static_cast<float>(f.u[i]));
        detail::put_f32(out, static_cast<float>(f.v[i]));
    }
    return out;
}

inline FlowField decode_flow(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "PIEH", 4) != 0) {
        throw ValidationError("flow file: missing PIEH tag");
    }
    const std::int32_t w = detail::get_i32(bytes, 4);
    const std::int32_t h = detail::get_i32(bytes, 8);
    if (w < 2 || h < 2 || bytes.size() != 12 + 8 * static_cast<std::size_t>(w) * h) {
        throw ValidationError("flow file: bad dimensions or length");
    }
    FlowField f(w, h);
    std::size_t pos = 12;
    for (std::size_t i = 0; i < f.size(); ++i, pos += 8) {
        f.u[i] = detail::get_f32(bytes, pos);
        f.v[i] = detail::get_f32(bytes, pos + 4);
        if (!std::isfinite(f.u[i]) || !std::isfinite(f.v[i])) {
            throw ValidationError("flow file: non-finite component");
        }
    }
    return f;
}

inline void write_flow(const FlowField& f, const std::filesystem::path& path) {
    detail::dump(encode_flow(f), path);
}

inline FlowField read_flow(const std::filesystem::path& path) {
    return decode_flow(detail::slurp(path));
}

}

#endif
