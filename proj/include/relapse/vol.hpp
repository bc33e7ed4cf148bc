#pragma once
#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "relapse/errors.hpp"

namespace relapse {

using Dims3 = std::array<std::uint32_t, 3>;

inline std::size_t dims_count(const Dims3& d) {
    return static_cast<std::size_t>(d[0]) * d[1] * d[2];
}

// Dense 3D scalar grid, row-major: index (i,j,k) = (i*d1 + j)*d2 + k.
// Values are held as double in memory; the on-disk format is float32.
struct Vol {
    Dims3 dims{0, 0, 0};
    std::vector<double> data;

    Vol() = default;
    Vol(Dims3 d, double fill = 0.0) : dims(d), data(dims_count(d), fill) {}

    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * dims[1] + j) * dims[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * dims[1] + j) * dims[2] + k];
    }
    std::size_t size() const { return data.size(); }
};

// Boolean companion grid (lesion masks, saliency binarizations).
struct Mask {
    Dims3 dims{0, 0, 0};
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(Dims3 d, std::uint8_t fill = 0) : dims(d), data(dims_count(d), fill) {}

    std::uint8_t& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * dims[1] + j) * dims[2] + k];
    }
    std::uint8_t at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * dims[1] + j) * dims[2] + k];
    }
    std::size_t size() const { return data.size(); }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : data) n += (b != 0);
        return n;
    }
};

namespace detail {

inline void put_u32le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32le(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32le(os, u);
}

inline float get_f32le(std::istream& is) {
    std::uint32_t u = get_u32le(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

}  // namespace detail

inline void write_volume(const std::string& path, const Vol& v) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open volume file for writing: " + path);
    for (auto d : v.dims) detail::put_u32le(os, d);
    for (double x : v.data) detail::put_f32le(os, static_cast<float>(x));
    if (!os) throw io_error("short write on volume file: " + path);
}

inline Vol read_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open volume file: " + path);
    Dims3 d;
    for (auto& x : d) x = detail::get_u32le(is);
    Vol v(d);
    for (double& x : v.data) x = detail::get_f32le(is);
    if (!is) throw io_error("truncated volume file: " + path);
    return v;
}

inline void write_mask(const std::string& path, const Mask& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open mask file for writing: " + path);
    for (auto d : m.dims) detail::put_u32le(os, d);
    os.write(reinterpret_cast<const char*>(m.data.data()),
             static_cast<std::streamsize>(m.data.size()));
    if (!os) throw io_error("short write on mask file: " + path);
}

inline Mask read_mask(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open mask file: " + path);
    Dims3 d;
    for (auto& x : d) x = detail::get_u32le(is);
    Mask m(d);
    is.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size()));
    if (!is) throw io_error("truncated mask file: " + path);
    return m;
}

// Binary PGM (P5), 8 bit. `pixels` is row-major rows x cols in [0,1].
inline void write_pgm(const std::string& path, const std::vector<double>& pixels,
                      std::size_t rows, std::size_t cols) {
    if (pixels.size() != rows * cols) throw shape_error("pgm: pixel count does not match rows*cols");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open pgm file for writing: " + path);
    os << "P5\n" << cols << " " << rows << "\n255\n";
    for (double p : pixels) {
        double c = p < 0.0 ? 0.0 : (p > 1.0 ? 1.0 : p);
        unsigned char b = static_cast<unsigned char>(c * 255.0 + 0.5);
        os.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!os) throw io_error("short write on pgm file: " + path);
}

// Extracts the mid-plane orthogonal to `axis` (0,1,2), min-max scaled to [0,1].
inline std::vector<double> mid_slice_scaled(const Vol& v, int axis, std::size_t* rows_out,
                                            std::size_t* cols_out) {
    if (axis < 0 || axis > 2) throw argument_error("mid_slice_scaled: axis must be 0, 1 or 2");
    const std::size_t mid = v.dims[static_cast<std::size_t>(axis)] / 2;
    std::size_t rows, cols;
    std::vector<double> out;
    if (axis == 0) {
        rows = v.dims[1]; cols = v.dims[2];
        out.reserve(rows * cols);
        for (std::size_t j = 0; j < rows; ++j)
            for (std::size_t k = 0; k < cols; ++k) out.push_back(v.at(mid, j, k));
    } else if (axis == 1) {
        rows = v.dims[0]; cols = v.dims[2];
        out.reserve(rows * cols);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t k = 0; k < cols; ++k) out.push_back(v.at(i, mid, k));
    } else {
        rows = v.dims[0]; cols = v.dims[1];
        out.reserve(rows * cols);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) out.push_back(v.at(i, j, mid));
    }
    double lo = out.empty() ? 0.0 : out[0], hi = lo;
    for (double x : out) { lo = std::min(lo, x); hi = std::max(hi, x); }
    const double span = hi - lo;
    if (span > 0.0)
        for (double& x : out) x = (x - lo) / span;
    else
        for (double& x : out) x = 0.0;
    *rows_out = rows;
    *cols_out = cols;
    return out;
}

}  // namespace relapse
