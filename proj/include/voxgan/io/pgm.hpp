#pragma once

// 8-bit P5 mosaics: one tile per slice under a shared intensity window, optional mask outline.

#include <cmath>
#include <filesystem>
#include <string>

#include "voxgan/io/bytes.hpp"
#include "voxgan/volume.hpp"

namespace voxgan::io {

struct Window {
    double lo = 0.0;
    double hi = 1.0;

    /// Gray level of `v`; a degenerate window maps everything to mid gray.
    std::uint8_t gray(double v) const {
        if (!(hi > lo)) return 128;
        const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
        return static_cast<std::uint8_t>(std::lround(t * 255.0));
    }
};

/// Min / max over every voxel of every volume in the set.
inline Window window_of(const std::vector<const Volume*>& set) {
    if (set.empty()) throw std::invalid_argument("window_of: empty set");
    Window w{set.front()->min(), set.front()->max()};
    for (const Volume* v : set) {
        w.lo = std::min(w.lo, v->min());
        w.hi = std::max(w.hi, v->max());
    }
    return w;
}

struct Image8 {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

/// Tile columns: 2^ceil(log2(n) / 2); rows fill the remainder.
inline std::size_t mosaic_columns(std::size_t n) {
    if (n <= 1) return 1;
    const int bits = static_cast<int>(std::bit_width(n - 1));
    return std::size_t{1} << ((bits + 1) / 2);
}

inline Image8 mosaic(const Volume& v, const Window& w, const Volume* mask = nullptr) {
    if (mask && !(mask->shape == v.shape)) throw ShapeError("mosaic: mask " + mask->shape.str() + " != " + v.shape.str());
    const auto& s = v.shape;
    const std::size_t cols = mosaic_columns(s.depth), rows = (s.depth + cols - 1) / cols;
    Image8 img{cols * s.width, rows * s.height, {}};
    img.pixels.assign(img.width * img.height, 0);
    auto in_mask = [&](long x, long y, std::size_t z) {
        return x >= 0 && y >= 0 && x < static_cast<long>(s.width) && y < static_cast<long>(s.height) &&
               mask->at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), z) != 0.0;
    };
    for (std::size_t z = 0; z < s.depth; ++z) {
        const std::size_t ox = (z % cols) * s.width, oy = (z / cols) * s.height;
        for (std::size_t y = 0; y < s.height; ++y)
            for (std::size_t x = 0; x < s.width; ++x) {
                std::uint8_t g = w.gray(v.at(x, y, z));
                if (mask) {
                    const long lx = static_cast<long>(x), ly = static_cast<long>(y);
                    const bool edge = in_mask(lx, ly, z) && (!in_mask(lx - 1, ly, z) || !in_mask(lx + 1, ly, z) ||
                                                             !in_mask(lx, ly - 1, z) || !in_mask(lx, ly + 1, z));
                    if (edge) g = 255;
                }
                img.pixels[(oy + y) * img.width + ox + x] = g;
            }
    }
    return img;
}

inline Bytes encode_pgm(const Image8& img) {
    const std::string head = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    Bytes b(head.begin(), head.end());
    b.insert(b.end(), img.pixels.begin(), img.pixels.end());
    return b;
}

inline void write_pgm(const std::filesystem::path& path, const Image8& img) { write_file(path, encode_pgm(img)); }

inline Image8 decode_pgm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    auto token = [&] {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t += static_cast<char>(bytes[pos++]);
        return t;
    };
    if (token() != "P5") throw FormatError("pgm: bad magic");
    Image8 img;
    try {
        img.width = std::stoul(token());
        img.height = std::stoul(token());
        if (token() != "255") throw FormatError("pgm: maxval must be 255");
    } catch (const std::logic_error&) {
        throw FormatError("pgm: bad header");
    }
    ++pos;
    if (bytes.size() - std::min(pos, bytes.size()) != img.width * img.height) throw FormatError("pgm: payload size mismatch");
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return img;
}

}  // namespace voxgan::io
