#pragma once

// CKPT: magic, version, entry count, entries (name, rank, dims, f32 data), then the
// zlib CRC32 of every preceding byte. Values are stored as f32.

#include <zlib.h>

#include <filesystem>

#include "voxgan/io/bytes.hpp"
#include "voxgan/params.hpp"

namespace voxgan::io {

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong c = crc32(0L, Z_NULL, 0);
    std::size_t off = 0;
    while (off < bytes.size()) {
        const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
        c = crc32(c, bytes.data() + off, n);
        off += n;
    }
    return static_cast<std::uint32_t>(c);
}

inline Bytes encode_ckpt(const ModelParams& params) {
    ByteWriter w;
    w.str("CKPT");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (double v : t.data()) w.f32(static_cast<float>(v));
    }
    const std::uint32_t crc = crc32_of(w.bytes());
    w.u32(crc);
    return std::move(w.bytes());
}

inline ModelParams decode_ckpt(std::span<const std::uint8_t> bytes, const std::string& what = "ckpt") {
    if (bytes.size() < 16) throw FormatError(what + ": truncated");
    ByteReader r(bytes, what);
    const auto magic = r.take(4);
    if (std::memcmp(magic.data(), "CKPT", 4) != 0) throw FormatError(what + ": bad magic");
    const std::uint32_t version = r.u32();
    if (version != 1) throw FormatError(what + ": unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    ModelParams out;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t len = r.u32();
        if (len == 0 || len > 4096) throw FormatError(what + ": bad name length " + std::to_string(len));
        const auto nb = r.take(len);
        const std::string name(nb.begin(), nb.end());
        const std::uint32_t rank = r.u32();
        if (rank > 5) throw FormatError(what + ": bad rank " + std::to_string(rank) + " for " + name);
        Shape shape;
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape.push_back(r.u32());
            n *= shape.back();
        }
        if (n * 4 > r.remaining()) throw FormatError(what + ": truncated data for " + name);
        std::vector<double> data(n);
        for (double& v : data) v = r.f32();
        if (out.contains(name)) throw FormatError(what + ": duplicate entry " + name);
        out.add(name, Tensor(shape, std::move(data)));
    }
    if (r.remaining() < 4) throw FormatError(what + ": truncated (missing CRC)");
    if (r.remaining() > 4) throw FormatError(what + ": trailing bytes after CRC");
    const std::size_t body = r.pos();
    const std::uint32_t stored = r.u32();
    if (stored != crc32_of(bytes.first(body))) throw FormatError(what + ": CRC mismatch");
    return out;
}

inline void write_ckpt(const std::filesystem::path& path, const ModelParams& params) {
    write_file(path, encode_ckpt(params));
}

inline ModelParams read_ckpt(const std::filesystem::path& path) { return decode_ckpt(read_file(path), path.string()); }

/// Params as they come back from a checkpoint (every value rounded to f32).
inline ModelParams f32_rounded(const ModelParams& p) {
    ModelParams out;
    for (const auto& [name, t] : p) {
        std::vector<double> d(t.data().begin(), t.data().end());
        for (double& v : d) v = static_cast<float>(v);
        out.add(name, Tensor(t.shape(), std::move(d)));
    }
    return out;
}

}  // namespace voxgan::io
