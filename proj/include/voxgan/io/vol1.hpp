#pragma once

// VOL1: 40-byte little-endian header (magic, version, dtype, W H D, channels, voxel mm)
// followed by the payload, x fastest, then y, then z, then channel.

#include <filesystem>

#include "voxgan/io/bytes.hpp"
#include "voxgan/volume.hpp"

namespace voxgan::io {

enum class Vol1Type : std::uint32_t { F32 = 0, U8Mask = 1 };

inline constexpr std::size_t kVol1HeaderBytes = 40;

inline std::size_t vol1_payload_bytes(const VolumeShape& s, Vol1Type t) {
    return s.voxels() * s.channels * (t == Vol1Type::F32 ? 4 : 1);
}

inline Bytes encode_vol1(const Volume& v, Vol1Type type = Vol1Type::F32) {
    if (type == Vol1Type::U8Mask && !v.is_binary(0.0))
        throw std::invalid_argument("write_vol1: mask values must be 0 or 1");
    ByteWriter w;
    w.str("VOL1");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(type));
    w.u32(static_cast<std::uint32_t>(v.shape.width));
    w.u32(static_cast<std::uint32_t>(v.shape.height));
    w.u32(static_cast<std::uint32_t>(v.shape.depth));
    w.u32(static_cast<std::uint32_t>(v.shape.channels));
    w.f32(static_cast<float>(v.voxel_mm.x));
    w.f32(static_cast<float>(v.voxel_mm.y));
    w.f32(static_cast<float>(v.voxel_mm.z));
    for (double x : v.data) {
        if (type == Vol1Type::F32)
            w.f32(static_cast<float>(x));
        else
            w.u8(x != 0.0 ? 1 : 0);
    }
    return std::move(w.bytes());
}

struct Vol1Data {
    Volume volume;
    Vol1Type type = Vol1Type::F32;
};

inline Vol1Data decode_vol1(std::span<const std::uint8_t> bytes, const std::string& what = "vol1") {
    ByteReader r(bytes, what);
    if (bytes.size() < kVol1HeaderBytes) throw FormatError(what + ": truncated header");
    const auto magic = r.take(4);
    if (std::memcmp(magic.data(), "VOL1", 4) != 0) throw FormatError(what + ": bad magic");
    const std::uint32_t version = r.u32();
    if (version != 1) throw FormatError(what + ": unsupported version " + std::to_string(version));
    const std::uint32_t dtype = r.u32();
    if (dtype > 1) throw FormatError(what + ": unknown dtype " + std::to_string(dtype));
    VolumeShape s;
    s.width = r.u32();
    s.height = r.u32();
    s.depth = r.u32();
    s.channels = r.u32();
    if (s.width == 0 || s.height == 0 || s.depth == 0 || s.channels == 0)
        throw FormatError(what + ": zero extent in header");
    VoxelSize vs{r.f32(), r.f32(), r.f32()};
    if (!(vs.x > 0 && vs.y > 0 && vs.z > 0)) throw FormatError(what + ": voxel sizes must be positive");
    const auto type = static_cast<Vol1Type>(dtype);
    const std::size_t want = vol1_payload_bytes(s, type);
    if (r.remaining() < want) throw FormatError(what + ": truncated payload");
    if (r.remaining() > want) throw FormatError(what + ": trailing bytes after payload");
    Vol1Data out{Volume(s, vs), type};
    for (double& x : out.volume.data) {
        if (type == Vol1Type::F32) {
            x = r.f32();
        } else {
            const std::uint8_t b = r.u8();
            if (b > 1) throw FormatError(what + ": mask value " + std::to_string(b) + " is not 0 or 1");
            x = b;
        }
    }
    return out;
}

inline void write_vol1(const std::filesystem::path& path, const Volume& v, Vol1Type type = Vol1Type::F32) {
    write_file(path, encode_vol1(v, type));
}

inline Volume read_vol1(const std::filesystem::path& path) { return decode_vol1(read_file(path), path.string()).volume; }

/// Reads a mask file; the payload must be u8 or an f32 volume holding only 0 and 1.
inline Volume read_mask_vol1(const std::filesystem::path& path) {
    Vol1Data d = decode_vol1(read_file(path), path.string());
    if (d.type == Vol1Type::F32 && !d.volume.is_binary(0.0))
        throw FormatError(path.string() + ": mask values must be 0 or 1");
    return std::move(d.volume);
}

}  // namespace voxgan::io
