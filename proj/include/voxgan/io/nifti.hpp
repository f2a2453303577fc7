#pragma once

// Minimal NIfTI-1: uncompressed single-file (n+1) or header/image pair (ni1), either byte
// order, datatypes u8 / i16 / f32, 3-D only.

#include <cmath>
#include <filesystem>

#include "voxgan/io/bytes.hpp"
#include "voxgan/volume.hpp"

namespace voxgan::io {

enum class NiftiType : std::int16_t { U8 = 2, I16 = 4, F32 = 16 };

inline std::size_t nifti_type_bytes(std::int16_t code) {
    switch (code) {
        case 2: return 1;
        case 4: return 2;
        case 16: return 4;
        default: throw FormatError("unsupported NIfTI datatype " + std::to_string(code));
    }
}

struct NiftiHeader {
    bool big_endian = false;
    std::array<std::int16_t, 8> dim{};
    std::int16_t datatype = 0;
    std::array<float, 8> pixdim{};
    float vox_offset = 0.0f;
    float scl_slope = 0.0f;
    float scl_inter = 0.0f;
    bool single_file = true;
};

inline constexpr std::size_t kNiftiHeaderBytes = 348;

inline NiftiHeader parse_nifti_header(std::span<const std::uint8_t> bytes, const std::string& what) {
    if (bytes.size() < kNiftiHeaderBytes) throw FormatError(what + ": truncated NIfTI header");
    NiftiHeader h;
    ByteReader r(bytes, what);
    const std::int32_t le = r.i32();
    if (le != 348) {
        r.set_big_endian(true);
        r.seek(0);
        if (r.i32() != 348) throw FormatError(what + ": sizeof_hdr is neither 348 nor byte-swapped 348");
        h.big_endian = true;
    }
    r.seek(344);
    const auto magic = r.take(4);
    if (std::memcmp(magic.data(), "n+1\0", 4) == 0)
        h.single_file = true;
    else if (std::memcmp(magic.data(), "ni1\0", 4) == 0)
        h.single_file = false;
    else
        throw FormatError(what + ": bad magic");
    r.seek(40);
    for (auto& d : h.dim) d = r.i16();
    r.seek(70);
    h.datatype = r.i16();
    r.seek(76);
    for (auto& p : h.pixdim) p = r.f32();
    h.vox_offset = r.f32();
    h.scl_slope = r.f32();
    h.scl_inter = r.f32();

    if (h.dim[0] < 1 || h.dim[0] > 7) throw FormatError(what + ": dim[0] = " + std::to_string(h.dim[0]) + " out of range");
    for (int i = 1; i <= h.dim[0]; ++i)
        if (h.dim[i] < 1) throw FormatError(what + ": dim[" + std::to_string(i) + "] must be positive");
    for (int i = 4; i <= h.dim[0]; ++i)
        if (h.dim[i] != 1) throw FormatError(what + ": only 3-D images are supported (dim[" + std::to_string(i) + "] = " +
                                             std::to_string(h.dim[i]) + ")");
    nifti_type_bytes(h.datatype);
    if (!std::isfinite(h.vox_offset) || h.vox_offset < 0) throw FormatError(what + ": bad vox_offset");
    return h;
}

inline Volume decode_nifti(const NiftiHeader& h, std::span<const std::uint8_t> image, std::size_t offset,
                           const std::string& what) {
    VolumeShape s;
    s.width = static_cast<std::size_t>(h.dim[0] >= 1 ? h.dim[1] : 1);
    s.height = static_cast<std::size_t>(h.dim[0] >= 2 ? h.dim[2] : 1);
    s.depth = static_cast<std::size_t>(h.dim[0] >= 3 ? h.dim[3] : 1);
    s.channels = 1;
    auto pix = [&](int i) {
        const double v = std::abs(static_cast<double>(h.pixdim[i]));
        return i <= h.dim[0] && v > 0.0 && std::isfinite(v) ? v : 1.0;
    };
    Volume out(s, {pix(1), pix(2), pix(3)});
    const double slope = h.scl_slope == 0.0f || !std::isfinite(h.scl_slope) ? 1.0 : h.scl_slope;
    const double inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
    ByteReader r(image, what, h.big_endian);
    r.seek(offset);
    if (r.remaining() < s.voxels() * nifti_type_bytes(h.datatype)) throw FormatError(what + ": truncated image data");
    for (double& x : out.data) {
        double raw = 0.0;
        switch (h.datatype) {
            case 2: raw = r.u8(); break;
            case 4: raw = r.i16(); break;
            default: raw = r.f32(); break;
        }
        x = raw * slope + inter;
    }
    return out;
}

inline Volume read_nifti(const std::filesystem::path& path) {
    const Bytes bytes = read_file(path);
    const NiftiHeader h = parse_nifti_header(bytes, path.string());
    if (h.single_file) {
        if (h.vox_offset < kNiftiHeaderBytes) throw FormatError(path.string() + ": vox_offset inside the header");
        return decode_nifti(h, bytes, static_cast<std::size_t>(h.vox_offset), path.string());
    }
    std::filesystem::path img = path;
    img.replace_extension(".img");
    return decode_nifti(h, read_file(img), static_cast<std::size_t>(h.vox_offset), img.string());
}

struct NiftiWriteOptions {
    NiftiType type = NiftiType::F32;
    bool big_endian = false;
    float scl_slope = 1.0f;
    float scl_inter = 0.0f;
};

/// Single-file writer; stored raw value = (x - inter) / slope, rounded for integer types.
inline Bytes encode_nifti(const Volume& v, const NiftiWriteOptions& o = {}) {
    if (v.shape.channels != 1) throw std::invalid_argument("write_nifti: single-channel volumes only");
    Bytes b(352, 0);
    auto put = [&](std::size_t off, std::uint64_t val, int n) {
        for (int i = 0; i < n; ++i) {
            const int shift = o.big_endian ? 8 * (n - 1 - i) : 8 * i;
            b[off + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(val >> shift);
        }
    };
    auto put_f = [&](std::size_t off, float f) { put(off, std::bit_cast<std::uint32_t>(f), 4); };
    const auto code = static_cast<std::int16_t>(o.type);
    const std::size_t nbytes = nifti_type_bytes(code);
    put(0, 348, 4);
    const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(v.shape.width),
                                          static_cast<std::int16_t>(v.shape.height),
                                          static_cast<std::int16_t>(v.shape.depth), 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) put(40 + 2 * static_cast<std::size_t>(i), static_cast<std::uint16_t>(dim[i]), 2);
    put(70, static_cast<std::uint16_t>(code), 2);
    put(72, static_cast<std::uint16_t>(nbytes * 8), 2);
    const std::array<float, 8> pixdim{1.0f, static_cast<float>(v.voxel_mm.x), static_cast<float>(v.voxel_mm.y),
                                      static_cast<float>(v.voxel_mm.z), 1.0f, 1.0f, 1.0f, 1.0f};
    for (int i = 0; i < 8; ++i) put_f(76 + 4 * static_cast<std::size_t>(i), pixdim[i]);
    put_f(108, 352.0f);
    put_f(112, o.scl_slope);
    put_f(116, o.scl_inter);
    std::memcpy(&b[344], "n+1\0", 4);
    const double slope = o.scl_slope == 0.0f ? 1.0 : o.scl_slope;
    for (double x : v.data) {
        const double raw = (x - o.scl_inter) / slope;
        const std::size_t off = b.size();
        b.resize(off + nbytes);
        switch (o.type) {
            case NiftiType::U8: put(off, static_cast<std::uint8_t>(std::clamp(std::lround(raw), 0L, 255L)), 1); break;
            case NiftiType::I16:
                put(off, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(std::lround(raw), -32768L, 32767L))),
                    2);
                break;
            case NiftiType::F32: put(off, std::bit_cast<std::uint32_t>(static_cast<float>(raw)), 4); break;
        }
    }
    return b;
}

inline void write_nifti(const std::filesystem::path& path, const Volume& v, const NiftiWriteOptions& o = {}) {
    write_file(path, encode_nifti(v, o));
}

}  // namespace voxgan::io
