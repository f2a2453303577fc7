#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxgan/tensor.hpp"

namespace voxgan {

/// Extents of a volume: depth = slices (T), then height and width; channels 1 for PET, 2 with a mask.
struct VolumeShape {
    std::size_t depth = 8;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t channels = 1;

    std::size_t voxels() const { return depth * height * width; }
    bool operator==(const VolumeShape&) const = default;

    std::string str() const {
        return std::to_string(depth) + "x" + std::to_string(height) + "x" + std::to_string(width) +
               (channels == 1 ? "" : "x" + std::to_string(channels) + "ch");
    }
};

struct VoxelSize {
    double x = 1.0, y = 1.0, z = 1.0;

    double volume_mm3() const { return x * y * z; }
    bool operator==(const VoxelSize&) const = default;
};

/// Dense scalar grid, x fastest, then y, then z (slice), then channel.
struct Volume {
    VolumeShape shape;
    VoxelSize voxel_mm;
    std::vector<double> data;

    Volume() = default;
    explicit Volume(VolumeShape s, VoxelSize vs = {}, double fill = 0.0)
        : shape(s), voxel_mm(vs), data(s.voxels() * s.channels, fill) {
        if (vs.x <= 0 || vs.y <= 0 || vs.z <= 0) throw std::invalid_argument("voxel sizes must be positive");
    }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z, std::size_t c = 0) const {
        return ((c * shape.depth + z) * shape.height + y) * shape.width + x;
    }
    double& at(std::size_t x, std::size_t y, std::size_t z, std::size_t c = 0) { return data[index(x, y, z, c)]; }
    double at(std::size_t x, std::size_t y, std::size_t z, std::size_t c = 0) const { return data[index(x, y, z, c)]; }

    bool contains(long x, long y, long z) const {
        return x >= 0 && y >= 0 && z >= 0 && x < static_cast<long>(shape.width) &&
               y < static_cast<long>(shape.height) && z < static_cast<long>(shape.depth);
    }

    bool is_binary(double tol = 1e-6) const {
        return std::all_of(data.begin(), data.end(),
                           [tol](double v) { return std::abs(v) <= tol || std::abs(v - 1.0) <= tol; });
    }

    std::size_t count_nonzero() const {
        return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](double v) { return v != 0.0; }));
    }

    double max() const { return data.empty() ? 0.0 : *std::max_element(data.begin(), data.end()); }
    double min() const { return data.empty() ? 0.0 : *std::min_element(data.begin(), data.end()); }

    /// Single-channel volume as a (1, 1, D, H, W) tensor.
    Tensor to_tensor() const { return Tensor({1, shape.channels, shape.depth, shape.height, shape.width}, data); }

    static Volume from_tensor(const Tensor& t, VoxelSize vs = {}) {
        if (t.rank() != 5 || t.dim(0) != 1)
            throw ShapeError("Volume::from_tensor", Shape{1, 1, 0, 0, 0}, t.shape());
        Volume v(VolumeShape{t.dim(2), t.dim(3), t.dim(4), t.dim(1)}, vs);
        std::copy(t.data().begin(), t.data().end(), v.data.begin());
        return v;
    }
};

/// Stacks single-channel volumes of one shape into (N, 1, D, H, W).
inline Tensor stack_volumes(const std::vector<const Volume*>& vols) {
    if (vols.empty()) throw std::invalid_argument("stack_volumes: empty batch");
    const VolumeShape s = vols.front()->shape;
    std::vector<double> d;
    d.reserve(vols.size() * s.voxels() * s.channels);
    for (const Volume* v : vols) {
        if (!(v->shape == s)) throw ShapeError("stack_volumes: shape " + v->shape.str() + " != " + s.str());
        d.insert(d.end(), v->data.begin(), v->data.end());
    }
    return Tensor({vols.size(), s.channels, s.depth, s.height, s.width}, std::move(d));
}

/// Maps intensities to [-1, 1] by the volume maximum: x -> 2x / scale - 1.
inline Volume normalize_intensity(const Volume& v, double scale) {
    if (!(scale > 0.0)) throw std::invalid_argument("normalize_intensity: scale must be positive");
    Volume out = v;
    for (double& x : out.data) x = 2.0 * x / scale - 1.0;
    return out;
}

inline Volume denormalize_intensity(const Volume& v, double scale) {
    Volume out = v;
    for (double& x : out.data) x = (x + 1.0) * 0.5 * scale;
    return out;
}

}  // namespace voxgan
