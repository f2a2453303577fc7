#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxgan/prng.hpp"
#include "voxgan/volume.hpp"

/// Procedural PET-like head phantoms with ellipsoidal lesions, acquisition-center profiles,
/// and train/test splitting.
namespace voxgan::phantom {

/// Axis-aligned ellipsoid in voxel coordinates.
struct Ellipsoid {
    std::array<double, 3> center{};      // x, y, z
    std::array<double, 3> semi_axes{};   // x, y, z

    bool contains(double x, double y, double z) const {
        const double dx = (x - center[0]) / semi_axes[0];
        const double dy = (y - center[1]) / semi_axes[1];
        const double dz = (z - center[2]) / semi_axes[2];
        return dx * dx + dy * dy + dz * dz <= 1.0;
    }
};

struct LesionSizeParams {
    std::array<double, 3> min_semi_axes{1.0, 1.0, 1.0};  // voxels, x y z
    std::array<double, 3> max_semi_axes{2.0, 2.0, 2.0};
};

struct PhantomSpec {
    VolumeShape shape{8, 16, 16, 1};
    VoxelSize voxel_mm{3.7, 3.7, 3.7};
    std::array<double, 3> head_semi_axes{6.5, 6.5, 3.5};
    double background = 1.0;
    double noise_sigma = 0.05;
    double lesion_mean = 6.0;
    double lesion_sigma = 0.5;
    double blur_sigma = 0.6;
    std::uint64_t seed = 0;

    Ellipsoid head() const {
        return {{(static_cast<double>(shape.width) - 1) / 2, (static_cast<double>(shape.height) - 1) / 2,
                 (static_cast<double>(shape.depth) - 1) / 2},
                head_semi_axes};
    }

    void validate() const {
        const Ellipsoid h = head();
        const std::array<double, 3> extent{static_cast<double>(shape.width), static_cast<double>(shape.height),
                                           static_cast<double>(shape.depth)};
        for (int a = 0; a < 3; ++a) {
            if (!(head_semi_axes[a] > 0.0)) throw std::invalid_argument("PhantomSpec: head semi-axes must be positive");
            if (h.center[a] - head_semi_axes[a] < -0.5 || h.center[a] + head_semi_axes[a] > extent[a] - 0.5)
                throw std::invalid_argument("PhantomSpec: head ellipsoid does not fit inside " + shape.str());
        }
        if (background < 0 || lesion_mean < 0) throw std::invalid_argument("PhantomSpec: intensities must be >= 0");
        if (noise_sigma < 0 || lesion_sigma < 0 || blur_sigma < 0)
            throw std::invalid_argument("PhantomSpec: sigmas must be >= 0");
    }
};

/// Single connected ellipsoidal lesion: integer center, semi-axes drawn uniformly per axis,
/// placed so every lesion voxel lies inside the volume and inside `region` when given.
inline Volume random_lesion_mask(Prng& prng, const VolumeShape& shape, const LesionSizeParams& size,
                                 const std::optional<Ellipsoid>& region = std::nullopt, VoxelSize voxel = {}) {
    for (int a = 0; a < 3; ++a) {
        if (!(size.min_semi_axes[a] > 0.0))
            throw std::invalid_argument("random_lesion_mask: semi-axes must be positive (empty lesion)");
        if (size.max_semi_axes[a] < size.min_semi_axes[a])
            throw std::invalid_argument("random_lesion_mask: max semi-axis below min");
    }
    std::array<double, 3> semi{};
    for (int a = 0; a < 3; ++a) semi[a] = prng.uniform(size.min_semi_axes[a], size.max_semi_axes[a]);

    std::vector<std::array<long, 3>> offsets;
    std::array<long, 3> reach{};
    for (int a = 0; a < 3; ++a) reach[a] = static_cast<long>(std::floor(semi[a]));
    for (long dz = -reach[2]; dz <= reach[2]; ++dz)
        for (long dy = -reach[1]; dy <= reach[1]; ++dy)
            for (long dx = -reach[0]; dx <= reach[0]; ++dx) {
                const double fx = dx / semi[0], fy = dy / semi[1], fz = dz / semi[2];
                if (fx * fx + fy * fy + fz * fz <= 1.0) offsets.push_back({dx, dy, dz});
            }

    const std::array<long, 3> extent{static_cast<long>(shape.width), static_cast<long>(shape.height),
                                     static_cast<long>(shape.depth)};
    for (int a = 0; a < 3; ++a)
        if (2 * reach[a] + 1 > extent[a])
            throw std::invalid_argument("random_lesion_mask: lesion cannot fit in " + shape.str());

    constexpr int kAttempts = 2000;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
        std::array<long, 3> c{};
        for (int a = 0; a < 3; ++a)
            c[a] = reach[a] + static_cast<long>(prng.below(static_cast<std::uint64_t>(extent[a] - 2 * reach[a])));
        bool ok = true;
        if (region)
            for (const auto& o : offsets)
                if (!region->contains(static_cast<double>(c[0] + o[0]), static_cast<double>(c[1] + o[1]),
                                      static_cast<double>(c[2] + o[2]))) {
                    ok = false;
                    break;
                }
        if (!ok) continue;
        Volume mask(VolumeShape{shape.depth, shape.height, shape.width, 1}, voxel);
        for (const auto& o : offsets)
            mask.at(static_cast<std::size_t>(c[0] + o[0]), static_cast<std::size_t>(c[1] + o[1]),
                    static_cast<std::size_t>(c[2] + o[2])) = 1.0;
        return mask;
    }
    throw std::invalid_argument("random_lesion_mask: requested lesion cannot fit inside the head region");
}

/// Separable Gaussian blur (sigma in voxels, truncated at 3 sigma, zero outside the volume).
inline void gaussian_blur(Volume& v, double sigma) {
    if (sigma <= 0.0) return;
    const long radius = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double s = 0.0;
    for (long i = -radius; i <= radius; ++i) s += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& w : k) w /= s;

    const std::array<long, 3> ext{static_cast<long>(v.shape.width), static_cast<long>(v.shape.height),
                                  static_cast<long>(v.shape.depth)};
    for (std::size_t c = 0; c < v.shape.channels; ++c)
        for (int axis = 0; axis < 3; ++axis) {
            std::vector<double> out(v.shape.voxels(), 0.0);
            for (long z = 0; z < ext[2]; ++z)
                for (long y = 0; y < ext[1]; ++y)
                    for (long x = 0; x < ext[0]; ++x) {
                        double acc = 0.0;
                        for (long i = -radius; i <= radius; ++i) {
                            std::array<long, 3> p{x, y, z};
                            p[axis] += i;
                            if (p[axis] < 0 || p[axis] >= ext[axis]) continue;
                            acc += k[static_cast<std::size_t>(i + radius)] *
                                   v.at(static_cast<std::size_t>(p[0]), static_cast<std::size_t>(p[1]),
                                        static_cast<std::size_t>(p[2]), c);
                        }
                        out[static_cast<std::size_t>((z * ext[1] + y) * ext[0] + x)] = acc;
                    }
            std::copy(out.begin(), out.end(), v.data.begin() + static_cast<std::ptrdiff_t>(c * v.shape.voxels()));
        }
}

/// Intensity of the lesion for a spec: one draw from N(lesion_mean, lesion_sigma), floored at 0.
inline double lesion_intensity(const PhantomSpec& spec) {
    Prng prng(derive_seed(spec.seed, 0x1E5));
    return std::max(0.0, spec.lesion_mean + spec.lesion_sigma * prng.normal());
}

/// Pipeline: head at background, tissue noise, lesion fill, blur, clamp at 0.
inline Volume render_phantom(const PhantomSpec& spec, const Volume& mask) {
    spec.validate();
    VolumeShape s1 = spec.shape;
    s1.channels = 1;
    if (!(mask.shape == s1)) throw ShapeError("render_phantom: mask " + mask.shape.str() + " != " + s1.str());
    Volume v(s1, spec.voxel_mm);
    const Ellipsoid head = spec.head();
    Prng noise(derive_seed(spec.seed, 0xA015E));
    for (std::size_t z = 0; z < s1.depth; ++z)
        for (std::size_t y = 0; y < s1.height; ++y)
            for (std::size_t x = 0; x < s1.width; ++x) {
                if (!head.contains(static_cast<double>(x), static_cast<double>(y), static_cast<double>(z))) continue;
                double val = spec.background;
                if (spec.noise_sigma > 0.0) val += spec.noise_sigma * noise.normal();
                v.at(x, y, z) = val;
            }
    const double lesion = lesion_intensity(spec);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        if (mask.data[i] != 0.0) v.data[i] = lesion;
    gaussian_blur(v, spec.blur_sigma);
    for (double& x : v.data) x = std::max(0.0, x);
    return v;
}

/// Acquisition-center variation: global gain, extra noise, and lesion size range relative to the head.
struct CenterProfile {
    char id = 'A';
    double contrast = 1.0;
    double noise_sigma = 0.05;
    double lesion_min_frac = 0.15;  // of head semi-axes
    double lesion_max_frac = 0.35;
    double in_plane_mm = 3.7;

    LesionSizeParams lesion_size(const PhantomSpec& spec) const {
        LesionSizeParams p;
        for (int a = 0; a < 3; ++a) {
            p.min_semi_axes[a] = std::max(0.5, lesion_min_frac * spec.head_semi_axes[a]);
            p.max_semi_axes[a] = std::max(p.min_semi_axes[a], lesion_max_frac * spec.head_semi_axes[a]);
        }
        return p;
    }
};

/// The four fixed center profiles A-D.
inline std::vector<CenterProfile> center_profiles() {
    return {
        {'A', 1.00, 0.05, 0.20, 0.35, 3.5},
        {'B', 1.30, 0.10, 0.25, 0.45, 3.65},
        {'C', 0.80, 0.15, 0.20, 0.40, 3.9},
        {'D', 1.15, 0.08, 0.30, 0.50, 3.8},
    };
}

enum class Split { Train, Test };

inline const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

struct Sample {
    std::string id;
    char center = 'A';
    Split split = Split::Train;
    Volume image;
    Volume mask;
};

struct Dataset {
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }

    std::vector<std::size_t> indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples[i].split == s) out.push_back(i);
        return out;
    }

    Dataset subset(const std::vector<std::size_t>& idx) const {
        Dataset d;
        for (auto i : idx) d.samples.push_back(samples.at(i));
        return d;
    }
};

/// Withhold either a fixed count or a fraction (rounded to nearest) of cases for testing.
struct SplitRule {
    std::optional<std::size_t> withhold_count;
    double withhold_fraction = 0.0;

    std::size_t withheld(std::size_t n) const {
        if (withhold_count) return std::min(*withhold_count, n);
        return std::min(n, static_cast<std::size_t>(std::llround(withhold_fraction * static_cast<double>(n))));
    }
};

/// Randomly marks `rule.withheld(n)` samples as test, the rest train.
inline void apply_split(Dataset& d, const SplitRule& rule, std::uint64_t seed) {
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Prng prng(derive_seed(seed, 0x5B117));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[prng.below(i)]);
    const std::size_t k = rule.withheld(d.size());
    for (std::size_t i = 0; i < order.size(); ++i) d.samples[order[i]].split = i < k ? Split::Test : Split::Train;
}

/// Renders one case of a center. Pure function of (base, profile, seed).
inline Sample render_case(const PhantomSpec& base, const CenterProfile& profile, std::uint64_t seed) {
    Prng prng(seed);
    PhantomSpec spec = base;
    spec.seed = derive_seed(seed, 0xCA5E);
    spec.noise_sigma = profile.noise_sigma;
    spec.voxel_mm = {profile.in_plane_mm, profile.in_plane_mm, base.voxel_mm.z};
    for (int a = 0; a < 3; ++a) spec.head_semi_axes[a] = base.head_semi_axes[a] * prng.uniform(0.9, 1.0);
    spec.validate();
    Volume mask = random_lesion_mask(prng, spec.shape, profile.lesion_size(spec), spec.head(), spec.voxel_mm);
    Volume img = render_phantom(spec, mask);
    for (double& x : img.data) x *= profile.contrast;
    return {"", profile.id, Split::Train, std::move(img), std::move(mask)};
}

/// `n_per_center` cases for each profile, then split per `rule`.
inline Dataset build_dataset(std::size_t n_per_center, const std::vector<CenterProfile>& profiles, std::uint64_t seed,
                             const SplitRule& rule, const PhantomSpec& base = {}) {
    if (n_per_center < 1) throw std::invalid_argument("build_dataset: n_per_center must be >= 1");
    Dataset d;
    for (std::size_t c = 0; c < profiles.size(); ++c)
        for (std::size_t i = 0; i < n_per_center; ++i) {
            Sample s = render_case(base, profiles[c], derive_seed(seed, c + 1, i));
            char buf[32];
            std::snprintf(buf, sizeof buf, "%c%04zu", profiles[c].id, i);
            s.id = buf;
            d.samples.push_back(std::move(s));
        }
    apply_split(d, rule, seed);
    return d;
}

/// Half-open voxel box [x0, x1) x [y0, y1) x [z0, z1).
struct BoundingBox {
    std::size_t x0 = 0, y0 = 0, z0 = 0, x1 = 0, y1 = 0, z1 = 0;

    VolumeShape extent() const { return {z1 - z0, y1 - y0, x1 - x0, 1}; }
};

inline Volume crop(const Volume& v, const BoundingBox& b) {
    if (b.x1 <= b.x0 || b.y1 <= b.y0 || b.z1 <= b.z0 || b.x1 > v.shape.width || b.y1 > v.shape.height ||
        b.z1 > v.shape.depth)
        throw std::out_of_range("crop: box out of bounds for volume " + v.shape.str());
    VolumeShape s = b.extent();
    s.channels = v.shape.channels;
    Volume out(s, v.voxel_mm);
    for (std::size_t c = 0; c < s.channels; ++c)
        for (std::size_t z = 0; z < s.depth; ++z)
            for (std::size_t y = 0; y < s.height; ++y)
                for (std::size_t x = 0; x < s.width; ++x) out.at(x, y, z, c) = v.at(x + b.x0, y + b.y0, z + b.z0, c);
    return out;
}

/// Crops image and mask identically; optionally checks the crop extent against `target`.
inline std::pair<Volume, Volume> crop_to_box(const Volume& volume, const Volume& mask, const BoundingBox& box,
                                             const std::optional<VolumeShape>& target = std::nullopt) {
    if (!(volume.shape == mask.shape)) throw ShapeError("crop_to_box: mask " + mask.shape.str() + " != " + volume.shape.str());
    if (target) {
        VolumeShape e = box.extent();
        e.channels = target->channels;
        if (!(e == *target)) throw std::invalid_argument("crop_to_box: box extent " + e.str() + " != target " + target->str());
    }
    return {crop(volume, box), crop(mask, box)};
}

/// Writes `patch` back into `into` at the box origin.
inline void embed(Volume& into, const Volume& patch, const BoundingBox& b) {
    if (!(b.extent().depth == patch.shape.depth && b.extent().height == patch.shape.height &&
          b.extent().width == patch.shape.width) ||
        b.x1 > into.shape.width || b.y1 > into.shape.height || b.z1 > into.shape.depth)
        throw std::out_of_range("embed: box does not match patch or target");
    for (std::size_t z = 0; z < patch.shape.depth; ++z)
        for (std::size_t y = 0; y < patch.shape.height; ++y)
            for (std::size_t x = 0; x < patch.shape.width; ++x) into.at(x + b.x0, y + b.y0, z + b.z0) = patch.at(x, y, z);
}

/// Number of 6-connected foreground components.
inline std::size_t count_components(const Volume& mask) {
    std::vector<char> seen(mask.data.size(), 0);
    std::size_t comps = 0;
    std::vector<std::array<long, 3>> stack;
    const auto& s = mask.shape;
    for (std::size_t z = 0; z < s.depth; ++z)
        for (std::size_t y = 0; y < s.height; ++y)
            for (std::size_t x = 0; x < s.width; ++x) {
                const std::size_t i = mask.index(x, y, z);
                if (mask.data[i] == 0.0 || seen[i]) continue;
                ++comps;
                seen[i] = 1;
                stack.push_back({static_cast<long>(x), static_cast<long>(y), static_cast<long>(z)});
                while (!stack.empty()) {
                    const auto p = stack.back();
                    stack.pop_back();
                    static constexpr long d[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
                    for (const auto& o : d) {
                        const long nx = p[0] + o[0], ny = p[1] + o[1], nz = p[2] + o[2];
                        if (!mask.contains(nx, ny, nz)) continue;
                        const std::size_t j = mask.index(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny),
                                                         static_cast<std::size_t>(nz));
                        if (mask.data[j] == 0.0 || seen[j]) continue;
                        seen[j] = 1;
                        stack.push_back({nx, ny, nz});
                    }
                }
            }
    return comps;
}

}  // namespace voxgan::phantom
