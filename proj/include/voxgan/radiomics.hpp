#pragma once

// Lesion features: volume, uptake summaries and three GLCM texture measures.

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxgan/io/csv.hpp"
#include "voxgan/volume.hpp"

namespace voxgan::radiomics {

using Offset = std::array<int, 3>;  // dx, dy, dz

/// The 13 unique neighbour directions at distance 1 (the other 13 are their negatives).
inline std::vector<Offset> default_offsets() {
    std::vector<Offset> out;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const bool positive = dz > 0 || (dz == 0 && (dy > 0 || (dy == 0 && dx > 0)));
                if (positive) out.push_back({dx, dy, dz});
            }
    return out;
}

struct StatsConfig {
    double alpha = 0.05;
    std::size_t glcm_levels = 32;
    int glcm_distance = 1;
    std::vector<Offset> offsets = default_offsets();

    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("StatsConfig: alpha must lie in (0, 1)");
        if (glcm_levels < 2) throw std::invalid_argument("StatsConfig: glcm_levels must be >= 2");
        if (glcm_distance < 1) throw std::invalid_argument("StatsConfig: glcm_distance must be >= 1");
        if (offsets.empty()) throw std::invalid_argument("StatsConfig: at least one GLCM offset is required");
    }
};

inline constexpr std::size_t kFeatureCount = 8;

inline const std::array<std::string, kFeatureCount>& feature_names() {
    static const std::array<std::string, kFeatureCount> names{
        "mtv_ml", "suv_mean", "suv_max", "suv_peak", "tlg", "glcm_entropy", "glcm_energy", "glcm_homogeneity"};
    return names;
}

/// Short labels used in the report.
inline const std::array<std::string, kFeatureCount>& feature_labels() {
    static const std::array<std::string, kFeatureCount> labels{
        "MTV", "SUVmean", "SUVmax", "SUVpeak", "TLG", "GLCM Entropy", "GLCM Energy", "GLCM Homogeneity"};
    return labels;
}

struct FeatureVector {
    double mtv_ml = 0.0;
    double suv_mean = 0.0;
    double suv_max = 0.0;
    double suv_peak = 0.0;
    double tlg = 0.0;
    double glcm_entropy = 0.0;
    double glcm_energy = 0.0;
    double glcm_homogeneity = 0.0;

    std::array<double, kFeatureCount> values() const {
        return {mtv_ml, suv_mean, suv_max, suv_peak, tlg, glcm_entropy, glcm_energy, glcm_homogeneity};
    }
};

struct FirstOrder {
    double mtv_ml = 0.0;
    double suv_mean = 0.0;
    double suv_max = 0.0;
    double suv_peak = 0.0;
    double tlg = 0.0;
};

namespace detail {

inline void check_roi(const Volume& volume, const Volume& mask, const char* op) {
    if (volume.shape.channels != 1 || !(volume.shape == mask.shape))
        throw ShapeError(std::string(op) + ": mask " + mask.shape.str() + " != volume " + volume.shape.str());
    if (mask.count_nonzero() == 0) throw std::invalid_argument(std::string(op) + ": empty mask");
}

}  // namespace detail

/// Volume (mL), mean / max / peak intensity and TLG over the mask. The peak is the largest
/// 3x3x3-cube mean (cube clipped at the borders) centred on a mask voxel.
inline FirstOrder first_order_features(const Volume& volume, const Volume& mask) {
    detail::check_roi(volume, mask, "first_order_features");
    const auto& s = volume.shape;
    FirstOrder f;
    double sum = 0.0, mx = -INFINITY, peak = -INFINITY;
    std::size_t n = 0;
    for (std::size_t z = 0; z < s.depth; ++z)
        for (std::size_t y = 0; y < s.height; ++y)
            for (std::size_t x = 0; x < s.width; ++x) {
                if (mask.at(x, y, z) == 0.0) continue;
                const double v = volume.at(x, y, z);
                sum += v;
                mx = std::max(mx, v);
                ++n;
                double cube = 0.0;
                std::size_t cn = 0;
                for (long dz = -1; dz <= 1; ++dz)
                    for (long dy = -1; dy <= 1; ++dy)
                        for (long dx = -1; dx <= 1; ++dx) {
                            const long xx = static_cast<long>(x) + dx, yy = static_cast<long>(y) + dy,
                                       zz = static_cast<long>(z) + dz;
                            if (!volume.contains(xx, yy, zz)) continue;
                            cube += volume.at(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy),
                                              static_cast<std::size_t>(zz));
                            ++cn;
                        }
                peak = std::max(peak, cube / static_cast<double>(cn));
            }
    f.mtv_ml = static_cast<double>(n) * volume.voxel_mm.volume_mm3() / 1000.0;
    f.suv_mean = sum / static_cast<double>(n);
    f.suv_max = mx;
    f.suv_peak = peak;
    f.tlg = f.mtv_ml * f.suv_mean;
    return f;
}

struct GlcmMatrix {
    std::size_t levels = 0;
    std::vector<double> p;  // levels x levels, row-major
    double lo = 0.0, hi = 0.0;

    double operator()(std::size_t i, std::size_t j) const { return p[i * levels + j]; }
};

/// Equal-width bin of `v` over [lo, hi]; hi falls in the top bin; a constant range maps to 0.
inline std::size_t quantize(double v, double lo, double hi, std::size_t levels) {
    if (!(hi > lo)) return 0;
    const double b = std::floor((v - lo) / (hi - lo) * static_cast<double>(levels));
    return static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(levels - 1)));
}

/// Symmetric, normalized co-occurrence matrix over the configured offsets; only pairs with
/// both voxels inside the mask count. A ROI without any such pair (or a constant ROI) yields
/// the single-cell distribution p(0, 0) = 1.
inline GlcmMatrix glcm(const Volume& volume, const Volume& mask, const StatsConfig& cfg = {}) {
    cfg.validate();
    detail::check_roi(volume, mask, "glcm");
    GlcmMatrix m;
    m.levels = cfg.glcm_levels;
    m.p.assign(m.levels * m.levels, 0.0);
    m.lo = INFINITY;
    m.hi = -INFINITY;
    for (std::size_t i = 0; i < volume.data.size(); ++i)
        if (mask.data[i] != 0.0) {
            m.lo = std::min(m.lo, volume.data[i]);
            m.hi = std::max(m.hi, volume.data[i]);
        }
    const auto& s = volume.shape;
    std::vector<double> counts(m.p.size(), 0.0);
    double total = 0.0;
    for (std::size_t z = 0; z < s.depth; ++z)
        for (std::size_t y = 0; y < s.height; ++y)
            for (std::size_t x = 0; x < s.width; ++x) {
                if (mask.at(x, y, z) == 0.0) continue;
                const std::size_t a = quantize(volume.at(x, y, z), m.lo, m.hi, m.levels);
                for (const auto& o : cfg.offsets) {
                    const long xx = static_cast<long>(x) + o[0] * cfg.glcm_distance;
                    const long yy = static_cast<long>(y) + o[1] * cfg.glcm_distance;
                    const long zz = static_cast<long>(z) + o[2] * cfg.glcm_distance;
                    if (!volume.contains(xx, yy, zz)) continue;
                    const auto ux = static_cast<std::size_t>(xx), uy = static_cast<std::size_t>(yy),
                               uz = static_cast<std::size_t>(zz);
                    if (mask.at(ux, uy, uz) == 0.0) continue;
                    const std::size_t b = quantize(volume.at(ux, uy, uz), m.lo, m.hi, m.levels);
                    counts[a * m.levels + b] += 1.0;
                    counts[b * m.levels + a] += 1.0;
                    total += 2.0;
                }
            }
    if (total == 0.0 || !(m.hi > m.lo)) {
        m.p[0] = 1.0;
        return m;
    }
    for (std::size_t i = 0; i < counts.size(); ++i) m.p[i] = counts[i] / total;
    return m;
}

struct GlcmFeatures {
    double entropy = 0.0;
    double energy = 0.0;
    double homogeneity = 0.0;
};

inline GlcmFeatures glcm_features(const GlcmMatrix& m) {
    GlcmFeatures f;
    for (std::size_t i = 0; i < m.levels; ++i)
        for (std::size_t j = 0; j < m.levels; ++j) {
            const double p = m(i, j);
            if (p > 0.0) f.entropy -= p * std::log2(p);
            f.energy += p * p;
            f.homogeneity += p / (1.0 + std::abs(static_cast<double>(i) - static_cast<double>(j)));
        }
    return f;
}

inline FeatureVector extract_features(const Volume& volume, const Volume& mask, const StatsConfig& cfg = {}) {
    const FirstOrder f = first_order_features(volume, mask);
    const GlcmFeatures g = glcm_features(glcm(volume, mask, cfg));
    return {f.mtv_ml, f.suv_mean, f.suv_max, f.suv_peak, f.tlg, g.entropy, g.energy, g.homogeneity};
}

struct FeatureRow {
    std::string id;
    std::string source;  // "real" or "synthetic"
    FeatureVector features;
};

inline void write_feature_csv(std::ostream& os, const std::vector<FeatureRow>& rows) {
    io::CsvWriter w(os);
    std::vector<std::string> header{"id", "source"};
    for (const auto& n : feature_names()) header.push_back(n);
    w.header(header);
    for (const auto& r : rows) {
        std::vector<std::string> cells{r.id, r.source};
        for (double v : r.features.values()) cells.push_back(io::fmt_double(v));
        w.row_strings(cells);
    }
}

}  // namespace voxgan::radiomics
