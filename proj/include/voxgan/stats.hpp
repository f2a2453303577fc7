#pragma once

// Welch t-tests, Pearson correlation and the real-vs-synthetic correlation report.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxgan/io/csv.hpp"
#include "voxgan/radiomics.hpp"

namespace voxgan::stats {

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 500;
    constexpr double kEps = 1e-15, kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    throw std::runtime_error("incomplete beta: continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0 && b > 0.0)) throw std::invalid_argument("incomplete_beta: a and b must be > 0");
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("incomplete_beta: x must lie in [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double front =
        std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
    return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
inline double t_two_sided_p(double t, double df) {
    if (std::isinf(t)) return 0.0;
    return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;
    bool significant = false;
    bool degenerate = false;  // both samples constant: p fixed by convention
};

inline double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v, double m) {
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

/// Unequal-variance t-test. Significant when p < alpha.
inline WelchResult welch_t_test(const std::vector<double>& xs, const std::vector<double>& ys, double alpha = 0.05) {
    if (xs.size() < 2 || ys.size() < 2) throw std::invalid_argument("welch_t_test: each sample needs >= 2 values");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("welch_t_test: alpha must lie in (0, 1)");
    const double nx = static_cast<double>(xs.size()), ny = static_cast<double>(ys.size());
    const double mx = mean(xs), my = mean(ys);
    const double vx = sample_variance(xs, mx) / nx, vy = sample_variance(ys, my) / ny;
    const double se2 = vx + vy;
    WelchResult r;
    if (se2 == 0.0) {
        r.degenerate = true;
        r.df = nx + ny - 2.0;
        if (mx == my) {
            r.t = 0.0;
            r.p = 1.0;
        } else {
            r.t = mx > my ? INFINITY : -INFINITY;
            r.p = 0.0;
        }
        r.significant = r.p < alpha;
        return r;
    }
    r.t = (mx - my) / std::sqrt(se2);
    r.df = se2 * se2 / (vx * vx / (nx - 1.0) + vy * vy / (ny - 1.0));
    r.p = t_two_sided_p(r.t, r.df);
    r.significant = r.p < alpha;
    return r;
}

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("pearson: samples differ in length");
    if (xs.size() < 2) throw std::invalid_argument("pearson: need >= 2 pairs");
    const double mx = mean(xs), my = mean(ys);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw std::domain_error("pearson: zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// |r_real - r_syn| / |r_real| * 100; NaN when r_real is 0.
inline double percent_difference(double r_real, double r_syn) {
    if (r_real == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return std::abs(r_real - r_syn) / std::abs(r_real) * 100.0;
}

/// Same ratio on magnitudes; differs from the above only when the sign flips.
inline double magnitude_percent_difference(double r_real, double r_syn) {
    if (r_real == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return std::abs(std::abs(r_real) - std::abs(r_syn)) / std::abs(r_real) * 100.0;
}

struct CorrelationRow {
    std::size_t feature = 0;
    std::size_t partner = 0;
    double r_real = 0.0;
    double r_syn = 0.0;
    double delta_pct = 0.0;
    bool sign_flip = false;
};

inline CorrelationRow make_row(std::size_t feature, std::size_t partner, double r_real, double r_syn) {
    return {feature, partner, r_real, r_syn, percent_difference(r_real, r_syn), r_real * r_syn < 0.0};
}

using Matrix8 = std::array<std::array<double, radiomics::kFeatureCount>, radiomics::kFeatureCount>;

struct StatsReport {
    std::array<WelchResult, radiomics::kFeatureCount> tests{};
    bool tested = false;  // set once tests and correlations have been computed
    Matrix8 corr_real{};
    Matrix8 corr_syn{};
    std::vector<CorrelationRow> rows;
    std::vector<std::string> warnings;
    double alpha = 0.05;

    void write_csv(std::ostream& os) const;
    void write_text(std::ostream& os) const;
};

namespace detail {

inline std::vector<double> column(const std::vector<radiomics::FeatureVector>& v, std::size_t k) {
    std::vector<double> out;
    for (const auto& f : v) out.push_back(f.values()[k]);
    return out;
}

inline bool constant(const std::vector<double>& v) {
    for (double x : v)
        if (x != v.front()) return false;
    return true;
}

inline Matrix8 correlations(const std::vector<std::vector<double>>& cols) {
    Matrix8 m{};
    for (std::size_t i = 0; i < cols.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) {
            if (constant(cols[i]) || constant(cols[j])) {
                m[i][j] = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            m[i][j] = i == j ? 1.0 : pearson(cols[i], cols[j]);
        }
    return m;
}

inline std::string fixed(double v, int digits) {
    if (std::isnan(v)) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace detail

/// For every feature: the partner with the largest |r| on the real set, the same pair's r
/// on the synthetic set, and their percent difference; plus per-feature Welch t-tests.
inline StatsReport table1_report(const std::vector<radiomics::FeatureVector>& real,
                                 const std::vector<radiomics::FeatureVector>& syn, double alpha = 0.05) {
    if (real.size() < 3 || syn.size() < 3) throw std::invalid_argument("table1_report: need >= 3 samples in each set");
    const auto& labels = radiomics::feature_labels();
    StatsReport rep;
    rep.alpha = alpha;
    std::vector<std::vector<double>> rc, sc;
    for (std::size_t k = 0; k < radiomics::kFeatureCount; ++k) {
        rc.push_back(detail::column(real, k));
        sc.push_back(detail::column(syn, k));
    }
    for (std::size_t k = 0; k < radiomics::kFeatureCount; ++k) {
        rep.tests[k] = welch_t_test(rc[k], sc[k], alpha);
        if (rep.tests[k].degenerate) rep.warnings.push_back(labels[k] + ": both samples constant, t-test by convention");
    }
    rep.tested = true;
    rep.corr_real = detail::correlations(rc);
    rep.corr_syn = detail::correlations(sc);
    for (std::size_t i = 0; i < radiomics::kFeatureCount; ++i) {
        if (detail::constant(rc[i])) {
            rep.warnings.push_back(labels[i] + ": constant on the real set, excluded from correlations");
            continue;
        }
        std::size_t best = i;
        double best_abs = -1.0;
        for (std::size_t j = 0; j < radiomics::kFeatureCount; ++j) {
            if (j == i || std::isnan(rep.corr_real[i][j])) continue;
            if (std::abs(rep.corr_real[i][j]) > best_abs) {
                best_abs = std::abs(rep.corr_real[i][j]);
                best = j;
            }
        }
        if (best == i) continue;
        const double rs = rep.corr_syn[i][best];
        if (std::isnan(rs)) rep.warnings.push_back(labels[i] + ": partner constant on the synthetic set");
        rep.rows.push_back(make_row(i, best, rep.corr_real[i][best], rs));
    }
    return rep;
}

inline void StatsReport::write_csv(std::ostream& os) const {
    const auto& names = radiomics::feature_names();
    io::CsvWriter w(os);
    w.header({"feature", "partner", "r_real", "r_syn", "delta_pct", "t", "df", "p", "significant"});
    if (!tested) return;
    for (std::size_t k = 0; k < radiomics::kFeatureCount; ++k) {
        std::string partner, rr = "nan", rs = "nan", dp = "nan";
        for (const auto& r : rows)
            if (r.feature == k) {
                partner = names[r.partner];
                rr = io::fmt_double(r.r_real);
                rs = io::fmt_double(r.r_syn);
                dp = io::fmt_double(r.delta_pct);
            }
        const auto& t = tests[k];
        w.row_strings({names[k], partner, rr, rs, dp, io::fmt_double(t.t), io::fmt_double(t.df), io::fmt_double(t.p),
                       t.significant ? "1" : "0"});
    }
}

inline void StatsReport::write_text(std::ostream& os) const {
    const auto& labels = radiomics::feature_labels();
    auto pad = [](const std::string& s, std::size_t n) { return s.size() >= n ? s + " " : s + std::string(n - s.size(), ' '); };
    os << pad("Feature", 18) << pad("Partner", 18) << pad("r real", 9) << pad("r syn", 9) << "Delta %\n";
    bool footnote = false;
    for (const auto& r : rows) {
        std::string d = detail::fixed(r.delta_pct, 1);
        if (r.sign_flip) {
            d += " *";
            footnote = true;
        }
        os << pad(labels[r.feature], 18) << pad(labels[r.partner], 18) << pad(detail::fixed(r.r_real, 3), 9)
           << pad(detail::fixed(r.r_syn, 3), 9) << d << "\n";
    }
    if (footnote) {
        os << "* sign of r differs between sets; on magnitudes the difference is";
        for (const auto& r : rows)
            if (r.sign_flip)
                os << " " << labels[r.feature] << " " << detail::fixed(magnitude_percent_difference(r.r_real, r.r_syn), 1);
        os << "\n";
    }
    if (tested)
        os << "\n" << pad("Feature", 18) << pad("t", 10) << pad("df", 9) << pad("p", 9) << "p < " << alpha << "\n";
    for (std::size_t k = 0; tested && k < tests.size(); ++k) {
        const auto& t = tests[k];
        os << pad(labels[k], 18) << pad(detail::fixed(t.t, 3), 10) << pad(detail::fixed(t.df, 1), 9)
           << pad(detail::fixed(t.p, 4), 9) << (t.significant ? "yes" : "no") << "\n";
    }
    for (const auto& w : warnings) os << "warning: " << w << "\n";
}

}  // namespace voxgan::stats
