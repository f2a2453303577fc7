#pragma once

// Flat key = value run configuration. Values are TOML scalars (integers, floats, true/false,
// "double-quoted strings"); '#' starts a comment. Unknown keys are rejected.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "voxgan/io/csv.hpp"
#include "voxgan/radiomics.hpp"
#include "voxgan/segmentation.hpp"
#include "voxgan/tgan.hpp"
#include "voxgan/trainer.hpp"

namespace voxgan::io {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PhantomConfig {
    std::size_t per_center = 16;
    std::string centers = "ABCD";
    std::optional<std::size_t> withhold_count;
    double withhold_fraction = 0.2;
};

struct AugmentConfig {
    std::size_t synthetic_count = 16;
    std::size_t eval_every = 10;
    std::size_t tgan_iterations = 100;
};

struct PathsConfig {
    std::filesystem::path data_dir;
    std::filesystem::path out_dir;
    std::filesystem::path tgan_checkpoint;
    std::filesystem::path seg_checkpoint;
    std::filesystem::path masks_dir;
};

struct RunConfig {
    unsigned long long seed = 0;
    std::size_t generate_count = 200;
    tgan::GanConfig gan;
    train::TrainConfig train;
    seg::SegConfig seg;
    radiomics::StatsConfig stats;
    PhantomConfig phantom;
    AugmentConfig augment;
    PathsConfig paths;

    RunConfig() { train.epochs = 50; }

    void validate() const {
        gan.validate();
        train.validate();
        seg.validate();
        stats.validate();
        if (phantom.per_center < 1) throw ConfigError("phantom.per_center must be >= 1");
        if (phantom.centers.empty()) throw ConfigError("phantom.centers must name at least one center");
        if (!(phantom.withhold_fraction >= 0.0 && phantom.withhold_fraction < 1.0))
            throw ConfigError("phantom.withhold_fraction must lie in [0, 1)");
        if (augment.eval_every < 1) throw ConfigError("augment.eval_every must be >= 1");
    }
};

namespace detail {

using FieldRef = std::variant<double*, std::size_t*, unsigned long long*, int*, bool*, std::string*,
                              std::optional<std::size_t>*, std::filesystem::path*>;

struct Field {
    const char* key;
    FieldRef ref;
};

inline std::vector<Field> fields(RunConfig& c) {
    return {
        {"seed", &c.seed},
        {"generate.count", &c.generate_count},
        {"gan.latent_z0", &c.gan.latent_z0},
        {"gan.latent_z1", &c.gan.latent_z1},
        {"gan.mask_code", &c.gan.mask_code},
        {"gan.base_channels", &c.gan.base_channels},
        {"gan.temporal_channels", &c.gan.temporal_channels},
        {"gan.depth", &c.gan.shape.depth},
        {"gan.height", &c.gan.shape.height},
        {"gan.width", &c.gan.shape.width},
        {"gan.omega", &c.gan.omega},
        {"gan.conditional", &c.gan.conditional},
        {"gan.leaky_slope", &c.gan.leaky_slope},
        {"train.learning_rate", &c.train.learning_rate},
        {"train.batch_size", &c.train.batch_size},
        {"train.epochs", &c.train.epochs},
        {"train.iterations", &c.train.iterations},
        {"train.critic_steps", &c.train.critic_steps_per_gen_step},
        {"train.svc_period", &c.train.svc_period},
        {"train.max_singular_value", &c.train.max_singular_value},
        {"train.clip_all_networks", &c.train.clip_all_networks},
        {"train.checkpoint_every", &c.train.checkpoint_every},
        {"train.log_timing", &c.train.log_timing},
        {"seg.depth_levels", &c.seg.depth_levels},
        {"seg.base_channels", &c.seg.base_channels},
        {"seg.se_reduction", &c.seg.se_reduction},
        {"seg.threshold", &c.seg.threshold},
        {"seg.beta_scale", &c.seg.beta_scale},
        {"seg.epochs", &c.seg.epochs},
        {"seg.batch_size", &c.seg.batch_size},
        {"seg.iterations", &c.seg.iterations},
        {"seg.learning_rate", &c.seg.learning_rate},
        {"stats.alpha", &c.stats.alpha},
        {"stats.glcm_levels", &c.stats.glcm_levels},
        {"stats.glcm_distance", &c.stats.glcm_distance},
        {"phantom.per_center", &c.phantom.per_center},
        {"phantom.centers", &c.phantom.centers},
        {"phantom.withhold_count", &c.phantom.withhold_count},
        {"phantom.withhold_fraction", &c.phantom.withhold_fraction},
        {"augment.synthetic_count", &c.augment.synthetic_count},
        {"augment.eval_every", &c.augment.eval_every},
        {"augment.tgan_iterations", &c.augment.tgan_iterations},
        {"paths.data_dir", &c.paths.data_dir},
        {"paths.out_dir", &c.paths.out_dir},
        {"paths.tgan_checkpoint", &c.paths.tgan_checkpoint},
        {"paths.seg_checkpoint", &c.paths.seg_checkpoint},
        {"paths.masks_dir", &c.paths.masks_dir},
    };
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_int(const std::string& v, const std::string& where) {
    T out{};
    const char* first = v.data();
    if constexpr (std::is_unsigned_v<T>) {
        if (!v.empty() && v[0] == '+') ++first;
    }
    auto [p, ec] = std::from_chars(first, v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || first == v.data() + v.size())
        throw ConfigError(where + ": expected an integer, got '" + v + "'");
    return out;
}

inline double parse_float(const std::string& v, const std::string& where) {
    double out = 0.0;
    const char* first = v.data() + (!v.empty() && v[0] == '+' ? 1 : 0);
    auto [p, ec] = std::from_chars(first, v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty())
        throw ConfigError(where + ": expected a number, got '" + v + "'");
    return out;
}

inline std::string parse_string(const std::string& v, const std::string& where) {
    if (v.size() < 2 || v.front() != '"' || v.back() != '"')
        throw ConfigError(where + ": expected a double-quoted string, got '" + v + "'");
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        char c = v[i];
        if (c == '\\') {
            if (i + 2 >= v.size()) throw ConfigError(where + ": dangling escape");
            c = v[++i];
            if (c != '\\' && c != '"') throw ConfigError(where + std::string(": unsupported escape \\") + c);
        } else if (c == '"') {
            throw ConfigError(where + ": unescaped quote inside string");
        }
        out += c;
    }
    return out;
}

inline std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

/// Strips a trailing comment, ignoring '#' inside a quoted string.
inline std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\\' && in_str) {
            ++i;
        } else if (line[i] == '"') {
            in_str = !in_str;
        } else if (line[i] == '#' && !in_str) {
            return line.substr(0, i);
        }
    }
    return line;
}

}  // namespace detail

/// Parses config text; relative paths are resolved against `base_dir`.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {},
                              const std::string& source = "config") {
    RunConfig cfg;
    auto table = detail::fields(cfg);
    std::vector<std::string> seen;
    std::istringstream in(text);
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        const std::string body = detail::trim(detail::strip_comment(line));
        if (body.empty()) continue;
        const std::string where = source + ":" + std::to_string(lineno);
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = detail::trim(body.substr(0, eq)), val = detail::trim(body.substr(eq + 1));
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) throw ConfigError(where + ": duplicate key '" + key + "'");
        auto it = std::find_if(table.begin(), table.end(), [&](const detail::Field& f) { return key == f.key; });
        if (it == table.end()) throw ConfigError(where + ": unknown key '" + key + "'");
        seen.push_back(key);
        const std::string at = where + " (" + key + ")";
        std::visit(
            [&](auto* p) {
                using T = std::remove_pointer_t<decltype(p)>;
                if constexpr (std::is_same_v<T, double>) {
                    *p = detail::parse_float(val, at);
                } else if constexpr (std::is_same_v<T, bool>) {
                    if (val != "true" && val != "false") throw ConfigError(at + ": expected true or false, got '" + val + "'");
                    *p = val == "true";
                } else if constexpr (std::is_same_v<T, std::string>) {
                    *p = detail::parse_string(val, at);
                } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
                    const std::filesystem::path raw = detail::parse_string(val, at);
                    *p = raw.empty() || raw.is_absolute() ? raw : (base_dir / raw).lexically_normal();
                } else if constexpr (std::is_same_v<T, std::optional<std::size_t>>) {
                    *p = detail::parse_int<std::size_t>(val, at);
                } else {
                    *p = detail::parse_int<T>(val, at);
                }
            },
            it->ref);
    }
    cfg.train.seed = cfg.seed;
    cfg.seg.seed = cfg.seed;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::filesystem::absolute(path).parent_path(), path.string());
}

/// Every key in table order; unset optionals are omitted. Paths are written as stored.
inline std::string serialize_config(const RunConfig& cfg) {
    RunConfig copy = cfg;
    std::ostringstream os;
    for (const auto& f : detail::fields(copy)) {
        std::string val;
        bool skip = false;
        std::visit(
            [&](auto* p) {
                using T = std::remove_pointer_t<decltype(p)>;
                if constexpr (std::is_same_v<T, double>) {
                    val = fmt_double(*p);
                } else if constexpr (std::is_same_v<T, bool>) {
                    val = *p ? "true" : "false";
                } else if constexpr (std::is_same_v<T, std::string>) {
                    val = detail::quote(*p);
                } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
                    val = detail::quote(p->string());
                } else if constexpr (std::is_same_v<T, std::optional<std::size_t>>) {
                    if (*p)
                        val = std::to_string(**p);
                    else
                        skip = true;
                } else {
                    val = std::to_string(*p);
                }
            },
            f.ref);
        if (!skip) os << f.key << " = " << val << '\n';
    }
    return os.str();
}

inline phantom::SplitRule split_rule(const PhantomConfig& c) {
    phantom::SplitRule r;
    r.withhold_count = c.withhold_count;
    r.withhold_fraction = c.withhold_fraction;
    return r;
}

/// Profiles for the configured center letters, in the given order.
inline std::vector<phantom::CenterProfile> selected_profiles(const std::string& centers) {
    std::vector<phantom::CenterProfile> out;
    for (char c : centers) {
        bool found = false;
        for (const auto& p : phantom::center_profiles())
            if (p.id == c) {
                out.push_back(p);
                found = true;
            }
        if (!found) throw ConfigError(std::string("unknown center '") + c + "' (expected letters from ABCD)");
        if (std::count(centers.begin(), centers.end(), c) > 1) throw ConfigError(std::string("center '") + c + "' listed twice");
    }
    return out;
}

}  // namespace voxgan::io
