#pragma once

// Flat key=value run configuration. '#' starts a comment, blank lines are
// ignored, unknown keys are rejected. serialize() writes every key, so
// parse(serialize(c)) == c.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ento/error.hpp"
#include "ento/losses.hpp"
#include "ento/model.hpp"
#include "ento/trainer.hpp"

namespace ento {

struct DataConfig {
    /// Directory with images/*.ppm and masks/*.pgm; empty selects the synthetic set.
    std::string dir;
    std::size_t synthetic_count = 4;
    std::uint64_t synthetic_seed = 1234;
    double synthetic_contrast = 0.15;
};

struct EvalConfig {
    bool strict = false;
    bool resize_mismatched = false;
};

struct GradCheckConfig {
    double eps = 1e-3;
    std::size_t samples = 4;
    double tolerance = 1e-3;
};

struct RunConfig {
    EntoConfig model;
    TrainConfig train;
    LossOptions loss;
    DataConfig data;
    EvalConfig eval;
    GradCheckConfig gradcheck;
    /// Parameters read by infer.
    std::string checkpoint;
    /// Checkpoint holding optimizer state to continue training from.
    std::string resume;
    std::string out_dir = "out";

    bool operator==(const RunConfig& o) const;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, trim(item)));
    if (out.empty()) throw ConfigError("config key '" + key + "': expected a comma-separated integer list");
    return out;
}

inline std::string fmt(double v) { return format_number(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(std::size_t v) { return std::to_string(v); }
inline std::string fmt_u64(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

struct KeySpec {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define ENTO_KEY_SIZE(name, field)                                                                          \
    KeySpec{name, [](RunConfig& c, const std::string& v) { c.field = static_cast<std::size_t>(parse_u64(name, v)); }, \
            [](const RunConfig& c) { return fmt(c.field); }}
#define ENTO_KEY_U64(name, field)                                                        \
    KeySpec{name, [](RunConfig& c, const std::string& v) { c.field = parse_u64(name, v); }, \
            [](const RunConfig& c) { return fmt_u64(c.field); }}
#define ENTO_KEY_DOUBLE(name, field)                                                        \
    KeySpec{name, [](RunConfig& c, const std::string& v) { c.field = parse_double(name, v); }, \
            [](const RunConfig& c) { return fmt(c.field); }}
#define ENTO_KEY_BOOL(name, field)                                                        \
    KeySpec{name, [](RunConfig& c, const std::string& v) { c.field = parse_bool(name, v); }, \
            [](const RunConfig& c) { return fmt(c.field); }}
#define ENTO_KEY_STRING(name, field) \
    KeySpec{name, [](RunConfig& c, const std::string& v) { c.field = v; }, [](const RunConfig& c) { return c.field; }}

inline const std::vector<KeySpec>& key_table() {
    static const std::vector<KeySpec> table{
        ENTO_KEY_SIZE("model.levels", model.levels),
        ENTO_KEY_SIZE("model.channels", model.channels),
        ENTO_KEY_SIZE("model.cabs_per_level", model.cabs_per_level),
        ENTO_KEY_SIZE("model.sabs_per_level", model.sabs_per_level),
        KeySpec{"model.group_sizes",
                [](RunConfig& c, const std::string& v) { c.model.group_sizes = parse_list("model.group_sizes", v); },
                [](const RunConfig& c) { return fmt(c.model.group_sizes); }},
        ENTO_KEY_SIZE("model.input_h", model.input_h),
        ENTO_KEY_SIZE("model.input_w", model.input_w),
        ENTO_KEY_SIZE("model.encoder_base_channels", model.encoder_base_channels),
        ENTO_KEY_SIZE("model.cab_reduction", model.cab_reduction),
        ENTO_KEY_BOOL("model.use_enrich", model.use_enrich),
        ENTO_KEY_BOOL("model.use_retouch", model.use_retouch),
        ENTO_KEY_SIZE("train.epochs", train.epochs),
        ENTO_KEY_SIZE("train.batch_size", train.batch_size),
        ENTO_KEY_DOUBLE("train.base_lr", train.base_lr),
        ENTO_KEY_DOUBLE("train.backbone_lr_scale", train.backbone_lr_scale),
        ENTO_KEY_DOUBLE("train.momentum", train.momentum),
        ENTO_KEY_DOUBLE("train.weight_decay", train.weight_decay),
        ENTO_KEY_U64("train.seed", train.seed),
        ENTO_KEY_SIZE("train.checkpoint_interval", train.checkpoint_interval),
        ENTO_KEY_BOOL("train.augment", train.augment),
        ENTO_KEY_SIZE("train.max_steps", train.max_steps),
        ENTO_KEY_DOUBLE("loss.weight_gain", loss.weight_gain),
        ENTO_KEY_SIZE("loss.weight_window", loss.weight_window),
        ENTO_KEY_DOUBLE("loss.iou_smoothing", loss.iou_smoothing),
        ENTO_KEY_STRING("data.dir", data.dir),
        ENTO_KEY_SIZE("data.synthetic_count", data.synthetic_count),
        ENTO_KEY_U64("data.synthetic_seed", data.synthetic_seed),
        ENTO_KEY_DOUBLE("data.synthetic_contrast", data.synthetic_contrast),
        ENTO_KEY_BOOL("eval.strict", eval.strict),
        ENTO_KEY_BOOL("eval.resize_mismatched", eval.resize_mismatched),
        ENTO_KEY_DOUBLE("gradcheck.eps", gradcheck.eps),
        ENTO_KEY_SIZE("gradcheck.samples", gradcheck.samples),
        ENTO_KEY_DOUBLE("gradcheck.tolerance", gradcheck.tolerance),
        ENTO_KEY_STRING("paths.checkpoint", checkpoint),
        ENTO_KEY_STRING("paths.resume", resume),
        ENTO_KEY_STRING("paths.out_dir", out_dir),
    };
    return table;
}

#undef ENTO_KEY_SIZE
#undef ENTO_KEY_U64
#undef ENTO_KEY_DOUBLE
#undef ENTO_KEY_BOOL
#undef ENTO_KEY_STRING

} // namespace detail

inline std::string serialize_config(const RunConfig& c) {
    std::string out;
    for (const auto& k : detail::key_table()) out += k.key + "=" + k.get(c) + "\n";
    return out;
}

inline bool RunConfig::operator==(const RunConfig& o) const { return serialize_config(*this) == serialize_config(o); }

/// Range checks that apply to any loaded configuration.
inline void validate_config(const RunConfig& c) {
    c.model.validate();
    c.train.validate();
    if (c.loss.weight_window == 0 || c.loss.weight_window % 2 == 0) {
        throw ConfigError("config key 'loss.weight_window': expected an odd positive integer");
    }
    if (!(c.loss.iou_smoothing >= 0)) throw ConfigError("config key 'loss.iou_smoothing': expected >= 0");
    if (!(c.gradcheck.eps > 0)) throw ConfigError("config key 'gradcheck.eps': expected a positive number");
    if (c.data.dir.empty() && c.data.synthetic_count == 0) {
        throw ConfigError("config key 'data.synthetic_count': expected a positive integer");
    }
}

inline RunConfig parse_config(std::string_view text) {
    RunConfig c;
    std::map<std::string, const detail::KeySpec*> keys;
    for (const auto& k : detail::key_table()) keys.emplace(k.key, &k);
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
        }
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        auto it = keys.find(key);
        if (it == keys.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        it->second->set(c, value);
    }
    validate_config(c);
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

} // namespace ento
