#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "clearsky/config.hpp"
#include "clearsky/degrade.hpp"
#include "clearsky/train.hpp"

namespace clearsky {

/// Data-synthesis settings for the `[data]` config section.
struct DataConfig {
    int image_size = 64;
    std::string kinds = "rain_streak,raindrop,haze,snow,mixed";
    double density = 1.5;
    double intensity = 0.8;
    double angle_deg = 70.0;
    double atmospheric_light = 0.85;
    double transmission = 0.65;

    bool operator==(const DataConfig&) const = default;

    std::vector<DegradationSpec> specs() const {
        std::vector<DegradationSpec> out;
        std::stringstream ss(kinds);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.empty()) continue;
            DegradationSpec s;
            s.kind = kind_from_name(item);
            s.density = density;
            s.intensity = intensity;
            s.angle_deg = angle_deg;
            s.atmospheric_light = atmospheric_light;
            s.transmission = transmission;
            // Per-kind tweaks mirroring default_specs().
            if (s.kind == DegradationKind::raindrop) s.density = density * 1.6;
            out.push_back(s);
        }
        if (out.empty()) throw ConfigError("DataConfig: kinds is empty");
        return out;
    }
};

/// Flat `key = value` run configuration with [model], [train], [data]
/// sections. Unknown keys are rejected; every field has a default.
struct RunConfig {
    NetworkConfig model;
    TrainConfig train;
    DataConfig data;

    bool operator==(const RunConfig&) const = default;
};

namespace runconfig_detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace runconfig_detail

inline std::string serialize_config(const RunConfig& c) {
    using runconfig_detail::fmt_double;
    std::ostringstream os;
    os << "[model]\n";
    os << "stages = " << c.model.stages << "\n";
    os << "base_channels = " << c.model.base_channels << "\n";
    os << "query_len = " << c.model.query_len << "\n";
    os << "head_count = " << c.model.head_count << "\n";
    os << "key_dim = " << c.model.key_dim << "\n";
    os << "ffc_global_ratio = " << fmt_double(c.model.ffc_global_ratio) << "\n";
    os << "attn_window = " << c.model.attn_window << "\n";
    os << "ffc_bottleneck_only = " << (c.model.ffc_bottleneck_only ? "true" : "false") << "\n";
    os << "[train]\n";
    os << "steps = " << c.train.steps << "\n";
    os << "batch_size = " << c.train.batch_size << "\n";
    os << "lr = " << fmt_double(c.train.lr) << "\n";
    os << "seed = " << c.train.seed << "\n";
    os << "loss = " << (c.train.loss == LossKind::charbonnier ? "charbonnier" : "charbonnier+ssim")
       << "\n";
    os << "checkpoint_every = " << c.train.checkpoint_every << "\n";
    os << "eval_every = " << c.train.eval_every << "\n";
    os << "clip_norm = " << fmt_double(c.train.clip_norm) << "\n";
    os << "ssim_weight = " << fmt_double(c.train.ssim_weight) << "\n";
    os << "halt_step = " << c.train.halt_step << "\n";
    os << "[data]\n";
    os << "image_size = " << c.data.image_size << "\n";
    os << "kinds = " << c.data.kinds << "\n";
    os << "density = " << fmt_double(c.data.density) << "\n";
    os << "intensity = " << fmt_double(c.data.intensity) << "\n";
    os << "angle_deg = " << fmt_double(c.data.angle_deg) << "\n";
    os << "atmospheric_light = " << fmt_double(c.data.atmospheric_light) << "\n";
    os << "transmission = " << fmt_double(c.data.transmission) << "\n";
    return os.str();
}

inline RunConfig parse_config(std::istream& is) {
    using runconfig_detail::trim;
    RunConfig c;
    std::string line, section;
    std::vector<std::string> bad;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        if (s.front() == '[' && s.back() == ']') {
            section = s.substr(1, s.size() - 2);
            if (section != "model" && section != "train" && section != "data")
                throw ConfigError("unknown config section [" + section + "]");
            continue;
        }
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        auto as_int = [&] { return std::stoi(val); };
        auto as_i64 = [&] { return std::stoll(val); };
        auto as_dbl = [&] { return std::stod(val); };
        auto as_bool = [&] {
            if (val == "true" || val == "1") return true;
            if (val == "false" || val == "0") return false;
            throw ConfigError("config key " + key + ": expected boolean, got " + val);
        };
        if (section == "model") {
            if (key == "stages") c.model.stages = as_int();
            else if (key == "base_channels") c.model.base_channels = as_int();
            else if (key == "query_len") c.model.query_len = as_int();
            else if (key == "head_count") c.model.head_count = as_int();
            else if (key == "key_dim") c.model.key_dim = as_int();
            else if (key == "ffc_global_ratio") c.model.ffc_global_ratio = as_dbl();
            else if (key == "attn_window") c.model.attn_window = as_int();
            else if (key == "ffc_bottleneck_only") c.model.ffc_bottleneck_only = as_bool();
            else bad.push_back(section + "." + key);
        } else if (section == "train") {
            if (key == "steps") c.train.steps = as_int();
            else if (key == "batch_size") c.train.batch_size = as_int();
            else if (key == "lr") c.train.lr = as_dbl();
            else if (key == "seed") c.train.seed = static_cast<uint64_t>(as_i64());
            else if (key == "loss") {
                if (val == "charbonnier") c.train.loss = LossKind::charbonnier;
                else if (val == "charbonnier+ssim") c.train.loss = LossKind::charbonnier_ssim;
                else throw ConfigError("config key loss: unknown value " + val);
            } else if (key == "checkpoint_every") c.train.checkpoint_every = as_int();
            else if (key == "eval_every") c.train.eval_every = as_int();
            else if (key == "clip_norm") c.train.clip_norm = as_dbl();
            else if (key == "ssim_weight") c.train.ssim_weight = as_dbl();
            else if (key == "halt_step") c.train.halt_step = as_int();
            else bad.push_back(section + "." + key);
        } else if (section == "data") {
            if (key == "image_size") c.data.image_size = as_int();
            else if (key == "kinds") c.data.kinds = val;
            else if (key == "density") c.data.density = as_dbl();
            else if (key == "intensity") c.data.intensity = as_dbl();
            else if (key == "angle_deg") c.data.angle_deg = as_dbl();
            else if (key == "atmospheric_light") c.data.atmospheric_light = as_dbl();
            else if (key == "transmission") c.data.transmission = as_dbl();
            else bad.push_back(section + "." + key);
        } else {
            throw ConfigError("config line " + std::to_string(lineno) + ": key outside a section");
        }
    }
    if (!bad.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : bad) msg += " " + k;
        throw ConfigError(msg);
    }
    return c;
}

inline RunConfig parse_config(const std::string& text) {
    std::istringstream is(text);
    return parse_config(is);
}

inline RunConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    return parse_config(is);
}

}  // namespace clearsky
