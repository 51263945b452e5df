#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "hcgm/errors.hpp"

namespace hcgm {

// Training/experiment configuration. Defaults follow the published recipe:
// AdamW, lr 5e-4, weight decay 0.0025, batch 8, 50 epochs.
struct TrainConfig {
    double learning_rate = 5e-4;
    double weight_decay = 0.0025;
    int batch_size = 8;
    int epochs = 50;
    uint64_t seed = 42;
    std::string data_root;
    std::string output_dir = "runs/default";
    int tile_size = 256;
    bool pretrained = true;
    std::string backbone_weights = "vgg16_bn_features.bin";
    bool backbone_frozen = false;
    int width_div = 1;
    bool augment = false;

    void validate() const {
        if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
        if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
        if (batch_size < 1) throw ConfigError("batch_size must be positive");
        if (epochs < 1) throw ConfigError("epochs must be positive");
        if (tile_size < 16 || tile_size % 16 != 0)
            throw ConfigError("tile_size must be a positive multiple of 16");
        if (width_div < 1) throw ConfigError("width_div must be positive");
        if (data_root.empty()) throw ConfigError("data_root is required");
        if (output_dir.empty()) throw ConfigError("output_dir is required");
    }

    std::map<std::string, std::string> snapshot() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

template <typename N>
N parse_number(const std::string& v, const std::string& key) {
    std::istringstream is(v);
    N out;
    is >> out;
    if (is.fail() || !is.eof())
        throw ConfigError("config key '" + key + "' has malformed value '" + v + "'");
    return out;
}

}  // namespace detail

inline void apply_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "learning_rate") cfg.learning_rate = detail::parse_number<double>(value, key);
    else if (key == "weight_decay") cfg.weight_decay = detail::parse_number<double>(value, key);
    else if (key == "batch_size") cfg.batch_size = detail::parse_number<int>(value, key);
    else if (key == "epochs") cfg.epochs = detail::parse_number<int>(value, key);
    else if (key == "seed") cfg.seed = detail::parse_number<uint64_t>(value, key);
    else if (key == "data_root") cfg.data_root = value;
    else if (key == "output_dir") cfg.output_dir = value;
    else if (key == "tile_size") cfg.tile_size = detail::parse_number<int>(value, key);
    else if (key == "pretrained") cfg.pretrained = detail::parse_bool(value, key);
    else if (key == "backbone_weights") cfg.backbone_weights = value;
    else if (key == "backbone_frozen") cfg.backbone_frozen = detail::parse_bool(value, key);
    else if (key == "width_div") cfg.width_div = detail::parse_number<int>(value, key);
    else if (key == "augment") cfg.augment = detail::parse_bool(value, key);
    else
        throw ConfigError("unknown config key '" + key + "'");
}

inline std::map<std::string, std::string> TrainConfig::snapshot() const {
    std::ostringstream lr, wd;
    lr.precision(17);
    wd.precision(17);
    lr << learning_rate;
    wd << weight_decay;
    return {
        {"learning_rate", lr.str()},
        {"weight_decay", wd.str()},
        {"batch_size", std::to_string(batch_size)},
        {"epochs", std::to_string(epochs)},
        {"seed", std::to_string(seed)},
        {"data_root", data_root},
        {"output_dir", output_dir},
        {"tile_size", std::to_string(tile_size)},
        {"pretrained", pretrained ? "true" : "false"},
        {"backbone_weights", backbone_weights},
        {"backbone_frozen", backbone_frozen ? "true" : "false"},
        {"width_div", std::to_string(width_div)},
        {"augment", augment ? "true" : "false"},
    };
}

inline TrainConfig config_from_snapshot(const std::map<std::string, std::string>& kv) {
    TrainConfig cfg;
    for (const auto& [k, v] : kv) apply_config_kv(cfg, k, v);
    return cfg;
}

// key = value lines; '#' starts a comment; unknown keys are hard errors.
inline TrainConfig parse_train_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              " is not of the form key = value");
        apply_config_kv(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return cfg;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_train_config_text(ss.str());
}

}  // namespace hcgm
