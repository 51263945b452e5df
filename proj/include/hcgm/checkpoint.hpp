#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <string>

#include "hcgm/optim.hpp"
#include "hcgm/serialize.hpp"

namespace hcgm {

// A checkpoint is a directory: params.bin (parameters + buffers), optim.bin
// (optional optimizer state), meta.txt (epoch, metrics, config snapshot).
struct CheckpointMeta {
    int epoch = 0;
    double best_val_f1 = 0;
    std::map<std::string, std::string> config;
    std::map<std::string, double> metrics;
};

inline void write_meta(const std::filesystem::path& path, const CheckpointMeta& meta) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint metadata '" + path.string() + "'");
    os << std::setprecision(17);
    os << "epoch = " << meta.epoch << "\n";
    os << "best_val_f1 = " << meta.best_val_f1 << "\n";
    for (const auto& [k, v] : meta.metrics) os << "metric." << k << " = " << v << "\n";
    for (const auto& [k, v] : meta.config) os << "config." << k << " = " << v << "\n";
}

inline CheckpointMeta read_meta(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open checkpoint metadata '" + path.string() + "'");
    CheckpointMeta meta;
    std::string line;
    while (std::getline(is, line)) {
        const size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "epoch") meta.epoch = std::stoi(value);
        else if (key == "best_val_f1") meta.best_val_f1 = std::stod(value);
        else if (key.rfind("metric.", 0) == 0) meta.metrics[key.substr(7)] = std::stod(value);
        else if (key.rfind("config.", 0) == 0) meta.config[key.substr(7)] = value;
    }
    return meta;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const ParamRegistry<T>& reg,
                     const AdamW<T>* opt, const CheckpointMeta& meta) {
    std::filesystem::create_directories(dir);
    std::vector<std::pair<std::string, Tensor<T>>> entries;
    for (const auto& p : reg.params) entries.push_back(p);
    for (const auto& b : reg.buffers) entries.push_back(b);
    save_payload(dir / "params.bin", entries);
    if (opt) opt->save(dir / "optim.bin");
    write_meta(dir / "meta.txt", meta);
}

// Loads parameters and buffers; incompatible payloads abort with the full
// list of missing/unexpected/mismatched names.
template <typename T>
void load_checkpoint_params(const std::filesystem::path& dir, ParamRegistry<T>& reg) {
    const auto path = dir / "params.bin";
    if (!std::filesystem::exists(path))
        throw DataError("checkpoint '" + dir.string() + "' has no params.bin");
    apply_payload(reg, load_payload<T>(path), "checkpoint '" + dir.string() + "'");
}

}  // namespace hcgm
