#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hcgm/nn.hpp"
#include "hcgm/serialize.hpp"

namespace hcgm {

// AdamW with decoupled weight decay: decay is applied to the weights
// directly, never folded into the moment estimates. A parameter whose
// gradient is absent or identically zero is skipped outright, so one step
// changes a parameter iff its gradient is nonzero.
template <typename T>
struct AdamW {
    struct State {
        int64_t t = 0;
        std::vector<T> m, v;
    };

    double lr = 5e-4;
    double weight_decay = 0.0025;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<std::pair<std::string, Tensor<T>>> params;
    std::unordered_map<std::string, State> state;

    AdamW() = default;
    AdamW(std::vector<std::pair<std::string, Tensor<T>>> params_, double lr_, double wd)
        : lr(lr_), weight_decay(wd), params(std::move(params_)) {}

    void step() {
        for (auto& [name, p] : params) {
            if (!p.has_grad()) continue;
            const std::vector<T>& g = p.grad();
            bool nonzero = false;
            for (T gv : g)
                if (gv != T(0)) {
                    nonzero = true;
                    break;
                }
            if (!nonzero) continue;

            State& st = state[name];
            if (st.m.empty()) {
                st.m.assign(g.size(), T(0));
                st.v.assign(g.size(), T(0));
            }
            st.t += 1;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
            T* w = p.data();
            for (size_t i = 0; i < g.size(); ++i) {
                w[i] -= static_cast<T>(lr * weight_decay) * w[i];
                st.m[i] = static_cast<T>(beta1) * st.m[i] + static_cast<T>(1.0 - beta1) * g[i];
                st.v[i] =
                    static_cast<T>(beta2) * st.v[i] + static_cast<T>(1.0 - beta2) * g[i] * g[i];
                const double mhat = static_cast<double>(st.m[i]) / bc1;
                const double vhat = static_cast<double>(st.v[i]) / bc2;
                w[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }

    void zero_grad() {
        for (auto& [name, p] : params) p.zero_grad();
    }

    // Deterministic binary state dump in parameter order.
    void save(const std::filesystem::path& path) const {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
        os.write("HCGMOPT1", 8);
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(sizeof(T)));
        uint64_t count = 0;
        for (const auto& [name, p] : params)
            if (state.count(name)) ++count;
        detail::write_pod<uint64_t>(os, count);
        for (const auto& [name, p] : params) {
            auto it = state.find(name);
            if (it == state.end()) continue;
            detail::write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            detail::write_pod<int64_t>(os, it->second.t);
            detail::write_pod<uint64_t>(os, static_cast<uint64_t>(it->second.m.size()));
            os.write(reinterpret_cast<const char*>(it->second.m.data()),
                     static_cast<std::streamsize>(sizeof(T) * it->second.m.size()));
            os.write(reinterpret_cast<const char*>(it->second.v.data()),
                     static_cast<std::streamsize>(sizeof(T) * it->second.v.size()));
        }
        if (!os) throw DataError("failed writing optimizer state to '" + path.string() + "'");
    }

    void load(const std::filesystem::path& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw DataError("cannot open optimizer state '" + path.string() + "'");
        char magic[8];
        is.read(magic, 8);
        if (!is || std::memcmp(magic, "HCGMOPT1", 8) != 0)
            throw DataError("'" + path.string() + "' is not an optimizer state file");
        const auto scalar = detail::read_pod<uint32_t>(is, "scalar width");
        if (scalar != sizeof(T))
            throw DataError("optimizer state scalar width mismatch in '" + path.string() + "'");
        const auto count = detail::read_pod<uint64_t>(is, "entry count");
        state.clear();
        for (uint64_t e = 0; e < count; ++e) {
            const auto nlen = detail::read_pod<uint32_t>(is, "name length");
            std::string name(nlen, '\0');
            is.read(name.data(), nlen);
            State st;
            st.t = detail::read_pod<int64_t>(is, "step of " + name);
            const auto sz = detail::read_pod<uint64_t>(is, "moment size of " + name);
            st.m.resize(sz);
            st.v.resize(sz);
            is.read(reinterpret_cast<char*>(st.m.data()),
                    static_cast<std::streamsize>(sizeof(T) * sz));
            is.read(reinterpret_cast<char*>(st.v.data()),
                    static_cast<std::streamsize>(sizeof(T) * sz));
            if (!is) throw DataError("truncated optimizer state '" + path.string() + "'");
            state.emplace(std::move(name), std::move(st));
        }
    }
};

}  // namespace hcgm
