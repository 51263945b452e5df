#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hcgm/core/ops.hpp"

namespace hcgm {

// Deterministic RNG for parameter init and data shuffling.
struct Rng {
    std::mt19937_64 gen;
    explicit Rng(uint64_t seed) : gen(seed) {}
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen); }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen); }
    int64_t integer(int64_t lo, int64_t hi) {  // inclusive bounds
        return std::uniform_int_distribution<int64_t>(lo, hi)(gen);
    }
};

// He init, fan-out mode (matches the usual conv+BN+ReLU recipe).
template <typename T>
void kaiming_normal_fan_out(Tensor<T>& w, Rng& rng) {
    const int64_t co = w.dim(0);
    const int64_t k = w.dim(2);
    const double stddev = std::sqrt(2.0 / static_cast<double>(k * k * co));
    T* p = w.data();
    const int64_t n = w.numel();
    for (int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(rng.normal() * stddev);
}

// Ordered name -> tensor views over a network's state. Handles share storage
// with the layers, so writes through the registry mutate the model.
template <typename T>
struct ParamRegistry {
    std::vector<std::pair<std::string, Tensor<T>>> params;   // trainable
    std::vector<std::pair<std::string, Tensor<T>>> buffers;  // running stats etc.

    void add_param(const std::string& name, const Tensor<T>& t) { params.emplace_back(name, t); }
    void add_buffer(const std::string& name, const Tensor<T>& t) { buffers.emplace_back(name, t); }

    Tensor<T>* find(const std::string& name) {
        for (auto& [n, t] : params)
            if (n == name) return &t;
        for (auto& [n, t] : buffers)
            if (n == name) return &t;
        return nullptr;
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& [name, t] : params) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : params) t.zero_grad();
    }
};

template <typename T>
struct Conv2d {
    Tensor<T> weight;  // (Co, Ci, k, k)
    Tensor<T> bias;    // (Co) or undefined
    int pad = 0;

    Conv2d() = default;
    Conv2d(int64_t cin, int64_t cout, int k, int pad, bool with_bias, Rng& rng) : pad(pad) {
        weight = Tensor<T>(Shape{cout, cin, k, k});
        kaiming_normal_fan_out(weight, rng);
        weight.set_requires_grad(true);
        if (with_bias) {
            bias = Tensor<T>(Shape{cout});
            bias.set_requires_grad(true);
        }
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, pad); }

    void reg(const std::string& prefix, ParamRegistry<T>& r) const {
        r.add_param(prefix + ".weight", weight);
        if (bias.defined()) r.add_param(prefix + ".bias", bias);
    }
};

template <typename T>
struct BatchNorm2d {
    Tensor<T> gamma, beta, running_mean, running_var;
    bool training = true;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int64_t c) {
        gamma = Tensor<T>(Shape{c}, T(1));
        beta = Tensor<T>(Shape{c}, T(0));
        running_mean = Tensor<T>(Shape{c}, T(0));
        running_var = Tensor<T>(Shape{c}, T(1));
        gamma.set_requires_grad(true);
        beta.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        return batch_norm2d(x, gamma, beta, running_mean, running_var, training);
    }

    void reg(const std::string& prefix, ParamRegistry<T>& r) const {
        r.add_param(prefix + ".weight", gamma);
        r.add_param(prefix + ".bias", beta);
        r.add_buffer(prefix + ".running_mean", running_mean);
        r.add_buffer(prefix + ".running_var", running_var);
    }
};

// conv(kxk) -> BN -> ReLU
template <typename T>
struct ConvBlock {
    Conv2d<T> conv;
    BatchNorm2d<T> bn;

    ConvBlock() = default;
    ConvBlock(int64_t cin, int64_t cout, int k, int pad, Rng& rng)
        : conv(cin, cout, k, pad, /*with_bias=*/true, rng), bn(cout) {}

    Tensor<T> forward(const Tensor<T>& x) { return relu(bn.forward(conv.forward(x))); }

    void reg(const std::string& prefix, ParamRegistry<T>& r) const {
        conv.reg(prefix + ".conv", r);
        bn.reg(prefix + ".bn", r);
    }

    void set_training(bool t) { bn.training = t; }
};

}  // namespace hcgm
