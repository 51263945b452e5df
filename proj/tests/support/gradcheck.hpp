#pragma once

// Central finite-difference gradient checking against the analytic backward
// pass, at double precision. Used across the op and module test suites.

#include <cmath>
#include <functional>
#include <vector>

#include "hcgm/core/tensor.hpp"

namespace testsupport {

struct GradCheckResult {
    double max_rel_err = 0.0;
    int64_t worst_input = -1;
    int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

// `f` rebuilds the graph from the current values of `inputs` and returns the
// scalar loss tensor. Inputs must be leaf tensors with requires_grad set.
inline GradCheckResult gradcheck(const std::function<hcgm::Tensor<double>()>& f,
                                 std::vector<hcgm::Tensor<double>> inputs, double h = 1e-6) {
    for (auto& t : inputs) t.zero_grad();
    hcgm::Tensor<double> loss = f();
    loss.backward();

    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) {
        if (t.has_grad())
            analytic.push_back(t.grad());
        else
            analytic.emplace_back(static_cast<size_t>(t.numel()), 0.0);
    }

    GradCheckResult res;
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        auto& t = inputs[ti];
        for (int64_t i = 0; i < t.numel(); ++i) {
            const double x0 = t.at(i);
            const double step = h * std::max(1.0, std::fabs(x0));
            t.set(i, x0 + step);
            const double fp = f().at(0);
            t.set(i, x0 - step);
            const double fm = f().at(0);
            t.set(i, x0);
            const double fd = (fp - fm) / (2.0 * step);
            const double an = analytic[ti][static_cast<size_t>(i)];
            const double rel =
                std::fabs(an - fd) / std::max({1.0, std::fabs(an), std::fabs(fd)});
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_input = static_cast<int64_t>(ti);
                res.worst_index = i;
                res.analytic = an;
                res.numeric = fd;
            }
        }
    }
    return res;
}

// Deterministic filler helper for toy tensors.
inline void fill_pattern(hcgm::Tensor<double>& t, double scale = 1.0, double phase = 0.0) {
    for (int64_t i = 0; i < t.numel(); ++i)
        t.set(i, scale * std::sin(0.7 * static_cast<double>(i) + phase + 0.3));
}

}  // namespace testsupport
