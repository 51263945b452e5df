#pragma once

#include "hcgm/fusion.hpp"

namespace hcgm {

// Binary cross-entropy on logits, mean over every pixel in the batch.
// Evaluated as max(z,0) - z*y + log(1+exp(-|z|)) so large logits cannot
// overflow.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& target) {
    check_shape(logits.shape() == target.shape(),
                "bce_loss: shape mismatch " + shape_str(logits.shape()) + " vs " +
                    shape_str(target.shape()));
    const int64_t n = logits.numel();
    check_shape(n >= 1, "bce_loss: empty input");
    const T* z = logits.data();
    const T* y = target.data();
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) {
        const T zi = z[i];
        acc += std::max(zi, T(0)) - zi * y[i] + std::log1p(std::exp(-std::fabs(zi)));
    }
    Tensor<T> out(Shape{1});
    out.set(0, acc / static_cast<T>(n));
    detail::wire<T>(out, {logits.node()}, [zn = logits.node(), yn = target.node()](auto& self) {
        if (!zn->requires_grad) return;
        auto& g = zn->ensure_grad();
        const T go = self.grad[0] / static_cast<T>(zn->value.size());
        for (size_t i = 0; i < g.size(); ++i) {
            const T s = T(1) / (T(1) + std::exp(-zn->value[i]));
            g[i] += go * (s - yn->value[i]);
        }
    });
    return out;
}

// Dice loss over probabilities: 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps).
// N spans the whole batch (pixels per image times batch size). eps appears in
// both numerator and denominator so an all-negative tile predicted all
// negative costs zero.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& target, T eps = T(1)) {
    check_shape(probs.shape() == target.shape(),
                "dice_loss: shape mismatch " + shape_str(probs.shape()) + " vs " +
                    shape_str(target.shape()));
    const int64_t n = probs.numel();
    check_shape(n >= 1, "dice_loss: empty input");
    const T* p = probs.data();
    const T* y = target.data();
    T inter = T(0), psum = T(0), ysum = T(0);
    for (int64_t i = 0; i < n; ++i) {
        inter += p[i] * y[i];
        psum += p[i];
        ysum += y[i];
    }
    const T num = T(2) * inter + eps;
    const T den = psum + ysum + eps;
    Tensor<T> out(Shape{1});
    out.set(0, T(1) - num / den);
    detail::wire<T>(out, {probs.node()},
                    [pn = probs.node(), yn = target.node(), num, den](auto& self) {
                        if (!pn->requires_grad) return;
                        auto& g = pn->ensure_grad();
                        const T go = self.grad[0];
                        const T den2 = den * den;
                        for (size_t i = 0; i < g.size(); ++i)
                            g[i] += go * (num - T(2) * yn->value[i] * den) / den2;
                    });
    return out;
}

// Per-component values of the combined objective for one forward pass.
template <typename T>
struct LossBreakdown {
    Tensor<T> total;  // graph scalar, backward() runs from here
    double ce_coarse = 0, dice_coarse = 0, ce_final = 0, dice_final = 0, total_value = 0;
};

// total = bce(coarse) + dice(coarse) + bce(final) + dice(final), unit weights.
template <typename T>
LossBreakdown<T> total_loss(const ChangeMap<T>& coarse, const ChangeMap<T>& final_map,
                            const Tensor<T>& target, T dice_eps = T(1)) {
    check_shape(coarse.stride == 1 && final_map.stride == 1,
                "total_loss: both change maps must be at stride 1");
    check_shape(coarse.logits.shape() == target.shape() &&
                    final_map.logits.shape() == target.shape(),
                "total_loss: change maps and target must share shape");
    LossBreakdown<T> lb;
    Tensor<T> ce_c = bce_loss(coarse.logits, target);
    Tensor<T> di_c = dice_loss(sigmoid(coarse.logits), target, dice_eps);
    Tensor<T> ce_f = bce_loss(final_map.logits, target);
    Tensor<T> di_f = dice_loss(sigmoid(final_map.logits), target, dice_eps);
    lb.ce_coarse = static_cast<double>(ce_c.at(0));
    lb.dice_coarse = static_cast<double>(di_c.at(0));
    lb.ce_final = static_cast<double>(ce_f.at(0));
    lb.dice_final = static_cast<double>(di_f.at(0));
    lb.total = add(add(ce_c, di_c), add(ce_f, di_f));
    lb.total_value = static_cast<double>(lb.total.at(0));
    return lb;
}

}  // namespace hcgm
