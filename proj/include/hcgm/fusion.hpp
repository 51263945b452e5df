#pragma once

#include <array>
#include <utility>

#include "hcgm/backbone.hpp"

namespace hcgm {

// Single-channel change logits at a known stride relative to the input.
template <typename T>
struct ChangeMap {
    Tensor<T> logits;  // (N,1,h,w)
    int stride = 1;
};

// Temporal-fused features for pyramid levels 2..5:
// channels (128,256,512,512) / width_div at strides (2,4,8,16).
template <typename T>
struct FusedPyramid {
    std::array<Tensor<T>, 4> fused;  // fused[0] = level 2, ..., fused[3] = level 5
};

// Per-level temporal fusion: concat the two streams, then conv-BN-ReLU back
// to the level's native channel count.
template <typename T>
struct TemporalFusion {
    std::array<ConvBlock<T>, 4> levels;

    TemporalFusion() = default;
    TemporalFusion(const std::array<int64_t, 5>& widths, Rng& rng) {
        for (int i = 0; i < 4; ++i) {
            const int64_t c = widths[i + 1];
            levels[i] = ConvBlock<T>(2 * c, c, 3, 1, rng);
        }
    }

    FusedPyramid<T> fuse(const FeaturePyramid<T>& a, const FeaturePyramid<T>& b) {
        FusedPyramid<T> out;
        for (int i = 0; i < 4; ++i) {
            const Tensor<T>& fa = a.levels[i + 1];
            const Tensor<T>& fb = b.levels[i + 1];
            check_shape(fa.shape() == fb.shape(),
                        "fuse_temporal: pyramid shape mismatch at level " + std::to_string(i + 2) +
                            ": " + shape_str(fa.shape()) + " vs " + shape_str(fb.shape()));
            out.fused[i] = levels[i].forward(concat_channels<T>({fa, fb}));
        }
        return out;
    }

    void reg(ParamRegistry<T>& r) const {
        for (int i = 0; i < 4; ++i) levels[i].reg("fusion.level" + std::to_string(i + 2), r);
    }

    void set_training(bool t) {
        for (auto& l : levels) l.set_training(t);
    }
};

// Multi-scale aggregation: upsample fused levels 3..5 to level 2's grid,
// concatenate all four, refine, and predict the coarse change map.
template <typename T>
struct MultiScaleAggregate {
    ConvBlock<T> agg;       // (c2+c3+c4+c5) -> c5 at stride 2
    Conv2d<T> coarse_head;  // 1x1 -> 1 logit channel

    MultiScaleAggregate() = default;
    MultiScaleAggregate(const std::array<int64_t, 5>& widths, Rng& rng)
        : agg(widths[1] + widths[2] + widths[3] + widths[4], widths[4], 3, 1, rng),
          coarse_head(widths[4], 1, 1, 0, /*with_bias=*/true, rng) {}

    struct Out {
        Tensor<T> aggregate;        // (N,c5,H/2,W/2)
        Tensor<T> coarse_s2_logits; // guide source, pre-upsample
        ChangeMap<T> coarse;        // stride-1 logits for supervision
    };

    Out forward(const FusedPyramid<T>& fp) {
        const int64_t h2 = fp.fused[0].dim(2), w2 = fp.fused[0].dim(3);
        std::vector<Tensor<T>> cat{fp.fused[0]};
        for (int i = 1; i < 4; ++i) cat.push_back(resize_bilinear(fp.fused[i], h2, w2));
        Out out;
        out.aggregate = agg.forward(concat_channels(cat));
        out.coarse_s2_logits = coarse_head.forward(out.aggregate);
        out.coarse = ChangeMap<T>{resize_bilinear(out.coarse_s2_logits, h2 * 2, w2 * 2), 1};
        return out;
    }

    void reg(ParamRegistry<T>& r) const {
        agg.reg("fusion.aggregate", r);
        coarse_head.reg("fusion.coarse_head", r);
    }

    void set_training(bool t) { agg.set_training(t); }
};

// Change guide map at a deeper stride: sigmoid of the stride-2 coarse logits,
// bilinearly resampled down to the target level's grid. Values stay in (0,1).
template <typename T>
Tensor<T> make_guide(const Tensor<T>& coarse_s2_logits, int target_stride) {
    check_shape(target_stride == 4 || target_stride == 8 || target_stride == 16,
                "make_guide: target stride must be 4, 8 or 16");
    check_shape(coarse_s2_logits.ndim() == 4 && coarse_s2_logits.dim(1) == 1,
                "make_guide: logits must be (N,1,h,w)");
    const int64_t div = target_stride / 2;
    const int64_t h = coarse_s2_logits.dim(2), w = coarse_s2_logits.dim(3);
    check_shape(h % div == 0 && w % div == 0,
                "make_guide: stride-2 grid " + shape_str(coarse_s2_logits.shape()) +
                    " does not divide down to stride " + std::to_string(target_stride));
    return resize_bilinear(sigmoid(coarse_s2_logits), h / div, w / div);
}

}  // namespace hcgm
