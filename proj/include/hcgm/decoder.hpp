#pragma once

#include <cstdint>

#include "hcgm/cgm.hpp"

namespace hcgm {

// Top-down merge of the three CGM outputs plus the stride-2 skip, ending in
// full-resolution change logits.
template <typename T>
struct DecoderHead {
    ConvBlock<T> d4;          // (c4 + c5) -> c4 at stride 8
    ConvBlock<T> d3;          // (c3 + c4) -> c3 at stride 4
    ConvBlock<T> head;        // (c2 + c3) -> c2 at stride 2
    Conv2d<T> final_head;     // 1x1 c2 -> 1

    DecoderHead() = default;
    DecoderHead(const std::array<int64_t, 5>& w, Rng& rng)
        : d4(w[3] + w[4], w[3], 3, 1, rng),
          d3(w[2] + w[3], w[2], 3, 1, rng),
          head(w[1] + w[2], w[1], 3, 1, rng),
          final_head(w[1], 1, 1, 0, /*with_bias=*/true, rng) {}

    ChangeMap<T> decode(const Tensor<T>& cgm3, const Tensor<T>& cgm4, const Tensor<T>& cgm5,
                        const Tensor<T>& fused2) {
        const Tensor<T>& d5 = cgm5;
        Tensor<T> t4 = d4.forward(
            concat_channels<T>({cgm4, resize_bilinear(d5, cgm4.dim(2), cgm4.dim(3))}));
        Tensor<T> t3 = d3.forward(
            concat_channels<T>({cgm3, resize_bilinear(t4, cgm3.dim(2), cgm3.dim(3))}));
        Tensor<T> h = head.forward(
            concat_channels<T>({fused2, resize_bilinear(t3, fused2.dim(2), fused2.dim(3))}));
        Tensor<T> s2 = final_head.forward(h);
        return ChangeMap<T>{resize_bilinear(s2, s2.dim(2) * 2, s2.dim(3) * 2), 1};
    }

    void reg(ParamRegistry<T>& r) const {
        d4.reg("decoder.d4", r);
        d3.reg("decoder.d3", r);
        head.reg("decoder.head", r);
        final_head.reg("decoder.final_head", r);
    }

    void set_training(bool t) {
        d4.set_training(t);
        d3.set_training(t);
        head.set_training(t);
    }
};

// Per-sample binary mask.
struct BinaryMap {
    int64_t h = 0, w = 0;
    std::vector<uint8_t> v;  // values in {0,1}
};

// Pixel is changed iff sigmoid(logit) > threshold (strictly: a pixel exactly
// at the threshold stays unchanged).
template <typename T>
std::vector<BinaryMap> predict_binary(const ChangeMap<T>& cm, double threshold = 0.5) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ConfigError("threshold must lie in (0,1), got " + std::to_string(threshold));
    check_shape(cm.logits.ndim() == 4 && cm.logits.dim(1) == 1,
                "predict_binary: logits must be (N,1,H,W)");
    const int64_t N = cm.logits.dim(0), H = cm.logits.dim(2), W = cm.logits.dim(3);
    const T cut = static_cast<T>(std::log(threshold / (1.0 - threshold)));
    std::vector<BinaryMap> maps(static_cast<size_t>(N));
    const T* p = cm.logits.data();
    for (int64_t n = 0; n < N; ++n) {
        BinaryMap& m = maps[static_cast<size_t>(n)];
        m.h = H;
        m.w = W;
        m.v.resize(static_cast<size_t>(H * W));
        const T* src = p + n * H * W;
        for (int64_t i = 0; i < H * W; ++i) m.v[static_cast<size_t>(i)] = src[i] > cut ? 1 : 0;
    }
    return maps;
}

}  // namespace hcgm
