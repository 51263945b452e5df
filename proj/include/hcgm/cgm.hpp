#pragma once

#include "hcgm/fusion.hpp"

namespace hcgm {

// Change Guide Module: the guide map is fused into the features
// (concat + conv-BN-ReLU), channel-compressed self-attention refines the
// result, and a residual connection preserves the input path.
template <typename T>
struct ChangeGuideModule {
    ConvBlock<T> fuse;            // (C+1) -> C
    Conv2d<T> q, k, v, o;         // 1x1 projections, no bias
    int64_t channels = 0;
    int compress = 8;

    ChangeGuideModule() = default;

    ChangeGuideModule(int64_t c, int compress_, Rng& rng)
        : channels(c), compress(compress_) {
        if (compress_ < 1 || c % compress_ != 0)
            throw ConfigError("attention channels (" + std::to_string(c) +
                              ") must be divisible by the compression ratio " +
                              std::to_string(compress_));
        fuse = ConvBlock<T>(c + 1, c, 3, 1, rng);
        const int64_t d = c / compress_;
        q = Conv2d<T>(c, d, 1, 0, /*with_bias=*/false, rng);
        k = Conv2d<T>(c, d, 1, 0, /*with_bias=*/false, rng);
        v = Conv2d<T>(c, d, 1, 0, /*with_bias=*/false, rng);
        o = Conv2d<T>(d, c, 1, 0, /*with_bias=*/false, rng);
    }

    int64_t head_dim() const { return channels / compress; }

    Tensor<T> guide_fuse(const Tensor<T>& x, const Tensor<T>& g) {
        check_shape(x.ndim() == 4 && g.ndim() == 4 && g.dim(1) == 1 && g.dim(0) == x.dim(0) &&
                        g.dim(2) == x.dim(2) && g.dim(3) == x.dim(3),
                    "guide_fuse: guide " + shape_str(g.shape()) + " does not match features " +
                        shape_str(x.shape()));
        return fuse.forward(concat_channels<T>({x, g}));
    }

    Tensor<T> attention(const Tensor<T>& xp) {
        return o.forward(attention_tokens(q.forward(xp), k.forward(xp), v.forward(xp)));
    }

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& g) {
        return add(x, attention(guide_fuse(x, g)));
    }

    void reg(const std::string& prefix, ParamRegistry<T>& r) const {
        fuse.reg(prefix + ".fuse", r);
        q.reg(prefix + ".q", r);
        k.reg(prefix + ".k", r);
        v.reg(prefix + ".v", r);
        o.reg(prefix + ".o", r);
    }

    void set_training(bool t) { fuse.set_training(t); }
};

}  // namespace hcgm
