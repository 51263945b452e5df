#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "hcgm/nn.hpp"
#include "hcgm/serialize.hpp"

namespace hcgm {

struct BackboneConfig {
    bool pretrained = true;
    bool frozen = false;
    std::string weights_path = "vgg16_bn_features.bin";
};

// Five feature maps at strides 1,2,4,8,16 with channels 64,128,256,512,512
// (divided by the width divisor for reduced-width builds).
template <typename T>
struct FeaturePyramid {
    std::array<Tensor<T>, 5> levels;
};

inline constexpr std::array<int64_t, 5> kBackboneWidths = {64, 128, 256, 512, 512};
inline constexpr std::array<int, 5> kBackboneConvCounts = {2, 2, 3, 3, 3};

// VGG-16 trunk with batch norm, sliced into five blocks so that every block
// ends on a ReLU and blocks 2..5 begin with the 2x2 max pool.
template <typename T>
struct VggBackbone {
    std::array<std::vector<Conv2d<T>>, 5> convs;
    std::array<std::vector<BatchNorm2d<T>>, 5> bns;
    std::array<int64_t, 5> widths{};

    VggBackbone() = default;

    VggBackbone(int width_div, Rng& rng) {
        if (width_div < 1 || kBackboneWidths[0] % width_div != 0)
            throw ConfigError("width divisor must divide 64, got " + std::to_string(width_div));
        int64_t cin = 3;
        for (int b = 0; b < 5; ++b) {
            widths[b] = kBackboneWidths[b] / width_div;
            for (int i = 0; i < kBackboneConvCounts[b]; ++i) {
                convs[b].emplace_back(cin, widths[b], 3, 1, /*with_bias=*/true, rng);
                bns[b].emplace_back(widths[b]);
                cin = widths[b];
            }
        }
    }

    Tensor<T> run_block(int b, const Tensor<T>& x) {
        Tensor<T> h = b > 0 ? max_pool2x2(x) : x;
        for (size_t i = 0; i < convs[b].size(); ++i)
            h = relu(bns[b][i].forward(convs[b][i].forward(h)));
        return h;
    }

    FeaturePyramid<T> extract(const Tensor<T>& image) {
        check_shape(image.ndim() == 4 && image.dim(1) == 3,
                    "extract: expected (N,3,H,W) input, got " + shape_str(image.shape()));
        check_shape(image.dim(2) % 16 == 0 && image.dim(3) % 16 == 0,
                    "extract: input spatial size must be divisible by 16, got " +
                        shape_str(image.shape()));
        FeaturePyramid<T> fp;
        Tensor<T> h = image;
        for (int b = 0; b < 5; ++b) {
            h = run_block(b, h);
            fp.levels[b] = h;
        }
        return fp;
    }

    void reg(ParamRegistry<T>& r) const {
        for (int b = 0; b < 5; ++b) {
            const std::string prefix = "backbone.block" + std::to_string(b + 1);
            for (size_t i = 0; i < convs[b].size(); ++i) {
                convs[b][i].reg(prefix + ".conv" + std::to_string(i), r);
                bns[b][i].reg(prefix + ".bn" + std::to_string(i), r);
            }
        }
    }

    void set_training(bool t) {
        for (auto& blk : bns)
            for (auto& bn : blk) bn.training = t;
    }
};

// Builds the trunk; pretrained weights come from a local payload file and a
// missing file is an error rather than a silent random fallback.
template <typename T>
VggBackbone<T> build_backbone(const BackboneConfig& cfg, int width_div, Rng& rng) {
    VggBackbone<T> bb(width_div, rng);
    if (cfg.pretrained) {
        if (width_div != 1)
            throw ConfigError("pretrained backbone weights require full width (width_div=1)");
        if (!std::filesystem::exists(cfg.weights_path))
            throw DataError("pretrained backbone weights not found at '" + cfg.weights_path +
                            "'; export them with tools/export_vgg16_bn.py or set "
                            "pretrained=false");
        ParamRegistry<T> r;
        bb.reg(r);
        apply_payload(r, load_payload<T>(cfg.weights_path), "backbone weights");
    }
    return bb;
}

}  // namespace hcgm
