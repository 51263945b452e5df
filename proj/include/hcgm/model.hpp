#pragma once

#include "hcgm/decoder.hpp"

namespace hcgm {

struct ArchConfig {
    int width_div = 1;      // divides the 64/128/256/512/512 channel schedule
    int cgm_compress = 8;   // Q/K/V channel compression ratio
    uint64_t seed = 42;
    BackboneConfig backbone;

    void validate() const {
        if (width_div < 1 || kBackboneWidths[0] % width_div != 0)
            throw ConfigError("width_div must divide 64");
        for (int i = 2; i < 5; ++i)
            if ((kBackboneWidths[i] / width_div) % cgm_compress != 0)
                throw ConfigError("CGM channels at width_div " + std::to_string(width_div) +
                                  " are not divisible by compression " +
                                  std::to_string(cgm_compress));
    }
};

// The full network: siamese VGG16-BN pyramid, per-level temporal fusion,
// multi-scale aggregation with a coarse head, three guided-attention modules
// on the deepest fused levels, and a top-down decoder.
template <typename T>
struct HCGMNet {
    ArchConfig arch;
    VggBackbone<T> backbone;
    TemporalFusion<T> fusion;
    MultiScaleAggregate<T> aggregate;
    ChangeGuideModule<T> cgm3, cgm4, cgm5;
    DecoderHead<T> decoder;

    explicit HCGMNet(const ArchConfig& cfg) : arch(cfg) {
        arch.validate();
        Rng rng(arch.seed);
        backbone = build_backbone<T>(arch.backbone, arch.width_div, rng);
        fusion = TemporalFusion<T>(backbone.widths, rng);
        aggregate = MultiScaleAggregate<T>(backbone.widths, rng);
        cgm3 = ChangeGuideModule<T>(backbone.widths[2], arch.cgm_compress, rng);
        cgm4 = ChangeGuideModule<T>(backbone.widths[3], arch.cgm_compress, rng);
        cgm5 = ChangeGuideModule<T>(backbone.widths[4], arch.cgm_compress, rng);
        decoder = DecoderHead<T>(backbone.widths, rng);
    }

    struct Output {
        ChangeMap<T> coarse;     // stride 1, supervised
        ChangeMap<T> final_map;  // stride 1, supervised
    };

    Output forward(const Tensor<T>& image_a, const Tensor<T>& image_b) {
        check_shape(image_a.shape() == image_b.shape(),
                    "forward: temporal images must share shape, got " +
                        shape_str(image_a.shape()) + " vs " + shape_str(image_b.shape()));
        FeaturePyramid<T> fa = backbone.extract(image_a);
        FeaturePyramid<T> fb = backbone.extract(image_b);
        FusedPyramid<T> fp = fusion.fuse(fa, fb);
        auto ag = aggregate.forward(fp);
        Tensor<T> g3 = make_guide(ag.coarse_s2_logits, 4);
        Tensor<T> g4 = make_guide(ag.coarse_s2_logits, 8);
        Tensor<T> g5 = make_guide(ag.coarse_s2_logits, 16);
        Tensor<T> y3 = cgm3.forward(fp.fused[1], g3);
        Tensor<T> y4 = cgm4.forward(fp.fused[2], g4);
        Tensor<T> y5 = cgm5.forward(fp.fused[3], g5);
        Output out;
        out.final_map = decoder.decode(y3, y4, y5, fp.fused[0]);
        out.coarse = ag.coarse;
        return out;
    }

    ParamRegistry<T> registry() const {
        ParamRegistry<T> r;
        backbone.reg(r);
        fusion.reg(r);
        aggregate.reg(r);
        cgm3.reg("cgm3", r);
        cgm4.reg("cgm4", r);
        cgm5.reg("cgm5", r);
        decoder.reg(r);
        return r;
    }

    void set_training(bool t) {
        backbone.set_training(t);
        fusion.set_training(t);
        aggregate.set_training(t);
        cgm3.set_training(t);
        cgm4.set_training(t);
        cgm5.set_training(t);
        decoder.set_training(t);
    }
};

}  // namespace hcgm
