#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hcgm/fusion.hpp"
#include "support/gradcheck.hpp"

using hcgm::Rng;
using hcgm::Shape;
using hcgm::Tensor;
using testsupport::fill_pattern;

namespace {

hcgm::FeaturePyramid<float> pyramid_for(hcgm::VggBackbone<float>& bb, int64_t h, int64_t w,
                                        float seed_phase = 0.0f) {
    Tensor<float> img(Shape{2, 3, h, w});
    for (int64_t i = 0; i < img.numel(); ++i)
        img.set(i, 0.02f * static_cast<float>((i * 31 + int64_t(seed_phase * 100)) % 97) - 0.5f);
    return bb.extract(img);
}

}  // namespace

TEST_CASE("temporal fusion obeys the channel/stride schedule", "[fusion]") {
    Rng rng(70);
    hcgm::VggBackbone<float> bb(8, rng);
    hcgm::TemporalFusion<float> fusion(bb.widths, rng);
    bb.set_training(false);
    fusion.set_training(false);
    hcgm::NoGradGuard ng;

    auto fa = pyramid_for(bb, 64, 64);
    auto fb = pyramid_for(bb, 64, 64, 1.0f);
    auto fp = fusion.fuse(fa, fb);

    const int64_t expect_c[4] = {128 / 8, 256 / 8, 512 / 8, 512 / 8};
    const int64_t expect_hw[4] = {32, 16, 8, 4};
    for (int i = 0; i < 4; ++i) {
        REQUIRE(fp.fused[i].dim(0) == 2);  // batch carried through
        REQUIRE(fp.fused[i].dim(1) == expect_c[i]);
        REQUIRE(fp.fused[i].dim(2) == expect_hw[i]);
        REQUIRE(fp.fused[i].dim(3) == expect_hw[i]);
    }

    SECTION("level-5 fusion concatenates to 2C then reduces back to C") {
        REQUIRE(fusion.levels[3].conv.weight.dim(1) == 2 * bb.widths[4]);
        REQUIRE(fusion.levels[3].conv.weight.dim(0) == bb.widths[4]);
    }

    SECTION("identical pyramids fuse deterministically") {
        auto f1 = fusion.fuse(fa, fa);
        auto f2 = fusion.fuse(fa, fa);
        for (int i = 0; i < 4; ++i) REQUIRE(f1.fused[i].vec() == f2.fused[i].vec());
    }

    SECTION("mismatched pyramids are rejected") {
        auto small = pyramid_for(bb, 32, 32);
        REQUIRE_THROWS_AS(fusion.fuse(fa, small), hcgm::ShapeError);
    }
}

TEST_CASE("aggregate concatenation bookkeeping", "[fusion]") {
    Rng rng(71);
    // full width: 128+256+512+512 = 1408 input channels, 512 out
    hcgm::MultiScaleAggregate<float> agg(hcgm::kBackboneWidths, rng);
    REQUIRE(agg.agg.conv.weight.dim(1) == 1408);
    REQUIRE(agg.agg.conv.weight.dim(0) == 512);
    REQUIRE(agg.coarse_head.weight.dim(0) == 1);
    REQUIRE(agg.coarse_head.weight.dim(2) == 1);
}

TEST_CASE("aggregate output shapes and the zero-head coarse map", "[fusion]") {
    Rng rng(72);
    hcgm::VggBackbone<float> bb(8, rng);
    hcgm::TemporalFusion<float> fusion(bb.widths, rng);
    hcgm::MultiScaleAggregate<float> agg(bb.widths, rng);
    bb.set_training(false);
    fusion.set_training(false);
    agg.set_training(false);
    hcgm::NoGradGuard ng;

    auto fa = pyramid_for(bb, 64, 48);
    auto fb = pyramid_for(bb, 64, 48, 2.0f);
    auto fp = fusion.fuse(fa, fb);
    auto out = agg.forward(fp);

    REQUIRE(out.aggregate.shape() == Shape{2, 512 / 8, 32, 24});
    REQUIRE(out.coarse_s2_logits.shape() == Shape{2, 1, 32, 24});
    REQUIRE(out.coarse.logits.shape() == Shape{2, 1, 64, 48});
    REQUIRE(out.coarse.stride == 1);

    SECTION("zero weights and bias give probability one half everywhere") {
        agg.coarse_head.weight.fill(0.0f);
        agg.coarse_head.bias.fill(0.0f);
        auto out2 = agg.forward(fp);
        for (int64_t i = 0; i < out2.coarse.logits.numel(); ++i) {
            REQUIRE(out2.coarse.logits.at(i) == 0.0f);
            REQUIRE(1.0f / (1.0f + std::exp(-out2.coarse.logits.at(i))) == 0.5f);
        }
    }
}

TEST_CASE("upsampling a constant map is that constant", "[fusion]") {
    Tensor<float> c(Shape{1, 7, 5, 5}, 1.234f);
    auto up = hcgm::resize_bilinear(c, 10, 10);
    for (int64_t i = 0; i < up.numel(); ++i) REQUIRE(up.at(i) == Catch::Approx(1.234f));
}

TEST_CASE("make_guide properties", "[fusion]") {
    SECTION("zero logits give 0.5 at every target stride") {
        Tensor<float> logits(Shape{2, 1, 16, 16}, 0.0f);
        for (int s : {4, 8, 16}) {
            auto g = hcgm::make_guide(logits, s);
            REQUIRE(g.dim(2) == 32 / s);
            REQUIRE(g.dim(3) == 32 / s);
            for (int64_t i = 0; i < g.numel(); ++i) REQUIRE(g.at(i) == Catch::Approx(0.5f));
        }
    }
    SECTION("large positive logits stay near one after resampling") {
        Tensor<float> logits(Shape{1, 1, 16, 16}, 25.0f);
        for (int s : {4, 8, 16}) {
            auto g = hcgm::make_guide(logits, s);
            for (int64_t i = 0; i < g.numel(); ++i) {
                REQUIRE(g.at(i) > 0.999f);
                REQUIRE(g.at(i) <= 1.0f);
            }
        }
    }
    SECTION("guides stay strictly inside (0,1) for finite logits") {
        Tensor<float> logits(Shape{1, 1, 8, 8});
        for (int64_t i = 0; i < logits.numel(); ++i)
            logits.set(i, 10.0f * std::sin(0.9f * static_cast<float>(i)));
        auto g = hcgm::make_guide(logits, 4);
        for (int64_t i = 0; i < g.numel(); ++i) {
            REQUIRE(g.at(i) > 0.0f);
            REQUIRE(g.at(i) < 1.0f);
        }
    }
    SECTION("checkerboard downsample equals the local average of sigmoids") {
        // direct evaluation of the resampling kernel on a 4x4 example:
        // scale 2, src = 2*o + 0.5 -> average of the two middle texels of
        // each 2x2 cell row/column pair
        Tensor<double> logits(Shape{1, 1, 4, 4});
        for (int64_t y = 0; y < 4; ++y)
            for (int64_t x = 0; x < 4; ++x) logits.set(y * 4 + x, ((x + y) % 2 == 0) ? 1.7 : -0.9);
        auto g = hcgm::make_guide(logits, 4);  // stride 2 grid -> stride 4: 2x2 output
        REQUIRE(g.shape() == Shape{1, 1, 2, 2});
        auto sg = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
        for (int64_t oy = 0; oy < 2; ++oy)
            for (int64_t ox = 0; ox < 2; ++ox) {
                // kernel weights: src 2*o+0.5 lies midway between texels
                double expect = 0.0;
                for (int64_t dy = 0; dy < 2; ++dy)
                    for (int64_t dx = 0; dx < 2; ++dx)
                        expect += 0.25 * sg(logits.at((2 * oy + dy) * 4 + (2 * ox + dx)));
                REQUIRE(g.at(oy * 2 + ox) == Catch::Approx(expect).margin(1e-12));
            }
    }
    SECTION("invalid strides are rejected") {
        Tensor<float> logits(Shape{1, 1, 16, 16});
        REQUIRE_THROWS_AS(hcgm::make_guide(logits, 3), hcgm::ShapeError);
        REQUIRE_THROWS_AS(hcgm::make_guide(logits, 2), hcgm::ShapeError);
    }
}

TEST_CASE("aggregate output shape depends only on input spatial size", "[fusion]") {
    Rng rng(73);
    hcgm::VggBackbone<float> bb(16, rng);  // narrow for speed
    hcgm::TemporalFusion<float> fusion(bb.widths, rng);
    hcgm::MultiScaleAggregate<float> agg(bb.widths, rng);
    bb.set_training(false);
    fusion.set_training(false);
    agg.set_training(false);
    hcgm::NoGradGuard ng;

    for (int64_t h : {32, 64}) {
        for (int64_t w : {32, 48, 64}) {
            Tensor<float> img(Shape{1, 3, h, w}, 0.25f);
            auto fp = fusion.fuse(bb.extract(img), bb.extract(img));
            auto out = agg.forward(fp);
            REQUIRE(out.aggregate.shape() == Shape{1, 512 / 16, h / 2, w / 2});
            REQUIRE(out.coarse.logits.shape() == Shape{1, 1, h, w});
        }
    }
}
