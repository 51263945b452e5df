#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <filesystem>

#include "hcgm/backbone.hpp"
#include "support/gradcheck.hpp"

using hcgm::Rng;
using hcgm::Shape;
using hcgm::Tensor;
using hcgm::VggBackbone;

namespace {

// Independent shape-tracing oracle: walks the canonical 13-conv VGG-16-BN
// feature list ("conv k3 p1 / bn / relu" with a pool before blocks 2..5) and
// records the (channels, h, w) at each block boundary.
struct TracedShape {
    int64_t c, h, w;
};

std::array<TracedShape, 5> trace_shapes(int64_t h, int64_t w, int width_div) {
    const int64_t base[5] = {64, 128, 256, 512, 512};
    std::array<TracedShape, 5> out{};
    for (int b = 0; b < 5; ++b) {
        if (b > 0) {
            h /= 2;  // the max pool is the only spatial change; convs are "same"
            w /= 2;
        }
        out[b] = {base[b] / width_div, h, w};
    }
    return out;
}

// Independent parameter-count oracle over the canonical conv list:
// k*k*Cin*Cout + Cout per conv plus 2*C per BN.
int64_t count_trunk_params() {
    const std::array<std::pair<int64_t, int64_t>, 13> convs = {{{3, 64},
                                                                {64, 64},
                                                                {64, 128},
                                                                {128, 128},
                                                                {128, 256},
                                                                {256, 256},
                                                                {256, 256},
                                                                {256, 512},
                                                                {512, 512},
                                                                {512, 512},
                                                                {512, 512},
                                                                {512, 512},
                                                                {512, 512}}};
    int64_t total = 0;
    for (auto [cin, cout] : convs) total += 9 * cin * cout + cout + 2 * cout;
    return total;
}

}  // namespace

TEST_CASE("pyramid shapes match the layer-list oracle", "[backbone]") {
    Rng rng(50);
    VggBackbone<float> bb(8, rng);  // reduced width keeps this fast

    for (auto [h, w] : {std::pair<int64_t, int64_t>{64, 64}, {32, 48}, {16, 16}}) {
        Tensor<float> img(Shape{1, 3, h, w}, 0.1f);
        auto fp = bb.extract(img);
        auto traced = trace_shapes(h, w, 8);
        for (int b = 0; b < 5; ++b) {
            REQUIRE(fp.levels[b].dim(1) == traced[b].c);
            REQUIRE(fp.levels[b].dim(2) == traced[b].h);
            REQUIRE(fp.levels[b].dim(3) == traced[b].w);
        }
    }

    SECTION("full-width channel schedule") {
        Rng rng2(51);
        VggBackbone<float> full(1, rng2);
        Tensor<float> img(Shape{1, 3, 16, 16}, 0.1f);
        auto fp = full.extract(img);
        const int64_t expect_c[5] = {64, 128, 256, 512, 512};
        const int64_t expect_s[5] = {16, 8, 4, 2, 1};
        for (int b = 0; b < 5; ++b) {
            REQUIRE(fp.levels[b].dim(1) == expect_c[b]);
            REQUIRE(fp.levels[b].dim(2) == expect_s[b]);
            REQUIRE(fp.levels[b].dim(3) == expect_s[b]);
        }
        // deepest level of a 16x16 input is a single spatial cell
        REQUIRE(fp.levels[4].shape() == Shape{1, 512, 1, 1});
    }
}

TEST_CASE("stride halves exactly between consecutive levels", "[backbone]") {
    Rng rng(52);
    VggBackbone<float> bb(8, rng);
    Tensor<float> img(Shape{1, 3, 64, 32}, 0.2f);
    auto fp = bb.extract(img);
    for (int b = 1; b < 5; ++b) {
        REQUIRE(fp.levels[b].dim(2) * 2 == fp.levels[b - 1].dim(2));
        REQUIRE(fp.levels[b].dim(3) * 2 == fp.levels[b - 1].dim(3));
    }
}

TEST_CASE("indivisible input sizes are rejected", "[backbone]") {
    Rng rng(53);
    VggBackbone<float> bb(8, rng);
    REQUIRE_THROWS_MATCHES(bb.extract(Tensor<float>(Shape{1, 3, 100, 96})), hcgm::ShapeError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("divisible by 16")));
    REQUIRE_THROWS_AS(bb.extract(Tensor<float>(Shape{1, 4, 32, 32})), hcgm::ShapeError);
}

TEST_CASE("trunk parameter count equals the counting oracle", "[backbone]") {
    Rng rng(54);
    VggBackbone<float> bb(1, rng);
    hcgm::ParamRegistry<float> reg;
    bb.reg(reg);
    REQUIRE(count_trunk_params() == 14723136);
    REQUIRE(reg.param_count() == count_trunk_params());
    // 13 convs and 13 BNs: 2 tensors per conv, 2 trainable per BN
    REQUIRE(reg.params.size() == 13 * 4);
    REQUIRE(reg.buffers.size() == 13 * 2);
}

TEST_CASE("seeded construction is deterministic", "[backbone]") {
    Rng a(55), b(55), c(56);
    VggBackbone<float> bb1(8, a), bb2(8, b), bb3(8, c);
    REQUIRE(bb1.convs[0][0].weight.vec() == bb2.convs[0][0].weight.vec());
    REQUIRE(bb1.convs[4][2].weight.vec() == bb2.convs[4][2].weight.vec());
    REQUIRE(bb1.convs[0][0].weight.vec() != bb3.convs[0][0].weight.vec());
}

TEST_CASE("siamese weight sharing", "[backbone]") {
    Rng rng(57);
    VggBackbone<float> bb(8, rng);
    bb.set_training(false);
    Tensor<float> img(Shape{1, 3, 32, 32});
    for (int64_t i = 0; i < img.numel(); ++i)
        img.set(i, 0.01f * static_cast<float>((i * 13) % 255));

    hcgm::NoGradGuard ng;
    auto fa = bb.extract(img);
    auto fb = bb.extract(img.clone());
    for (int b = 0; b < 5; ++b) REQUIRE(fa.levels[b].vec() == fb.levels[b].vec());

    // mutating one shared weight shifts both streams identically
    bb.convs[0][0].weight.set(0, bb.convs[0][0].weight.at(0) + 0.25f);
    auto fa2 = bb.extract(img);
    auto fb2 = bb.extract(img.clone());
    REQUIRE(fa2.levels[4].vec() == fb2.levels[4].vec());
    REQUIRE(fa2.levels[0].vec() != fa.levels[0].vec());
}

TEST_CASE("inference mode is a pure function of the input", "[backbone]") {
    Rng rng(58);
    VggBackbone<float> bb(8, rng);
    bb.set_training(false);
    Tensor<float> img(Shape{1, 3, 32, 32}, 0.3f);
    hcgm::NoGradGuard ng;
    auto rm_before = bb.bns[0][0].running_mean.vec();
    auto f1 = bb.extract(img);
    auto f2 = bb.extract(img);
    REQUIRE(f1.levels[4].vec() == f2.levels[4].vec());
    REQUIRE(bb.bns[0][0].running_mean.vec() == rm_before);

    // training mode updates the running statistics
    bb.set_training(true);
    (void)bb.extract(img);
    REQUIRE(bb.bns[0][0].running_mean.vec() != rm_before);
}

TEST_CASE("pretrained loading errors are explicit", "[backbone]") {
    hcgm::BackboneConfig cfg;
    cfg.pretrained = true;
    cfg.weights_path = "/nonexistent/vgg16_bn_features.bin";
    Rng rng(59);
    REQUIRE_THROWS_MATCHES(hcgm::build_backbone<float>(cfg, 1, rng), hcgm::DataError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("/nonexistent/vgg16_bn_features.bin")));
    Rng rng2(60);
    REQUIRE_THROWS_AS(hcgm::build_backbone<float>(cfg, 8, rng2), hcgm::ConfigError);
}

TEST_CASE("pretrained weights round-trip through the payload format", "[backbone]") {
    namespace fs = std::filesystem;
    Rng rng(61);
    VggBackbone<float> src(8, rng);
    src.convs[2][1].weight.set(3, 0.12345f);
    hcgm::ParamRegistry<float> sreg;
    src.reg(sreg);
    std::vector<std::pair<std::string, Tensor<float>>> entries;
    for (auto& p : sreg.params) entries.push_back(p);
    for (auto& b : sreg.buffers) entries.push_back(b);
    const fs::path tmp = fs::temp_directory_path() / "hcgm_test_weights.bin";
    hcgm::save_payload(tmp, entries);

    hcgm::BackboneConfig cfg;
    cfg.pretrained = true;
    cfg.weights_path = tmp.string();
    // width_div 8 payload loads only into a width_div 8 trunk; the guard
    // rejects pretrained at reduced width, so exercise apply_payload directly.
    Rng rng2(62);
    VggBackbone<float> dst(8, rng2);
    hcgm::ParamRegistry<float> dreg;
    dst.reg(dreg);
    hcgm::apply_payload(dreg, hcgm::load_payload<float>(tmp), "test weights");
    REQUIRE(dst.convs[2][1].weight.at(3) == 0.12345f);
    fs::remove(tmp);
}
