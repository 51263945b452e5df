#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "hcgm/viz.hpp"

using hcgm::BinaryMap;

namespace {

BinaryMap map_of(int64_t h, int64_t w, std::vector<uint8_t> v) {
    return BinaryMap{h, w, std::move(v)};
}

}  // namespace

TEST_CASE("error map solid cases", "[viz]") {
    auto ones = map_of(2, 2, {1, 1, 1, 1});
    auto zeros = map_of(2, 2, {0, 0, 0, 0});

    auto tp = hcgm::render_error_map(ones, ones);
    for (int64_t i = 0; i < 4; ++i) {
        REQUIRE(tp.pix[i * 3 + 0] == 255);
        REQUIRE(tp.pix[i * 3 + 1] == 255);
        REQUIRE(tp.pix[i * 3 + 2] == 255);
    }
    auto fp = hcgm::render_error_map(ones, zeros);
    for (int64_t i = 0; i < 4; ++i) {
        REQUIRE(fp.pix[i * 3 + 0] == 255);
        REQUIRE(fp.pix[i * 3 + 1] == 0);
        REQUIRE(fp.pix[i * 3 + 2] == 0);
    }
    auto tn = hcgm::render_error_map(zeros, zeros);
    for (int64_t i = 0; i < 4; ++i) REQUIRE(tn.pix[i * 3] + tn.pix[i * 3 + 1] + tn.pix[i * 3 + 2] == 0);
    auto fn = hcgm::render_error_map(zeros, ones);
    for (int64_t i = 0; i < 4; ++i) {
        REQUIRE(fn.pix[i * 3 + 0] == 0);
        REQUIRE(fn.pix[i * 3 + 1] == 0);
        REQUIRE(fn.pix[i * 3 + 2] == 255);
    }
}

TEST_CASE("mixed 4x4 error map matches the per-pixel oracle", "[viz]") {
    std::mt19937_64 rng(41);
    BinaryMap pred = map_of(4, 4, {}), label = map_of(4, 4, {});
    pred.v.resize(16);
    label.v.resize(16);
    for (size_t i = 0; i < 16; ++i) {
        pred.v[i] = rng() & 1;
        label.v[i] = rng() & 1;
    }
    auto em = hcgm::render_error_map(pred, label);
    for (size_t i = 0; i < 16; ++i) {
        // brute-force classification
        uint8_t er, eg, eb;
        if (pred.v[i] && label.v[i]) er = eg = eb = 255;
        else if (pred.v[i] && !label.v[i]) er = 255, eg = eb = 0;
        else if (!pred.v[i] && !label.v[i]) er = eg = eb = 0;
        else er = eg = 0, eb = 255;
        REQUIRE(em.pix[i * 3 + 0] == er);
        REQUIRE(em.pix[i * 3 + 1] == eg);
        REQUIRE(em.pix[i * 3 + 2] == eb);
    }
}

TEST_CASE("error-map histogram equals the confusion matrix", "[viz]") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t h = 8, w = 8;
        BinaryMap pred = map_of(h, w, {}), label = map_of(h, w, {});
        pred.v.resize(static_cast<size_t>(h * w));
        label.v.resize(static_cast<size_t>(h * w));
        for (size_t i = 0; i < pred.v.size(); ++i) {
            pred.v[i] = rng() & 1;
            label.v[i] = rng() & 1;
        }
        auto cm = hcgm::accumulate(pred.v, label.v);
        auto hist = hcgm::error_map_histogram(hcgm::render_error_map(pred, label));
        REQUIRE(hist.tp == cm.tp);
        REQUIRE(hist.fp == cm.fp);
        REQUIRE(hist.tn == cm.tn);
        REQUIRE(hist.fn == cm.fn);
    }
}

TEST_CASE("error map rejects shape mismatches and foreign colors", "[viz]") {
    REQUIRE_THROWS_AS(hcgm::render_error_map(map_of(2, 2, {0, 0, 0, 0}), map_of(2, 3, {0, 0, 0, 0, 0, 0})),
                      hcgm::ShapeError);
    hcgm::ImageU8 bad(1, 1, 3);
    bad.pix = {12, 200, 3};
    REQUIRE_THROWS_AS(hcgm::error_map_histogram(bad), hcgm::DataError);
}

TEST_CASE("error map survives a png round trip losslessly", "[viz]") {
    namespace fs = std::filesystem;
    std::mt19937_64 rng(43);
    BinaryMap pred = map_of(16, 16, {}), label = map_of(16, 16, {});
    pred.v.resize(256);
    label.v.resize(256);
    for (size_t i = 0; i < 256; ++i) {
        pred.v[i] = rng() & 1;
        label.v[i] = rng() & 1;
    }
    auto em = hcgm::render_error_map(pred, label);
    const fs::path tmp = fs::temp_directory_path() / "hcgm_error_map_test.png";
    hcgm::write_png(tmp, em);
    auto back = hcgm::read_png(tmp, 3);
    REQUIRE(back.pix == em.pix);
    fs::remove(tmp);
}
