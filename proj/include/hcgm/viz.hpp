#pragma once

#include "hcgm/decoder.hpp"
#include "hcgm/image.hpp"
#include "hcgm/metrics.hpp"

namespace hcgm {

// Agreement-class color coding: TP white, FP red, TN black, FN blue.
inline constexpr std::array<std::array<uint8_t, 3>, 4> kErrorMapColors = {{
    {255, 255, 255},  // TP
    {255, 0, 0},      // FP
    {0, 0, 0},        // TN
    {0, 0, 255},      // FN
}};

inline ImageU8 render_error_map(const BinaryMap& pred, const BinaryMap& label) {
    if (pred.h != label.h || pred.w != label.w)
        throw ShapeError("render_error_map: prediction " + std::to_string(pred.h) + "x" +
                         std::to_string(pred.w) + " vs label " + std::to_string(label.h) + "x" +
                         std::to_string(label.w));
    ImageU8 out(pred.h, pred.w, 3);
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const bool p = pred.v[i] != 0;
        const bool l = label.v[i] != 0;
        const auto& c = p && l    ? kErrorMapColors[0]
                        : p && !l ? kErrorMapColors[1]
                        : !p && !l ? kErrorMapColors[2]
                                   : kErrorMapColors[3];
        out.pix[i * 3 + 0] = c[0];
        out.pix[i * 3 + 1] = c[1];
        out.pix[i * 3 + 2] = c[2];
    }
    return out;
}

// Maps an error map's colors back to agreement counts. Any pixel outside the
// four-color palette is a data error.
inline ConfusionMatrix error_map_histogram(const ImageU8& em) {
    if (em.c != 3) throw DataError("error_map_histogram: expected an RGB image");
    ConfusionMatrix cm;
    for (int64_t i = 0; i < em.h * em.w; ++i) {
        const uint8_t r = em.pix[static_cast<size_t>(i * 3)];
        const uint8_t g = em.pix[static_cast<size_t>(i * 3 + 1)];
        const uint8_t b = em.pix[static_cast<size_t>(i * 3 + 2)];
        if (r == 255 && g == 255 && b == 255) ++cm.tp;
        else if (r == 255 && g == 0 && b == 0) ++cm.fp;
        else if (r == 0 && g == 0 && b == 0) ++cm.tn;
        else if (r == 0 && g == 0 && b == 255) ++cm.fn;
        else
            throw DataError("error_map_histogram: pixel " + std::to_string(i) +
                            " has a color outside the TP/FP/TN/FN palette");
    }
    return cm;
}

}  // namespace hcgm
