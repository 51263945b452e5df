#pragma once

// Synthetic change-detection pairs: both temporal images share a smooth
// random background; the "after" image carries inserted rectangles with a
// saturated contrasting color, which is exactly the change mask.

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hcgm/data.hpp"
#include "hcgm/image.hpp"

namespace testsupport {

inline hcgm::ImageU8 smooth_background(int64_t size, std::mt19937_64& rng) {
    const int64_t g = 5;  // coarse control grid, bilinearly interpolated
    std::vector<double> grid(static_cast<size_t>(g * g * 3));
    for (auto& v : grid) v = static_cast<double>(rng() % 256);
    hcgm::ImageU8 im(size, size, 3);
    for (int64_t y = 0; y < size; ++y) {
        const double gy = static_cast<double>(y) * (g - 1) / static_cast<double>(size - 1);
        const int64_t y0 = static_cast<int64_t>(gy), y1 = std::min(y0 + 1, g - 1);
        const double ly = gy - static_cast<double>(y0);
        for (int64_t x = 0; x < size; ++x) {
            const double gx = static_cast<double>(x) * (g - 1) / static_cast<double>(size - 1);
            const int64_t x0 = static_cast<int64_t>(gx), x1 = std::min(x0 + 1, g - 1);
            const double lx = gx - static_cast<double>(x0);
            for (int64_t c = 0; c < 3; ++c) {
                const double top = grid[static_cast<size_t>((y0 * g + x0) * 3 + c)] * (1 - lx) +
                                   grid[static_cast<size_t>((y0 * g + x1) * 3 + c)] * lx;
                const double bot = grid[static_cast<size_t>((y1 * g + x0) * 3 + c)] * (1 - lx) +
                                   grid[static_cast<size_t>((y1 * g + x1) * 3 + c)] * lx;
                im.at(y, x, c) = static_cast<uint8_t>(top * (1 - ly) + bot * ly);
            }
        }
    }
    return im;
}

inline void write_synthetic_dataset(const std::filesystem::path& root, const std::string& split,
                                    int n_pairs, int64_t size, uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(root / split / "A");
    fs::create_directories(root / split / "B");
    fs::create_directories(root / split / "label");
    std::mt19937_64 rng(seed);
    std::vector<std::string> ids;
    for (int p = 0; p < n_pairs; ++p) {
        hcgm::ImageU8 a = smooth_background(size, rng);
        hcgm::ImageU8 b = a;
        hcgm::ImageU8 label(size, size, 1, 0);
        const int nrect = 1 + static_cast<int>(rng() % 3);
        for (int r = 0; r < nrect; ++r) {
            const int64_t max_side = std::max<int64_t>(4, size / 3);
            const int64_t min_side = std::max<int64_t>(3, size / 6);
            const int64_t rh = min_side + static_cast<int64_t>(rng() % static_cast<uint64_t>(
                                                                   max_side - min_side + 1));
            const int64_t rw = min_side + static_cast<int64_t>(rng() % static_cast<uint64_t>(
                                                                   max_side - min_side + 1));
            const int64_t y0 = static_cast<int64_t>(rng() % static_cast<uint64_t>(size - rh));
            const int64_t x0 = static_cast<int64_t>(rng() % static_cast<uint64_t>(size - rw));

            // saturate each channel away from the local mean
            double mean[3] = {0, 0, 0};
            for (int64_t y = y0; y < y0 + rh; ++y)
                for (int64_t x = x0; x < x0 + rw; ++x)
                    for (int64_t c = 0; c < 3; ++c) mean[c] += a.at(y, x, c);
            uint8_t fill[3];
            for (int64_t c = 0; c < 3; ++c)
                fill[c] = mean[c] / static_cast<double>(rh * rw) < 128.0 ? 255 : 0;
            for (int64_t y = y0; y < y0 + rh; ++y)
                for (int64_t x = x0; x < x0 + rw; ++x) {
                    for (int64_t c = 0; c < 3; ++c) b.at(y, x, c) = fill[c];
                    label.at(y, x) = 255;  // 255-coded positives, binarized at load
                }
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "pair_%03d", p);
        ids.emplace_back(buf);
        hcgm::write_png(root / split / "A" / (ids.back() + ".png"), a);
        hcgm::write_png(root / split / "B" / (ids.back() + ".png"), b);
        hcgm::write_png(root / split / "label" / (ids.back() + ".png"), label);
    }
    hcgm::DatasetManifest m{root, split, ids};
    std::sort(m.ids.begin(), m.ids.end());
    hcgm::save_manifest(m);
}

}  // namespace testsupport
