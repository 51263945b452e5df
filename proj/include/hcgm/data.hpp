#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "hcgm/core/tensor.hpp"
#include "hcgm/image.hpp"
#include "hcgm/nn.hpp"

namespace hcgm {

// Channel statistics of the pretrained trunk's training corpus; inputs are
// scaled to [0,1] first.
inline constexpr std::array<double, 3> kNormMean = {0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kNormStd = {0.229, 0.224, 0.225};

struct TileOrigin {
    std::string id;
    int64_t row = 0, col = 0;
};

// Co-registered bi-temporal pair with a binary change mask.
struct RawPair {
    ImageU8 image_a, image_b;
    ImageU8 label;  // single-channel, values {0,1}
    std::string id;
};

struct RawTile {
    ImageU8 a, b, label;
    TileOrigin origin;
};

// 0 stays 0; any 255-coded (or otherwise nonzero) positive becomes 1.
// Idempotent by construction.
inline void binarize_label(ImageU8& label) {
    for (auto& p : label.pix) p = p ? 1 : 0;
}

inline RawPair make_raw_pair(ImageU8 a, ImageU8 b, ImageU8 label, std::string id) {
    if (a.c != 3 || b.c != 3)
        throw DataError("pair '" + id + "': images must be 3-channel");
    if (label.c != 1)
        throw DataError("pair '" + id + "': label must be single-channel");
    if (a.h != b.h || a.w != b.w || a.h != label.h || a.w != label.w)
        throw DataError("pair '" + id + "': images and label must share dimensions (A " +
                        std::to_string(a.h) + "x" + std::to_string(a.w) + ", B " +
                        std::to_string(b.h) + "x" + std::to_string(b.w) + ", label " +
                        std::to_string(label.h) + "x" + std::to_string(label.w) + ")");
    binarize_label(label);
    return RawPair{std::move(a), std::move(b), std::move(label), std::move(id)};
}

inline ImageU8 crop(const ImageU8& src, int64_t y0, int64_t x0, int64_t h, int64_t w) {
    ImageU8 out(h, w, src.c);
    for (int64_t y = 0; y < h; ++y)
        std::memcpy(out.pix.data() + y * w * src.c,
                    src.pix.data() + ((y0 + y) * src.w + x0) * src.c,
                    static_cast<size_t>(w * src.c));
    return out;
}

// Non-overlapping tiles on a regular grid anchored at (0,0); remainder rows
// and columns beyond the last full tile are dropped.
inline std::vector<RawTile> tile_pair(const RawPair& pair, int64_t tile_size) {
    if (tile_size < 1) throw ConfigError("tile_size must be >= 1");
    const ImageU8& a = pair.image_a;
    if (pair.image_b.h != a.h || pair.image_b.w != a.w || pair.label.h != a.h ||
        pair.label.w != a.w)
        throw DataError("pair '" + pair.id + "': images and label must share dimensions");
    const int64_t rows = a.h / tile_size, cols = a.w / tile_size;
    std::vector<RawTile> tiles;
    tiles.reserve(static_cast<size_t>(rows * cols));
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) {
            const int64_t y0 = r * tile_size, x0 = c * tile_size;
            tiles.push_back(RawTile{crop(a, y0, x0, tile_size, tile_size),
                                    crop(pair.image_b, y0, x0, tile_size, tile_size),
                                    crop(pair.label, y0, x0, tile_size, tile_size),
                                    TileOrigin{pair.id, y0, x0}});
        }
    return tiles;
}

// [0,255] -> [0,1] -> standardized per channel; HWC bytes to CHW scalars.
template <typename T>
Tensor<T> normalize_tile(const ImageU8& tile) {
    check_shape(tile.c == 3, "normalize_tile: expected a 3-channel tile");
    Tensor<T> out(Shape{3, tile.h, tile.w});
    T* dst = out.data();
    const int64_t plane = tile.h * tile.w;
    for (int64_t ch = 0; ch < 3; ++ch) {
        const T mean = static_cast<T>(kNormMean[static_cast<size_t>(ch)]);
        const T inv_std = static_cast<T>(1.0 / kNormStd[static_cast<size_t>(ch)]);
        for (int64_t i = 0; i < plane; ++i) {
            T v = static_cast<T>(tile.pix[static_cast<size_t>(i * 3 + ch)]) / T(255);
            v = std::clamp(v, T(0), T(1));
            dst[ch * plane + i] = (v - mean) * inv_std;
        }
    }
    return out;
}

// Inverse affine map back to [0,1] scale (the oracle for the round-trip test).
template <typename T>
std::vector<T> denormalize(const Tensor<T>& chw) {
    check_shape(chw.ndim() == 3 && chw.dim(0) == 3, "denormalize: expected (3,h,w)");
    const int64_t plane = chw.dim(1) * chw.dim(2);
    std::vector<T> out(static_cast<size_t>(3 * plane));
    const T* src = chw.data();
    for (int64_t ch = 0; ch < 3; ++ch) {
        const T mean = static_cast<T>(kNormMean[static_cast<size_t>(ch)]);
        const T stdv = static_cast<T>(kNormStd[static_cast<size_t>(ch)]);
        for (int64_t i = 0; i < plane; ++i)
            out[static_cast<size_t>(ch * plane + i)] = src[ch * plane + i] * stdv + mean;
    }
    return out;
}

template <typename T>
Tensor<T> label_tensor(const ImageU8& label) {
    check_shape(label.c == 1, "label_tensor: expected a single-channel mask");
    Tensor<T> out(Shape{1, label.h, label.w});
    T* dst = out.data();
    for (size_t i = 0; i < label.pix.size(); ++i) dst[i] = label.pix[i] ? T(1) : T(0);
    return out;
}

// Normalized training/evaluation sample.
template <typename T>
struct BitemporalSample {
    Tensor<T> a, b;      // (3,t,t), identically normalized
    Tensor<T> label;     // (1,t,t), values {0,1}
    TileOrigin origin;
};

template <typename T>
BitemporalSample<T> make_sample(const RawTile& tile) {
    return BitemporalSample<T>{normalize_tile<T>(tile.a), normalize_tile<T>(tile.b),
                               label_tensor<T>(tile.label), tile.origin};
}

// ---------------------------------------------------------------------------
// prepared-dataset manifests: <root>/<split>/{A,B,label}/<id>.png
// ---------------------------------------------------------------------------

struct DatasetManifest {
    std::filesystem::path root;
    std::string split;
    std::vector<std::string> ids;  // lexicographically sorted

    size_t size() const { return ids.size(); }
    std::filesystem::path a_path(const std::string& id) const {
        return root / split / "A" / (id + ".png");
    }
    std::filesystem::path b_path(const std::string& id) const {
        return root / split / "B" / (id + ".png");
    }
    std::filesystem::path label_path(const std::string& id) const {
        return root / split / "label" / (id + ".png");
    }
    std::filesystem::path manifest_path() const { return root / split / "manifest.txt"; }
};

inline void save_manifest(const DatasetManifest& m) {
    std::ofstream os(m.manifest_path(), std::ios::trunc);
    if (!os) throw DataError("cannot write manifest for split '" + m.split + "'");
    for (const auto& id : m.ids) os << id << "\n";
}

// Reads manifest.txt when present, otherwise scans <split>/A. Every record
// must have its A/B/label siblings on disk.
inline DatasetManifest load_manifest(const std::filesystem::path& root, const std::string& split) {
    namespace fs = std::filesystem;
    DatasetManifest m{root, split, {}};
    const fs::path dir = root / split;
    if (!fs::exists(dir))
        throw DataError("split '" + split + "' not found under '" + root.string() + "'");
    if (fs::exists(m.manifest_path())) {
        std::ifstream is(m.manifest_path());
        std::string line;
        while (std::getline(is, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
            if (!line.empty()) m.ids.push_back(line);
        }
    } else if (fs::exists(dir / "A")) {
        for (const auto& e : fs::directory_iterator(dir / "A"))
            if (e.path().extension() == ".png") m.ids.push_back(e.path().stem().string());
    }
    std::sort(m.ids.begin(), m.ids.end());
    if (std::adjacent_find(m.ids.begin(), m.ids.end()) != m.ids.end())
        throw DataError("split '" + split + "' contains duplicate sample ids");
    for (const auto& id : m.ids) {
        if (!fs::exists(m.a_path(id)) || !fs::exists(m.b_path(id)) ||
            !fs::exists(m.label_path(id)))
            throw DataError("sample '" + id + "' in split '" + split +
                            "' is missing one of its A/B/label files");
    }
    return m;
}

inline RawPair load_pair(const DatasetManifest& m, size_t index) {
    const std::string& id = m.ids.at(index);
    return make_raw_pair(read_png(m.a_path(id), 3), read_png(m.b_path(id), 3),
                         read_png(m.label_path(id), 1), id);
}

// ---------------------------------------------------------------------------
// batch assembly (with the optional, default-off flip/rotate augmentation)
// ---------------------------------------------------------------------------

inline ImageU8 flip_h(const ImageU8& im) {
    ImageU8 out(im.h, im.w, im.c);
    for (int64_t y = 0; y < im.h; ++y)
        for (int64_t x = 0; x < im.w; ++x)
            for (int64_t ch = 0; ch < im.c; ++ch) out.at(y, im.w - 1 - x, ch) = im.at(y, x, ch);
    return out;
}

inline ImageU8 flip_v(const ImageU8& im) {
    ImageU8 out(im.h, im.w, im.c);
    for (int64_t y = 0; y < im.h; ++y)
        std::memcpy(out.pix.data() + (im.h - 1 - y) * im.w * im.c,
                    im.pix.data() + y * im.w * im.c, static_cast<size_t>(im.w * im.c));
    return out;
}

template <typename T>
struct Batch {
    Tensor<T> a, b;    // (B,3,t,t)
    Tensor<T> label;   // (B,1,t,t)
    std::vector<std::string> ids;
};

// Stacks the indexed samples. All tiles must share the same spatial size.
// When `augment` is set the same random flip is applied to a, b and label.
template <typename T>
Batch<T> make_batch(const DatasetManifest& m, std::span<const size_t> indices, bool augment,
                    Rng* rng) {
    check_shape(!indices.empty(), "make_batch: empty index list");
    Batch<T> batch;
    int64_t t_h = -1, t_w = -1;
    for (size_t bi = 0; bi < indices.size(); ++bi) {
        RawPair pair = load_pair(m, indices[bi]);
        if (augment && rng) {
            if (rng->uniform() < 0.5) {
                pair.image_a = flip_h(pair.image_a);
                pair.image_b = flip_h(pair.image_b);
                pair.label = flip_h(pair.label);
            }
            if (rng->uniform() < 0.5) {
                pair.image_a = flip_v(pair.image_a);
                pair.image_b = flip_v(pair.image_b);
                pair.label = flip_v(pair.label);
            }
        }
        if (bi == 0) {
            t_h = pair.image_a.h;
            t_w = pair.image_a.w;
            batch.a = Tensor<T>(Shape{static_cast<int64_t>(indices.size()), 3, t_h, t_w});
            batch.b = Tensor<T>(Shape{static_cast<int64_t>(indices.size()), 3, t_h, t_w});
            batch.label = Tensor<T>(Shape{static_cast<int64_t>(indices.size()), 1, t_h, t_w});
        }
        if (pair.image_a.h != t_h || pair.image_a.w != t_w)
            throw DataError("sample '" + pair.id + "' has size " + std::to_string(pair.image_a.h) +
                            "x" + std::to_string(pair.image_a.w) + ", batch expects " +
                            std::to_string(t_h) + "x" + std::to_string(t_w));
        Tensor<T> na = normalize_tile<T>(pair.image_a);
        Tensor<T> nb = normalize_tile<T>(pair.image_b);
        Tensor<T> nl = label_tensor<T>(pair.label);
        std::memcpy(batch.a.data() + static_cast<int64_t>(bi) * na.numel(), na.data(),
                    sizeof(T) * static_cast<size_t>(na.numel()));
        std::memcpy(batch.b.data() + static_cast<int64_t>(bi) * nb.numel(), nb.data(),
                    sizeof(T) * static_cast<size_t>(nb.numel()));
        std::memcpy(batch.label.data() + static_cast<int64_t>(bi) * nl.numel(), nl.data(),
                    sizeof(T) * static_cast<size_t>(nl.numel()));
        batch.ids.push_back(pair.id);
    }
    return batch;
}

}  // namespace hcgm
