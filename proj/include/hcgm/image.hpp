#pragma once

#include <png.h>

#include <cstring>
#include <filesystem>
#include <vector>

#include "hcgm/errors.hpp"

namespace hcgm {

// 8-bit raster, HWC interleaved, 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
    int64_t h = 0, w = 0, c = 0;
    std::vector<uint8_t> pix;

    ImageU8() = default;
    ImageU8(int64_t h_, int64_t w_, int64_t c_, uint8_t fill = 0)
        : h(h_), w(w_), c(c_), pix(static_cast<size_t>(h_ * w_ * c_), fill) {}

    uint8_t at(int64_t y, int64_t x, int64_t ch = 0) const {
        return pix[static_cast<size_t>((y * w + x) * c + ch)];
    }
    uint8_t& at(int64_t y, int64_t x, int64_t ch = 0) {
        return pix[static_cast<size_t>((y * w + x) * c + ch)];
    }
};

// channels: 0 keeps the file's natural layout (gray stays 1-channel,
// anything colored becomes RGB); 1 or 3 forces a conversion.
inline ImageU8 read_png(const std::filesystem::path& path, int channels = 0) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw DataError("cannot read PNG '" + path.string() + "': " + img.message);
    int want = channels;
    if (want == 0) want = (img.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
    img.format = (want == 3) ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    ImageU8 out(static_cast<int64_t>(img.height), static_cast<int64_t>(img.width), want);
    if (!png_image_finish_read(&img, nullptr, out.pix.data(), 0, nullptr))
        throw DataError("failed decoding PNG '" + path.string() + "': " + img.message);
    return out;
}

inline void write_png(const std::filesystem::path& path, const ImageU8& im) {
    if (im.c != 1 && im.c != 3)
        throw DataError("write_png: image must have 1 or 3 channels, got " +
                        std::to_string(im.c));
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(im.w);
    img.height = static_cast<png_uint_32>(im.h);
    img.format = (im.c == 3) ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, im.pix.data(), 0, nullptr))
        throw DataError("failed writing PNG '" + path.string() + "': " + img.message);
}

}  // namespace hcgm
