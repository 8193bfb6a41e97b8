#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsa/functions/types.hpp"

namespace vsa::functions {

struct RleError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Row-major binary image, one byte per pixel (0 or 1).
struct Bitmap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    Bitmap() = default;
    Bitmap(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}

    std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
    std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

    bool operator==(const Bitmap&) const = default;
};

/// Canonical encoding: first run counts zeros (possibly 0), every later run is non-empty.
inline SegmentationMask rle_encode(const Bitmap& bm)
{
    if (bm.pixels.size() != bm.width * bm.height)
        throw RleError("bitmap has " + std::to_string(bm.pixels.size()) + " pixels, expected " +
                       std::to_string(bm.width * bm.height));
    SegmentationMask m{bm.width, bm.height, {}};
    std::uint8_t current = 0;
    std::uint32_t run = 0;
    for (auto px : bm.pixels) {
        const std::uint8_t v = px ? 1 : 0;
        if (v != current) {
            m.rle.push_back(run);
            run = 0;
            current = v;
        }
        ++run;
    }
    m.rle.push_back(run);
    return m;
}

inline Bitmap rle_decode(const SegmentationMask& m)
{
    if (auto err = check_mask(m))
        throw RleError(*err);
    Bitmap bm(m.width, m.height);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < m.rle.size(); ++i) {
        const std::uint8_t v = i % 2;
        for (std::uint32_t k = 0; k < m.rle[i]; ++k)
            bm.pixels[pos++] = v;
    }
    return bm;
}

/// Filled axis-aligned rectangle covering pixel columns [x0, x1) and rows [y0, y1).
inline SegmentationMask rect_mask(std::size_t width, std::size_t height, std::size_t x0, std::size_t y0,
                                  std::size_t x1, std::size_t y1)
{
    Bitmap bm(width, height);
    for (std::size_t y = y0; y < y1 && y < height; ++y)
        for (std::size_t x = x0; x < x1 && x < width; ++x)
            bm.at(x, y) = 1;
    return rle_encode(bm);
}

/// Pixel-space bounding box of the set pixels, normalized to [0,1]; nullopt for an empty mask.
inline std::optional<Box> mask_bbox(const SegmentationMask& m)
{
    const Bitmap bm = rle_decode(m);
    std::size_t x0 = bm.width, y0 = bm.height, x1 = 0, y1 = 0;
    bool any = false;
    for (std::size_t y = 0; y < bm.height; ++y)
        for (std::size_t x = 0; x < bm.width; ++x)
            if (bm.at(x, y)) {
                any = true;
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x + 1);
                y1 = std::max(y1, y + 1);
            }
    if (!any)
        return std::nullopt;
    const double w = static_cast<double>(bm.width), h = static_cast<double>(bm.height);
    return Box{x0 / w, y0 / h, x1 / w, y1 / h};
}

} // namespace vsa::functions
