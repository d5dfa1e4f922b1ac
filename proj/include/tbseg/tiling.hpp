#ifndef TBSEG_TILING_HPP
#define TBSEG_TILING_HPP

// Frame <-> tile geometry: reflect-pad a frame on the right and bottom to a
// multiple of the tile size, cut it into row-major tiles, and place tiles back
// into a frame cropped to the original size.

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "tbseg/error.hpp"
#include "tbseg/raster.hpp"

namespace tbseg {

struct TileGrid {
    std::size_t width = 0;  // original frame
    std::size_t height = 0;
    std::size_t tile_size = 0;
    std::size_t cols = 0;
    std::size_t rows = 0;

    std::size_t padded_width() const noexcept { return cols * tile_size; }
    std::size_t padded_height() const noexcept { return rows * tile_size; }
    std::size_t tile_count() const noexcept { return cols * rows; }

    friend bool operator==(const TileGrid&, const TileGrid&) = default;
};

/// cols = ceil(w / tile), rows = ceil(h / tile). DomainError on a zero argument.
TileGrid compute_grid(std::size_t width, std::size_t height, std::size_t tile_size);

namespace detail {

inline std::size_t reflect(std::size_t i, std::size_t n) { return i < n ? i : 2 * (n - 1) - i; }

template <class T>
void require_dims(const Raster<T>& img, std::size_t w, std::size_t h, const char* what) {
    if (img.width != w || img.height != h) {
        throw ShapeError(std::string(what) + ": image is " + std::to_string(img.width) + "x" +
                         std::to_string(img.height) + ", grid expects " + std::to_string(w) + "x" + std::to_string(h));
    }
}

}  // namespace detail

/// Mirror padding that does not repeat the edge pixel: [a b c] + 2 -> [a b c b a].
/// DomainError when a pad amount reaches the image dimension.
template <class T>
Raster<T> pad_image(const Raster<T>& img, const TileGrid& grid) {
    detail::require_dims(img, grid.width, grid.height, "pad_image");
    const std::size_t pw = grid.padded_width(), ph = grid.padded_height();
    if (pw - img.width >= img.width || ph - img.height >= img.height) {
        throw DomainError("pad_image: padding " + std::to_string(pw - img.width) + "x" +
                          std::to_string(ph - img.height) + " is not smaller than the image " +
                          std::to_string(img.width) + "x" + std::to_string(img.height));
    }
    if (pw == img.width && ph == img.height) return img;
    Raster<T> out(pw, ph);
    for (std::size_t y = 0; y < ph; ++y) {
        const std::size_t sy = detail::reflect(y, img.height);
        for (std::size_t x = 0; x < pw; ++x) out.at(x, y) = img.at(detail::reflect(x, img.width), sy);
    }
    return out;
}

/// Row-major tiles of a frame already padded to the grid.
template <class T>
std::vector<Raster<T>> split_image(const Raster<T>& padded, const TileGrid& grid) {
    detail::require_dims(padded, grid.padded_width(), grid.padded_height(), "split_image");
    const std::size_t t = grid.tile_size;
    std::vector<Raster<T>> tiles;
    tiles.reserve(grid.tile_count());
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t c = 0; c < grid.cols; ++c) {
            Raster<T> tile(t, t);
            for (std::size_t y = 0; y < t; ++y) {
                const auto src = padded.pixels.begin() + static_cast<std::ptrdiff_t>((r * t + y) * padded.width + c * t);
                std::copy(src, src + static_cast<std::ptrdiff_t>(t), tile.pixels.begin() + static_cast<std::ptrdiff_t>(y * t));
            }
            tiles.push_back(std::move(tile));
        }
    }
    return tiles;
}

/// Inverse of split_image followed by a crop to the original frame size.
template <class T>
Raster<T> stitch(const std::vector<Raster<T>>& tiles, const TileGrid& grid) {
    if (tiles.size() != grid.tile_count()) {
        throw ShapeError("stitch: got " + std::to_string(tiles.size()) + " tiles, grid has " +
                         std::to_string(grid.tile_count()));
    }
    const std::size_t t = grid.tile_size;
    Raster<T> out(grid.width, grid.height);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        detail::require_dims(tiles[i], t, t, "stitch");
        const std::size_t x0 = (i % grid.cols) * t, y0 = (i / grid.cols) * t;
        if (x0 >= grid.width || y0 >= grid.height) continue;
        const std::size_t w = std::min(t, grid.width - x0), h = std::min(t, grid.height - y0);
        for (std::size_t y = 0; y < h; ++y) {
            const auto src = tiles[i].pixels.begin() + static_cast<std::ptrdiff_t>(y * t);
            std::copy(src, src + static_cast<std::ptrdiff_t>(w),
                      out.pixels.begin() + static_cast<std::ptrdiff_t>((y0 + y) * grid.width + x0));
        }
    }
    return out;
}

}  // namespace tbseg

#endif  // TBSEG_TILING_HPP
