#ifndef TBSEG_RASTER_HPP
#define TBSEG_RASTER_HPP

#include <cstddef>
#include <cstdint>
#include <vector>

namespace tbseg {

/// Single-channel 2-D image, row-major.
template <class T>
struct Raster {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<T> pixels;

    Raster() = default;
    Raster(std::size_t w, std::size_t h, T fill = T{}) : width(w), height(h), pixels(w * h, fill) {}
    Raster(std::size_t w, std::size_t h, std::vector<T> values)
        : width(w), height(h), pixels(std::move(values)) {}

    T& at(std::size_t x, std::size_t y) noexcept { return pixels[y * width + x]; }
    const T& at(std::size_t x, std::size_t y) const noexcept { return pixels[y * width + x]; }

    friend bool operator==(const Raster&, const Raster&) = default;
};

/// 8-bit grayscale frame.
using Image2D = Raster<std::uint8_t>;
/// Per-pixel foreground probabilities in [0, 1].
using ProbabilityMap = Raster<float>;

/// Binary segmentation mask; every value is 0 or 1.
struct MaskImage : Raster<std::uint8_t> {
    using Raster::Raster;
    std::size_t foreground() const noexcept {
        std::size_t n = 0;
        for (auto v : pixels) n += v;
        return n;
    }
};

}  // namespace tbseg

#endif  // TBSEG_RASTER_HPP
