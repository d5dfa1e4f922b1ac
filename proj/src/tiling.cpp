#include "tbseg/tiling.hpp"

namespace tbseg {

TileGrid compute_grid(std::size_t width, std::size_t height, std::size_t tile_size) {
    if (width == 0 || height == 0 || tile_size == 0) {
        throw DomainError("compute_grid: width, height and tile size must be >= 1");
    }
    TileGrid g;
    g.width = width;
    g.height = height;
    g.tile_size = tile_size;
    g.cols = (width + tile_size - 1) / tile_size;
    g.rows = (height + tile_size - 1) / tile_size;
    return g;
}

}  // namespace tbseg
