#ifndef TBSEG_SEGMENT_HPP
#define TBSEG_SEGMENT_HPP

#include <cstddef>

#include "tbseg/raster.hpp"
#include "tbseg/tiling.hpp"
#include "tbseg/unet.hpp"

namespace tbseg {

struct FrameSegmentation {
    TileGrid grid;
    ProbabilityMap probabilities;  // original frame size
    MaskImage mask;
};

/// Full-frame inference: reflect-pad to the tile grid, run each tile through
/// the network, stitch the sigmoid probabilities, and threshold once.
/// Throws ShapeError when tile_size is not a multiple of 2^depth.
FrameSegmentation segment_frame(const UNetConfig& cfg, const UNetParams& params, const Image2D& frame,
                                std::size_t tile_size, float threshold, std::size_t threads = 1);

}  // namespace tbseg

#endif  // TBSEG_SEGMENT_HPP
