#include "tbseg/segment.hpp"

#include <cmath>
#include <string>

#include "tbseg/error.hpp"
#include "tbseg/metrics.hpp"
#include "tbseg/parallel.hpp"
#include "tbseg/trainer.hpp"

namespace tbseg {

FrameSegmentation segment_frame(const UNetConfig& cfg, const UNetParams& params, const Image2D& frame,
                                std::size_t tile_size, float threshold, std::size_t threads) {
    if (tile_size == 0 || tile_size % cfg.size_divisor() != 0) {
        throw ShapeError("tile size " + std::to_string(tile_size) + " must be a positive multiple of 2^depth = " +
                         std::to_string(cfg.size_divisor()));
    }
    FrameSegmentation out;
    out.grid = compute_grid(frame.width, frame.height, tile_size);
    const auto tiles = split_image(pad_image(frame, out.grid), out.grid);

    std::vector<ProbabilityMap> probs(tiles.size());
    parallel_for(tiles.size(), threads, [&](std::size_t i) {
        const Tensor4 logits = infer(cfg, params, to_batch({&tiles[i]}));
        for (float z : logits.values()) {
            if (std::isnan(z)) throw NumericError("network produced NaN logits on tile " + std::to_string(i));
        }
        const Tensor4 p = sigmoid(logits);
        probs[i] = ProbabilityMap(tile_size, tile_size, p.values());
    });
    out.probabilities = stitch(probs, out.grid);
    out.mask = binarize(out.probabilities, threshold);
    return out;
}

}  // namespace tbseg
