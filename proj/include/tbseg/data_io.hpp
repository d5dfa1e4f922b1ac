#ifndef TBSEG_DATA_IO_HPP
#define TBSEG_DATA_IO_HPP

// Grayscale frame and mask files, paired datasets on disk, and the seeded
// synthetic cord generator.
//
// Dataset layout:  <root>/images/<name>.(pgm|png)
//                  <root>/masks/<name>.(pgm|png)

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tbseg/raster.hpp"

namespace tbseg {

/// Binary PGM: "P5", width, height, maxval 255 separated by whitespace
/// ('#' comments allowed), one whitespace byte, then width*height bytes.
Image2D decode_pgm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pgm(const Image2D& img);

/// 8-bit grayscale, non-interlaced PNG only.
Image2D decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Image2D& img);

/// Dispatches on the file's magic bytes, not its extension.
Image2D decode_grayscale(std::span<const std::uint8_t> bytes);
Image2D load_grayscale(const std::filesystem::path& path);
/// Writes PNG for a ".png" extension and PGM otherwise.
void save_grayscale(const std::filesystem::path& path, const Image2D& img);

/// Mask to 8-bit image with 0 -> 0 and 1 -> 255.
Image2D mask_to_image(const MaskImage& mask);
/// Pixels >= 128 become foreground.
MaskImage binarize_image(const Image2D& img);
/// Always PGM.
void save_mask(const std::filesystem::path& path, const MaskImage& mask);
MaskImage load_mask(const std::filesystem::path& path);

struct Sample {
    std::string name;
    Image2D image;
    MaskImage mask;
};

/// Sorted by name when produced by load_dataset or gen_synthetic.
using Dataset = std::vector<Sample>;

/// Throws PairingError listing unmatched files, ShapeError for a pair whose
/// sizes differ, DomainError(EmptyDataset) when there are no samples.
Dataset load_dataset(const std::filesystem::path& root);
void write_dataset(const std::filesystem::path& root, const Dataset& dataset);

struct SyntheticOptions {
    std::size_t count = 0;
    std::size_t size = 64;
    std::uint64_t seed = 0;
};

/// Bright curved strokes (1-4 random-walk polylines, 2-4 px thick, intensity
/// ~200) on a noisy dark background (~60, Gaussian sigma 15). The mask is the
/// stroke support; samples whose foreground fraction falls outside
/// [0.01, 0.30] are redrawn. Requires size >= 32.
Dataset gen_synthetic(const SyntheticOptions& options);

/// Pixel values scaled by 1/255.
std::vector<float> normalize(const Image2D& img);

}  // namespace tbseg

#endif  // TBSEG_DATA_IO_HPP
