#include "tbseg/data_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>

#include "tbseg/error.hpp"
#include "tbseg/rng.hpp"

namespace tbseg {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

// --- PGM -------------------------------------------------------------------

class PgmHeaderReader {
public:
    explicit PgmHeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t number(const char* field) {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
            throw FormatError(ErrorCode::MalformedImage, std::string("PGM: expected ") + field);
        }
        std::size_t v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_++] - '0');
            if (v > (1u << 30)) throw FormatError(ErrorCode::MalformedImage, std::string("PGM: ") + field + " too large");
        }
        return v;
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t raster_offset() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
            throw FormatError(ErrorCode::MalformedImage, "PGM: missing whitespace before raster");
        }
        return pos_ + 1;
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 2;  // past "P5"
};

bool is_pgm(std::span<const std::uint8_t> b) { return b.size() >= 2 && b[0] == 'P' && b[1] == '5'; }

constexpr std::uint8_t kPngSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

bool is_png(std::span<const std::uint8_t> b) {
    return b.size() >= 8 && std::equal(std::begin(kPngSignature), std::end(kPngSignature), b.begin());
}

// --- PNG -------------------------------------------------------------------

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t at) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4], std::span<const std::uint8_t> data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_be32(out, static_cast<std::uint32_t>(crc));
}

[[noreturn]] void png_error(const std::string& what) { throw FormatError(ErrorCode::MalformedImage, "PNG: " + what); }

std::uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
    if (pb <= pc) return static_cast<std::uint8_t>(b);
    return static_cast<std::uint8_t>(c);
}

}  // namespace

Image2D decode_pgm(std::span<const std::uint8_t> bytes) {
    if (!is_pgm(bytes)) throw FormatError(ErrorCode::UnknownMagic, "not a binary PGM (P5) file");
    PgmHeaderReader header(bytes);
    const std::size_t width = header.number("width");
    const std::size_t height = header.number("height");
    const std::size_t maxval = header.number("maxval");
    if (width == 0 || height == 0) throw FormatError(ErrorCode::MalformedImage, "PGM: zero dimension");
    if (maxval != 255) {
        throw FormatError(ErrorCode::UnsupportedMaxval, "PGM maxval " + std::to_string(maxval) + ", only 255 supported");
    }
    const std::size_t offset = header.raster_offset();
    const std::size_t available = bytes.size() - std::min(offset, bytes.size());
    if (available != width * height) {
        throw FormatError(ErrorCode::PixelCountMismatch, "PGM " + std::to_string(width) + "x" +
                                                             std::to_string(height) + " needs " +
                                                             std::to_string(width * height) + " bytes, found " +
                                                             std::to_string(available));
    }
    return Image2D(width, height, std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end()));
}

std::vector<std::uint8_t> encode_pgm(const Image2D& img) {
    char header[64];
    const int n = std::snprintf(header, sizeof header, "P5\n%zu %zu\n255\n", img.width, img.height);
    std::vector<std::uint8_t> out(header, header + n);
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

Image2D decode_png(std::span<const std::uint8_t> bytes) {
    if (!is_png(bytes)) throw FormatError(ErrorCode::UnknownMagic, "not a PNG file");
    std::size_t pos = 8;
    std::size_t width = 0, height = 0;
    bool have_header = false, have_end = false;
    std::vector<std::uint8_t> compressed;
    while (pos + 12 <= bytes.size() && !have_end) {
        const std::uint32_t length = be32(bytes, pos);
        if (length > bytes.size() - pos - 12) png_error("chunk runs past end of file");
        const auto type = bytes.subspan(pos + 4, 4);
        const auto data = bytes.subspan(pos + 8, length);
        const auto crc = crc32(0L, bytes.data() + pos + 4, static_cast<uInt>(length + 4));
        if (crc != be32(bytes, pos + 8 + length)) png_error("CRC mismatch");
        const std::string name(type.begin(), type.end());
        if (name == "IHDR") {
            if (length != 13) png_error("bad IHDR length");
            width = be32(data, 0);
            height = be32(data, 4);
            const std::uint8_t depth = data[8], color = data[9], compression = data[10], filter = data[11],
                               interlace = data[12];
            if (depth != 8 || color != 0) png_error("only 8-bit grayscale is supported");
            if (compression != 0 || filter != 0) png_error("unknown compression or filter method");
            if (interlace != 0) png_error("interlaced images are not supported");
            if (width == 0 || height == 0 || width > (1u << 16) || height > (1u << 16)) png_error("bad dimensions");
            have_header = true;
        } else if (name == "IDAT") {
            compressed.insert(compressed.end(), data.begin(), data.end());
        } else if (name == "IEND") {
            have_end = true;
        } else if (!(type[0] & 0x20)) {
            png_error("unsupported critical chunk " + name);
        }
        pos += 12 + length;
    }
    if (!have_header || !have_end) png_error("missing IHDR or IEND");

    const std::size_t stride = width + 1;
    std::vector<std::uint8_t> raw(stride * height);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, compressed.data(), static_cast<uLong>(compressed.size())) != Z_OK ||
        raw_len != raw.size()) {
        throw FormatError(ErrorCode::PixelCountMismatch, "PNG: image data does not decode to " +
                                                             std::to_string(width) + "x" + std::to_string(height) +
                                                             " pixels");
    }

    Image2D img(width, height);
    for (std::size_t y = 0; y < height; ++y) {
        const std::uint8_t filter = raw[y * stride];
        const std::uint8_t* src = raw.data() + y * stride + 1;
        std::uint8_t* dst = img.pixels.data() + y * width;
        const std::uint8_t* prev = y > 0 ? img.pixels.data() + (y - 1) * width : nullptr;
        for (std::size_t x = 0; x < width; ++x) {
            const int a = x > 0 ? dst[x - 1] : 0;
            const int b = prev ? prev[x] : 0;
            const int c = (prev && x > 0) ? prev[x - 1] : 0;
            int pred = 0;
            switch (filter) {
                case 0: pred = 0; break;
                case 1: pred = a; break;
                case 2: pred = b; break;
                case 3: pred = (a + b) / 2; break;
                case 4: pred = paeth(a, b, c); break;
                default: png_error("unknown row filter " + std::to_string(filter));
            }
            dst[x] = static_cast<std::uint8_t>(src[x] + pred);
        }
    }
    return img;
}

std::vector<std::uint8_t> encode_png(const Image2D& img) {
    std::vector<std::uint8_t> out(std::begin(kPngSignature), std::end(kPngSignature));
    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(img.width));
    put_be32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});
    put_chunk(out, "IHDR", ihdr);

    std::vector<std::uint8_t> raw;
    raw.reserve((img.width + 1) * img.height);
    for (std::size_t y = 0; y < img.height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(y * img.width),
                   img.pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * img.width));
    }
    uLongf len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(len);
    if (compress2(packed.data(), &len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw IoError("PNG: deflate failed");
    }
    packed.resize(len);
    put_chunk(out, "IDAT", packed);
    put_chunk(out, "IEND", {});
    return out;
}

Image2D decode_grayscale(std::span<const std::uint8_t> bytes) {
    if (is_pgm(bytes)) return decode_pgm(bytes);
    if (is_png(bytes)) return decode_png(bytes);
    throw FormatError(ErrorCode::UnknownMagic, "neither binary PGM nor PNG");
}

Image2D load_grayscale(const fs::path& path) {
    try {
        return decode_grayscale(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(e.code(), path.string() + ": " + e.what());
    }
}

void save_grayscale(const fs::path& path, const Image2D& img) {
    write_file(path, path.extension() == ".png" ? encode_png(img) : encode_pgm(img));
}

Image2D mask_to_image(const MaskImage& mask) {
    Image2D img(mask.width, mask.height);
    for (std::size_t i = 0; i < mask.pixels.size(); ++i) img.pixels[i] = mask.pixels[i] ? 255 : 0;
    return img;
}

MaskImage binarize_image(const Image2D& img) {
    MaskImage m(img.width, img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) m.pixels[i] = img.pixels[i] >= 128 ? 1 : 0;
    return m;
}

void save_mask(const fs::path& path, const MaskImage& mask) { write_file(path, encode_pgm(mask_to_image(mask))); }

MaskImage load_mask(const fs::path& path) { return binarize_image(load_grayscale(path)); }

namespace {

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".pgm" || ext == ".png";
}

// stem -> file, sorted by stem
std::map<std::string, fs::path> list_images(const fs::path& dir, std::vector<std::string>& duplicates) {
    std::map<std::string, fs::path> files;
    if (!fs::is_directory(dir)) return files;
    std::vector<fs::path> entries;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && has_image_extension(entry.path())) entries.push_back(entry.path());
    }
    std::sort(entries.begin(), entries.end());
    for (const auto& p : entries) {
        if (!files.emplace(p.stem().string(), p).second) duplicates.push_back(p.string());
    }
    return files;
}

}  // namespace

Dataset load_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw IoError("dataset directory " + root.string() + " does not exist");
    std::vector<std::string> offenders;
    const auto images = list_images(root / "images", offenders);
    const auto masks = list_images(root / "masks", offenders);
    if (!offenders.empty()) throw PairingError(offenders, "duplicate sample names: " + offenders.front());

    for (const auto& [stem, path] : images) {
        if (!masks.count(stem)) offenders.push_back(path.string());
    }
    for (const auto& [stem, path] : masks) {
        if (!images.count(stem)) offenders.push_back(path.string());
    }
    if (!offenders.empty()) {
        std::string list;
        for (const auto& o : offenders) list += (list.empty() ? "" : ", ") + o;
        throw PairingError(offenders, "unpaired files: " + list);
    }
    if (images.empty()) throw DomainError(ErrorCode::EmptyDataset, "no image/mask pairs under " + root.string());

    Dataset ds;
    ds.reserve(images.size());
    for (const auto& [stem, image_path] : images) {
        Sample s{stem, load_grayscale(image_path), load_mask(masks.at(stem))};
        if (s.image.width != s.mask.width || s.image.height != s.mask.height) {
            throw ShapeError("sample " + stem + ": image " + std::to_string(s.image.width) + "x" +
                             std::to_string(s.image.height) + " vs mask " + std::to_string(s.mask.width) + "x" +
                             std::to_string(s.mask.height));
        }
        ds.push_back(std::move(s));
    }
    return ds;
}

void write_dataset(const fs::path& root, const Dataset& dataset) {
    std::error_code ec;
    fs::create_directories(root / "images", ec);
    fs::create_directories(root / "masks", ec);
    if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
    for (const auto& s : dataset) {
        save_grayscale(root / "images" / (s.name + ".pgm"), s.image);
        save_mask(root / "masks" / (s.name + ".pgm"), s.mask);
    }
}

namespace {

struct Stroke {
    std::vector<std::pair<double, double>> points;
    double radius;
    double intensity;
};

Stroke random_stroke(Rng& rng, double size) {
    Stroke s;
    s.radius = static_cast<double>(2 + rng.uniform_index(3)) / 2.0;
    s.intensity = rng.uniform(180.0, 220.0);
    double x = rng.uniform(0.1, 0.9) * size, y = rng.uniform(0.1, 0.9) * size;
    double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double curvature = rng.normal(0.0, 0.05);
    const auto steps = static_cast<std::size_t>(size * rng.uniform(0.5, 1.2));
    s.points.emplace_back(x, y);
    for (std::size_t i = 0; i < steps; ++i) {
        curvature = std::clamp(curvature + rng.normal(0.0, 0.03), -0.2, 0.2);
        heading += curvature + rng.normal(0.0, 0.1);
        // two half-pixel sub-steps keep the dilated stroke gap-free
        for (int sub = 0; sub < 2; ++sub) {
            x += 0.5 * std::cos(heading);
            y += 0.5 * std::sin(heading);
            if (x < 0.0 || x >= size) {
                heading = std::numbers::pi - heading;
                x = std::clamp(x, 0.0, size - 1e-6);
            }
            if (y < 0.0 || y >= size) {
                heading = -heading;
                y = std::clamp(y, 0.0, size - 1e-6);
            }
            s.points.emplace_back(x, y);
        }
    }
    return s;
}

Sample render_sample(Rng& rng, std::size_t size, std::string name) {
    const double fsize = static_cast<double>(size);
    const std::size_t strokes = 1 + rng.uniform_index(4);
    // brightness of the stroke covering each pixel, 0 for background
    std::vector<double> level(size * size, 0.0);
    for (std::size_t k = 0; k < strokes; ++k) {
        const Stroke s = random_stroke(rng, fsize);
        for (const auto& [px, py] : s.points) {
            const auto x0 = static_cast<std::ptrdiff_t>(std::floor(px - s.radius));
            const auto y0 = static_cast<std::ptrdiff_t>(std::floor(py - s.radius));
            const auto x1 = static_cast<std::ptrdiff_t>(std::ceil(px + s.radius));
            const auto y1 = static_cast<std::ptrdiff_t>(std::ceil(py + s.radius));
            for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(y0, 0); y <= y1 && y < static_cast<std::ptrdiff_t>(size); ++y) {
                for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(x0, 0); x <= x1 && x < static_cast<std::ptrdiff_t>(size); ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - px, dy = static_cast<double>(y) + 0.5 - py;
                    if (dx * dx + dy * dy <= s.radius * s.radius) {
                        double& l = level[static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)];
                        l = std::max(l, s.intensity);
                    }
                }
            }
        }
    }
    Sample out{std::move(name), Image2D(size, size), MaskImage(size, size)};
    for (std::size_t i = 0; i < level.size(); ++i) {
        const bool fg = level[i] > 0.0;
        const double v = (fg ? level[i] : 60.0) + rng.normal(0.0, 15.0);
        out.image.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
        out.mask.pixels[i] = fg ? 1 : 0;
    }
    return out;
}

}  // namespace

Dataset gen_synthetic(const SyntheticOptions& options) {
    if (options.size < 32) throw DomainError("synthetic tiles must be at least 32 pixels, got " + std::to_string(options.size));
    Dataset ds;
    ds.reserve(options.count);
    const double total = static_cast<double>(options.size * options.size);
    for (std::size_t i = 0; i < options.count; ++i) {
        Rng rng(derive_seed(options.seed, i));
        char name[32];
        std::snprintf(name, sizeof name, "synth_%05zu", i);
        for (;;) {
            Sample s = render_sample(rng, options.size, name);
            const double fraction = static_cast<double>(s.mask.foreground()) / total;
            if (fraction >= 0.01 && fraction <= 0.30) {
                ds.push_back(std::move(s));
                break;
            }
        }
    }
    return ds;
}

std::vector<float> normalize(const Image2D& img) {
    std::vector<float> out(img.pixels.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(img.pixels[i]) / 255.0f;
    return out;
}

}  // namespace tbseg
