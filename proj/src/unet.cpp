#include "tbseg/unet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "tbseg/error.hpp"
#include "tbseg/rng.hpp"

namespace tbseg {

namespace {

constexpr std::uint32_t kMaxDepth = 16;
constexpr std::uint64_t kMaxChannels = 1u << 20;
constexpr std::uint64_t kMaxTensorElements = 1ull << 30;
constexpr std::uint32_t kCheckpointVersion = 1;

std::size_t encoder_layer(std::size_t level, std::size_t which) { return 2 * level + which; }
std::size_t bottleneck_layer(const UNetConfig& cfg, std::size_t which) { return 2 * cfg.depth + which; }
// Decoder blocks are stored bottom-up, so the deepest level comes first.
std::size_t decoder_layer(const UNetConfig& cfg, std::size_t level, std::size_t which) {
    return 2 * cfg.depth + 2 + 3 * (cfg.depth - 1 - level) + which;
}

template <class T>
void check_layout(const UNetConfig& cfg, const BasicUNetParams<T>& params) {
    const auto plan = layer_plan(cfg);
    if (params.layers.size() != plan.size()) {
        throw ShapeError("parameter list has " + std::to_string(params.layers.size()) +
                         " layers, config needs " + std::to_string(plan.size()));
    }
    for (std::size_t i = 0; i < plan.size(); ++i) {
        if (params.layers[i].weights.shape() != plan[i].weight_shape() ||
            params.layers[i].bias.size() != plan[i].out_channels) {
            throw ShapeError("layer " + std::to_string(i) + " weights " +
                             params.layers[i].weights.shape().to_string() + " do not match plan " +
                             plan[i].weight_shape().to_string());
        }
    }
}

template <class T>
BasicTensor4<T> conv_relu(const BasicTensor4<T>& x, const BasicConvParams<T>& p) {
    return relu(conv2d(x, p));
}

template <class T>
void add_inplace(BasicTensor4<T>& dst, const BasicTensor4<T>& src) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

Shape4 LayerSpec::weight_shape() const {
    switch (kind) {
        case LayerKind::Conv3x3: return {out_channels, in_channels, 3, 3};
        case LayerKind::Conv1x1: return {out_channels, in_channels, 1, 1};
        case LayerKind::UpConv2x2: return {in_channels, out_channels, 2, 2};
    }
    return {};
}

void UNetConfig::validate() const {
    if (depth < 1 || depth > kMaxDepth) {
        throw DomainError("depth must be in [1, " + std::to_string(kMaxDepth) + "], got " + std::to_string(depth));
    }
    if (base_channels < 1 || in_channels < 1 || out_channels < 1) {
        throw DomainError("channel counts must be >= 1");
    }
    if ((std::uint64_t{base_channels} << depth) > kMaxChannels) {
        throw DomainError("base_channels * 2^depth exceeds " + std::to_string(kMaxChannels));
    }
}

std::vector<LayerSpec> layer_plan(const UNetConfig& cfg) {
    cfg.validate();
    const std::size_t base = cfg.base_channels;
    std::vector<LayerSpec> plan;
    std::size_t in = cfg.in_channels;
    for (std::size_t level = 0; level < cfg.depth; ++level) {
        const std::size_t ch = base << level;
        plan.push_back({LayerKind::Conv3x3, in, ch});
        plan.push_back({LayerKind::Conv3x3, ch, ch});
        in = ch;
    }
    const std::size_t bottom = base << cfg.depth;
    plan.push_back({LayerKind::Conv3x3, in, bottom});
    plan.push_back({LayerKind::Conv3x3, bottom, bottom});
    for (std::size_t level = cfg.depth; level-- > 0;) {
        const std::size_t ch = base << level;
        plan.push_back({LayerKind::UpConv2x2, ch * 2, ch});
        plan.push_back({LayerKind::Conv3x3, ch * 2, ch});
        plan.push_back({LayerKind::Conv3x3, ch, ch});
    }
    plan.push_back({LayerKind::Conv1x1, base, cfg.out_channels});
    return plan;
}

template <class T>
std::size_t BasicUNetParams<T>::parameter_count() const noexcept {
    std::size_t total = 0;
    for (const auto& l : layers) total += l.parameter_count();
    return total;
}

template <class T>
std::vector<T> BasicUNetParams<T>::flatten() const {
    std::vector<T> flat;
    flat.reserve(parameter_count());
    for (const auto& l : layers) {
        flat.insert(flat.end(), l.weights.values().begin(), l.weights.values().end());
        flat.insert(flat.end(), l.bias.begin(), l.bias.end());
    }
    return flat;
}

template <class T>
void BasicUNetParams<T>::assign(std::span<const T> flat) {
    if (flat.size() != parameter_count()) {
        throw ShapeError("assign: got " + std::to_string(flat.size()) + " values for " +
                         std::to_string(parameter_count()) + " parameters");
    }
    std::size_t pos = 0;
    for (auto& l : layers) {
        auto w = l.weights.data();
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), w.size(), w.begin());
        pos += w.size();
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.bias.size(), l.bias.begin());
        pos += l.bias.size();
    }
}

template <class T>
BasicUNetParams<T> BasicUNetParams<T>::zeros_like() const {
    BasicUNetParams z;
    z.layers.reserve(layers.size());
    for (const auto& l : layers) {
        z.layers.push_back({BasicTensor4<T>(l.weights.shape()), std::vector<T>(l.bias.size(), T(0))});
    }
    return z;
}

template struct BasicUNetParams<float>;
template struct BasicUNetParams<double>;

UNetParams init_params(const UNetConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    UNetParams params;
    for (const LayerSpec& spec : layer_plan(cfg)) {
        ConvParams layer{Tensor4(spec.weight_shape()), std::vector<float>(spec.out_channels, 0.0f)};
        // fan_in: number of products summed into one output element.
        // A 2x2 stride-2 upconv output pixel receives exactly one tap per input channel.
        const std::size_t fan_in = spec.kind == LayerKind::Conv3x3 ? spec.in_channels * 9 : spec.in_channels;
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (float& w : layer.weights.data()) w = static_cast<float>(rng.normal(0.0, stddev));
        params.layers.push_back(std::move(layer));
    }
    return params;
}

template <class T>
ForwardResult<T> forward(const UNetConfig& cfg, const BasicUNetParams<T>& params, const BasicTensor4<T>& batch) {
    check_layout(cfg, params);
    if (batch.c() != cfg.in_channels) {
        throw ShapeError("forward: batch " + batch.shape().to_string() + " must have " +
                         std::to_string(cfg.in_channels) + " channel(s)");
    }
    const std::size_t divisor = cfg.size_divisor();
    if (batch.h() % divisor != 0 || batch.w() % divisor != 0) {
        throw ShapeError("forward: spatial size " + std::to_string(batch.h()) + "x" + std::to_string(batch.w()) +
                         " must be divisible by 2^depth = " + std::to_string(divisor));
    }

    ForwardResult<T> r{BasicTensor4<T>(), BasicActivationCache<T>{}};
    BasicActivationCache<T>& c = r.cache;
    c.config = cfg;
    c.encoder.resize(cfg.depth);
    c.decoder.resize(cfg.depth);

    BasicTensor4<T> x = batch;
    for (std::size_t level = 0; level < cfg.depth; ++level) {
        EncoderCache<T>& e = c.encoder[level];
        e.input = std::move(x);
        e.act1 = conv_relu(e.input, params.layers[encoder_layer(level, 0)]);
        e.act2 = conv_relu(e.act1, params.layers[encoder_layer(level, 1)]);
        PoolResult<T> pooled = maxpool2(e.act2);
        e.pool = std::move(pooled.indices);
        x = std::move(pooled.output);
    }
    c.bottleneck_input = std::move(x);
    c.bottleneck_act1 = conv_relu(c.bottleneck_input, params.layers[bottleneck_layer(cfg, 0)]);
    c.bottleneck_act2 = conv_relu(c.bottleneck_act1, params.layers[bottleneck_layer(cfg, 1)]);

    const BasicTensor4<T>* below = &c.bottleneck_act2;
    for (std::size_t level = cfg.depth; level-- > 0;) {
        DecoderCache<T>& d = c.decoder[level];
        d.up_input = *below;
        const BasicTensor4<T> up = upconv2(d.up_input, params.layers[decoder_layer(cfg, level, 0)]);
        d.merged = concat_channels(c.encoder[level].act2, up);
        d.act1 = conv_relu(d.merged, params.layers[decoder_layer(cfg, level, 1)]);
        d.act2 = conv_relu(d.act1, params.layers[decoder_layer(cfg, level, 2)]);
        below = &d.act2;
    }
    r.logits = conv2d(c.decoder[0].act2, params.layers.back());
    c.logits_shape = r.logits.shape();
    return r;
}

template <class T>
BasicTensor4<T> infer(const UNetConfig& cfg, const BasicUNetParams<T>& params, const BasicTensor4<T>& batch) {
    return forward(cfg, params, batch).logits;
}

template <class T>
BasicUNetParams<T> backward(const BasicUNetParams<T>& params, BasicActivationCache<T> cache,
                            const BasicTensor4<T>& grad_logits) {
    const UNetConfig& cfg = cache.config;
    check_layout(cfg, params);
    if (grad_logits.shape() != cache.logits_shape) {
        throw ShapeError("backward: gradient " + grad_logits.shape().to_string() + " does not match logits " +
                         cache.logits_shape.to_string());
    }
    BasicUNetParams<T> grads = params.zeros_like();

    ConvGradients<T> head = conv2d_backward(cache.decoder[0].act2, params.layers.back(), grad_logits);
    grads.layers.back() = std::move(head.params);
    BasicTensor4<T> g = std::move(head.input);

    std::vector<BasicTensor4<T>> skip_grads(cfg.depth);
    for (std::size_t level = 0; level < cfg.depth; ++level) {
        DecoderCache<T>& d = cache.decoder[level];
        const std::size_t up_i = decoder_layer(cfg, level, 0);
        const std::size_t c1_i = decoder_layer(cfg, level, 1);
        const std::size_t c2_i = decoder_layer(cfg, level, 2);

        ConvGradients<T> r2 = conv2d_backward(d.act1, params.layers[c2_i], relu_backward(d.act2, g));
        grads.layers[c2_i] = std::move(r2.params);
        ConvGradients<T> r1 = conv2d_backward(d.merged, params.layers[c1_i], relu_backward(d.act1, r2.input));
        grads.layers[c1_i] = std::move(r1.params);
        auto [g_skip, g_up] = concat_channels_backward(r1.input, cache.encoder[level].act2.c());
        skip_grads[level] = std::move(g_skip);
        ConvGradients<T> ru = upconv2_backward(d.up_input, params.layers[up_i], g_up);
        grads.layers[up_i] = std::move(ru.params);
        g = std::move(ru.input);
    }

    {
        const std::size_t b1 = bottleneck_layer(cfg, 0), b2 = bottleneck_layer(cfg, 1);
        ConvGradients<T> r2 =
            conv2d_backward(cache.bottleneck_act1, params.layers[b2], relu_backward(cache.bottleneck_act2, g));
        grads.layers[b2] = std::move(r2.params);
        ConvGradients<T> r1 = conv2d_backward(cache.bottleneck_input, params.layers[b1],
                                           relu_backward(cache.bottleneck_act1, r2.input));
        grads.layers[b1] = std::move(r1.params);
        g = std::move(r1.input);
    }

    for (std::size_t level = cfg.depth; level-- > 0;) {
        EncoderCache<T>& e = cache.encoder[level];
        BasicTensor4<T> g_act2 = maxpool2_backward(e.pool, g);
        add_inplace(g_act2, skip_grads[level]);
        const std::size_t c1_i = encoder_layer(level, 0), c2_i = encoder_layer(level, 1);
        ConvGradients<T> r2 = conv2d_backward(e.act1, params.layers[c2_i], relu_backward(e.act2, g_act2));
        grads.layers[c2_i] = std::move(r2.params);
        ConvGradients<T> r1 = conv2d_backward(e.input, params.layers[c1_i], relu_backward(e.act1, r2.input));
        grads.layers[c1_i] = std::move(r1.params);
        g = std::move(r1.input);
    }
    return grads;
}

namespace {

struct PatternHasher {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a

    void bit(bool b) {
        h ^= b ? 1u : 0u;
        h *= 0x100000001B3ULL;
    }
    template <class T>
    void relu_mask(const BasicTensor4<T>& act) {
        for (T v : act.data()) bit(v > T(0));
    }
    void pool(const PoolIndices& idx) {
        for (std::uint8_t k : idx.argmax) {
            h ^= k;
            h *= 0x100000001B3ULL;
        }
    }
};

}  // namespace

template <class T>
std::uint64_t activation_pattern(const BasicActivationCache<T>& cache) {
    PatternHasher ph;
    for (const auto& e : cache.encoder) {
        ph.relu_mask(e.act1);
        ph.relu_mask(e.act2);
        ph.pool(e.pool);
    }
    ph.relu_mask(cache.bottleneck_act1);
    ph.relu_mask(cache.bottleneck_act2);
    for (const auto& d : cache.decoder) {
        ph.relu_mask(d.act1);
        ph.relu_mask(d.act2);
    }
    return ph.h;
}

#define TBSEG_INSTANTIATE_UNET(T)                                                                           \
    template ForwardResult<T> forward(const UNetConfig&, const BasicUNetParams<T>&, const BasicTensor4<T>&); \
    template BasicTensor4<T> infer(const UNetConfig&, const BasicUNetParams<T>&, const BasicTensor4<T>&);    \
    template BasicUNetParams<T> backward(const BasicUNetParams<T>&, BasicActivationCache<T>,                \
                                         const BasicTensor4<T>&);                                           \
    template std::uint64_t activation_pattern(const BasicActivationCache<T>&);

TBSEG_INSTANTIATE_UNET(float)
TBSEG_INSTANTIATE_UNET(double)

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian):
//   "UNET" | u32 version | u32 depth | u32 base | u32 in | u32 out
//   per tensor: u32 rank | rank x u32 dims | row-major f32 values
// Tensors are the weights then the bias of each layer in canonical order.

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    put_u32(out, bits);
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t remaining() const { return bytes_.size() - pos_; }

    std::uint32_t u32(const char* what, std::optional<std::size_t> tensor = std::nullopt) {
        if (remaining() < 4) {
            throw CheckpointError(ErrorCode::Truncated, std::string("file ends inside ") + what +
                                      (tensor ? " of tensor " + std::to_string(*tensor) : std::string()),
                                  tensor);
        }
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
        pos_ += 4;
        return v;
    }

    float f32() {
        const std::uint32_t bits = u32("tensor data");
        float f;
        std::memcpy(&f, &bits, sizeof f);
        return f;
    }

    std::span<const std::uint8_t> take(std::size_t n) {
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void put_tensor(std::vector<std::uint8_t>& out, std::span<const std::size_t> dims, std::span<const float> values) {
    put_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (std::size_t d : dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : values) put_f32(out, v);
}

std::vector<float> read_tensor(Reader& in, std::size_t index, std::span<const std::size_t> expected_dims) {
    const std::uint32_t rank = in.u32("rank", index);
    if (rank < 1 || rank > 4) {
        throw CheckpointError(ErrorCode::BadRank,
                              "tensor " + std::to_string(index) + " has rank " + std::to_string(rank), index);
    }
    std::vector<std::size_t> dims(rank);
    std::uint64_t count = 1;
    for (auto& d : dims) {
        d = in.u32("dims", index);
        count *= d;
        if (count > kMaxTensorElements) {
            throw CheckpointError(ErrorCode::DimOverflow,
                                  "tensor " + std::to_string(index) + " dimensions exceed " +
                                      std::to_string(kMaxTensorElements) + " elements",
                                  index);
        }
    }
    if (!std::equal(dims.begin(), dims.end(), expected_dims.begin(), expected_dims.end())) {
        throw CheckpointError(ErrorCode::LayoutMismatch,
                              "tensor " + std::to_string(index) + " dimensions do not match the configured layout",
                              index);
    }
    if (in.remaining() < count * 4) {
        throw CheckpointError(ErrorCode::Truncated,
                              "file ends inside the values of tensor " + std::to_string(index), index);
    }
    std::vector<float> values(count);
    for (auto& v : values) v = in.f32();
    return values;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const UNetParams& params, const UNetConfig& cfg) {
    check_layout(cfg, params);
    std::vector<std::uint8_t> out = {'U', 'N', 'E', 'T'};
    put_u32(out, kCheckpointVersion);
    put_u32(out, cfg.depth);
    put_u32(out, cfg.base_channels);
    put_u32(out, cfg.in_channels);
    put_u32(out, cfg.out_channels);
    for (const auto& layer : params.layers) {
        const Shape4& s = layer.weights.shape();
        const std::size_t wdims[4] = {s.n, s.c, s.h, s.w};
        put_tensor(out, wdims, layer.weights.data());
        const std::size_t bdims[1] = {layer.bias.size()};
        put_tensor(out, bdims, layer.bias);
    }
    return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader in(bytes);
    if (in.remaining() < 4) throw CheckpointError(ErrorCode::Truncated, "file ends inside magic");
    const auto magic = in.take(4);
    if (!(magic[0] == 'U' && magic[1] == 'N' && magic[2] == 'E' && magic[3] == 'T')) {
        throw CheckpointError(ErrorCode::BadMagic, "expected magic \"UNET\"");
    }
    const std::uint32_t version = in.u32("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError(ErrorCode::UnsupportedVersion, "version " + std::to_string(version) +
                                                                 " (supported: " +
                                                                 std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ck;
    ck.config.depth = in.u32("header");
    ck.config.base_channels = in.u32("header");
    ck.config.in_channels = in.u32("header");
    ck.config.out_channels = in.u32("header");
    try {
        ck.config.validate();
    } catch (const DomainError& e) {
        throw CheckpointError(ErrorCode::InvalidConfig, e.what());
    }

    std::size_t index = 0;
    for (const LayerSpec& spec : layer_plan(ck.config)) {
        const Shape4 ws = spec.weight_shape();
        const std::size_t wdims[4] = {ws.n, ws.c, ws.h, ws.w};
        std::vector<float> w = read_tensor(in, index++, wdims);
        const std::size_t bdims[1] = {spec.out_channels};
        std::vector<float> b = read_tensor(in, index++, bdims);
        ck.params.layers.push_back({Tensor4(ws, std::move(w)), std::move(b)});
    }
    if (in.remaining() != 0) {
        throw CheckpointError(ErrorCode::TrailingData,
                              std::to_string(in.remaining()) + " unexpected bytes after the last tensor");
    }
    return ck;
}

void save_checkpoint(const UNetParams& params, const UNetConfig& cfg, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(params, cfg);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

GradCheckResult check_unet_gradients(const UNetGradCheckOptions& options) {
    const UNetConfig cfg{1, 2, 1, 1};
    BasicUNetParams<double> params = params_cast<double>(init_params(cfg, options.seed));

    Rng data_rng(derive_seed(options.seed, 1));
    // Zero biases put pre-activations of dead regions exactly on the ReLU kink,
    // where the two one-sided derivatives differ; move off it.
    for (auto& layer : params.layers) {
        for (double& b : layer.bias) b = data_rng.normal(0.0, 0.1);
    }
    const Shape4 shape{1, 1, options.size, options.size};
    Tensor4d input(shape);
    for (double& v : input.data()) v = data_rng.uniform();
    Tensor4d targets(shape);
    for (double& v : targets.data()) v = data_rng.uniform() < 0.5 ? 0.0 : 1.0;

    auto at = [&params](std::span<const double> theta) {
        BasicUNetParams<double> p = params;
        p.assign(theta);
        return p;
    };

    FiniteDiffOptions fd;
    fd.step = options.step;
    fd.region = [&](std::span<const double> theta) {
        return activation_pattern(forward(cfg, at(theta), input).cache);
    };
    const ScalarObjective objective = [&](std::span<const double> theta) {
        return bce_with_logits(infer(cfg, at(theta), input), targets);
    };
    const GradientFn gradient = [&](std::span<const double> theta) {
        const auto p = at(theta);
        ForwardResult<double> f = forward(cfg, p, input);
        const Tensor4d g = bce_with_logits_backward(f.logits, targets);
        std::vector<double> out = backward(p, std::move(f.cache), g).flatten();
        if (options.negate_gradient_index && *options.negate_gradient_index < out.size()) {
            out[*options.negate_gradient_index] = -out[*options.negate_gradient_index];
        }
        return out;
    };

    const std::vector<double> theta = params.flatten();
    return finite_diff_check(objective, gradient, theta, fd);
}

}  // namespace tbseg
