#ifndef TBSEG_UNET_HPP
#define TBSEG_UNET_HPP

// Configurable U-Net: contracting path of (conv3x3-relu)x2 + maxpool blocks,
// a bottleneck, and an expansive path of upconv + skip concat +
// (conv3x3-relu)x2 blocks, closed by a 1x1 convolution producing logits.
// Same padding throughout, so logits have the input's spatial size.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "tbseg/gradcheck.hpp"
#include "tbseg/tensor.hpp"

namespace tbseg {

struct UNetConfig {
    std::uint32_t depth = 4;
    std::uint32_t base_channels = 64;
    std::uint32_t in_channels = 1;
    std::uint32_t out_channels = 1;

    /// Spatial sizes fed to the network must be multiples of this (2^depth).
    std::size_t size_divisor() const noexcept { return std::size_t{1} << depth; }
    /// Throws DomainError when any field is out of range.
    void validate() const;

    friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

enum class LayerKind { Conv3x3, UpConv2x2, Conv1x1 };

struct LayerSpec {
    LayerKind kind;
    std::size_t in_channels;
    std::size_t out_channels;

    Shape4 weight_shape() const;
};

/// Canonical layer order: encoder levels top-down (conv1, conv2), bottleneck
/// (conv1, conv2), decoder levels bottom-up (upconv, conv1, conv2), 1x1 head.
std::vector<LayerSpec> layer_plan(const UNetConfig& cfg);

/// Network parameters in canonical layer order. Gradients use the same type.
template <class T>
struct BasicUNetParams {
    std::vector<BasicConvParams<T>> layers;

    std::size_t parameter_count() const noexcept;
    /// Weights then bias of each layer, in canonical order.
    std::vector<T> flatten() const;
    void assign(std::span<const T> flat);
    BasicUNetParams zeros_like() const;

    friend bool operator==(const BasicUNetParams&, const BasicUNetParams&) = default;
};

using UNetParams = BasicUNetParams<float>;

template <class To, class From>
BasicUNetParams<To> params_cast(const BasicUNetParams<From>& p) {
    BasicUNetParams<To> out;
    out.layers.reserve(p.layers.size());
    for (const auto& l : p.layers) {
        out.layers.push_back({tensor_cast<To>(l.weights), std::vector<To>(l.bias.begin(), l.bias.end())});
    }
    return out;
}

/// He-normal weights (stddev sqrt(2 / fan_in)) and zero biases, drawn from a
/// SplitMix64 stream in canonical order.
UNetParams init_params(const UNetConfig& cfg, std::uint64_t seed);

template <class T>
struct EncoderCache {
    BasicTensor4<T> input;
    BasicTensor4<T> act1;
    BasicTensor4<T> act2;  // skip connection
    PoolIndices pool;
};

template <class T>
struct DecoderCache {
    BasicTensor4<T> up_input;
    BasicTensor4<T> merged;  // concat(skip, upconv output)
    BasicTensor4<T> act1;
    BasicTensor4<T> act2;
};

/// Everything the backward pass needs from one forward call.
template <class T>
struct BasicActivationCache {
    UNetConfig config;
    std::vector<EncoderCache<T>> encoder;  // top-down
    BasicTensor4<T> bottleneck_input;
    BasicTensor4<T> bottleneck_act1;
    BasicTensor4<T> bottleneck_act2;
    std::vector<DecoderCache<T>> decoder;  // indexed by level, 0 = full resolution
    Shape4 logits_shape;
};

using ActivationCache = BasicActivationCache<float>;

template <class T>
struct ForwardResult {
    BasicTensor4<T> logits;
    BasicActivationCache<T> cache;
};

template <class T>
ForwardResult<T> forward(const UNetConfig& cfg, const BasicUNetParams<T>& params, const BasicTensor4<T>& batch);

/// Forward pass without keeping the cache.
template <class T>
BasicTensor4<T> infer(const UNetConfig& cfg, const BasicUNetParams<T>& params, const BasicTensor4<T>& batch);

template <class T>
BasicUNetParams<T> backward(const BasicUNetParams<T>& params, BasicActivationCache<T> cache,
                            const BasicTensor4<T>& grad_logits);

/// Hash of every ReLU on/off state and max-pool argmax of a forward pass.
/// Two parameter vectors with equal patterns lie on the same linear piece of
/// the network.
template <class T>
std::uint64_t activation_pattern(const BasicActivationCache<T>& cache);

struct Checkpoint {
    UNetParams params;
    UNetConfig config;
};

std::vector<std::uint8_t> encode_checkpoint(const UNetParams& params, const UNetConfig& cfg);
/// Throws CheckpointError (bad-magic, unsupported-version, truncated, ...).
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const UNetParams& params, const UNetConfig& cfg, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct UNetGradCheckOptions {
    std::uint64_t seed = 42;
    std::size_t size = 8;
    double step = 1e-3;
    /// Test hook: flip the sign of this analytic gradient coordinate.
    std::optional<std::size_t> negate_gradient_index;
};

/// Gradient check of a depth-1, base-2 model on a seeded size x size input
/// with seeded binary targets; the objective is the mean BCE of the logits.
/// Evaluated in double precision with the activation pattern as the region
/// signature, so probes that cross a ReLU or max-pool switch are refined.
GradCheckResult check_unet_gradients(const UNetGradCheckOptions& options);

}  // namespace tbseg

#endif  // TBSEG_UNET_HPP
