#ifndef TBSEG_TENSOR_HPP
#define TBSEG_TENSOR_HPP

// Rank-4 tensors and the forward / reverse-mode kernels the U-Net is
// built from. Every kernel is a pure function of its arguments and accumulates
// each output element in a fixed serial order.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tbseg {

struct Shape4 {
    std::size_t n = 1;
    std::size_t c = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    std::size_t count() const noexcept { return n * c * h * w; }
    std::size_t plane() const noexcept { return h * w; }
    std::string to_string() const;

    friend bool operator==(const Shape4&, const Shape4&) = default;
};

template <class T>
class BasicTensor4 {
public:
    using value_type = T;

    BasicTensor4() : BasicTensor4(Shape4{}) {}
    explicit BasicTensor4(Shape4 shape, T fill = T(0));
    BasicTensor4(Shape4 shape, std::vector<T> values);

    const Shape4& shape() const noexcept { return shape_; }
    std::size_t n() const noexcept { return shape_.n; }
    std::size_t c() const noexcept { return shape_.c; }
    std::size_t h() const noexcept { return shape_.h; }
    std::size_t w() const noexcept { return shape_.w; }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
        return data_[index(n, c, y, x)];
    }
    T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return data_[index(n, c, y, x)];
    }

    /// One (n, c) feature map, h·w values.
    T* plane(std::size_t n, std::size_t c) noexcept { return data_.data() + index(n, c, 0, 0); }
    const T* plane(std::size_t n, std::size_t c) const noexcept {
        return data_.data() + index(n, c, 0, 0);
    }

    friend bool operator==(const BasicTensor4&, const BasicTensor4&) = default;

private:
    Shape4 shape_;
    std::vector<T> data_;
};

using Tensor4 = BasicTensor4<float>;
using Tensor4d = BasicTensor4<double>;

template <class To, class From>
BasicTensor4<To> tensor_cast(const BasicTensor4<From>& t) {
    return BasicTensor4<To>(t.shape(), std::vector<To>(t.values().begin(), t.values().end()));
}

/// Weights and bias of a convolution. Same-padded convolutions store weights as
/// (out, in, kh, kw); stride-2 transposed convolutions as (in, out, 2, 2).
template <class T>
struct BasicConvParams {
    BasicTensor4<T> weights;
    std::vector<T> bias;

    static BasicConvParams conv(std::size_t out_channels, std::size_t in_channels, std::size_t kernel) {
        return {BasicTensor4<T>({out_channels, in_channels, kernel, kernel}), std::vector<T>(out_channels, T(0))};
    }
    static BasicConvParams upconv(std::size_t in_channels, std::size_t out_channels) {
        return {BasicTensor4<T>({in_channels, out_channels, 2, 2}), std::vector<T>(out_channels, T(0))};
    }

    std::size_t parameter_count() const noexcept { return weights.size() + bias.size(); }

    friend bool operator==(const BasicConvParams&, const BasicConvParams&) = default;
};

using ConvParams = BasicConvParams<float>;

/// Per pooled cell, the row-major position (0..3) of the maximum in its 2x2 window.
struct PoolIndices {
    Shape4 shape;
    std::vector<std::uint8_t> argmax;
};

template <class T>
struct PoolResult {
    BasicTensor4<T> output;
    PoolIndices indices;
};

template <class T>
struct ConvGradients {
    BasicTensor4<T> input;
    BasicConvParams<T> params;
};

// Kernels are instantiated for float (training and inference) and double
// (gradient checking).

// conv2d: stride 1, zero same-padding of (k-1)/2, odd square or rectangular kernels.
template <class T>
BasicTensor4<T> conv2d(const BasicTensor4<T>& input, const BasicConvParams<T>& p);
template <class T>
ConvGradients<T> conv2d_backward(const BasicTensor4<T>& input, const BasicConvParams<T>& p,
                                 const BasicTensor4<T>& grad_output);

template <class T>
PoolResult<T> maxpool2(const BasicTensor4<T>& input);
template <class T>
BasicTensor4<T> maxpool2_backward(const PoolIndices& indices, const BasicTensor4<T>& grad_output);

// upconv2: 2x2 transposed convolution with stride 2, no padding.
template <class T>
BasicTensor4<T> upconv2(const BasicTensor4<T>& input, const BasicConvParams<T>& p);
template <class T>
ConvGradients<T> upconv2_backward(const BasicTensor4<T>& input, const BasicConvParams<T>& p,
                                  const BasicTensor4<T>& grad_output);

template <class T>
BasicTensor4<T> relu(const BasicTensor4<T>& input);
/// `activation` may be either the relu input or its output: both are > 0 at
/// exactly the same positions. The derivative at 0 is 0.
template <class T>
BasicTensor4<T> relu_backward(const BasicTensor4<T>& activation, const BasicTensor4<T>& grad_output);

float sigmoid(float x) noexcept;
double sigmoid(double x) noexcept;
template <class T>
BasicTensor4<T> sigmoid(const BasicTensor4<T>& input);
/// Takes the sigmoid output y and returns grad·y·(1-y).
template <class T>
BasicTensor4<T> sigmoid_backward(const BasicTensor4<T>& output, const BasicTensor4<T>& grad_output);

template <class T>
BasicTensor4<T> concat_channels(const BasicTensor4<T>& a, const BasicTensor4<T>& b);
template <class T>
std::pair<BasicTensor4<T>, BasicTensor4<T>> concat_channels_backward(const BasicTensor4<T>& grad_output,
                                                                     std::size_t a_channels);

/// Mean binary cross-entropy on logits: max(z,0) - z·y + log(1 + e^-|z|).
/// Accumulated in double. Targets must be exactly 0 or 1.
template <class T>
double bce_with_logits(const BasicTensor4<T>& logits, const BasicTensor4<T>& targets);
/// Gradient of the mean loss: (sigmoid(z) - y) / count.
template <class T>
BasicTensor4<T> bce_with_logits_backward(const BasicTensor4<T>& logits, const BasicTensor4<T>& targets);

}  // namespace tbseg

#endif  // TBSEG_TENSOR_HPP
