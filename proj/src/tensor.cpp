#include "tbseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tbseg/error.hpp"

namespace tbseg {

namespace {

void require_valid(const Shape4& s) {
    if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
        throw ShapeError("tensor dimensions must all be >= 1, got " + s.to_string());
    }
}

template <class T>
void require_same_shape(const BasicTensor4<T>& a, const BasicTensor4<T>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shapes differ, " + a.shape().to_string() + " vs " +
                         b.shape().to_string());
    }
}

// Valid output range [lo, hi) for a tap at offset d along an axis of length len.
struct Span {
    std::size_t lo;
    std::size_t hi;
};

Span valid_range(std::ptrdiff_t d, std::size_t len) {
    const auto n = static_cast<std::ptrdiff_t>(len);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -d);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, n - d);
    if (hi <= lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <class T>
void check_conv(const BasicTensor4<T>& input, const BasicConvParams<T>& p) {
    const Shape4& ws = p.weights.shape();
    if (ws.c != input.c()) {
        throw ShapeError("conv2d: input " + input.shape().to_string() + " has " +
                         std::to_string(input.c()) + " channels but kernel " + ws.to_string() +
                         " expects " + std::to_string(ws.c));
    }
    if (ws.h % 2 == 0 || ws.w % 2 == 0) {
        throw ShapeError("conv2d: same-padding needs an odd kernel, got " + ws.to_string());
    }
    if (p.bias.size() != ws.n) {
        throw ShapeError("conv2d: bias length " + std::to_string(p.bias.size()) +
                         " does not match kernel " + ws.to_string());
    }
}

template <class T>
void check_upconv(const BasicTensor4<T>& input, const BasicConvParams<T>& p) {
    const Shape4& ws = p.weights.shape();
    if (ws.h != 2 || ws.w != 2) {
        throw ShapeError("upconv2: kernel must be 2x2, got " + ws.to_string());
    }
    if (ws.n != input.c()) {
        throw ShapeError("upconv2: input " + input.shape().to_string() + " has " +
                         std::to_string(input.c()) + " channels but kernel " + ws.to_string() +
                         " expects " + std::to_string(ws.n));
    }
    if (p.bias.size() != ws.c) {
        throw ShapeError("upconv2: bias length " + std::to_string(p.bias.size()) +
                         " does not match kernel " + ws.to_string());
    }
}

}  // namespace

std::string Shape4::to_string() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
}

template <class T>
BasicTensor4<T>::BasicTensor4(Shape4 shape, T fill) : shape_(shape) {
    require_valid(shape_);
    data_.assign(shape_.count(), fill);
}

template <class T>
BasicTensor4<T>::BasicTensor4(Shape4 shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    require_valid(shape_);
    if (data_.size() != shape_.count()) {
        throw ShapeError("tensor " + shape_.to_string() + " needs " + std::to_string(shape_.count()) +
                         " values, got " + std::to_string(data_.size()));
    }
}

template <class T>
BasicTensor4<T> conv2d(const BasicTensor4<T>& input, const BasicConvParams<T>& p) {
    check_conv(input, p);
    const Shape4& ws = p.weights.shape();
    const std::size_t H = input.h(), W = input.w();
    const auto ph = static_cast<std::ptrdiff_t>(ws.h / 2), pw = static_cast<std::ptrdiff_t>(ws.w / 2);
    BasicTensor4<T> out({input.n(), ws.n, H, W});

    for (std::size_t n = 0; n < input.n(); ++n) {
        for (std::size_t oc = 0; oc < ws.n; ++oc) {
            T* dst = out.plane(n, oc);
            std::fill(dst, dst + H * W, p.bias[oc]);
            for (std::size_t ic = 0; ic < ws.c; ++ic) {
                const T* src = input.plane(n, ic);
                for (std::size_t ky = 0; ky < ws.h; ++ky) {
                    const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
                    const Span ys = valid_range(dy, H);
                    for (std::size_t kx = 0; kx < ws.w; ++kx) {
                        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
                        const Span xs = valid_range(dx, W);
                        const T k = p.weights.at(oc, ic, ky, kx);
                        for (std::size_t y = ys.lo; y < ys.hi; ++y) {
                            T* orow = dst + y * W;
                            const T* irow = src + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * W;
                            for (std::size_t x = xs.lo; x < xs.hi; ++x) orow[x] += k * irow[static_cast<std::ptrdiff_t>(x) + dx];
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <class T>
ConvGradients<T> conv2d_backward(const BasicTensor4<T>& input, const BasicConvParams<T>& p, const BasicTensor4<T>& grad_output) {
    check_conv(input, p);
    const Shape4& ws = p.weights.shape();
    const Shape4 expected{input.n(), ws.n, input.h(), input.w()};
    if (grad_output.shape() != expected) {
        throw ShapeError("conv2d_backward: upstream gradient " + grad_output.shape().to_string() +
                         " does not match output " + expected.to_string());
    }
    const std::size_t H = input.h(), W = input.w();
    const auto ph = static_cast<std::ptrdiff_t>(ws.h / 2), pw = static_cast<std::ptrdiff_t>(ws.w / 2);

    ConvGradients<T> g{BasicTensor4<T>(input.shape()), BasicConvParams<T>{BasicTensor4<T>(ws), std::vector<T>(ws.n, T(0))}};

    // d input: correlate the upstream gradient with the flipped kernel.
    for (std::size_t n = 0; n < input.n(); ++n) {
        for (std::size_t ic = 0; ic < ws.c; ++ic) {
            T* dst = g.input.plane(n, ic);
            for (std::size_t oc = 0; oc < ws.n; ++oc) {
                const T* up = grad_output.plane(n, oc);
                for (std::size_t ky = 0; ky < ws.h; ++ky) {
                    const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
                    const Span ys = valid_range(dy, H);
                    for (std::size_t kx = 0; kx < ws.w; ++kx) {
                        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
                        const Span xs = valid_range(dx, W);
                        const T k = p.weights.at(oc, ic, ky, kx);
                        // output (y, x) read input (y+dy, x+dx)
                        for (std::size_t y = ys.lo; y < ys.hi; ++y) {
                            T* drow = dst + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * W;
                            const T* urow = up + y * W;
                            for (std::size_t x = xs.lo; x < xs.hi; ++x) drow[static_cast<std::ptrdiff_t>(x) + dx] += k * urow[x];
                        }
                    }
                }
            }
        }
    }

    // d weights, d bias. Row partials keep the inner loop vectorisable while the
    // final reduction order stays fixed.
    std::vector<T> partial(W);
    for (std::size_t oc = 0; oc < ws.n; ++oc) {
        std::fill(partial.begin(), partial.end(), T(0));
        for (std::size_t n = 0; n < input.n(); ++n) {
            const T* up = grad_output.plane(n, oc);
            for (std::size_t y = 0; y < H; ++y) {
                for (std::size_t x = 0; x < W; ++x) partial[x] += up[y * W + x];
            }
        }
        T b = T(0);
        for (T v : partial) b += v;
        g.params.bias[oc] = b;

        for (std::size_t ic = 0; ic < ws.c; ++ic) {
            for (std::size_t ky = 0; ky < ws.h; ++ky) {
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
                const Span ys = valid_range(dy, H);
                for (std::size_t kx = 0; kx < ws.w; ++kx) {
                    const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
                    const Span xs = valid_range(dx, W);
                    std::fill(partial.begin(), partial.end(), T(0));
                    for (std::size_t n = 0; n < input.n(); ++n) {
                        const T* up = grad_output.plane(n, oc);
                        const T* src = input.plane(n, ic);
                        for (std::size_t y = ys.lo; y < ys.hi; ++y) {
                            const T* urow = up + y * W;
                            const T* irow = src + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * W;
                            for (std::size_t x = xs.lo; x < xs.hi; ++x) partial[x] += urow[x] * irow[static_cast<std::ptrdiff_t>(x) + dx];
                        }
                    }
                    T acc = T(0);
                    for (T v : partial) acc += v;
                    g.params.weights.at(oc, ic, ky, kx) = acc;
                }
            }
        }
    }
    return g;
}

template <class T>
PoolResult<T> maxpool2(const BasicTensor4<T>& input) {
    if (input.h() % 2 != 0 || input.w() % 2 != 0) {
        throw ShapeError("maxpool2: height and width must be even, got " + input.shape().to_string());
    }
    const std::size_t oh = input.h() / 2, ow = input.w() / 2, W = input.w();
    const Shape4 os{input.n(), input.c(), oh, ow};
    PoolResult<T> r{BasicTensor4<T>(os), PoolIndices{os, std::vector<std::uint8_t>(os.count())}};
    for (std::size_t n = 0; n < input.n(); ++n) {
        for (std::size_t c = 0; c < input.c(); ++c) {
            const T* src = input.plane(n, c);
            T* dst = r.output.plane(n, c);
            std::uint8_t* idx = r.indices.argmax.data() + r.output.index(n, c, 0, 0);
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    const T* win = src + 2 * y * W + 2 * x;
                    const T cand[4] = {win[0], win[1], win[W], win[W + 1]};
                    std::uint8_t best = 0;
                    for (std::uint8_t k = 1; k < 4; ++k) {
                        if (cand[k] > cand[best]) best = k;  // strict: first maximum wins
                    }
                    dst[y * ow + x] = cand[best];
                    idx[y * ow + x] = best;
                }
            }
        }
    }
    return r;
}

template <class T>
BasicTensor4<T> maxpool2_backward(const PoolIndices& indices, const BasicTensor4<T>& grad_output) {
    if (grad_output.shape() != indices.shape) {
        throw ShapeError("maxpool2_backward: upstream gradient " + grad_output.shape().to_string() +
                         " does not match pooled shape " + indices.shape.to_string());
    }
    const Shape4& os = indices.shape;
    const std::size_t W = os.w * 2;
    BasicTensor4<T> g({os.n, os.c, os.h * 2, W});
    for (std::size_t n = 0; n < os.n; ++n) {
        for (std::size_t c = 0; c < os.c; ++c) {
            const T* up = grad_output.plane(n, c);
            const std::uint8_t* idx = indices.argmax.data() + grad_output.index(n, c, 0, 0);
            T* dst = g.plane(n, c);
            for (std::size_t y = 0; y < os.h; ++y) {
                for (std::size_t x = 0; x < os.w; ++x) {
                    const std::uint8_t k = idx[y * os.w + x];
                    dst[(2 * y + k / 2) * W + 2 * x + k % 2] = up[y * os.w + x];
                }
            }
        }
    }
    return g;
}

template <class T>
BasicTensor4<T> upconv2(const BasicTensor4<T>& input, const BasicConvParams<T>& p) {
    check_upconv(input, p);
    const Shape4& ws = p.weights.shape();
    const std::size_t H = input.h(), W = input.w(), OW = 2 * W;
    BasicTensor4<T> out({input.n(), ws.c, 2 * H, OW});
    for (std::size_t n = 0; n < input.n(); ++n) {
        for (std::size_t oc = 0; oc < ws.c; ++oc) {
            T* dst = out.plane(n, oc);
            std::fill(dst, dst + 4 * H * W, p.bias[oc]);
            for (std::size_t ic = 0; ic < ws.n; ++ic) {
                const T* src = input.plane(n, ic);
                for (std::size_t ky = 0; ky < 2; ++ky) {
                    for (std::size_t kx = 0; kx < 2; ++kx) {
                        const T k = p.weights.at(ic, oc, ky, kx);
                        for (std::size_t y = 0; y < H; ++y) {
                            T* orow = dst + (2 * y + ky) * OW + kx;
                            const T* irow = src + y * W;
                            for (std::size_t x = 0; x < W; ++x) orow[2 * x] += k * irow[x];
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <class T>
ConvGradients<T> upconv2_backward(const BasicTensor4<T>& input, const BasicConvParams<T>& p, const BasicTensor4<T>& grad_output) {
    check_upconv(input, p);
    const Shape4& ws = p.weights.shape();
    const std::size_t H = input.h(), W = input.w(), OW = 2 * W;
    const Shape4 expected{input.n(), ws.c, 2 * H, OW};
    if (grad_output.shape() != expected) {
        throw ShapeError("upconv2_backward: upstream gradient " + grad_output.shape().to_string() +
                         " does not match output " + expected.to_string());
    }
    ConvGradients<T> g{BasicTensor4<T>(input.shape()), BasicConvParams<T>{BasicTensor4<T>(ws), std::vector<T>(ws.c, T(0))}};

    for (std::size_t n = 0; n < input.n(); ++n) {
        for (std::size_t ic = 0; ic < ws.n; ++ic) {
            T* dst = g.input.plane(n, ic);
            for (std::size_t oc = 0; oc < ws.c; ++oc) {
                const T* up = grad_output.plane(n, oc);
                for (std::size_t ky = 0; ky < 2; ++ky) {
                    for (std::size_t kx = 0; kx < 2; ++kx) {
                        const T k = p.weights.at(ic, oc, ky, kx);
                        for (std::size_t y = 0; y < H; ++y) {
                            const T* urow = up + (2 * y + ky) * OW + kx;
                            T* drow = dst + y * W;
                            for (std::size_t x = 0; x < W; ++x) drow[x] += k * urow[2 * x];
                        }
                    }
                }
            }
        }
    }

    std::vector<T> partial(W);
    for (std::size_t oc = 0; oc < ws.c; ++oc) {
        T b = T(0);
        for (std::size_t n = 0; n < input.n(); ++n) {
            const T* up = grad_output.plane(n, oc);
            for (std::size_t i = 0; i < 4 * H * W; ++i) b += up[i];
        }
        g.params.bias[oc] = b;
        for (std::size_t ic = 0; ic < ws.n; ++ic) {
            for (std::size_t ky = 0; ky < 2; ++ky) {
                for (std::size_t kx = 0; kx < 2; ++kx) {
                    std::fill(partial.begin(), partial.end(), T(0));
                    for (std::size_t n = 0; n < input.n(); ++n) {
                        const T* up = grad_output.plane(n, oc);
                        const T* src = input.plane(n, ic);
                        for (std::size_t y = 0; y < H; ++y) {
                            const T* urow = up + (2 * y + ky) * OW + kx;
                            const T* irow = src + y * W;
                            for (std::size_t x = 0; x < W; ++x) partial[x] += urow[2 * x] * irow[x];
                        }
                    }
                    T acc = T(0);
                    for (T v : partial) acc += v;
                    g.params.weights.at(ic, oc, ky, kx) = acc;
                }
            }
        }
    }
    return g;
}

template <class T>
BasicTensor4<T> relu(const BasicTensor4<T>& input) {
    BasicTensor4<T> out(input.shape());
    auto src = input.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
    return out;
}

template <class T>
BasicTensor4<T> relu_backward(const BasicTensor4<T>& activation, const BasicTensor4<T>& grad_output) {
    require_same_shape(activation, grad_output, "relu_backward");
    BasicTensor4<T> g(activation.shape());
    auto act = activation.data();
    auto up = grad_output.data();
    auto dst = g.data();
    for (std::size_t i = 0; i < act.size(); ++i) dst[i] = act[i] > T(0) ? up[i] : T(0);
    return g;
}

namespace {

template <class T>
T stable_sigmoid(T x) noexcept {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace

float sigmoid(float x) noexcept { return stable_sigmoid(x); }
double sigmoid(double x) noexcept { return stable_sigmoid(x); }

template <class T>
BasicTensor4<T> sigmoid(const BasicTensor4<T>& input) {
    BasicTensor4<T> out(input.shape());
    auto src = input.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = sigmoid(src[i]);
    return out;
}

template <class T>
BasicTensor4<T> sigmoid_backward(const BasicTensor4<T>& output, const BasicTensor4<T>& grad_output) {
    require_same_shape(output, grad_output, "sigmoid_backward");
    BasicTensor4<T> g(output.shape());
    auto y = output.data();
    auto up = grad_output.data();
    auto dst = g.data();
    for (std::size_t i = 0; i < y.size(); ++i) dst[i] = up[i] * y[i] * (T(1) - y[i]);
    return g;
}

template <class T>
BasicTensor4<T> concat_channels(const BasicTensor4<T>& a, const BasicTensor4<T>& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
        throw ShapeError("concat_channels: batch/spatial mismatch, " + a.shape().to_string() + " vs " +
                         b.shape().to_string());
    }
    BasicTensor4<T> out({a.n(), a.c() + b.c(), a.h(), a.w()});
    const std::size_t plane = a.shape().plane();
    for (std::size_t n = 0; n < a.n(); ++n) {
        std::copy_n(a.plane(n, 0), a.c() * plane, out.plane(n, 0));
        std::copy_n(b.plane(n, 0), b.c() * plane, out.plane(n, a.c()));
    }
    return out;
}

template <class T>
std::pair<BasicTensor4<T>, BasicTensor4<T>> concat_channels_backward(const BasicTensor4<T>& grad_output, std::size_t a_channels) {
    if (a_channels == 0 || a_channels >= grad_output.c()) {
        throw ShapeError("concat_channels_backward: split at channel " + std::to_string(a_channels) +
                         " invalid for " + grad_output.shape().to_string());
    }
    const Shape4& s = grad_output.shape();
    BasicTensor4<T> ga({s.n, a_channels, s.h, s.w});
    BasicTensor4<T> gb({s.n, s.c - a_channels, s.h, s.w});
    const std::size_t plane = s.plane();
    for (std::size_t n = 0; n < s.n; ++n) {
        std::copy_n(grad_output.plane(n, 0), a_channels * plane, ga.plane(n, 0));
        std::copy_n(grad_output.plane(n, a_channels), (s.c - a_channels) * plane, gb.plane(n, 0));
    }
    return {std::move(ga), std::move(gb)};
}

namespace {

template <class T>
void check_bce(const BasicTensor4<T>& logits, const BasicTensor4<T>& targets) {
    require_same_shape(logits, targets, "bce_with_logits");
    for (T y : targets.data()) {
        if (y != T(0) && y != T(1)) {
            throw DomainError("bce_with_logits: target " + std::to_string(y) + " is not 0 or 1");
        }
    }
}

}  // namespace

template <class T>
double bce_with_logits(const BasicTensor4<T>& logits, const BasicTensor4<T>& targets) {
    check_bce(logits, targets);
    auto z = logits.data();
    auto y = targets.data();
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double zi = z[i];
        sum += std::max(zi, 0.0) - zi * y[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    return sum / static_cast<double>(z.size());
}

template <class T>
BasicTensor4<T> bce_with_logits_backward(const BasicTensor4<T>& logits, const BasicTensor4<T>& targets) {
    check_bce(logits, targets);
    BasicTensor4<T> g(logits.shape());
    auto z = logits.data();
    auto y = targets.data();
    auto dst = g.data();
    const T inv = T(1) / static_cast<T>(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) dst[i] = (sigmoid(z[i]) - y[i]) * inv;
    return g;
}

#define TBSEG_INSTANTIATE_KERNELS(T)                                                                      \
    template class BasicTensor4<T>;                                                                       \
    template BasicTensor4<T> conv2d(const BasicTensor4<T>&, const BasicConvParams<T>&);                   \
    template ConvGradients<T> conv2d_backward(const BasicTensor4<T>&, const BasicConvParams<T>&,          \
                                              const BasicTensor4<T>&);                                    \
    template PoolResult<T> maxpool2(const BasicTensor4<T>&);                                              \
    template BasicTensor4<T> maxpool2_backward(const PoolIndices&, const BasicTensor4<T>&);               \
    template BasicTensor4<T> upconv2(const BasicTensor4<T>&, const BasicConvParams<T>&);                  \
    template ConvGradients<T> upconv2_backward(const BasicTensor4<T>&, const BasicConvParams<T>&,         \
                                               const BasicTensor4<T>&);                                   \
    template BasicTensor4<T> relu(const BasicTensor4<T>&);                                                \
    template BasicTensor4<T> relu_backward(const BasicTensor4<T>&, const BasicTensor4<T>&);               \
    template BasicTensor4<T> sigmoid(const BasicTensor4<T>&);                                             \
    template BasicTensor4<T> sigmoid_backward(const BasicTensor4<T>&, const BasicTensor4<T>&);            \
    template BasicTensor4<T> concat_channels(const BasicTensor4<T>&, const BasicTensor4<T>&);             \
    template std::pair<BasicTensor4<T>, BasicTensor4<T>> concat_channels_backward(const BasicTensor4<T>&, \
                                                                                  std::size_t);           \
    template double bce_with_logits(const BasicTensor4<T>&, const BasicTensor4<T>&);                      \
    template BasicTensor4<T> bce_with_logits_backward(const BasicTensor4<T>&, const BasicTensor4<T>&);

TBSEG_INSTANTIATE_KERNELS(float)
TBSEG_INSTANTIATE_KERNELS(double)

}  // namespace tbseg
