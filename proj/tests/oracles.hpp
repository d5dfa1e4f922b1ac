#ifndef TBSEG_TESTS_ORACLES_HPP
#define TBSEG_TESTS_ORACLES_HPP

// Naive reference implementations shared by the unit and acceptance suites.
// They are written straight from the operator definitions and share no code
// with the library kernels.

#include <cstddef>
#include <cstdint>
#include <set>
#include <utility>
#include <vector>

#include "tbseg/rng.hpp"
#include "tbseg/tensor.hpp"

namespace oracle {

using tbseg::Shape4;
using tbseg::Tensor4;

inline Tensor4 random_tensor(tbseg::Rng& rng, Shape4 s, double lo = -1.0, double hi = 1.0) {
    Tensor4 t(s);
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

inline tbseg::ConvParams random_conv(tbseg::Rng& rng, std::size_t out, std::size_t in, std::size_t k) {
    auto p = tbseg::ConvParams::conv(out, in, k);
    for (auto& v : p.weights.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (auto& b : p.bias) b = static_cast<float>(rng.uniform(-1.0, 1.0));
    return p;
}

inline tbseg::ConvParams random_upconv(tbseg::Rng& rng, std::size_t in, std::size_t out) {
    auto p = tbseg::ConvParams::upconv(in, out);
    for (auto& v : p.weights.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (auto& b : p.bias) b = static_cast<float>(rng.uniform(-1.0, 1.0));
    return p;
}

// Same-padded, stride-1 cross-correlation evaluated in double.
inline std::vector<double> conv2d(const Tensor4& x, const tbseg::ConvParams& p) {
    const auto& ws = p.weights.shape();
    const long kh = static_cast<long>(ws.h), kw = static_cast<long>(ws.w);
    const long H = static_cast<long>(x.h()), W = static_cast<long>(x.w());
    std::vector<double> out;
    for (std::size_t n = 0; n < x.n(); ++n)
        for (std::size_t o = 0; o < ws.n; ++o)
            for (long y = 0; y < H; ++y)
                for (long xx = 0; xx < W; ++xx) {
                    double acc = p.bias[o];
                    for (std::size_t i = 0; i < ws.c; ++i)
                        for (long dy = 0; dy < kh; ++dy)
                            for (long dx = 0; dx < kw; ++dx) {
                                const long sy = y + dy - kh / 2, sx = xx + dx - kw / 2;
                                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                                acc += static_cast<double>(p.weights.at(o, i, dy, dx)) *
                                       x.at(n, i, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
                            }
                    out.push_back(acc);
                }
    return out;
}

// Stride-2 transposed convolution as an explicit scatter of kernel blocks.
inline std::vector<double> upconv2(const Tensor4& x, const tbseg::ConvParams& p) {
    const std::size_t out_c = p.weights.shape().c;
    const std::size_t H = x.h() * 2, W = x.w() * 2;
    std::vector<double> out(x.n() * out_c * H * W);
    auto idx = [&](std::size_t n, std::size_t c, std::size_t y, std::size_t xx) {
        return ((n * out_c + c) * H + y) * W + xx;
    };
    for (std::size_t n = 0; n < x.n(); ++n)
        for (std::size_t o = 0; o < out_c; ++o)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xx = 0; xx < W; ++xx) out[idx(n, o, y, xx)] = p.bias[o];
    for (std::size_t n = 0; n < x.n(); ++n)
        for (std::size_t i = 0; i < x.c(); ++i)
            for (std::size_t y = 0; y < x.h(); ++y)
                for (std::size_t xx = 0; xx < x.w(); ++xx)
                    for (std::size_t o = 0; o < out_c; ++o)
                        for (std::size_t ky = 0; ky < 2; ++ky)
                            for (std::size_t kx = 0; kx < 2; ++kx)
                                out[idx(n, o, 2 * y + ky, 2 * xx + kx)] +=
                                    static_cast<double>(x.at(n, i, y, xx)) * p.weights.at(i, o, ky, kx);
    return out;
}

// 2x2 max pooling; ties resolve to the first candidate in row-major order.
inline std::pair<std::vector<float>, std::vector<int>> maxpool2(const Tensor4& x) {
    std::vector<float> vals;
    std::vector<int> arg;
    for (std::size_t n = 0; n < x.n(); ++n)
        for (std::size_t c = 0; c < x.c(); ++c)
            for (std::size_t y = 0; y < x.h() / 2; ++y)
                for (std::size_t xx = 0; xx < x.w() / 2; ++xx) {
                    int best = 0;
                    float bv = x.at(n, c, 2 * y, 2 * xx);
                    for (int k = 1; k < 4; ++k) {
                        const float v = x.at(n, c, 2 * y + static_cast<std::size_t>(k / 2),
                                             2 * xx + static_cast<std::size_t>(k % 2));
                        if (v > bv) {
                            bv = v;
                            best = k;
                        }
                    }
                    vals.push_back(bv);
                    arg.push_back(best);
                }
    return {vals, arg};
}

struct SetCounts {
    std::uint64_t tp, fp, fn, tn;
};

// Counts from coordinate sets: P = predicted foreground, T = true foreground.
inline SetCounts set_counts(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth,
                            std::size_t w, std::size_t h) {
    std::set<std::pair<std::size_t, std::size_t>> P, T, all;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            all.insert({x, y});
            if (pred[y * w + x]) P.insert({x, y});
            if (truth[y * w + x]) T.insert({x, y});
        }
    SetCounts c{0, 0, 0, 0};
    for (const auto& q : all) {
        const bool p = P.count(q) != 0, t = T.count(q) != 0;
        c.tp += p && t;
        c.fp += p && !t;
        c.fn += !p && t;
        c.tn += !p && !t;
    }
    return c;
}

}  // namespace oracle

#endif  // TBSEG_TESTS_ORACLES_HPP
