#pragma once

// Test-only reference implementations, kept independent of the kernels they
// check: plain index arithmetic, explicit padding, no shared helpers.

#include <cstdint>
#include <vector>

#include "lsr/rng.hpp"
#include "lsr/tensor.hpp"

namespace lsr::testing {

struct NaiveConvArgs {
    int64_t stride_h = 1, stride_w = 1;
    int64_t pad_h = 0, pad_w = 0;
    int64_t groups = 1;
};

/// Quadruple-loop grouped convolution over an explicitly zero-padded copy of
/// the input. x: (B, Cin, H, W); w: (Cout, Cin/g, kH, kW); bias may be empty.
inline std::vector<double> naive_conv2d(const std::vector<double>& x, int64_t B, int64_t Cin,
                                        int64_t H, int64_t W, const std::vector<double>& w,
                                        int64_t Cout, int64_t kh, int64_t kw,
                                        const std::vector<double>& bias,
                                        const NaiveConvArgs& a) {
    const int64_t Hp = H + 2 * a.pad_h, Wp = W + 2 * a.pad_w;
    std::vector<double> padded(static_cast<size_t>(B * Cin * Hp * Wp), 0.0);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < Cin; ++c)
            for (int64_t i = 0; i < H; ++i)
                for (int64_t j = 0; j < W; ++j)
                    padded[((b * Cin + c) * Hp + i + a.pad_h) * Wp + j + a.pad_w] =
                        x[((b * Cin + c) * H + i) * W + j];

    const int64_t Ho = (Hp - kh) / a.stride_h + 1;
    const int64_t Wo = (Wp - kw) / a.stride_w + 1;
    const int64_t icpg = Cin / a.groups, ocpg = Cout / a.groups;
    std::vector<double> out(static_cast<size_t>(B * Cout * Ho * Wo), 0.0);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t oc = 0; oc < Cout; ++oc) {
            const int64_t gi = oc / ocpg;
            for (int64_t oh = 0; oh < Ho; ++oh)
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(oc)];
                    for (int64_t icl = 0; icl < icpg; ++icl)
                        for (int64_t r = 0; r < kh; ++r)
                            for (int64_t c = 0; c < kw; ++c)
                                acc += padded[((b * Cin + gi * icpg + icl) * Hp +
                                               oh * a.stride_h + r) *
                                                  Wp +
                                              ow * a.stride_w + c] *
                                       w[((oc * icpg + icl) * kh + r) * kw + c];
                    out[((b * Cout + oc) * Ho + oh) * Wo + ow] = acc;
                }
        }
    return out;
}

inline std::vector<double> random_values(size_t n, Rng& rng, double lo = -2.0,
                                         double hi = 2.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false,
                            double lo = -2.0, double hi = 2.0) {
    auto v = random_values(static_cast<size_t>(shape_numel(shape)), rng, lo, hi);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Random values kept a margin away from the listed points (activation kinks,
/// where finite differences are one-sided).
inline Tensor random_tensor_avoiding(Shape shape, Rng& rng,
                                     const std::vector<double>& avoid, double margin,
                                     bool requires_grad = false, double lo = -5.0,
                                     double hi = 5.0) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) {
        for (;;) {
            x = rng.uniform(lo, hi);
            bool ok = true;
            for (double a : avoid)
                if (std::abs(x - a) < margin) ok = false;
            if (ok) break;
        }
    }
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

} // namespace lsr::testing
