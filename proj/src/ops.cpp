#include "lsr/ops.hpp"

#include <algorithm>
#include <cmath>

#include "lsr/errors.hpp"

namespace lsr {
namespace {

void accumulate(detail::Node& parent, std::span<const double> contrib) {
    parent.ensure_grad();
    for (size_t i = 0; i < contrib.size(); ++i) parent.grad[i] += contrib[i];
}

// Collapses a (B, C, ...) tensor to batch/channel/inner extents.
struct Bci {
    int64_t b, c, inner;
};

Bci bci_of(const Tensor& x, const char* op) {
    require(x.rank() >= 2, std::string(op) + ": expected a (B, C, ...) tensor, got " +
                               shape_str(x.shape()));
    int64_t inner = 1;
    for (size_t i = 2; i < x.rank(); ++i) inner *= x.dim(i);
    return {x.dim(0), x.dim(1), inner};
}

Tensor pointwise(const char* op, const Tensor& x,
                 double (*f)(double), double (*df)(double)) {
    std::vector<double> y(x.data().begin(), x.data().end());
    for (double& v : y) v = f(v);
    return make_op(op, x.shape(), std::move(y), {x},
                   [x, df](detail::Node& n) {
                       if (!x.requires_grad()) return;
                       auto xv = x.data();
                       x.node()->ensure_grad();
                       auto& gx = x.node()->grad;
                       for (size_t i = 0; i < gx.size(); ++i)
                           gx[i] += n.grad[i] * df(xv[i]);
                   });
}

} // namespace

int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

namespace {

// Zero-padded copy of (B, C, H, W). Callers skip it for pad-free convs.
std::vector<double> pad_input(const double* xd, int64_t B, int64_t C, int64_t H, int64_t W,
                              int64_t ph, int64_t pw) {
    const int64_t Hp = H + 2 * ph, Wp = W + 2 * pw;
    std::vector<double> out(static_cast<size_t>(B * C * Hp * Wp), 0.0);
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* src = xd + bc * H * W;
        double* dst = out.data() + bc * Hp * Wp + ph * Wp + pw;
        for (int64_t i = 0; i < H; ++i) std::copy_n(src + i * W, W, dst + i * Wp);
    }
    return out;
}

// Inner products against one kernel plane, fixed trip counts so the hot
// kernel sizes (3x3, 3x1, 1x1) stay unrolled.
inline double conv_dot(const double* xrow, int64_t Wp, const double* wrow, int64_t kh,
                       int64_t kw) {
    if (kh == 3 && kw == 3) {
        const double* r0 = xrow;
        const double* r1 = xrow + Wp;
        const double* r2 = xrow + 2 * Wp;
        return r0[0] * wrow[0] + r0[1] * wrow[1] + r0[2] * wrow[2] + r1[0] * wrow[3] +
               r1[1] * wrow[4] + r1[2] * wrow[5] + r2[0] * wrow[6] + r2[1] * wrow[7] +
               r2[2] * wrow[8];
    }
    if (kh == 3 && kw == 1)
        return xrow[0] * wrow[0] + xrow[Wp] * wrow[1] + xrow[2 * Wp] * wrow[2];
    if (kh == 1 && kw == 1) return xrow[0] * wrow[0];
    double acc = 0.0;
    for (int64_t r = 0; r < kh; ++r)
        for (int64_t c = 0; c < kw; ++c) acc += xrow[r * Wp + c] * wrow[r * kw + c];
    return acc;
}

// Scatter `go` times the kernel plane into a padded gradient buffer.
inline void conv_scatter(double* xrow, int64_t Wp, const double* wrow, int64_t kh,
                         int64_t kw, double go) {
    if (kh == 3 && kw == 3) {
        double* r0 = xrow;
        double* r1 = xrow + Wp;
        double* r2 = xrow + 2 * Wp;
        r0[0] += go * wrow[0];
        r0[1] += go * wrow[1];
        r0[2] += go * wrow[2];
        r1[0] += go * wrow[3];
        r1[1] += go * wrow[4];
        r1[2] += go * wrow[5];
        r2[0] += go * wrow[6];
        r2[1] += go * wrow[7];
        r2[2] += go * wrow[8];
        return;
    }
    if (kh == 3 && kw == 1) {
        xrow[0] += go * wrow[0];
        xrow[Wp] += go * wrow[1];
        xrow[2 * Wp] += go * wrow[2];
        return;
    }
    if (kh == 1 && kw == 1) {
        xrow[0] += go * wrow[0];
        return;
    }
    for (int64_t r = 0; r < kh; ++r)
        for (int64_t c = 0; c < kw; ++c) xrow[r * Wp + c] += go * wrow[r * kw + c];
}

// Kernel gradient from the padded input window.
inline void conv_weight_grad(const double* xrow, int64_t Wp, double* gw, int64_t kh,
                             int64_t kw, double go) {
    if (kh == 3 && kw == 3) {
        const double* r0 = xrow;
        const double* r1 = xrow + Wp;
        const double* r2 = xrow + 2 * Wp;
        gw[0] += go * r0[0];
        gw[1] += go * r0[1];
        gw[2] += go * r0[2];
        gw[3] += go * r1[0];
        gw[4] += go * r1[1];
        gw[5] += go * r1[2];
        gw[6] += go * r2[0];
        gw[7] += go * r2[1];
        gw[8] += go * r2[2];
        return;
    }
    if (kh == 3 && kw == 1) {
        gw[0] += go * xrow[0];
        gw[1] += go * xrow[Wp];
        gw[2] += go * xrow[2 * Wp];
        return;
    }
    if (kh == 1 && kw == 1) {
        gw[0] += go * xrow[0];
        return;
    }
    for (int64_t r = 0; r < kh; ++r)
        for (int64_t c = 0; c < kw; ++c) gw[r * kw + c] += go * xrow[r * Wp + c];
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const ConvSpec& spec) {
    require(x.rank() == 4, "conv2d: input must be (B, C, H, W), got " + shape_str(x.shape()));
    require(weight.rank() == 4,
            "conv2d: weight must be (Cout, Cin/g, kH, kW), got " + shape_str(weight.shape()));
    const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    const int64_t g = spec.groups;
    require(g >= 1 && spec.stride_h >= 1 && spec.stride_w >= 1 &&
                spec.pad_h >= 0 && spec.pad_w >= 0,
            "conv2d: invalid stride/pad/groups");
    require(Cin % g == 0 && Cout % g == 0,
            "conv2d: channels (" + std::to_string(Cin) + "->" + std::to_string(Cout) +
                ") not divisible by groups " + std::to_string(g));
    require(weight.dim(1) == Cin / g,
            "conv2d: weight expects " + std::to_string(weight.dim(1) * g) +
                " input channels, input has " + std::to_string(Cin));
    require(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel extents must be odd");
    require(H + 2 * spec.pad_h >= kh && W + 2 * spec.pad_w >= kw,
            "conv2d: kernel larger than padded input");
    if (bias.defined())
        require(bias.rank() == 1 && bias.dim(0) == Cout,
                "conv2d: bias must have one value per output channel");

    const int64_t Ho = conv_out_extent(H, kh, spec.stride_h, spec.pad_h);
    const int64_t Wo = conv_out_extent(W, kw, spec.stride_w, spec.pad_w);
    const int64_t Hp = H + 2 * spec.pad_h, Wp = W + 2 * spec.pad_w;
    const int64_t icpg = Cin / g, ocpg = Cout / g;
    const bool padded = spec.pad_h > 0 || spec.pad_w > 0;

    std::vector<double> padbuf;
    const double* xp = x.data().data();
    if (padded) {
        padbuf = pad_input(xp, B, Cin, H, W, spec.pad_h, spec.pad_w);
        xp = padbuf.data();
    }

    std::vector<double> out(static_cast<size_t>(B * Cout * Ho * Wo));
    const double* wd = weight.data().data();
    const double* bd = bias.defined() ? bias.data().data() : nullptr;

    for (int64_t b = 0; b < B; ++b)
        for (int64_t gi = 0; gi < g; ++gi)
            for (int64_t ocl = 0; ocl < ocpg; ++ocl) {
                const int64_t oc = gi * ocpg + ocl;
                const double* wbase = wd + oc * icpg * kh * kw;
                const double bias_v = bd ? bd[oc] : 0.0;
                double* orow = out.data() + ((b * Cout + oc) * Ho) * Wo;
                for (int64_t oh = 0; oh < Ho; ++oh)
                    for (int64_t ow = 0; ow < Wo; ++ow) {
                        double acc = bias_v;
                        const int64_t at = (oh * spec.stride_h) * Wp + ow * spec.stride_w;
                        for (int64_t icl = 0; icl < icpg; ++icl)
                            acc += conv_dot(
                                xp + ((b * Cin + gi * icpg + icl) * Hp) * Wp + at, Wp,
                                wbase + icl * kh * kw, kh, kw);
                        orow[oh * Wo + ow] = acc;
                    }
            }

    ConvSpec sp = spec;
    std::vector<Tensor> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_op(
        "conv2d", {B, Cout, Ho, Wo}, std::move(out), std::move(parents),
        [x, weight, bias, sp, B, Cin, Cout, H, W, kh, kw, Ho, Wo, Hp, Wp, icpg, ocpg, g,
         padded](detail::Node& n) {
            const bool need_gx = x.requires_grad();
            const bool need_gw = weight.requires_grad();
            const bool need_gb = bias.defined() && bias.requires_grad();
            if (need_gx) x.node()->ensure_grad();
            if (need_gw) weight.node()->ensure_grad();
            if (need_gb) bias.node()->ensure_grad();

            std::vector<double> padx;
            const double* xp = x.data().data();
            if (need_gw && padded) {
                padx = pad_input(xp, B, Cin, H, W, sp.pad_h, sp.pad_w);
                xp = padx.data();
            }
            // input gradients are scattered into a padded buffer, then the
            // interior is folded back into the live grad
            std::vector<double> gpad;
            if (need_gx) gpad.assign(static_cast<size_t>(B * Cin * Hp * Wp), 0.0);

            const double* wd = weight.data().data();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t gi = 0; gi < g; ++gi)
                    for (int64_t ocl = 0; ocl < ocpg; ++ocl) {
                        const int64_t oc = gi * ocpg + ocl;
                        const double* grow = n.grad.data() + ((b * Cout + oc) * Ho) * Wo;
                        if (need_gb) {
                            double s = 0.0;
                            for (int64_t i = 0; i < Ho * Wo; ++i) s += grow[i];
                            bias.node()->grad[oc] += s;
                        }
                        if (!need_gx && !need_gw) continue;
                        for (int64_t oh = 0; oh < Ho; ++oh)
                            for (int64_t ow = 0; ow < Wo; ++ow) {
                                const double go = grow[oh * Wo + ow];
                                if (go == 0.0) continue;
                                const int64_t at =
                                    (oh * sp.stride_h) * Wp + ow * sp.stride_w;
                                for (int64_t icl = 0; icl < icpg; ++icl) {
                                    const int64_t plane = (b * Cin + gi * icpg + icl);
                                    const double* wrow =
                                        wd + (oc * icpg + icl) * kh * kw;
                                    if (need_gx)
                                        conv_scatter(gpad.data() + plane * Hp * Wp + at,
                                                     Wp, wrow, kh, kw, go);
                                    if (need_gw)
                                        conv_weight_grad(
                                            xp + plane * Hp * Wp + at, Wp,
                                            weight.node()->grad.data() +
                                                (oc * icpg + icl) * kh * kw,
                                            kh, kw, go);
                                }
                            }
                    }

            if (need_gx) {
                auto& gx = x.node()->grad;
                for (int64_t bc = 0; bc < B * Cin; ++bc) {
                    const double* src =
                        gpad.data() + bc * Hp * Wp + sp.pad_h * Wp + sp.pad_w;
                    double* dst = gx.data() + bc * H * W;
                    for (int64_t i = 0; i < H; ++i)
                        for (int64_t j = 0; j < W; ++j) dst[i * W + j] += src[i * Wp + j];
                }
            }
        });
}

Tensor avg_pool2d(const Tensor& x, int64_t kh, int64_t kw, int64_t sh, int64_t sw) {
    require(x.rank() == 4, "avg_pool: input must be (B, C, H, W)");
    require(kh >= 1 && kw >= 1 && sh >= 1 && sw >= 1, "avg_pool: invalid window/stride");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(H >= kh && W >= kw, "avg_pool: window larger than input " + shape_str(x.shape()));
    const int64_t Ho = conv_out_extent(H, kh, sh, 0);
    const int64_t Wo = conv_out_extent(W, kw, sw, 0);
    const double inv = 1.0 / static_cast<double>(kh * kw);

    std::vector<double> out(static_cast<size_t>(B * C * Ho * Wo));
    const double* xd = x.data().data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* plane = xd + bc * H * W;
        double* oplane = out.data() + bc * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh)
            for (int64_t ow = 0; ow < Wo; ++ow) {
                double s = 0.0;
                for (int64_t r = 0; r < kh; ++r) {
                    const double* row = plane + (oh * sh + r) * W + ow * sw;
                    for (int64_t c = 0; c < kw; ++c) s += row[c];
                }
                oplane[oh * Wo + ow] = s * inv;
            }
    }

    return make_op("avg_pool", {B, C, Ho, Wo}, std::move(out), {x},
                   [x, B, C, H, W, Ho, Wo, kh, kw, sh, sw, inv](detail::Node& n) {
                       if (!x.requires_grad()) return;
                       x.node()->ensure_grad();
                       auto& gx = x.node()->grad;
                       for (int64_t bc = 0; bc < B * C; ++bc) {
                           const double* gplane = n.grad.data() + bc * Ho * Wo;
                           double* xplane = gx.data() + bc * H * W;
                           for (int64_t oh = 0; oh < Ho; ++oh)
                               for (int64_t ow = 0; ow < Wo; ++ow) {
                                   const double go = gplane[oh * Wo + ow] * inv;
                                   for (int64_t r = 0; r < kh; ++r) {
                                       double* row = xplane + (oh * sh + r) * W + ow * sw;
                                       for (int64_t c = 0; c < kw; ++c) row[c] += go;
                                   }
                               }
                       }
                   });
}

Tensor global_avg_pool(const Tensor& x) {
    require(x.rank() == 4, "global_avg_pool: input must be (B, C, H, W)");
    const int64_t B = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
    const double inv = 1.0 / static_cast<double>(S);
    std::vector<double> out(static_cast<size_t>(B * C));
    const double* xd = x.data().data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        double s = 0.0;
        for (int64_t i = 0; i < S; ++i) s += xd[bc * S + i];
        out[static_cast<size_t>(bc)] = s * inv;
    }
    return make_op("global_avg_pool", {B, C}, std::move(out), {x},
                   [x, B, C, S, inv](detail::Node& n) {
                       if (!x.requires_grad()) return;
                       x.node()->ensure_grad();
                       auto& gx = x.node()->grad;
                       for (int64_t bc = 0; bc < B * C; ++bc) {
                           const double go = n.grad[static_cast<size_t>(bc)] * inv;
                           for (int64_t i = 0; i < S; ++i) gx[bc * S + i] += go;
                       }
                   });
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.rank() == 2 && w.rank() == 2, "dense: expected (B,F) input and (F,O) weight");
    const int64_t B = x.dim(0), F = x.dim(1), O = w.dim(1);
    require(w.dim(0) == F, "dense: inner extents disagree: x " + shape_str(x.shape()) +
                               " vs w " + shape_str(w.shape()));
    if (b.defined())
        require(b.rank() == 1 && b.dim(0) == O, "dense: bias length mismatch");
    std::vector<double> out(static_cast<size_t>(B * O));
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    const double* bd = b.defined() ? b.data().data() : nullptr;
    for (int64_t i = 0; i < B; ++i)
        for (int64_t o = 0; o < O; ++o) {
            double s = bd ? bd[o] : 0.0;
            for (int64_t f = 0; f < F; ++f) s += xd[i * F + f] * wd[f * O + o];
            out[static_cast<size_t>(i * O + o)] = s;
        }
    std::vector<Tensor> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return make_op("dense", {B, O}, std::move(out), std::move(parents),
                   [x, w, b, B, F, O](detail::Node& n) {
                       const double* xd = x.data().data();
                       const double* wd = w.data().data();
                       if (x.requires_grad()) {
                           x.node()->ensure_grad();
                           auto& gx = x.node()->grad;
                           for (int64_t i = 0; i < B; ++i)
                               for (int64_t f = 0; f < F; ++f) {
                                   double s = 0.0;
                                   for (int64_t o = 0; o < O; ++o)
                                       s += n.grad[i * O + o] * wd[f * O + o];
                                   gx[i * F + f] += s;
                               }
                       }
                       if (w.requires_grad()) {
                           w.node()->ensure_grad();
                           auto& gw = w.node()->grad;
                           for (int64_t f = 0; f < F; ++f)
                               for (int64_t o = 0; o < O; ++o) {
                                   double s = 0.0;
                                   for (int64_t i = 0; i < B; ++i)
                                       s += xd[i * F + f] * n.grad[i * O + o];
                                   gw[f * O + o] += s;
                               }
                       }
                       if (b.defined() && b.requires_grad()) {
                           b.node()->ensure_grad();
                           auto& gb = b.node()->grad;
                           for (int64_t i = 0; i < B; ++i)
                               for (int64_t o = 0; o < O; ++o) gb[o] += n.grad[i * O + o];
                       }
                   });
}

namespace {
double f_relu6(double v) { return std::min(std::max(0.0, v), 6.0); }
double d_relu6(double v) { return (v > 0.0 && v < 6.0) ? 1.0 : 0.0; }
double f_htanh(double v) { return std::max(std::min(v, 1.0), -1.0); }
double d_htanh(double v) { return (v > -1.0 && v < 1.0) ? 1.0 : 0.0; }
double f_hswish(double v) { return v * f_relu6(v + 3.0) / 6.0; }
double d_hswish(double v) {
    if (v <= -3.0) return 0.0;
    if (v >= 3.0) return 1.0;
    return (2.0 * v + 3.0) / 6.0;
}
double f_hsig(double v) { return std::max(0.0, std::min(1.0, (v + 1.0) / 2.0)); }
double d_hsig(double v) { return (v > -1.0 && v < 1.0) ? 0.5 : 0.0; }
} // namespace

Tensor relu6(const Tensor& x) { return pointwise("relu6", x, f_relu6, d_relu6); }
Tensor hard_tanh(const Tensor& x) { return pointwise("hard_tanh", x, f_htanh, d_htanh); }
Tensor hard_swish(const Tensor& x) { return pointwise("hard_swish", x, f_hswish, d_hswish); }
Tensor hard_sigmoid(const Tensor& x) { return pointwise("hard_sigmoid", x, f_hsig, d_hsig); }

Tensor softmax(const Tensor& x) {
    require(x.rank() == 2, "softmax: expected (B, O) logits, got " + shape_str(x.shape()));
    const int64_t B = x.dim(0), O = x.dim(1);
    std::vector<double> out(static_cast<size_t>(B * O));
    const double* xd = x.data().data();
    for (int64_t b = 0; b < B; ++b) {
        double mx = xd[b * O];
        for (int64_t o = 1; o < O; ++o) mx = std::max(mx, xd[b * O + o]);
        double z = 0.0;
        for (int64_t o = 0; o < O; ++o) {
            const double e = std::exp(xd[b * O + o] - mx);
            out[static_cast<size_t>(b * O + o)] = e;
            z += e;
        }
        for (int64_t o = 0; o < O; ++o) out[static_cast<size_t>(b * O + o)] /= z;
    }
    return make_op("softmax", {B, O}, std::move(out), {x},
                   [x, B, O](detail::Node& n) {
                       if (!x.requires_grad()) return;
                       x.node()->ensure_grad();
                       auto& gx = x.node()->grad;
                       for (int64_t b = 0; b < B; ++b) {
                           double dot = 0.0;
                           for (int64_t o = 0; o < O; ++o)
                               dot += n.grad[b * O + o] * n.value[b * O + o];
                           for (int64_t o = 0; o < O; ++o)
                               gx[b * O + o] +=
                                   n.value[b * O + o] * (n.grad[b * O + o] - dot);
                       }
                   });
}

Tensor apply_activation(Activation kind, const Tensor& x) {
    switch (kind) {
    case Activation::ReLU6: return relu6(x);
    case Activation::HardTanh: return hard_tanh(x);
    case Activation::HardSwish: return hard_swish(x);
    case Activation::HardSigmoid: return hard_sigmoid(x);
    case Activation::Softmax: return softmax(x);
    }
    throw ContractError("apply_activation: unknown kind");
}

namespace {
Tensor binary(const char* op, const Tensor& a, const Tensor& b, double sign_b) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.data().begin(), a.data().end());
    auto bv = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += sign_b * bv[i];
    return make_op(op, a.shape(), std::move(out), {a, b},
                   [a, b, sign_b](detail::Node& n) {
                       if (a.requires_grad()) accumulate(*a.node(), n.grad);
                       if (b.requires_grad()) {
                           b.node()->ensure_grad();
                           auto& g = b.node()->grad;
                           for (size_t i = 0; i < g.size(); ++i)
                               g[i] += sign_b * n.grad[i];
                       }
                   });
}
} // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", a, b, 1.0); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", a, b, -1.0); }

Tensor mul(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "mul: shape mismatch");
    std::vector<double> out(a.data().begin(), a.data().end());
    auto bv = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return make_op("mul", a.shape(), std::move(out), {a, b}, [a, b](detail::Node& n) {
        if (a.requires_grad()) {
            a.node()->ensure_grad();
            auto bv = b.data();
            for (size_t i = 0; i < bv.size(); ++i) a.node()->grad[i] += n.grad[i] * bv[i];
        }
        if (b.requires_grad()) {
            b.node()->ensure_grad();
            auto av = a.data();
            for (size_t i = 0; i < av.size(); ++i) b.node()->grad[i] += n.grad[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (double& v : out) v *= c;
    return make_op("scale", x.shape(), std::move(out), {x}, [x, c](detail::Node& n) {
        if (!x.requires_grad()) return;
        x.node()->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) x.node()->grad[i] += c * n.grad[i];
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_op("sum", {1}, {s}, {x}, [x](detail::Node& n) {
        if (!x.requires_grad()) return;
        x.node()->ensure_grad();
        for (double& g : x.node()->grad) g += n.grad[0];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    require(shape_numel(shape) == x.numel(),
            "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                " changes element count");
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_op("reshape", std::move(shape), std::move(out), {x},
                   [x](detail::Node& n) {
                       if (x.requires_grad()) accumulate(*x.node(), n.grad);
                   });
}

std::pair<Tensor, Tensor> channel_split(const Tensor& x, int64_t left) {
    const auto [B, C, S] = bci_of(x, "channel_split");
    require(left > 0 && left < C, "channel_split: left count " + std::to_string(left) +
                                      " out of range for C=" + std::to_string(C));
    auto slice = [&](int64_t c0, int64_t c1) {
        Shape shape = x.shape();
        shape[1] = c1 - c0;
        std::vector<double> out(static_cast<size_t>(B * (c1 - c0) * S));
        const double* xd = x.data().data();
        for (int64_t b = 0; b < B; ++b)
            std::copy_n(xd + (b * C + c0) * S, (c1 - c0) * S,
                        out.data() + b * (c1 - c0) * S);
        return make_op("channel_split", std::move(shape), std::move(out), {x},
                       [x, B, C, S, c0, c1](detail::Node& n) {
                           if (!x.requires_grad()) return;
                           x.node()->ensure_grad();
                           auto& gx = x.node()->grad;
                           for (int64_t b = 0; b < B; ++b)
                               for (int64_t i = 0; i < (c1 - c0) * S; ++i)
                                   gx[(b * C + c0) * S + i] += n.grad[b * (c1 - c0) * S + i];
                       });
    };
    return {slice(0, left), slice(left, C)};
}

Tensor channel_concat(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "channel_concat: no inputs");
    const auto [B, C0, S] = bci_of(parts[0], "channel_concat");
    int64_t C = 0;
    for (const Tensor& p : parts) {
        const auto [pb, pc, ps] = bci_of(p, "channel_concat");
        require(pb == B && ps == S && p.rank() == parts[0].rank(),
                "channel_concat: incompatible part shape " + shape_str(p.shape()));
        C += pc;
    }
    (void)C0;
    Shape shape = parts[0].shape();
    shape[1] = C;
    std::vector<double> out(static_cast<size_t>(B * C * S));
    int64_t c_at = 0;
    for (const Tensor& p : parts) {
        const int64_t pc = p.dim(1);
        const double* pd = p.data().data();
        for (int64_t b = 0; b < B; ++b)
            std::copy_n(pd + b * pc * S, pc * S, out.data() + (b * C + c_at) * S);
        c_at += pc;
    }
    std::vector<Tensor> parents = parts;
    return make_op("channel_concat", std::move(shape), std::move(out), parents,
                   [parents, B, C, S](detail::Node& n) {
                       int64_t c_at = 0;
                       for (const Tensor& p : parents) {
                           const int64_t pc = p.dim(1);
                           if (p.requires_grad()) {
                               p.node()->ensure_grad();
                               auto& gp = p.node()->grad;
                               for (int64_t b = 0; b < B; ++b)
                                   for (int64_t i = 0; i < pc * S; ++i)
                                       gp[b * pc * S + i] += n.grad[(b * C + c_at) * S + i];
                           }
                           c_at += pc;
                       }
                   });
}

Tensor channel_shuffle(const Tensor& x, int64_t groups) {
    const auto [B, C, S] = bci_of(x, "channel_shuffle");
    require(groups >= 1 && C % groups == 0,
            "channel_shuffle: C=" + std::to_string(C) + " not divisible by g=" +
                std::to_string(groups));
    const int64_t cpg = C / groups;
    std::vector<int64_t> src(static_cast<size_t>(C));
    for (int64_t j = 0; j < C; ++j) src[static_cast<size_t>(j)] = (j % groups) * cpg + j / groups;

    std::vector<double> out(static_cast<size_t>(B * C * S));
    const double* xd = x.data().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < C; ++j)
            std::copy_n(xd + (b * C + src[static_cast<size_t>(j)]) * S, S,
                        out.data() + (b * C + j) * S);

    return make_op("channel_shuffle", x.shape(), std::move(out), {x},
                   [x, src, B, C, S](detail::Node& n) {
                       if (!x.requires_grad()) return;
                       x.node()->ensure_grad();
                       auto& gx = x.node()->grad;
                       for (int64_t b = 0; b < B; ++b)
                           for (int64_t j = 0; j < C; ++j) {
                               const int64_t s = src[static_cast<size_t>(j)];
                               for (int64_t i = 0; i < S; ++i)
                                   gx[(b * C + s) * S + i] += n.grad[(b * C + j) * S + i];
                           }
                   });
}

Tensor pad_channels(const Tensor& x, int64_t out_channels) {
    const auto [B, C, S] = bci_of(x, "pad_channels");
    require(out_channels >= C, "pad_channels: cannot shrink channel count");
    if (out_channels == C) return x;
    Shape shape = x.shape();
    shape[1] = out_channels;
    std::vector<double> out(static_cast<size_t>(B * out_channels * S), 0.0);
    const double* xd = x.data().data();
    for (int64_t b = 0; b < B; ++b)
        std::copy_n(xd + b * C * S, C * S, out.data() + b * out_channels * S);
    return make_op("pad_channels", std::move(shape), std::move(out), {x},
                   [x, B, C, S, out_channels](detail::Node& n) {
                       if (!x.requires_grad()) return;
                       x.node()->ensure_grad();
                       auto& gx = x.node()->grad;
                       for (int64_t b = 0; b < B; ++b)
                           for (int64_t i = 0; i < C * S; ++i)
                               gx[b * C * S + i] += n.grad[b * out_channels * S + i];
                   });
}

Tensor channel_mean(const Tensor& x) {
    require(x.rank() == 4, "channel_mean: input must be (B, C, H, W)");
    const int64_t B = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
    const double inv = 1.0 / static_cast<double>(C);
    std::vector<double> out(static_cast<size_t>(B * S), 0.0);
    const double* xd = x.data().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < S; ++i)
                out[b * S + i] += xd[(b * C + c) * S + i] * inv;
    return make_op("channel_mean", {B, 1, x.dim(2), x.dim(3)}, std::move(out), {x},
                   [x, B, C, S, inv](detail::Node& n) {
                       if (!x.requires_grad()) return;
                       x.node()->ensure_grad();
                       auto& gx = x.node()->grad;
                       for (int64_t b = 0; b < B; ++b)
                           for (int64_t c = 0; c < C; ++c)
                               for (int64_t i = 0; i < S; ++i)
                                   gx[(b * C + c) * S + i] += n.grad[b * S + i] * inv;
                   });
}

Tensor scale_channels(const Tensor& x, const Tensor& gate) {
    const auto [B, C, S] = bci_of(x, "scale_channels");
    require(gate.rank() == 2 && gate.dim(0) == B && gate.dim(1) == C,
            "scale_channels: gate must be (B, C), got " + shape_str(gate.shape()));
    std::vector<double> out(x.data().begin(), x.data().end());
    const double* gd = gate.data().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double g = gd[b * C + c];
            for (int64_t i = 0; i < S; ++i) out[(b * C + c) * S + i] *= g;
        }
    return make_op("scale_channels", x.shape(), std::move(out), {x, gate},
                   [x, gate, B, C, S](detail::Node& n) {
                       const double* xd = x.data().data();
                       const double* gd = gate.data().data();
                       if (x.requires_grad()) {
                           x.node()->ensure_grad();
                           auto& gx = x.node()->grad;
                           for (int64_t b = 0; b < B; ++b)
                               for (int64_t c = 0; c < C; ++c)
                                   for (int64_t i = 0; i < S; ++i)
                                       gx[(b * C + c) * S + i] +=
                                           n.grad[(b * C + c) * S + i] * gd[b * C + c];
                       }
                       if (gate.requires_grad()) {
                           gate.node()->ensure_grad();
                           auto& gg = gate.node()->grad;
                           for (int64_t b = 0; b < B; ++b)
                               for (int64_t c = 0; c < C; ++c) {
                                   double s = 0.0;
                                   for (int64_t i = 0; i < S; ++i)
                                       s += n.grad[(b * C + c) * S + i] *
                                            xd[(b * C + c) * S + i];
                                   gg[b * C + c] += s;
                               }
                       }
                   });
}

Tensor scale_spatial(const Tensor& x, const Tensor& gate) {
    require(x.rank() == 4, "scale_spatial: input must be (B, C, H, W)");
    const int64_t B = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
    require(gate.rank() == 4 && gate.dim(0) == B && gate.dim(1) == 1 &&
                gate.dim(2) == x.dim(2) && gate.dim(3) == x.dim(3),
            "scale_spatial: gate must be (B, 1, H, W), got " + shape_str(gate.shape()));
    std::vector<double> out(x.data().begin(), x.data().end());
    const double* gd = gate.data().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < S; ++i) out[(b * C + c) * S + i] *= gd[b * S + i];
    return make_op("scale_spatial", x.shape(), std::move(out), {x, gate},
                   [x, gate, B, C, S](detail::Node& n) {
                       const double* xd = x.data().data();
                       const double* gd = gate.data().data();
                       if (x.requires_grad()) {
                           x.node()->ensure_grad();
                           auto& gx = x.node()->grad;
                           for (int64_t b = 0; b < B; ++b)
                               for (int64_t c = 0; c < C; ++c)
                                   for (int64_t i = 0; i < S; ++i)
                                       gx[(b * C + c) * S + i] +=
                                           n.grad[(b * C + c) * S + i] * gd[b * S + i];
                       }
                       if (gate.requires_grad()) {
                           gate.node()->ensure_grad();
                           auto& gg = gate.node()->grad;
                           for (int64_t b = 0; b < B; ++b)
                               for (int64_t c = 0; c < C; ++c)
                                   for (int64_t i = 0; i < S; ++i)
                                       gg[b * S + i] += n.grad[(b * C + c) * S + i] *
                                                        xd[(b * C + c) * S + i];
                       }
                   });
}

Tensor cross_entropy(const Tensor& probs, const std::vector<int64_t>& labels) {
    require(probs.rank() == 2, "cross_entropy: probs must be (B, O)");
    const int64_t B = probs.dim(0), O = probs.dim(1);
    require(static_cast<int64_t>(labels.size()) == B,
            "cross_entropy: got " + std::to_string(labels.size()) + " labels for batch " +
                std::to_string(B));
    for (int64_t l : labels)
        require(l >= 0 && l < O, "cross_entropy: label " + std::to_string(l) +
                                     " out of range for " + std::to_string(O) + " classes");

    const auto pnode = probs.node();
    const bool fused = std::string_view(probs.op()) == "softmax" && !pnode->parents.empty();

    if (fused) {
        // Evaluate from the logits so saturated rows do not hit log(0).
        Tensor logits = Tensor::from_node(pnode->parents[0]);
        const double* zd = logits.data().data();
        double loss = 0.0;
        for (int64_t b = 0; b < B; ++b) {
            double mx = zd[b * O];
            for (int64_t o = 1; o < O; ++o) mx = std::max(mx, zd[b * O + o]);
            double z = 0.0;
            for (int64_t o = 0; o < O; ++o) z += std::exp(zd[b * O + o] - mx);
            loss += mx + std::log(z) - zd[b * O + labels[static_cast<size_t>(b)]];
        }
        loss /= static_cast<double>(B);
        std::vector<double> pv(probs.data().begin(), probs.data().end());
        return make_op("cross_entropy", {1}, {loss}, {logits},
                       [logits, pv = std::move(pv), labels, B, O](detail::Node& n) {
                           if (!logits.requires_grad()) return;
                           logits.node()->ensure_grad();
                           auto& gz = logits.node()->grad;
                           const double inv = n.grad[0] / static_cast<double>(B);
                           for (int64_t b = 0; b < B; ++b)
                               for (int64_t o = 0; o < O; ++o) {
                                   const double y =
                                       o == labels[static_cast<size_t>(b)] ? 1.0 : 0.0;
                                   gz[b * O + o] += inv * (pv[b * O + o] - y);
                               }
                       });
    }

    static constexpr double kFloor = 1e-12;
    const double* pd = probs.data().data();
    double loss = 0.0;
    for (int64_t b = 0; b < B; ++b)
        loss -= std::log(std::max(pd[b * O + labels[static_cast<size_t>(b)]], kFloor));
    loss /= static_cast<double>(B);
    return make_op("cross_entropy", {1}, {loss}, {probs},
                   [probs, labels, B, O](detail::Node& n) {
                       if (!probs.requires_grad()) return;
                       probs.node()->ensure_grad();
                       auto& gp = probs.node()->grad;
                       const double* pd = probs.data().data();
                       const double inv = n.grad[0] / static_cast<double>(B);
                       for (int64_t b = 0; b < B; ++b) {
                           const int64_t l = labels[static_cast<size_t>(b)];
                           gp[b * O + l] -= inv / std::max(pd[b * O + l], kFloor);
                       }
                   });
}

} // namespace lsr
