#include "lsr/layers.hpp"

#include <cmath>

#include "lsr/errors.hpp"

namespace lsr {
namespace {

Tensor uniform_init(Shape shape, int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
    for (double& v : d) v = rng.uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(d), true);
}

} // namespace

BatchNorm::BatchNorm(int64_t channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
    require(channels > 0, "batchnorm: channel count must be positive");
    require(momentum > 0.0 && momentum < 1.0, "batchnorm: momentum must be in (0,1)");
    require(eps > 0.0, "batchnorm: eps must be positive");
    gamma = Tensor::full({channels}, 1.0, true);
    beta = Tensor::zeros({channels}, true);
    running_mean = Tensor::zeros({channels});
    running_var = Tensor::full({channels}, 1.0);
}

Tensor BatchNorm::forward(const Tensor& x, Mode mode) {
    require(x.rank() >= 2 && x.dim(1) == channels_,
            "batchnorm: expected " + std::to_string(channels_) + " channels, got " +
                shape_str(x.shape()));
    const int64_t B = x.dim(0), C = channels_;
    int64_t S = 1;
    for (size_t i = 2; i < x.rank(); ++i) S *= x.dim(i);
    const int64_t m = B * S;
    const double* xd = x.data().data();

    std::vector<double> mean(static_cast<size_t>(C)), var(static_cast<size_t>(C));
    if (mode == Mode::Train) {
        require(m >= 2, "batchnorm: train mode needs at least 2 values per channel");
        for (int64_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (int64_t b = 0; b < B; ++b)
                for (int64_t i = 0; i < S; ++i) s += xd[(b * C + c) * S + i];
            mean[static_cast<size_t>(c)] = s / static_cast<double>(m);
        }
        for (int64_t c = 0; c < C; ++c) {
            double s = 0.0;
            const double mu = mean[static_cast<size_t>(c)];
            for (int64_t b = 0; b < B; ++b)
                for (int64_t i = 0; i < S; ++i) {
                    const double d = xd[(b * C + c) * S + i] - mu;
                    s += d * d;
                }
            var[static_cast<size_t>(c)] = s / static_cast<double>(m);
        }
        auto rm = running_mean.data_mut();
        auto rv = running_var.data_mut();
        for (int64_t c = 0; c < C; ++c) {
            rm[c] = (1.0 - momentum_) * rm[c] + momentum_ * mean[static_cast<size_t>(c)];
            rv[c] = (1.0 - momentum_) * rv[c] + momentum_ * var[static_cast<size_t>(c)];
        }
    } else {
        mean.assign(running_mean.data().begin(), running_mean.data().end());
        var.assign(running_var.data().begin(), running_var.data().end());
    }

    std::vector<double> inv_std(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c)
        inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps_);

    std::vector<double> xhat(static_cast<size_t>(B * C * S));
    std::vector<double> out(static_cast<size_t>(B * C * S));
    const double* gd = gamma.data().data();
    const double* bd = beta.data().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double mu = mean[static_cast<size_t>(c)];
            const double is = inv_std[static_cast<size_t>(c)];
            for (int64_t i = 0; i < S; ++i) {
                const size_t idx = static_cast<size_t>((b * C + c) * S + i);
                xhat[idx] = (xd[idx] - mu) * is;
                out[idx] = gd[c] * xhat[idx] + bd[c];
            }
        }

    Tensor g = gamma, be = beta;
    const bool train = mode == Mode::Train;
    return make_op(
        "batchnorm", x.shape(), std::move(out), {x, gamma, beta},
        [x, g, be, xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, S,
         train](detail::Node& n) {
            const int64_t m = B * S;
            if (g.requires_grad()) {
                g.node()->ensure_grad();
                auto& gg = g.node()->grad;
                for (int64_t c = 0; c < C; ++c) {
                    double s = 0.0;
                    for (int64_t b = 0; b < B; ++b)
                        for (int64_t i = 0; i < S; ++i) {
                            const size_t idx = static_cast<size_t>((b * C + c) * S + i);
                            s += n.grad[idx] * xhat[idx];
                        }
                    gg[c] += s;
                }
            }
            if (be.requires_grad()) {
                be.node()->ensure_grad();
                auto& gb = be.node()->grad;
                for (int64_t c = 0; c < C; ++c) {
                    double s = 0.0;
                    for (int64_t b = 0; b < B; ++b)
                        for (int64_t i = 0; i < S; ++i)
                            s += n.grad[(b * C + c) * S + i];
                    gb[c] += s;
                }
            }
            if (!x.requires_grad()) return;
            x.node()->ensure_grad();
            auto& gx = x.node()->grad;
            const double* gv = g.data().data();
            if (!train) {
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t c = 0; c < C; ++c) {
                        const double k = gv[c] * inv_std[static_cast<size_t>(c)];
                        for (int64_t i = 0; i < S; ++i) {
                            const size_t idx = static_cast<size_t>((b * C + c) * S + i);
                            gx[idx] += k * n.grad[idx];
                        }
                    }
                return;
            }
            // Train mode differentiates through the batch statistics.
            for (int64_t c = 0; c < C; ++c) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t i = 0; i < S; ++i) {
                        const size_t idx = static_cast<size_t>((b * C + c) * S + i);
                        sum_g += n.grad[idx];
                        sum_gx += n.grad[idx] * xhat[idx];
                    }
                const double mg = sum_g / static_cast<double>(m);
                const double mgx = sum_gx / static_cast<double>(m);
                const double k = gv[c] * inv_std[static_cast<size_t>(c)];
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t i = 0; i < S; ++i) {
                        const size_t idx = static_cast<size_t>((b * C + c) * S + i);
                        gx[idx] += k * (n.grad[idx] - mg - xhat[idx] * mgx);
                    }
            }
        });
}

void BatchNorm::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".gamma", gamma, true});
    out.push_back({prefix + ".beta", beta, true});
    out.push_back({prefix + ".running_mean", running_mean, false});
    out.push_back({prefix + ".running_var", running_var, false});
}

Conv2d::Conv2d(int64_t in_ch, int64_t out_ch, int64_t kh, int64_t kw,
               int64_t sh, int64_t sw, int64_t ph, int64_t pw, int64_t groups, Rng& rng)
    : in_ch_(in_ch) {
    require(in_ch % groups == 0 && out_ch % groups == 0,
            "conv layer: channels not divisible by groups");
    spec = ConvSpec{sh, sw, ph, pw, groups};
    const int64_t fan_in = (in_ch / groups) * kh * kw;
    weight = uniform_init({out_ch, in_ch / groups, kh, kw}, fan_in, rng);
    bias = uniform_init({out_ch}, fan_in, rng);
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, true});
}

DenseLayer::DenseLayer(int64_t in_features, int64_t out_features, Rng& rng) {
    weight = uniform_init({in_features, out_features}, in_features, rng);
    bias = uniform_init({out_features}, in_features, rng);
}

void DenseLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, true});
}

ChannelAttention::ChannelAttention(int64_t channels, int64_t reduction, Rng& rng)
    : channels_(channels), hidden_(std::max<int64_t>(1, channels / reduction)) {
    require(channels > 0 && reduction > 0, "channel attention: bad channels/reduction");
    fc1 = uniform_init({channels_, hidden_}, channels_, rng);
    fc2 = uniform_init({hidden_, channels_}, hidden_, rng);
}

Tensor ChannelAttention::forward(const Tensor& x) const {
    require(x.rank() == 4 && x.dim(1) == channels_,
            "channel attention: expected " + std::to_string(channels_) +
                " channels, got " + shape_str(x.shape()));
    const Tensor squeezed = global_avg_pool(x);
    const Tensor score =
        hard_sigmoid(dense(relu6(dense(squeezed, fc1, Tensor())), fc2, Tensor()));
    return scale_channels(x, score);
}

void ChannelAttention::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".fc1", fc1, true});
    out.push_back({prefix + ".fc2", fc2, true});
}

SpatialAttention::SpatialAttention(Rng& rng) : conv(1, 1, 3, 3, 1, 1, 1, 1, 1, rng) {}

Tensor SpatialAttention::forward(const Tensor& x) const {
    const Tensor gate = hard_sigmoid(conv.forward(channel_mean(x)));
    return scale_spatial(x, gate);
}

void SpatialAttention::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    conv.collect(prefix + ".conv", out);
}

} // namespace lsr
