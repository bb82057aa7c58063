#pragma once

#include <utility>
#include <vector>

#include "lsr/tensor.hpp"

namespace lsr {

/// Convolution geometry. Kernel tensors are laid out
/// (out_ch, in_ch/groups, kH, kW); 1D convolutions are the kW = 1 case.
struct ConvSpec {
    int64_t stride_h = 1;
    int64_t stride_w = 1;
    int64_t pad_h = 0;
    int64_t pad_w = 0;
    int64_t groups = 1;
};

/// Output extent of a conv/pool dimension: floor((in + 2p - k) / s) + 1.
int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad);

/// Grouped 2D convolution, direct evaluation.
/// x: (B, Cin, H, W); weight: (Cout, Cin/g, kH, kW); bias: (Cout) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const ConvSpec& spec);

/// Average pooling with window (kh, kw), stride (sh, sw), no padding.
Tensor avg_pool2d(const Tensor& x, int64_t kh, int64_t kw, int64_t sh, int64_t sw);

/// (B, C, H, W) -> (B, C): per-channel spatial mean.
Tensor global_avg_pool(const Tensor& x);

/// Affine map: x (B, F) times w (F, O) plus b (O).
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);

// Pointwise activations.
Tensor relu6(const Tensor& x);
Tensor hard_tanh(const Tensor& x);
Tensor hard_swish(const Tensor& x);
Tensor hard_sigmoid(const Tensor& x);
/// Row-wise softmax over the class axis of a (B, O) tensor.
Tensor softmax(const Tensor& x);

enum class Activation { ReLU6, HardTanh, HardSwish, HardSigmoid, Softmax };
Tensor apply_activation(Activation kind, const Tensor& x);

// Elementwise arithmetic on identically shaped tensors.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);

Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Channel-axis structure ops; tensors are (B, C, ...).
std::pair<Tensor, Tensor> channel_split(const Tensor& x, int64_t left);
Tensor channel_concat(const std::vector<Tensor>& parts);
/// ShuffleNet permutation: output channel j takes input channel
/// (j mod g) * (C/g) + j / g, the reshape-(g, C/g)-transpose order.
Tensor channel_shuffle(const Tensor& x, int64_t groups);
/// Appends zero-valued channels up to out_channels.
Tensor pad_channels(const Tensor& x, int64_t out_channels);
/// (B, C, H, W) -> (B, 1, H, W): mean across channels.
Tensor channel_mean(const Tensor& x);

/// Multiplies every (h, w) position of channel c by gate (B, C).
Tensor scale_channels(const Tensor& x, const Tensor& gate);
/// Multiplies every channel by the spatial map gate (B, 1, H, W).
Tensor scale_spatial(const Tensor& x, const Tensor& gate);

/// Mean over the batch of -log p(true class). `probs` rows must sum to 1.
/// When `probs` is the direct output of softmax the loss is evaluated from
/// the logits (log-sum-exp form) and the gradient flows to them as
/// (probs - onehot) / B, which avoids log(0) for saturated rows.
Tensor cross_entropy(const Tensor& probs, const std::vector<int64_t>& labels);

} // namespace lsr
