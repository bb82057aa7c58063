#pragma once

#include <string>
#include <vector>

#include "lsr/ops.hpp"
#include "lsr/rng.hpp"
#include "lsr/tensor.hpp"

namespace lsr {

enum class Mode { Train, Eval };

/// Every persistent tensor of a layer, reachable for the optimizer, pruning,
/// checkpointing and parameter counting. Non-trainable entries are state
/// buffers (batch-norm running statistics).
struct NamedParam {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

/// Batch normalization over the channel axis of a (B, C, ...) tensor.
/// Train mode normalizes with biased batch statistics and updates the running
/// buffers by exponential moving average; eval mode reads the buffers.
class BatchNorm {
public:
    explicit BatchNorm(int64_t channels, double momentum = 0.1, double eps = 1e-5);

    Tensor forward(const Tensor& x, Mode mode);
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;

    int64_t channels() const { return channels_; }

    Tensor gamma, beta;
    Tensor running_mean, running_var;

private:
    int64_t channels_;
    double momentum_;
    double eps_;
};

/// Grouped 2D convolution layer (weight + bias + geometry).
class Conv2d {
public:
    Conv2d(int64_t in_ch, int64_t out_ch, int64_t kh, int64_t kw,
           int64_t sh, int64_t sw, int64_t ph, int64_t pw, int64_t groups, Rng& rng);

    Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, spec); }
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;

    int64_t in_channels() const { return in_ch_; }
    int64_t out_channels() const { return weight.dim(0); }

    Tensor weight, bias;
    ConvSpec spec;

private:
    int64_t in_ch_;
};

class DenseLayer {
public:
    DenseLayer(int64_t in_features, int64_t out_features, Rng& rng);

    Tensor forward(const Tensor& x) const { return dense(x, weight, bias); }
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;

    Tensor weight, bias;
};

/// Channel attention (squeeze-and-excitation shaped): GAP -> FC -> ReLU6 ->
/// FC -> hard sigmoid, applied as a per-channel gate in [0, 1].
class ChannelAttention {
public:
    ChannelAttention(int64_t channels, int64_t reduction, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;

    int64_t channels() const { return channels_; }
    int64_t hidden() const { return hidden_; }

    Tensor fc1, fc2; // (C, hidden) and (hidden, C), bias-free

private:
    int64_t channels_;
    int64_t hidden_;
};

/// Spatial attention: channel mean -> 3x3 conv -> hard sigmoid, applied as a
/// per-position gate in [0, 1].
class SpatialAttention {
public:
    explicit SpatialAttention(Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;

    Conv2d conv;
};

} // namespace lsr
