#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lsr/layers.hpp"

namespace lsr {

/// Network-level configuration. The layer stack itself is fixed; only the
/// input length and the class count vary.
struct LSRNetConfig {
    int64_t input_length = 4096; // must be a positive multiple of 512
    int64_t classes = 3;
};

/// Fixed layer stack constants (kernel size 3 throughout).
namespace arch {

struct CdSpec {
    int64_t in, out, stride;
};
inline constexpr CdSpec kCd[3] = {{1, 8, 2}, {8, 16, 2}, {16, 32, 4}};

struct CesSpec {
    int64_t in, out, sh, sw;
};
inline constexpr CesSpec kCes[3] = {{16, 32, 2, 2}, {32, 64, 2, 2}, {64, 64, 1, 2}};

inline constexpr int64_t kStemOut = 16;
inline constexpr int64_t kFeatures = 64;
inline constexpr int64_t kCamReduction = 4;

inline constexpr int64_t cam_hidden(int64_t channels) {
    return channels / kCamReduction > 0 ? channels / kCamReduction : 1;
}

} // namespace arch

struct TraceEntry {
    std::string name;
    Shape shape; // per-sample output shape
    int64_t params;
};

/// Per-layer output shapes and parameter counts for a config, in execution
/// order. Validates that every strided stage divides its input extent evenly;
/// throws ContractError naming the offending layer otherwise. Parameter
/// counts are closed-form (independent of any constructed tensors) and
/// include the batch-norm running statistics, i.e. every value a checkpoint
/// stores.
std::vector<TraceEntry> shape_trace(const LSRNetConfig& cfg);

int64_t trace_total_params(const std::vector<TraceEntry>& trace);
std::string trace_text(const std::vector<TraceEntry>& trace);

/// Channel-split shuffle unit: the right half runs grouped 3x3 conv ->
/// BN -> hard swish -> spatial attention -> grouped 1x1 conv -> BN -> channel
/// attention plus a pooled, channel-padded skip; the left half runs spatial +
/// channel attention (pooled when the block strides); halves are concatenated
/// and shuffled across 2 groups.
class CESBlock {
public:
    CESBlock(int64_t in_ch, int64_t out_ch, int64_t stride_h, int64_t stride_w, Rng& rng);

    Tensor forward(const Tensor& x, Mode mode);
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;

    int64_t in_channels() const { return in_ch_; }
    int64_t out_channels() const { return out_ch_; }

    Conv2d gconv;
    BatchNorm bn1;
    SpatialAttention sam_right;
    Conv2d gpconv;
    BatchNorm bn2;
    ChannelAttention cam_right;
    SpatialAttention sam_left;
    ChannelAttention cam_left;

private:
    int64_t in_ch_, out_ch_, stride_h_, stride_w_;
};

/// The full network: 1D conv denoising front end, activation-ensemble lift to
/// a 3-channel 2D map, a strided stem, three CES blocks, and a GAP + dense +
/// softmax head.
class LSRNet {
public:
    LSRNet(LSRNetConfig cfg, uint64_t seed);

    /// (B, 1, N) -> (B, 32, N/16). The three conv+BN+ReLU6 denoising stages.
    Tensor dm_forward(const Tensor& x0, Mode mode);
    /// (B, 32, T) -> (B, 3, 32, T): the map viewed as one 2D matrix, lifted by
    /// the (ReLU6, hard tanh, hard swish) ensemble in that channel order.
    Tensor fem_forward(const Tensor& h) const;
    /// (B, 1, N) -> (B, O) class probabilities.
    Tensor forward(const Tensor& x0, Mode mode);

    const LSRNetConfig& config() const { return cfg_; }
    std::vector<NamedParam> parameters() const;
    void zero_grad();

    /// First denoising convolution kernel; the adaptive-pruning target.
    Tensor& cd1_weight() { return dm_[0].conv.weight; }

    std::vector<uint8_t> save() const;
    static LSRNet load(std::span<const uint8_t> bytes);

private:
    struct CDBlock {
        Conv2d conv;
        BatchNorm bn;
    };

    LSRNetConfig cfg_;
    std::vector<CDBlock> dm_;
    std::unique_ptr<Conv2d> stem_conv_;
    std::unique_ptr<BatchNorm> stem_bn_;
    std::vector<CESBlock> ces_;
    std::unique_ptr<DenseLayer> fc_;
};

/// Sum of stored values over a checkpoint's tensor records (the embedded
/// config record does not count as parameters).
int64_t checkpoint_param_count(std::span<const uint8_t> bytes);

} // namespace lsr
