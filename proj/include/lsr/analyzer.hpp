#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsr/model.hpp"

namespace lsr {

/// Cost-model geometry for one convolution: kernel side D_K, square output
/// side D_F, input/output channels M and N, group count g.
struct ConvCostSpec {
    int64_t dk = 1;
    int64_t df = 1;
    int64_t m = 1;
    int64_t n = 1;
    int64_t g = 1;
};

/// Forward FLOPs (one multiply-accumulate = one FLOP):
/// D_K^2 * (M/g) * N * D_F^2. g=1 is the standard conv cost; g=M=N the
/// depthwise cost.
int64_t flops_conv(const ConvCostSpec& spec);

/// Memory access cost: D_K^2 * D_F^2 * (M+N) + M*N/g.
int64_t mac_conv(const ConvCostSpec& spec);

/// Depthwise-separable vs standard conv cost ratio: 1/N + 1/D_K^2.
double ratio_dsconv_conv(int64_t dk, int64_t n);

/// Grouped conv + grouped pointwise vs depthwise-separable cost ratio.
double ratio_gsconv_dsconv(const ConvCostSpec& spec);

struct ReportRow {
    std::string name;
    int64_t flops = 0;
    int64_t mac = 0;
    int64_t params = 0;
};

/// Static per-layer cost table. Conventions: one multiply-accumulate counts
/// as one FLOP; batch norm costs 2 FLOPs per element; activations, pooling
/// and data-movement ops cost zero; non-square maps use H*W where the square
/// formulas use D_F^2. Parameter counts come from the actual tensor shapes
/// and include the batch-norm running statistics (everything a checkpoint
/// stores). model_size_bytes is the exact serialized checkpoint size.
struct ComplexityReport {
    std::vector<ReportRow> rows;
    int64_t total_flops = 0;
    int64_t total_mac = 0;
    int64_t total_params = 0;
    int64_t model_size_bytes = 0;
};

ComplexityReport analyze_model(const LSRNet& model);

/// Aligned human-readable table, conventions documented in the header lines.
std::string report_table(const ComplexityReport& report);
/// One "name<TAB>flops<TAB>mac<TAB>params" row per layer, totals last.
std::string report_tsv(const ComplexityReport& report);

} // namespace lsr
