#include "lsr/analyzer.hpp"

#include <map>
#include <sstream>

#include "lsr/errors.hpp"

namespace lsr {
namespace {

void check_cost_spec(const ConvCostSpec& s) {
    require(s.dk >= 1 && s.df >= 1 && s.m >= 1 && s.n >= 1 && s.g >= 1,
            "cost spec: all extents must be positive");
    require(s.m % s.g == 0 && s.n % s.g == 0,
            "cost spec: channels not divisible by groups");
}

// Non-square generalizations: `k` is kH*kW, `hw` the output H*W.
int64_t flops_conv_hw(int64_t k, int64_t hw, int64_t m, int64_t n, int64_t g) {
    return k * (m / g) * n * hw;
}

int64_t mac_conv_hw(int64_t k, int64_t hw, int64_t m, int64_t n, int64_t g) {
    return k * hw * (m + n) + m * n / g;
}

} // namespace

int64_t flops_conv(const ConvCostSpec& s) {
    check_cost_spec(s);
    return flops_conv_hw(s.dk * s.dk, s.df * s.df, s.m, s.n, s.g);
}

int64_t mac_conv(const ConvCostSpec& s) {
    check_cost_spec(s);
    return mac_conv_hw(s.dk * s.dk, s.df * s.df, s.m, s.n, s.g);
}

double ratio_dsconv_conv(int64_t dk, int64_t n) {
    require(dk >= 1 && n >= 1, "ratio: extents must be positive");
    return 1.0 / static_cast<double>(n) +
           1.0 / static_cast<double>(dk * dk);
}

double ratio_gsconv_dsconv(const ConvCostSpec& s) {
    check_cost_spec(s);
    const double df2 = static_cast<double>(s.df * s.df);
    const double dk2 = static_cast<double>(s.dk * s.dk);
    const double m = static_cast<double>(s.m), n = static_cast<double>(s.n);
    const double mg = m / static_cast<double>(s.g);
    const double grouped = dk2 * mg * m * df2 + mg * n * df2;
    const double dsconv = dk2 * m * df2 + m * n * df2;
    return grouped / dsconv;
}

namespace {

struct Walk {
    std::vector<ReportRow> rows;
    std::map<std::string, int64_t> param_by_prefix;

    int64_t params_for(const std::string& prefix) {
        int64_t total = 0;
        for (auto it = param_by_prefix.lower_bound(prefix);
             it != param_by_prefix.end() && it->first.compare(0, prefix.size(), prefix) == 0;
             ++it)
            total += it->second;
        return total;
    }

    void conv_row(const std::string& name, int64_t k, int64_t hw, int64_t m, int64_t n,
                  int64_t g) {
        rows.push_back({name, flops_conv_hw(k, hw, m, n, g), mac_conv_hw(k, hw, m, n, g),
                        params_for(name)});
    }

    void bn_row(const std::string& name, int64_t channels, int64_t hw) {
        const int64_t elems = channels * hw;
        rows.push_back({name, 2 * elems, 2 * elems + 4 * channels, params_for(name)});
    }

    void cam_row(const std::string& name, int64_t channels) {
        const int64_t hidden = arch::cam_hidden(channels);
        const int64_t flops = 2 * channels * hidden;
        const int64_t mac = (channels + hidden) + channels * hidden +
                            (hidden + channels) + hidden * channels;
        rows.push_back({name, flops, mac, params_for(name)});
    }

    void zero_row(const std::string& name) { rows.push_back({name, 0, 0, params_for(name)}); }
};

} // namespace

ComplexityReport analyze_model(const LSRNet& model) {
    const LSRNetConfig cfg = model.config();
    Walk walk;
    for (const auto& p : model.parameters())
        walk.param_by_prefix[p.name] = p.tensor.numel();

    int64_t t = cfg.input_length;
    for (int i = 0; i < 3; ++i) {
        const auto& cd = arch::kCd[i];
        const std::string prefix = "dm.cd" + std::to_string(i + 1);
        t /= cd.stride;
        walk.conv_row(prefix + ".conv", 3, t, cd.in, cd.out, 1);
        walk.bn_row(prefix + ".bn", cd.out, t);
    }
    walk.zero_row("fem");

    int64_t h = 32 / 2, w = t / 2;
    walk.conv_row("stem.conv", 9, h * w, 3, arch::kStemOut, 1);
    walk.bn_row("stem.bn", arch::kStemOut, h * w);
    h /= 2;
    w /= 2;
    walk.zero_row("stem.pool");

    for (int i = 0; i < 3; ++i) {
        const auto& ces = arch::kCes[i];
        const std::string prefix = "ces" + std::to_string(i + 1);
        const int64_t half = ces.in / 2;
        const int64_t rout = ces.out - half;
        const int64_t groups = ces.in / 4;
        const int64_t in_hw = h * w;
        h /= ces.sh;
        w /= ces.sw;
        const int64_t out_hw = h * w;
        walk.conv_row(prefix + ".gconv", 9, out_hw, half, half, groups);
        walk.bn_row(prefix + ".bn1", half, out_hw);
        walk.conv_row(prefix + ".sam_right", 9, out_hw, 1, 1, 1);
        walk.conv_row(prefix + ".gpconv", 1, out_hw, half, rout, groups);
        walk.bn_row(prefix + ".bn2", rout, out_hw);
        walk.cam_row(prefix + ".cam_right", rout);
        walk.conv_row(prefix + ".sam_left", 9, in_hw, 1, 1, 1);
        walk.cam_row(prefix + ".cam_left", half);
    }

    walk.zero_row("gap");
    walk.conv_row("fc", 1, 1, arch::kFeatures, cfg.classes, 1);
    walk.zero_row("softmax");

    ComplexityReport report;
    report.rows = std::move(walk.rows);
    for (const auto& r : report.rows) {
        report.total_flops += r.flops;
        report.total_mac += r.mac;
        report.total_params += r.params;
    }
    report.model_size_bytes = static_cast<int64_t>(model.save().size());
    return report;
}

namespace {
void pad_to(std::string& s, size_t width) {
    while (s.size() < width) s.push_back(' ');
}
} // namespace

std::string report_table(const ComplexityReport& report) {
    std::ostringstream os;
    os << "# FLOPs: 1 multiply-accumulate = 1; BN = 2/element; activations and"
          " pooling excluded\n";
    os << "# MAC: Dk^2*Df^2*(M+N) + M*N/g per conv/FC (H*W for non-square maps);"
          " BN = 2*elements + 4*C\n";
    os << "# params: stored tensor sizes, including BN running statistics\n";
    std::string h1 = "layer", h2 = "flops", h3 = "mac", h4 = "params";
    pad_to(h1, 20);
    pad_to(h2, 12);
    pad_to(h3, 12);
    os << h1 << h2 << h3 << h4 << '\n';
    auto line = [&os](const std::string& name, int64_t f, int64_t m, int64_t p) {
        std::string c1 = name, c2 = std::to_string(f), c3 = std::to_string(m);
        pad_to(c1, 20);
        pad_to(c2, 12);
        pad_to(c3, 12);
        os << c1 << c2 << c3 << p << '\n';
    };
    for (const auto& r : report.rows) line(r.name, r.flops, r.mac, r.params);
    line("total", report.total_flops, report.total_mac, report.total_params);
    os << "model size: " << report.model_size_bytes << " bytes\n";
    return os.str();
}

std::string report_tsv(const ComplexityReport& report) {
    std::ostringstream os;
    for (const auto& r : report.rows)
        os << r.name << '\t' << r.flops << '\t' << r.mac << '\t' << r.params << '\n';
    os << "total\t" << report.total_flops << '\t' << report.total_mac << '\t'
       << report.total_params << '\n';
    return os.str();
}

} // namespace lsr
