#include "lsr/model.hpp"

#include <algorithm>
#include <sstream>

#include "lsr/errors.hpp"
#include "lsr/serialize.hpp"

namespace lsr {

using arch::kCd;
using arch::kCes;
using arch::kStemOut;
using arch::kFeatures;
using arch::kCamReduction;

namespace {

constexpr char kMagic[4] = {'L', 'S', 'R', 'W'};
constexpr uint8_t kVersion = 0x01;
constexpr const char* kConfigRecord = "__config__";

int64_t cam_params(int64_t channels) { return 2 * channels * arch::cam_hidden(channels); }

// 3x3 single-channel conv + bias.
constexpr int64_t kSamParams = 10;

void check_divides(int64_t extent, int64_t stride, const std::string& layer) {
    if (stride > 1 && extent % stride != 0)
        throw ContractError("config: extent " + std::to_string(extent) + " at layer '" +
                            layer + "' is not divisible by its stride " +
                            std::to_string(stride));
}

} // namespace

std::vector<TraceEntry> shape_trace(const LSRNetConfig& cfg) {
    require(cfg.input_length > 0, "config: input length must be positive");
    require(cfg.classes > 0, "config: class count must be positive");

    std::vector<TraceEntry> trace;
    int64_t t = cfg.input_length;
    for (int i = 0; i < 3; ++i) {
        const auto& cd = kCd[i];
        const std::string name = "cd" + std::to_string(i + 1);
        check_divides(t, cd.stride, name);
        t /= cd.stride;
        trace.push_back({name, {cd.out, t}, cd.out * cd.in * 3 + cd.out + 4 * cd.out});
    }
    trace.push_back({"fem", {3, 32, t}, 0});

    int64_t h = 32, w = t;
    check_divides(h, 2, "stem_conv");
    check_divides(w, 2, "stem_conv");
    h /= 2;
    w /= 2;
    trace.push_back({"stem_conv", {kStemOut, h, w},
                     kStemOut * 3 * 9 + kStemOut + 4 * kStemOut});
    check_divides(h, 2, "stem_pool");
    check_divides(w, 2, "stem_pool");
    require(h >= 2 && w >= 2, "config: stem pooling window exceeds the feature map");
    h /= 2;
    w /= 2;
    trace.push_back({"stem_pool", {kStemOut, h, w}, 0});

    for (int i = 0; i < 3; ++i) {
        const auto& ces = kCes[i];
        const std::string name = "ces" + std::to_string(i + 1);
        check_divides(h, ces.sh, name);
        check_divides(w, ces.sw, name);
        require(h >= ces.sh && w >= ces.sw, "config: " + name + " stride exceeds the map");
        h /= ces.sh;
        w /= ces.sw;
        const int64_t half = ces.in / 2;
        const int64_t rout = ces.out - half;
        int64_t p = 0;
        p += half * 2 * 9 + half + 4 * half;       // gconv + bn1
        p += kSamParams;                           // sam_right
        p += rout * 2 + rout + 4 * rout;           // gpconv + bn2
        p += cam_params(rout);                     // cam_right
        p += kSamParams + cam_params(half);        // left branch
        trace.push_back({name, {ces.out, h, w}, p});
    }

    trace.push_back({"gap", {kFeatures}, 0});
    trace.push_back({"fc", {cfg.classes}, kFeatures * cfg.classes + cfg.classes});
    return trace;
}

int64_t trace_total_params(const std::vector<TraceEntry>& trace) {
    int64_t total = 0;
    for (const auto& e : trace) total += e.params;
    return total;
}

std::string trace_text(const std::vector<TraceEntry>& trace) {
    std::ostringstream os;
    os << "layer        output shape     params\n";
    for (const auto& e : trace) {
        os << e.name;
        for (size_t i = e.name.size(); i < 13; ++i) os << ' ';
        std::string sh;
        for (size_t i = 0; i < e.shape.size(); ++i) {
            if (i) sh += 'x';
            sh += std::to_string(e.shape[i]);
        }
        os << sh;
        for (size_t i = sh.size(); i < 17; ++i) os << ' ';
        os << e.params << '\n';
    }
    os << "total params: " << trace_total_params(trace) << '\n';
    return os.str();
}

CESBlock::CESBlock(int64_t in_ch, int64_t out_ch, int64_t stride_h, int64_t stride_w,
                   Rng& rng)
    : gconv(in_ch / 2, in_ch / 2, 3, 3, stride_h, stride_w, 1, 1, in_ch / 4, rng),
      bn1(in_ch / 2),
      sam_right(rng),
      gpconv(in_ch / 2, out_ch - in_ch / 2, 1, 1, 1, 1, 0, 0, in_ch / 4, rng),
      bn2(out_ch - in_ch / 2),
      cam_right(out_ch - in_ch / 2, kCamReduction, rng),
      sam_left(rng),
      cam_left(in_ch / 2, kCamReduction, rng),
      in_ch_(in_ch),
      out_ch_(out_ch),
      stride_h_(stride_h),
      stride_w_(stride_w) {
    require(in_ch % 4 == 0, "ces: input channels must be divisible by 4");
    require(out_ch > in_ch / 2, "ces: output channels must exceed the bypass half");
    require((out_ch - in_ch / 2) % (in_ch / 4) == 0,
            "ces: grouped pointwise output width not divisible by group count");
}

Tensor CESBlock::forward(const Tensor& x, Mode mode) {
    require(x.rank() == 4 && x.dim(1) == in_ch_,
            "ces: expected " + std::to_string(in_ch_) + " channels, got " +
                shape_str(x.shape()));
    auto [left, right] = channel_split(x, in_ch_ / 2);

    Tensor r = sam_right.forward(hard_swish(bn1.forward(gconv.forward(right), mode)));
    r = cam_right.forward(bn2.forward(gpconv.forward(r), mode));
    // Skip path: pooled to the block stride, channels zero-padded to match.
    Tensor skip = right;
    if (stride_h_ > 1 || stride_w_ > 1)
        skip = avg_pool2d(skip, stride_h_, stride_w_, stride_h_, stride_w_);
    r = add(r, pad_channels(skip, out_ch_ - in_ch_ / 2));

    Tensor l = cam_left.forward(sam_left.forward(left));
    if (stride_h_ > 1 || stride_w_ > 1)
        l = avg_pool2d(l, stride_h_, stride_w_, stride_h_, stride_w_);

    return channel_shuffle(channel_concat({r, l}), 2);
}

void CESBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    gconv.collect(prefix + ".gconv", out);
    bn1.collect(prefix + ".bn1", out);
    sam_right.collect(prefix + ".sam_right", out);
    gpconv.collect(prefix + ".gpconv", out);
    bn2.collect(prefix + ".bn2", out);
    cam_right.collect(prefix + ".cam_right", out);
    sam_left.collect(prefix + ".sam_left", out);
    cam_left.collect(prefix + ".cam_left", out);
}

LSRNet::LSRNet(LSRNetConfig cfg, uint64_t seed) : cfg_(cfg) {
    require(cfg.input_length % 512 == 0,
            "config: input length must be a multiple of 512, got " +
                std::to_string(cfg.input_length));
    shape_trace(cfg); // validates the stride chain, names the offending layer

    Rng rng(derive_seed(seed, 0x6d6f64656cULL));
    for (const auto& cd : kCd) {
        dm_.push_back({Conv2d(cd.in, cd.out, 3, 1, cd.stride, 1, 1, 0, 1, rng),
                       BatchNorm(cd.out)});
    }
    stem_conv_ = std::make_unique<Conv2d>(3, kStemOut, 3, 3, 2, 2, 1, 1, 1, rng);
    stem_bn_ = std::make_unique<BatchNorm>(kStemOut);
    for (const auto& ces : kCes) ces_.emplace_back(ces.in, ces.out, ces.sh, ces.sw, rng);
    fc_ = std::make_unique<DenseLayer>(kFeatures, cfg.classes, rng);
}

Tensor LSRNet::dm_forward(const Tensor& x0, Mode mode) {
    require(x0.rank() == 3 && x0.dim(1) == 1,
            "dm: expected (B, 1, N) signals, got " + shape_str(x0.shape()));
    const int64_t B = x0.dim(0), N = x0.dim(2);
    require(N % 16 == 0, "dm: signal length " + std::to_string(N) +
                             " is not divisible by the cumulative stride 16");
    Tensor h = reshape(x0, {B, 1, N, 1});
    for (auto& cd : dm_) h = relu6(cd.bn.forward(cd.conv.forward(h), mode));
    return reshape(h, {B, 32, N / 16});
}

Tensor LSRNet::fem_forward(const Tensor& h) const {
    require(h.rank() == 3 && h.dim(1) == 32,
            "fem: expected (B, 32, T), got " + shape_str(h.shape()));
    const int64_t B = h.dim(0), T = h.dim(2);
    const Tensor plane = reshape(h, {B, 1, 32, T});
    return channel_concat({relu6(plane), hard_tanh(plane), hard_swish(plane)});
}

Tensor LSRNet::forward(const Tensor& x0, Mode mode) {
    require(x0.rank() == 3 && x0.dim(2) == cfg_.input_length,
            "forward: expected input length " + std::to_string(cfg_.input_length) +
                ", got " + shape_str(x0.shape()));
    Tensor f = fem_forward(dm_forward(x0, mode));
    Tensor s = relu6(stem_bn_->forward(stem_conv_->forward(f), mode));
    s = avg_pool2d(s, 2, 2, 2, 2);
    for (auto& ces : ces_) s = ces.forward(s, mode);
    return softmax(fc_->forward(global_avg_pool(s)));
}

std::vector<NamedParam> LSRNet::parameters() const {
    std::vector<NamedParam> out;
    for (size_t i = 0; i < dm_.size(); ++i) {
        const std::string p = "dm.cd" + std::to_string(i + 1);
        dm_[i].conv.collect(p + ".conv", out);
        dm_[i].bn.collect(p + ".bn", out);
    }
    stem_conv_->collect("stem.conv", out);
    stem_bn_->collect("stem.bn", out);
    for (size_t i = 0; i < ces_.size(); ++i)
        ces_[i].collect("ces" + std::to_string(i + 1), out);
    fc_->collect("fc", out);
    return out;
}

void LSRNet::zero_grad() {
    for (auto& p : parameters())
        if (p.trainable) p.tensor.zero_grad();
}

std::vector<uint8_t> LSRNet::save() const {
    auto params = parameters();
    ByteWriter w;
    w.raw(kMagic, 4);
    w.u8(kVersion);
    w.u32le(static_cast<uint32_t>(params.size() + 1));

    auto record = [&w](const std::string& name, const Shape& shape,
                       std::span<const double> values) {
        w.u16le(static_cast<uint16_t>(name.size()));
        w.str(name);
        w.u8(static_cast<uint8_t>(shape.size()));
        for (int64_t d : shape) w.u32le(static_cast<uint32_t>(d));
        for (double v : values) w.f32le(static_cast<float>(v));
    };

    const double cfgv[2] = {static_cast<double>(cfg_.input_length),
                            static_cast<double>(cfg_.classes)};
    record(kConfigRecord, {2}, cfgv);
    for (const auto& p : params) record(p.name, p.tensor.shape(), p.tensor.data());

    w.crc_trailer();
    return w.bytes();
}

namespace {

struct RawRecord {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

std::vector<RawRecord> parse_checkpoint(std::span<const uint8_t> bytes) {
    ByteReader r(bytes);
    r.verify_crc_trailer("checkpoint");
    if (r.str(4) != std::string(kMagic, 4))
        throw FormatError("checkpoint: bad magic at offset 0");
    const uint8_t version = r.u8();
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version) +
                          " at offset 4");
    const uint32_t count = r.u32le();
    std::vector<RawRecord> records;
    records.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        RawRecord rec;
        const uint16_t name_len = r.u16le();
        rec.name = r.str(name_len);
        const uint8_t rank = r.u8();
        int64_t numel = 1;
        for (uint8_t d = 0; d < rank; ++d) {
            const uint32_t dim = r.u32le();
            if (dim == 0) throw FormatError("checkpoint: zero extent in record " + rec.name);
            rec.shape.push_back(static_cast<int64_t>(dim));
            numel *= dim;
        }
        if (static_cast<uint64_t>(numel) * 4 > r.remaining())
            throw FormatError("checkpoint: record " + rec.name +
                              " overruns the stream at offset " + std::to_string(r.offset()));
        rec.values.resize(static_cast<size_t>(numel));
        for (auto& v : rec.values) v = r.f32le();
        records.push_back(std::move(rec));
    }
    if (r.remaining() != 0)
        throw FormatError("checkpoint: trailing garbage at offset " +
                          std::to_string(r.offset()));
    return records;
}

} // namespace

LSRNet LSRNet::load(std::span<const uint8_t> bytes) {
    const auto records = parse_checkpoint(bytes);
    if (records.empty() || records[0].name != kConfigRecord ||
        records[0].values.size() != 2)
        throw FormatError("checkpoint: missing config record");
    LSRNetConfig cfg;
    cfg.input_length = static_cast<int64_t>(records[0].values[0]);
    cfg.classes = static_cast<int64_t>(records[0].values[1]);

    // a config the architecture rejects means the stream is not a valid
    // checkpoint, whatever its CRC says
    std::unique_ptr<LSRNet> built;
    try {
        built = std::make_unique<LSRNet>(cfg, 0);
    } catch (const ContractError& e) {
        throw FormatError(std::string("checkpoint: invalid embedded config: ") + e.what());
    }
    LSRNet& model = *built;
    auto params = model.parameters();
    if (records.size() != params.size() + 1)
        throw FormatError("checkpoint: expected " + std::to_string(params.size() + 1) +
                          " records, found " + std::to_string(records.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& rec = records[i + 1];
        auto& p = params[i];
        if (rec.name != p.name)
            throw FormatError("checkpoint: record '" + rec.name + "' where '" + p.name +
                              "' was expected");
        if (rec.shape != p.tensor.shape())
            throw FormatError("checkpoint: shape mismatch for '" + rec.name + "': stored " +
                              shape_str(rec.shape) + ", model needs " +
                              shape_str(p.tensor.shape()));
        auto dst = p.tensor.data_mut();
        for (size_t j = 0; j < rec.values.size(); ++j)
            dst[j] = static_cast<double>(rec.values[j]);
        try {
            check_finite(p.tensor.data(), "checkpoint");
        } catch (const NumericError& e) {
            throw FormatError(std::string("checkpoint: ") + e.what());
        }
    }
    return std::move(model);
}

int64_t checkpoint_param_count(std::span<const uint8_t> bytes) {
    int64_t total = 0;
    for (const auto& rec : parse_checkpoint(bytes))
        if (rec.name != kConfigRecord) total += static_cast<int64_t>(rec.values.size());
    return total;
}

} // namespace lsr
