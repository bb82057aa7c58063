#include "lsr/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lsr/errors.hpp"
#include "lsr/rng.hpp"
#include "lsr/serialize.hpp"

namespace lsr {
namespace {

constexpr char kMagic[4] = {'L', 'S', 'R', 'D'};
constexpr uint8_t kVersion = 0x01;
constexpr uint8_t kDtypeF32 = 0x01;

double mean_square(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s / static_cast<double>(v.size());
}

void check_container(const DatasetContainer& d) {
    for (const auto& seg : d.segments) {
        require(static_cast<int64_t>(seg.samples.size()) == d.segment_length,
                "container: segment length " + std::to_string(seg.samples.size()) +
                    " != declared " + std::to_string(d.segment_length));
        require(seg.label < d.class_count,
                "container: label " + std::to_string(seg.label) + " out of range for " +
                    std::to_string(d.class_count) + " classes");
    }
}

// Largest-remainder apportionment of `total` over real quotas, respecting
// per-class capacity. Ties break toward the lower class index.
std::vector<int64_t> apportion(const std::vector<double>& quotas,
                               const std::vector<int64_t>& capacity, int64_t total) {
    const size_t k = quotas.size();
    std::vector<int64_t> out(k);
    std::vector<double> frac(k);
    int64_t assigned = 0;
    for (size_t i = 0; i < k; ++i) {
        out[i] = std::min(static_cast<int64_t>(std::floor(quotas[i])), capacity[i]);
        frac[i] = quotas[i] - std::floor(quotas[i]);
        assigned += out[i];
    }
    std::vector<size_t> order(k);
    for (size_t i = 0; i < k; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return frac[a] > frac[b]; });
    size_t cursor = 0;
    while (assigned < total) {
        const size_t i = order[cursor % k];
        if (out[i] < capacity[i]) {
            ++out[i];
            ++assigned;
        }
        ++cursor;
        require(cursor < 4 * k * k + 8, "split: apportionment failed to converge");
    }
    return out;
}

} // namespace

int64_t window_length(const SegmentationSpec& spec) {
    require(spec.rpm > 0 && spec.sample_rate > 0 && spec.rotations > 0,
            "segmentation: rpm, sample rate and rotation count must be positive");
    return static_cast<int64_t>(
        std::floor(static_cast<double>(spec.rotations) * spec.sample_rate * 60.0 / spec.rpm));
}

NoiseKind noise_kind_from_name(const std::string& name) {
    if (name == "gaussian") return NoiseKind::Gaussian;
    if (name == "laplace") return NoiseKind::Laplace;
    if (name == "none") return NoiseKind::None;
    throw ContractError("unknown noise kind: " + name);
}

std::string noise_kind_name(NoiseKind kind) {
    switch (kind) {
    case NoiseKind::Gaussian: return "gaussian";
    case NoiseKind::Laplace: return "laplace";
    case NoiseKind::None: return "none";
    }
    return "?";
}

std::vector<std::vector<double>> segment_signal(std::span<const double> signal,
                                                const SegmentationSpec& spec) {
    const int64_t window = window_length(spec);
    require(spec.crop_to > 0 && spec.crop_to % 512 == 0,
            "segmentation: crop length must be a positive multiple of 512");
    require(spec.crop_to <= window,
            "segmentation: crop length " + std::to_string(spec.crop_to) +
                " exceeds the rotation window " + std::to_string(window));

    const int64_t count = static_cast<int64_t>(signal.size()) / window;
    const int64_t lead = (window - spec.crop_to) / 2;
    std::vector<std::vector<double>> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        const double* base = signal.data() + i * window + lead;
        out.emplace_back(base, base + spec.crop_to);
    }
    return out;
}

std::vector<double> inject_noise(std::span<const double> segment, const NoiseSpec& spec) {
    require(!segment.empty(), "noise: empty segment");
    if (spec.kind == NoiseKind::None) return {segment.begin(), segment.end()};

    const double p_signal = mean_square(segment);
    require(p_signal > 0.0, "noise: all-zero segment has undefined SNR");
    const double p_noise = p_signal / std::pow(10.0, spec.snr_db / 10.0);

    Rng rng(spec.seed);
    std::vector<double> noise(segment.size());
    if (spec.kind == NoiseKind::Gaussian) {
        const double sigma = std::sqrt(p_noise);
        for (double& v : noise) v = sigma * rng.gaussian();
    } else {
        const double b = std::sqrt(p_noise / 2.0);
        for (double& v : noise) v = rng.laplace(b);
    }

    // Calibrate the drawn vector to the exact target power.
    const double drawn = mean_square(noise);
    require(drawn > 0.0, "noise: degenerate noise draw");
    const double k = std::sqrt(p_noise / drawn);
    std::vector<double> out(segment.begin(), segment.end());
    for (size_t i = 0; i < out.size(); ++i) out[i] += k * noise[i];
    return out;
}

DatasetContainer with_noise(const DatasetContainer& d, NoiseKind kind, double snr_db,
                            uint64_t seed) {
    check_container(d);
    DatasetContainer out = d;
    out.noise_desc = kind == NoiseKind::None
                         ? "none"
                         : noise_kind_name(kind) + " @ " + std::to_string(snr_db) + " dB";
    if (kind == NoiseKind::None) return out;
    for (size_t i = 0; i < out.segments.size(); ++i) {
        auto& seg = out.segments[i];
        std::vector<double> s(seg.samples.begin(), seg.samples.end());
        NoiseSpec ns{kind, snr_db, derive_seed(seed, i)};
        const auto noisy = inject_noise(s, ns);
        for (size_t j = 0; j < noisy.size(); ++j)
            seg.samples[j] = static_cast<float>(noisy[j]);
    }
    return out;
}

std::array<DatasetContainer, 3> split_dataset(const DatasetContainer& d, uint64_t seed) {
    check_container(d);
    const int64_t n = d.size();
    require(n > 0, "split: empty dataset");

    const int64_t n_train = static_cast<int64_t>(std::floor(0.8 * static_cast<double>(n)));
    const int64_t n_val = static_cast<int64_t>(std::floor(0.1 * static_cast<double>(n)));

    Rng rng(derive_seed(seed, 0x73706c6974ULL));
    const auto perm = rng.permutation(static_cast<size_t>(n));

    std::vector<int64_t> class_counts(static_cast<size_t>(d.class_count), 0);
    for (const auto& seg : d.segments) ++class_counts[seg.label];
    const bool stratified =
        d.class_count > 0 &&
        std::all_of(class_counts.begin(), class_counts.end(),
                    [](int64_t c) { return c >= 10; });

    std::vector<size_t> train_idx, val_idx, test_idx;
    if (!stratified) {
        for (int64_t i = 0; i < n; ++i) {
            if (i < n_train)
                train_idx.push_back(perm[static_cast<size_t>(i)]);
            else if (i < n_train + n_val)
                val_idx.push_back(perm[static_cast<size_t>(i)]);
            else
                test_idx.push_back(perm[static_cast<size_t>(i)]);
        }
    } else {
        // Per-class shuffled queues; global counts stay exact via
        // largest-remainder apportionment of the 8:1:1 targets.
        std::vector<std::vector<size_t>> queues(static_cast<size_t>(d.class_count));
        for (size_t i = 0; i < perm.size(); ++i)
            queues[d.segments[perm[i]].label].push_back(perm[i]);

        std::vector<double> train_quota(queues.size()), val_quota(queues.size());
        std::vector<int64_t> cap(queues.size());
        for (size_t k = 0; k < queues.size(); ++k) {
            cap[k] = static_cast<int64_t>(queues[k].size());
            train_quota[k] = 0.8 * static_cast<double>(cap[k]);
        }
        const auto per_class_train = apportion(train_quota, cap, n_train);
        std::vector<int64_t> val_cap(queues.size());
        for (size_t k = 0; k < queues.size(); ++k) {
            val_cap[k] = cap[k] - per_class_train[k];
            val_quota[k] = 0.1 * static_cast<double>(cap[k]);
        }
        const auto per_class_val = apportion(val_quota, val_cap, n_val);

        for (size_t k = 0; k < queues.size(); ++k) {
            const auto& q = queues[k];
            size_t at = 0;
            for (int64_t i = 0; i < per_class_train[k]; ++i) train_idx.push_back(q[at++]);
            for (int64_t i = 0; i < per_class_val[k]; ++i) val_idx.push_back(q[at++]);
            while (at < q.size()) test_idx.push_back(q[at++]);
        }
    }

    auto take = [&](const std::vector<size_t>& idx) {
        DatasetContainer part;
        part.segment_length = d.segment_length;
        part.class_count = d.class_count;
        part.rpm = d.rpm;
        part.sample_rate = d.sample_rate;
        part.noise_desc = d.noise_desc;
        part.segments.reserve(idx.size());
        for (size_t i : idx) part.segments.push_back(d.segments[i]);
        return part;
    };
    return {take(train_idx), take(val_idx), take(test_idx)};
}

DatasetContainer synth_generate(int64_t classes, int64_t per_class, int64_t length,
                                double sample_rate, uint64_t seed) {
    require(classes >= 1 && per_class >= 1, "synth: class and per-class counts must be positive");
    require(classes <= 255, "synth: at most 255 classes (labels are one byte)");
    require(length > 0 && length % 512 == 0, "synth: length must be a positive multiple of 512");
    require(sample_rate > 0, "synth: sample rate must be positive");

    DatasetContainer d;
    d.segment_length = length;
    d.class_count = classes;
    d.sample_rate = sample_rate;
    d.noise_desc = "synthetic";
    d.segments.reserve(static_cast<size_t>(classes * per_class));

    constexpr double kBackgroundAmp = 0.05;
    constexpr double kImpulseAmp = 1.0;
    constexpr double kRingDecay = 16.0; // samples

    for (int64_t cls = 0; cls < classes; ++cls) {
        // Class k >= 1: k+3 impulses per 512 samples, ring period 8(k+1) samples.
        const double period = cls >= 1 ? 512.0 / static_cast<double>(cls + 3) : 0.0;
        const double ring_step =
            cls >= 1 ? 2.0 * std::numbers::pi / (8.0 * static_cast<double>(cls + 1)) : 0.0;
        for (int64_t j = 0; j < per_class; ++j) {
            Rng rng(derive_seed(seed, static_cast<uint64_t>(cls * per_class + j)));
            std::vector<double> s(static_cast<size_t>(length));
            const double bg = kBackgroundAmp * rng.uniform(0.8, 1.2);
            for (double& v : s) v = bg * rng.gaussian();

            if (cls >= 1) {
                const double phase = rng.uniform(0.0, period);
                for (double t0 = phase; t0 < static_cast<double>(length); t0 += period) {
                    const int64_t start = static_cast<int64_t>(std::llround(t0));
                    const double amp = kImpulseAmp * rng.uniform(0.8, 1.2);
                    const int64_t stop =
                        std::min<int64_t>(length, start + static_cast<int64_t>(6 * kRingDecay));
                    for (int64_t t = start; t < stop; ++t) {
                        const double dt = static_cast<double>(t - start);
                        s[static_cast<size_t>(t)] +=
                            amp * std::exp(-dt / kRingDecay) * std::sin(ring_step * dt);
                    }
                }
            }

            Segment seg;
            seg.label = static_cast<uint8_t>(cls);
            seg.samples.resize(static_cast<size_t>(length));
            for (int64_t i = 0; i < length; ++i)
                seg.samples[static_cast<size_t>(i)] = static_cast<float>(s[static_cast<size_t>(i)]);
            d.segments.push_back(std::move(seg));
        }
    }
    return d;
}

std::vector<uint8_t> write_container(const DatasetContainer& d) {
    check_container(d);
    require(d.segment_length >= 0 && d.class_count >= 0, "container: negative counts");
    ByteWriter w;
    w.raw(kMagic, 4);
    w.u8(kVersion);
    w.u8(kDtypeF32);
    w.u8(0);
    w.u8(0);
    w.u32le(static_cast<uint32_t>(d.segments.size()));
    w.u32le(static_cast<uint32_t>(d.segment_length));
    w.u32le(static_cast<uint32_t>(d.class_count));
    for (const auto& seg : d.segments) {
        w.u8(seg.label);
        for (float v : seg.samples) w.f32le(v);
    }
    w.crc_trailer();
    return w.bytes();
}

DatasetContainer read_container(std::span<const uint8_t> bytes) {
    ByteReader r(bytes);
    r.verify_crc_trailer("container");
    if (r.str(4) != std::string(kMagic, 4))
        throw FormatError("container: bad magic at offset 0");
    const uint8_t version = r.u8();
    if (version != kVersion)
        throw FormatError("container: unsupported version " + std::to_string(version) +
                          " at offset 4");
    const uint8_t dtype = r.u8();
    if (dtype != kDtypeF32)
        throw FormatError("container: unsupported dtype " + std::to_string(dtype) +
                          " at offset 5");
    if (r.u8() != 0 || r.u8() != 0)
        throw FormatError("container: reserved bytes at offset 6 must be zero");

    DatasetContainer d;
    const uint32_t count = r.u32le();
    d.segment_length = r.u32le();
    d.class_count = r.u32le();
    const uint64_t need =
        static_cast<uint64_t>(count) * (1 + 4 * static_cast<uint64_t>(d.segment_length));
    if (need != r.remaining())
        throw FormatError("container: payload size mismatch at offset " +
                          std::to_string(r.offset()) + ": header implies " +
                          std::to_string(need) + " bytes, stream has " +
                          std::to_string(r.remaining()));
    d.segments.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Segment seg;
        seg.label = r.u8();
        if (seg.label >= d.class_count)
            throw FormatError("container: segment " + std::to_string(i) + " label " +
                              std::to_string(seg.label) + " out of range");
        seg.samples.resize(static_cast<size_t>(d.segment_length));
        for (auto& v : seg.samples) v = r.f32le();
        d.segments.push_back(std::move(seg));
    }
    return d;
}

DatasetContainer load_container(const std::string& path) {
    return read_container(read_file(path));
}

void store_container(const DatasetContainer& d, const std::string& path) {
    write_file(path, write_container(d));
}

} // namespace lsr
