#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lsr {

/// Rotation-based windowing: each window covers `rotations` shaft turns at
/// the given speed and sampling rate, then is center-cropped to `crop_to`.
struct SegmentationSpec {
    double rpm = 900.0;
    double sample_rate = 64000.0;
    int64_t rotations = 1;
    int64_t crop_to = 4096; // multiple of 512
};

/// Window length in samples: floor(Q * fs * 60 / rpm).
int64_t window_length(const SegmentationSpec& spec);

enum class NoiseKind { None, Gaussian, Laplace };

NoiseKind noise_kind_from_name(const std::string& name);
std::string noise_kind_name(NoiseKind kind);

struct NoiseSpec {
    NoiseKind kind = NoiseKind::None;
    double snr_db = 0.0;
    uint64_t seed = 0;
};

struct Segment {
    uint8_t label = 0;
    std::vector<float> samples;
};

/// Labeled fixed-length segments plus provenance. The provenance fields are
/// in-memory only; the on-disk container stores segments, lengths and counts.
struct DatasetContainer {
    std::vector<Segment> segments;
    int64_t segment_length = 0;
    int64_t class_count = 0;
    double rpm = 0.0;
    double sample_rate = 0.0;
    std::string noise_desc;

    int64_t size() const { return static_cast<int64_t>(segments.size()); }
};

/// Consecutive non-overlapping windows of one rotation block each, cropped to
/// spec.crop_to. A signal shorter than one window yields an empty result.
std::vector<std::vector<double>> segment_signal(std::span<const double> signal,
                                                const SegmentationSpec& spec);

/// Adds zero-mean i.i.d. noise at the requested SNR. The drawn noise vector
/// is rescaled so the achieved per-segment SNR is exact (the draw's empirical
/// power, not its expectation, meets P_noise = P_signal / 10^(snr/10)).
std::vector<double> inject_noise(std::span<const double> segment, const NoiseSpec& spec);

/// Applies inject_noise segment-wise; per-segment seeds derive from
/// (seed, segment index) so results do not depend on evaluation order.
DatasetContainer with_noise(const DatasetContainer& d, NoiseKind kind, double snr_db,
                            uint64_t seed);

/// Seeded 8:1:1 split: (floor(0.8 n), floor(0.1 n), remainder), stratified per
/// class when every class has at least 10 members.
std::array<DatasetContainer, 3> split_dataset(const DatasetContainer& d, uint64_t seed);

/// Desk-scale 3-class-style generator: class 0 is stationary broadband noise,
/// class k >= 1 adds a periodic impulse train with class-specific repetition
/// period and ring frequency, amplitudes jittered by +/-20%.
DatasetContainer synth_generate(int64_t classes, int64_t per_class, int64_t length,
                                double sample_rate, uint64_t seed);

std::vector<uint8_t> write_container(const DatasetContainer& d);
DatasetContainer read_container(std::span<const uint8_t> bytes);

DatasetContainer load_container(const std::string& path);
void store_container(const DatasetContainer& d, const std::string& path);

} // namespace lsr
