#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "lsr/datapipe.hpp"
#include "lsr/model.hpp"

namespace lsr {

struct TrainConfig {
    int64_t epochs = 50;
    int64_t batch_size = 64;
    double learning_rate = 1e-3;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    uint64_t seed = 0;
    /// SNR of the training data in dB. Negative values arm adaptive pruning
    /// of the first denoising convolution.
    double snr_db = 100.0;
    double prune_fraction = 0.0; // in [0, 1)
    /// Prune trigger compares this loss against the best seen so far.
    bool prune_on_train_loss = false;
};

struct PruneEvent {
    int64_t epoch = 0;
    int64_t zeroed = 0;
    double trigger_loss = 0.0;
};

struct EpochStats {
    int64_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    std::optional<PruneEvent> prune;
};

struct Metrics {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<double> val_accuracy;
    double best_val_loss = 0.0;
    int64_t best_epoch = 0;
};

struct TrainResult {
    Metrics metrics;
    std::vector<PruneEvent> events;
};

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    std::vector<double> per_class_accuracy;
    std::vector<int64_t> class_counts;
    std::vector<int64_t> confusion; // row-major (actual, predicted)
};

struct BenchResult {
    double mean_ms = 0.0;
    double stdev_ms = 0.0;
    std::vector<double> samples_ms;
};

/// Decoupled-weight-decay Adam over the trainable parameters. The main update
/// uses bias-corrected moments; the decay step parameter -= lr*wd*parameter
/// follows it.
class AdamW {
public:
    AdamW(std::vector<NamedParam> params, const TrainConfig& cfg);

    void step();
    void zero_grad();

private:
    struct Slot {
        Tensor tensor;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    double lr_, wd_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

/// Magnitude pruning of the first denoising convolution kernel: when
/// current_loss improves on best_loss, the ceil(fraction * n) smallest
/// magnitude weights (ties to the lowest flat index) are set to zero. One-off
/// event; no mask persists, so later optimizer steps may regrow them.
std::optional<PruneEvent> adaptive_prune(LSRNet& model, double fraction,
                                         double best_loss, double current_loss,
                                         int64_t epoch);

using EpochCallback = std::function<void(const EpochStats&)>;

/// Seeded mini-batch training with a validation pass per epoch. Adaptive
/// pruning runs when cfg.snr_db < 0 and cfg.prune_fraction > 0, triggered by
/// a new best monitored loss (the first epoch sets the baseline). Returns
/// with the best-validation-loss weights restored into the model.
TrainResult train(LSRNet& model, const DatasetContainer& train_data,
                  const DatasetContainer& val_data, const TrainConfig& cfg,
                  const EpochCallback& callback = {});

EvalResult evaluate(LSRNet& model, const DatasetContainer& data);

/// Single-threaded single-segment forward timing: `warmup` untimed runs, then
/// `repeats` timed runs on a fixed seeded input.
BenchResult bench_inference(LSRNet& model, int64_t repeats = 128, int64_t warmup = 8);

} // namespace lsr
