#include "lsr/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "lsr/errors.hpp"
#include "lsr/ops.hpp"
#include "lsr/rng.hpp"

namespace lsr {
namespace {

Tensor batch_input(const DatasetContainer& data, std::span<const size_t> idx) {
    const int64_t n = data.segment_length;
    std::vector<double> values;
    values.reserve(idx.size() * static_cast<size_t>(n));
    for (size_t i : idx) {
        const auto& s = data.segments[i].samples;
        values.insert(values.end(), s.begin(), s.end());
    }
    return Tensor({static_cast<int64_t>(idx.size()), 1, n}, std::move(values));
}

std::vector<int64_t> batch_labels(const DatasetContainer& data, std::span<const size_t> idx) {
    std::vector<int64_t> labels;
    labels.reserve(idx.size());
    for (size_t i : idx) labels.push_back(data.segments[i].label);
    return labels;
}

void check_compatible(const LSRNet& model, const DatasetContainer& d, const char* what) {
    require(d.size() > 0, std::string(what) + ": empty dataset");
    require(d.segment_length == model.config().input_length,
            std::string(what) + ": segment length " + std::to_string(d.segment_length) +
                " != model input length " + std::to_string(model.config().input_length));
    require(d.class_count == model.config().classes,
            std::string(what) + ": class count " + std::to_string(d.class_count) +
                " != model classes " + std::to_string(model.config().classes));
}

std::vector<std::vector<double>> snapshot(const std::vector<NamedParam>& params) {
    std::vector<std::vector<double>> vals;
    vals.reserve(params.size());
    for (const auto& p : params)
        vals.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return vals;
}

void restore(std::vector<NamedParam>& params, const std::vector<std::vector<double>>& vals) {
    for (size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].tensor.data_mut();
        std::copy(vals[i].begin(), vals[i].end(), dst.begin());
    }
}

} // namespace

AdamW::AdamW(std::vector<NamedParam> params, const TrainConfig& cfg)
    : lr_(cfg.learning_rate),
      wd_(cfg.weight_decay),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.eps) {
    require(lr_ > 0.0, "adamw: learning rate must be positive");
    require(wd_ >= 0.0, "adamw: weight decay must be non-negative");
    for (auto& p : params) {
        if (!p.trainable) continue;
        Slot s;
        s.tensor = p.tensor;
        s.m.assign(static_cast<size_t>(p.tensor.numel()), 0.0);
        s.v.assign(static_cast<size_t>(p.tensor.numel()), 0.0);
        slots_.push_back(std::move(s));
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& s : slots_) {
        auto w = s.tensor.data_mut();
        const bool has_grad = s.tensor.has_grad();
        std::span<const double> g =
            has_grad ? s.tensor.grad() : std::span<const double>();
        for (size_t i = 0; i < w.size(); ++i) {
            const double gi = has_grad ? g[i] : 0.0;
            s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * gi;
            s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * gi * gi;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            w[i] -= lr_ * wd_ * w[i];
        }
        check_finite(s.tensor.data(), "adamw");
    }
}

void AdamW::zero_grad() {
    for (auto& s : slots_) s.tensor.zero_grad();
}

std::optional<PruneEvent> adaptive_prune(LSRNet& model, double fraction, double best_loss,
                                         double current_loss, int64_t epoch) {
    require(fraction >= 0.0 && fraction < 1.0, "prune: fraction must be in [0, 1)");
    if (fraction == 0.0 || !(current_loss < best_loss)) return std::nullopt;

    auto w = model.cd1_weight().data_mut();
    const int64_t n = static_cast<int64_t>(w.size());
    const int64_t k = static_cast<int64_t>(
        std::ceil(fraction * static_cast<double>(n)));

    std::vector<size_t> order(w.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&w](size_t a, size_t b) {
        return std::abs(w[a]) < std::abs(w[b]);
    });
    for (int64_t i = 0; i < k; ++i) w[order[static_cast<size_t>(i)]] = 0.0;

    return PruneEvent{epoch, k, current_loss};
}

TrainResult train(LSRNet& model, const DatasetContainer& train_data,
                  const DatasetContainer& val_data, const TrainConfig& cfg,
                  const EpochCallback& callback) {
    check_compatible(model, train_data, "train");
    check_compatible(model, val_data, "validation");
    require(cfg.epochs >= 1, "train: epoch count must be positive");
    require(cfg.batch_size >= 1, "train: batch size must be positive");
    require(cfg.prune_fraction >= 0.0 && cfg.prune_fraction < 1.0,
            "train: prune fraction must be in [0, 1)");

    auto params = model.parameters();
    AdamW opt(params, cfg);
    Rng shuffle_rng(derive_seed(cfg.seed, 0x7368756666ULL));

    const bool armed = cfg.snr_db < 0.0 && cfg.prune_fraction > 0.0;
    const size_t n = static_cast<size_t>(train_data.size());

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    double prune_best = 0.0;
    std::vector<std::vector<double>> best_weights;

    for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto perm = shuffle_rng.permutation(n);
        double loss_sum = 0.0;
        for (size_t at = 0; at < n; at += static_cast<size_t>(cfg.batch_size)) {
            const size_t stop = std::min(n, at + static_cast<size_t>(cfg.batch_size));
            std::span<const size_t> idx(perm.data() + at, stop - at);
            const Tensor x = batch_input(train_data, idx);
            const auto labels = batch_labels(train_data, idx);

            opt.zero_grad();
            const Tensor probs = model.forward(x, Mode::Train);
            const Tensor loss = cross_entropy(probs, labels);
            loss.backward();
            opt.step();
            loss_sum += loss.at(0) * static_cast<double>(idx.size());
        }
        const double train_loss = loss_sum / static_cast<double>(n);

        const EvalResult val = evaluate(model, val_data);

        EpochStats stats{epoch, train_loss, val.mean_loss, val.accuracy, std::nullopt};

        // Snapshot the weights that achieved this validation loss before the
        // prune check; pruning shapes the following epochs only.
        if (val.mean_loss < best_val) {
            best_val = val.mean_loss;
            result.metrics.best_epoch = epoch;
            best_weights = snapshot(params);
        }

        const double monitored = cfg.prune_on_train_loss ? train_loss : val.mean_loss;
        if (epoch == 1) {
            prune_best = monitored;
        } else if (armed) {
            if (auto event = adaptive_prune(model, cfg.prune_fraction, prune_best,
                                            monitored, epoch)) {
                result.events.push_back(*event);
                stats.prune = event;
            }
        }
        prune_best = std::min(prune_best, monitored);

        result.metrics.train_loss.push_back(train_loss);
        result.metrics.val_loss.push_back(val.mean_loss);
        result.metrics.val_accuracy.push_back(val.accuracy);
        if (callback) callback(stats);
    }

    result.metrics.best_val_loss = best_val;
    if (!best_weights.empty()) restore(params, best_weights);
    return result;
}

EvalResult evaluate(LSRNet& model, const DatasetContainer& data) {
    check_compatible(model, data, "evaluate");
    const int64_t classes = model.config().classes;
    const size_t n = static_cast<size_t>(data.size());

    EvalResult result;
    result.confusion.assign(static_cast<size_t>(classes * classes), 0);
    result.class_counts.assign(static_cast<size_t>(classes), 0);

    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});

    NoGradGuard no_grad;
    double loss_sum = 0.0;
    int64_t correct = 0;
    constexpr size_t kChunk = 64;
    for (size_t at = 0; at < n; at += kChunk) {
        const size_t stop = std::min(n, at + kChunk);
        std::span<const size_t> chunk(idx.data() + at, stop - at);
        const Tensor x = batch_input(data, chunk);
        const auto labels = batch_labels(data, chunk);
        const Tensor probs = model.forward(x, Mode::Eval);
        loss_sum += cross_entropy(probs, labels).at(0) * static_cast<double>(chunk.size());

        const auto pd = probs.data();
        for (size_t b = 0; b < chunk.size(); ++b) {
            int64_t pred = 0;
            double best = pd[b * static_cast<size_t>(classes)];
            for (int64_t o = 1; o < classes; ++o) {
                const double v = pd[b * static_cast<size_t>(classes) + static_cast<size_t>(o)];
                if (v > best) {
                    best = v;
                    pred = o;
                }
            }
            const int64_t actual = labels[b];
            ++result.confusion[static_cast<size_t>(actual * classes + pred)];
            ++result.class_counts[static_cast<size_t>(actual)];
            if (pred == actual) ++correct;
        }
    }

    result.mean_loss = loss_sum / static_cast<double>(n);
    result.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    result.per_class_accuracy.assign(static_cast<size_t>(classes), 0.0);
    for (int64_t c = 0; c < classes; ++c) {
        const int64_t total = result.class_counts[static_cast<size_t>(c)];
        if (total > 0)
            result.per_class_accuracy[static_cast<size_t>(c)] =
                static_cast<double>(result.confusion[static_cast<size_t>(c * classes + c)]) /
                static_cast<double>(total);
    }
    return result;
}

BenchResult bench_inference(LSRNet& model, int64_t repeats, int64_t warmup) {
    require(repeats >= 1, "bench: repeat count must be positive");
    require(warmup >= 0, "bench: warmup count must be non-negative");

    const int64_t n = model.config().input_length;
    Rng rng(derive_seed(0x62656e6368ULL, static_cast<uint64_t>(n)));
    std::vector<double> input(static_cast<size_t>(n));
    for (double& v : input) v = rng.uniform(-1.0, 1.0);
    const Tensor x({1, 1, n}, std::move(input));

    NoGradGuard no_grad;
    for (int64_t i = 0; i < warmup; ++i) model.forward(x, Mode::Eval);

    BenchResult result;
    result.samples_ms.reserve(static_cast<size_t>(repeats));
    using clock = std::chrono::steady_clock;
    for (int64_t i = 0; i < repeats; ++i) {
        const auto t0 = clock::now();
        model.forward(x, Mode::Eval);
        const auto t1 = clock::now();
        result.samples_ms.push_back(
            std::chrono::duration<double, std::milli>(t1 - t0).count());
    }

    double sum = 0.0;
    for (double v : result.samples_ms) sum += v;
    result.mean_ms = sum / static_cast<double>(repeats);
    double sq = 0.0;
    for (double v : result.samples_ms) sq += (v - result.mean_ms) * (v - result.mean_ms);
    result.stdev_ms = std::sqrt(sq / static_cast<double>(repeats));
    return result;
}

} // namespace lsr
