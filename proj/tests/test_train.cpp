#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "lsr/errors.hpp"
#include "lsr/ops.hpp"
#include "lsr/train.hpp"
#include "oracles.hpp"

using namespace lsr;
using namespace lsr::testing;

namespace {

NamedParam named(const char* name, Tensor t) { return {name, std::move(t), true}; }

TrainConfig quick_config() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.seed = 7;
    return cfg;
}

} // namespace

TEST_CASE("adamw: pure decoupled decay when the gradient is zero") {
    Tensor w({1}, {1.0}, true);
    w.zero_grad(); // explicit zero gradient
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.1;
    AdamW opt({named("w", w)}, cfg);
    opt.step();
    CHECK(w.at(0) == doctest::Approx(0.99));
}

TEST_CASE("adamw: first step moves by about -lr * sign(g)") {
    for (const double g : {0.37, -1.4, 2.0}) {
        Tensor w({1}, {0.5}, true);
        sum(scale(w, g)).backward(); // gradient = g
        TrainConfig cfg;
        cfg.learning_rate = 1e-3;
        cfg.weight_decay = 0.0;
        AdamW opt({named("w", w)}, cfg);
        opt.step();
        const double step = w.at(0) - 0.5;
        CHECK(step == doctest::Approx(-1e-3 * (g > 0 ? 1.0 : -1.0)).epsilon(1e-4));
    }
}

TEST_CASE("adamw: identical seeds and inputs give identical trajectories") {
    auto run = [] {
        Rng rng(5);
        Tensor w = random_tensor({8}, rng, true);
        TrainConfig cfg;
        AdamW opt({named("w", w)}, cfg);
        for (int i = 0; i < 25; ++i) {
            opt.zero_grad();
            sum(mul(w, w)).backward();
            opt.step();
        }
        return std::vector<double>(w.data().begin(), w.data().end());
    };
    const auto a = run(), b = run();
    CHECK(a == b); // bit-identical
}

TEST_CASE("adamw: converges on a quadratic") {
    Rng rng(6);
    Tensor w = random_tensor({4}, rng, true);
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.weight_decay = 0.0;
    AdamW opt({named("w", w)}, cfg);
    for (int i = 0; i < 400; ++i) {
        opt.zero_grad();
        sum(mul(w, w)).backward();
        opt.step();
    }
    for (int64_t i = 0; i < 4; ++i) CHECK(std::abs(w.at(i)) < 1e-2);
}

TEST_CASE("prune: magnitude ranking with ties to the lowest index") {
    LSRNet model({512, 3}, 1);
    auto w = model.cd1_weight().data_mut(); // 24 elements
    for (size_t i = 0; i < w.size(); ++i) w[i] = 1.0;
    w[0] = 0.5;
    w[5] = -0.1;
    w[9] = 0.3;
    w[17] = 0.05;

    const auto event = adaptive_prune(model, 0.1, 1.0, 0.9, 3); // ceil(2.4) = 3
    REQUIRE(event.has_value());
    CHECK(event->epoch == 3);
    CHECK(event->zeroed == 3);
    CHECK(event->trigger_loss == doctest::Approx(0.9));
    CHECK(model.cd1_weight().at(17) == 0.0);
    CHECK(model.cd1_weight().at(5) == 0.0);
    CHECK(model.cd1_weight().at(9) == 0.0);
    CHECK(model.cd1_weight().at(0) == 0.5);

    int zeros = 0;
    for (double v : model.cd1_weight().data())
        if (v == 0.0) ++zeros;
    CHECK(zeros == 3);
}

TEST_CASE("prune: spec example weights") {
    LSRNet model({512, 3}, 2);
    auto w = model.cd1_weight().data_mut();
    for (size_t i = 0; i < w.size(); ++i) w[i] = 9.0; // large filler
    w[0] = 0.5;
    w[1] = -0.1;
    w[2] = 0.3;
    w[3] = 0.05;
    // p = 0.5 over the first four as the 4-element example: prune fraction
    // chosen so ceil(p * 24) = 12 would wipe the filler; instead check the
    // ordering directly with p = 2/24.
    const auto event = adaptive_prune(model, 2.0 / 24.0, 1.0, 0.5, 1);
    REQUIRE(event.has_value());
    CHECK(event->zeroed == 2);
    CHECK(model.cd1_weight().at(3) == 0.0); // |0.05| smallest
    CHECK(model.cd1_weight().at(1) == 0.0); // |-0.1| next
    CHECK(model.cd1_weight().at(2) == doctest::Approx(0.3));
    CHECK(model.cd1_weight().at(0) == doctest::Approx(0.5));
}

TEST_CASE("prune: no hidden mask; a pruned model round-trips the checkpoint") {
    LSRNet model({512, 3}, 44);
    adaptive_prune(model, 0.25, 1.0, 0.5, 1);
    LSRNet reloaded = LSRNet::load(model.save());
    Rng rng(45);
    const Tensor x = random_tensor({2, 1, 512}, rng);
    const Tensor pa = model.forward(x, Mode::Eval);
    const Tensor pb = reloaded.forward(x, Mode::Eval);
    for (int64_t i = 0; i < pa.numel(); ++i)
        CHECK(pa.at(i) == doctest::Approx(pb.at(i)).epsilon(1e-5));
    // zeros survive the f32 round trip exactly
    int zeros = 0;
    for (double v : reloaded.cd1_weight().data())
        if (v == 0.0) ++zeros;
    CHECK(zeros == 6); // ceil(0.25 * 24)
}

TEST_CASE("prune: no event without improvement or with p = 0") {
    LSRNet model({512, 3}, 3);
    const std::vector<double> before(model.cd1_weight().data().begin(),
                                     model.cd1_weight().data().end());
    CHECK_FALSE(adaptive_prune(model, 0.0, 1.0, 0.5, 1).has_value());
    CHECK_FALSE(adaptive_prune(model, 0.1, 1.0, 1.0, 1).has_value());
    CHECK_FALSE(adaptive_prune(model, 0.1, 1.0, 1.5, 1).has_value());
    const std::vector<double> after(model.cd1_weight().data().begin(),
                                    model.cd1_weight().data().end());
    CHECK(before == after);
}

TEST_CASE("prune: trigger sequence [1.0, 0.9, 0.95, 0.8] fires at epochs 2 and 4") {
    // Exercised through the train loop: inject the monitored losses by
    // reproducing the baseline rule directly.
    LSRNet model({512, 3}, 4);
    const std::vector<double> losses = {1.0, 0.9, 0.95, 0.8};
    std::vector<int64_t> fired;
    double best = 0.0;
    for (size_t e = 1; e <= losses.size(); ++e) {
        const double current = losses[e - 1];
        if (e == 1) {
            best = current;
            continue;
        }
        if (auto ev = adaptive_prune(model, 0.1, best, current, static_cast<int64_t>(e)))
            fired.push_back(ev->epoch);
        best = std::min(best, current);
    }
    CHECK(fired == std::vector<int64_t>{2, 4});
}

TEST_CASE("cross-entropy gradient via the training path matches finite differences") {
    Rng rng(8);
    Tensor logits = random_tensor({3, 4}, rng, true);
    const std::vector<int64_t> labels = {1, 3, 0};
    const auto r = check_gradients(
        [&labels](const std::vector<Tensor>& l) {
            // scalar output; the projection weight is a 1-element tensor
            return cross_entropy(softmax(l[0]), labels);
        },
        {logits}, rng);
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("train: deterministic loss sequences and checkpoints per seed") {
    const auto data = synth_generate(3, 20, 512, 64000.0, 9);
    const auto parts = split_dataset(data, 10);

    auto run = [&](uint64_t seed) {
        LSRNet model({512, 3}, seed);
        TrainConfig cfg = quick_config();
        cfg.seed = seed;
        const auto result = train(model, parts[0], parts[1], cfg);
        return std::make_pair(result.metrics, model.save());
    };
    const auto [m1, c1] = run(11);
    const auto [m2, c2] = run(11);
    CHECK(m1.train_loss == m2.train_loss); // bit-identical doubles
    CHECK(m1.val_loss == m2.val_loss);
    CHECK(c1 == c2);

    const auto [m3, c3] = run(12);
    CHECK(m1.train_loss != m3.train_loss);
}

TEST_CASE("train: pruning arms only for negative snr and records exact zero counts") {
    const auto clean = synth_generate(3, 20, 512, 64000.0, 13);
    const auto noisy = with_noise(clean, NoiseKind::Gaussian, -8.0, 14);
    const auto parts = split_dataset(noisy, 15);

    LSRNet model({512, 3}, 16);
    TrainConfig cfg = quick_config();
    cfg.epochs = 6;
    cfg.snr_db = -8.0;
    cfg.prune_fraction = 0.1;
    cfg.seed = 16;

    std::vector<int64_t> zero_counts;
    const auto result = train(model, parts[0], parts[1], cfg,
                              [&](const EpochStats& s) {
                                  if (s.prune) {
                                      int64_t zeros = 0;
                                      for (double v : model.cd1_weight().data())
                                          if (v == 0.0) ++zeros;
                                      zero_counts.push_back(zeros);
                                  }
                              });
    CHECK(!result.events.empty());
    const int64_t expect = static_cast<int64_t>(
        std::ceil(0.1 * static_cast<double>(model.cd1_weight().numel())));
    for (const auto& e : result.events) CHECK(e.zeroed == expect);
    for (int64_t z : zero_counts) CHECK(z == expect);

    // disarmed when snr >= 0 even with p > 0
    LSRNet model2({512, 3}, 17);
    cfg.snr_db = 0.0;
    const auto result2 = train(model2, parts[0], parts[1], cfg);
    CHECK(result2.events.empty());
}

TEST_CASE("train: shape mismatches are rejected before any epoch") {
    const auto data = synth_generate(3, 12, 512, 64000.0, 18);
    const auto parts = split_dataset(data, 19);
    LSRNet wrong_len({1024, 3}, 20);
    CHECK_THROWS_AS(train(wrong_len, parts[0], parts[1], quick_config()), ContractError);
    LSRNet wrong_classes({512, 4}, 21);
    CHECK_THROWS_AS(train(wrong_classes, parts[0], parts[1], quick_config()),
                    ContractError);
}

TEST_CASE("evaluate: degenerate predictors give the expected accuracy") {
    const auto data = synth_generate(3, 10, 512, 64000.0, 22); // balanced
    LSRNet model({512, 3}, 23);
    // bias the head so class 0 always wins
    auto wb = model.parameters();
    for (auto& p : wb) {
        if (p.name == "fc.weight")
            for (auto& v : p.tensor.data_mut()) v = 0.0;
        if (p.name == "fc.bias") {
            auto b = p.tensor.data_mut();
            b[0] = 5.0;
            b[1] = 0.0;
            b[2] = 0.0;
        }
    }
    const auto result = evaluate(model, data);
    CHECK(result.accuracy == doctest::Approx(1.0 / 3.0));
    CHECK(result.per_class_accuracy[0] == doctest::Approx(1.0));
    CHECK(result.per_class_accuracy[1] == doctest::Approx(0.0));

    // confusion row sums equal per-class counts
    for (int64_t c = 0; c < 3; ++c) {
        int64_t row = 0;
        for (int64_t p = 0; p < 3; ++p) row += result.confusion[static_cast<size_t>(c * 3 + p)];
        CHECK(row == result.class_counts[static_cast<size_t>(c)]);
        CHECK(row == 10);
    }

    // accuracy equals the mean of the diagonal rates on balanced data
    double diag = 0.0;
    for (int64_t c = 0; c < 3; ++c) diag += result.per_class_accuracy[static_cast<size_t>(c)];
    CHECK(result.accuracy == doctest::Approx(diag / 3.0));
}

namespace {

// Training-set loss with batch statistics (the loss the optimizer sees),
// measured without updates.
double train_mode_loss(LSRNet& model, const DatasetContainer& d) {
    NoGradGuard no_grad;
    std::vector<double> vals;
    std::vector<int64_t> labels;
    for (const auto& s : d.segments) {
        vals.insert(vals.end(), s.samples.begin(), s.samples.end());
        labels.push_back(s.label);
    }
    const Tensor x({d.size(), 1, d.segment_length}, std::move(vals));
    return cross_entropy(model.forward(x, Mode::Train), labels).at(0);
}

} // namespace

TEST_CASE("train: loss drops after one epoch across a 20-seed suite") {
    int improved = 0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        const auto data = synth_generate(3, 16, 512, 64000.0, 100 + seed);
        const auto parts = split_dataset(data, seed);
        LSRNet model({512, 3}, seed);
        const double initial = train_mode_loss(model, parts[0]);
        TrainConfig cfg;
        cfg.epochs = 1;
        cfg.batch_size = 8;
        cfg.seed = seed;
        train(model, parts[0], parts[1], cfg);
        if (train_mode_loss(model, parts[0]) < initial) ++improved;
    }
    CHECK(improved >= 19); // >= 95% of seeds
}

TEST_CASE("bench: sample bookkeeping") {
    LSRNet model({512, 3}, 30);
    const auto one = bench_inference(model, 1, 0);
    CHECK(one.samples_ms.size() == 1);
    CHECK(one.stdev_ms == 0.0);

    const auto r = bench_inference(model, 16, 2);
    CHECK(r.samples_ms.size() == 16);
    double sum = 0.0;
    for (double v : r.samples_ms) {
        CHECK(v >= 0.0);
        sum += v;
    }
    CHECK(r.mean_ms == doctest::Approx(sum / 16.0));
}

TEST_CASE("forward output depends only on weights, not on training flags") {
    // Same weights loaded from a checkpoint behave identically whatever
    // snr/pruning configuration trained them.
    const auto data = synth_generate(3, 10, 512, 64000.0, 31);
    const auto parts = split_dataset(data, 32);
    LSRNet model({512, 3}, 33);
    TrainConfig cfg = quick_config();
    cfg.epochs = 1;
    cfg.snr_db = -8.0;
    cfg.prune_fraction = 0.2;
    train(model, parts[0], parts[1], cfg);
    const auto bytes = model.save();

    LSRNet a = LSRNet::load(bytes);
    LSRNet b = LSRNet::load(bytes);
    Rng rng(34);
    const Tensor x = random_tensor({2, 1, 512}, rng);
    const Tensor pa = a.forward(x, Mode::Eval);
    const Tensor pb = b.forward(x, Mode::Eval);
    for (int64_t i = 0; i < pa.numel(); ++i) CHECK(pa.at(i) == pb.at(i));
}
