// Command-line front end for the lsrnet shared library. Exit codes: 0 on
// success, 2 usage error, 3 format error, 4 contract violation, 1 otherwise.

#include <cinttypes>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lsrnet.h"

namespace {

int status_to_exit(lsr_status s) {
    switch (s) {
    case LSR_OK: return 0;
    case LSR_ERR_USAGE: return 2;
    case LSR_ERR_FORMAT: return 3;
    case LSR_ERR_CONTRACT: return 4;
    default: return 1;
    }
}

// Prints the library error and converts the status to an exit code.
int run(lsr_status s) {
    if (s != LSR_OK) std::fprintf(stderr, "error: %s\n", lsr_last_error());
    return status_to_exit(s);
}

struct DatasetHandle {
    lsr_dataset* ds = nullptr;
    ~DatasetHandle() { lsr_dataset_free(ds); }
};

struct ModelHandle {
    lsr_model* m = nullptr;
    ~ModelHandle() { lsr_model_free(m); }
};

int cmd_synth(int32_t classes, int32_t per_class, int32_t length, double fs, uint64_t seed,
              const std::string& out) {
    DatasetHandle d;
    if (auto s = lsr_dataset_synth(classes, per_class, length, fs, seed, &d.ds)) return run(s);
    if (auto s = lsr_dataset_write(d.ds, out.c_str())) return run(s);
    std::printf("wrote %s: %d segments, length %d, %d classes\n", out.c_str(),
                classes * per_class, length, classes);
    return 0;
}

int cmd_prepare(const std::string& in, const std::string& noise, double snr_db,
                uint64_t seed, const std::string& out) {
    DatasetHandle raw, noisy;
    if (auto s = lsr_dataset_read(in.c_str(), &raw.ds)) return run(s);
    if (auto s = lsr_dataset_add_noise(raw.ds, noise.c_str(), snr_db, seed, &noisy.ds))
        return run(s);
    if (auto s = lsr_dataset_write(noisy.ds, out.c_str())) return run(s);
    std::printf("wrote %s: %s noise at %g dB SNR\n", out.c_str(), noise.c_str(), snr_db);
    return 0;
}

int cmd_split(const std::string& in, uint64_t seed, const std::string& out_train,
              const std::string& out_val, const std::string& out_test) {
    DatasetHandle d, tr, va, te;
    if (auto s = lsr_dataset_read(in.c_str(), &d.ds)) return run(s);
    if (auto s = lsr_dataset_split(d.ds, seed, &tr.ds, &va.ds, &te.ds)) return run(s);
    if (auto s = lsr_dataset_write(tr.ds, out_train.c_str())) return run(s);
    if (auto s = lsr_dataset_write(va.ds, out_val.c_str())) return run(s);
    if (auto s = lsr_dataset_write(te.ds, out_test.c_str())) return run(s);
    int32_t nt = 0, nv = 0, nx = 0;
    lsr_dataset_info(tr.ds, &nt, nullptr, nullptr);
    lsr_dataset_info(va.ds, &nv, nullptr, nullptr);
    lsr_dataset_info(te.ds, &nx, nullptr, nullptr);
    std::printf("split %s -> train %d / val %d / test %d\n", in.c_str(), nt, nv, nx);
    return 0;
}

void epoch_printer(const lsr_epoch_info* info, void*) {
    std::printf("epoch %3d  train_loss %.6f  val_loss %.6f  val_acc %6.2f%%", info->epoch,
                info->train_loss, info->val_loss, 100.0 * info->val_accuracy);
    if (info->pruned_count > 0)
        std::printf("  [pruned %d weights @ %.6f]", info->pruned_count, info->prune_trigger);
    std::printf("\n");
    std::fflush(stdout);
}

int cmd_train(const std::string& train_path, const std::string& val_path,
              const lsr_train_config& cfg, const std::string& out) {
    DatasetHandle tr, va;
    if (auto s = lsr_dataset_read(train_path.c_str(), &tr.ds)) return run(s);
    if (auto s = lsr_dataset_read(val_path.c_str(), &va.ds)) return run(s);

    int32_t length = 0, classes = 0;
    lsr_dataset_info(tr.ds, nullptr, &length, &classes);
    ModelHandle model;
    if (auto s = lsr_model_create(length, classes, cfg.seed, &model.m)) return run(s);

    if (cfg.snr_db < 0 && cfg.prune_fraction > 0)
        std::printf("adaptive pruning armed (snr %g dB < 0, fraction %g)\n", cfg.snr_db,
                    cfg.prune_fraction);
    if (auto s = lsr_train(model.m, tr.ds, va.ds, &cfg, epoch_printer, nullptr))
        return run(s);
    if (auto s = lsr_model_save(model.m, out.c_str())) return run(s);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path) {
    ModelHandle model;
    if (auto s = lsr_model_load(model_path.c_str(), &model.m)) return run(s);
    DatasetHandle data;
    if (auto s = lsr_dataset_read(data_path.c_str(), &data.ds)) return run(s);

    lsr_metrics* metrics = nullptr;
    if (auto s = lsr_evaluate(model.m, data.ds, &metrics)) return run(s);

    const int32_t classes = lsr_metrics_class_count(metrics);
    std::printf("overall accuracy: %.4f%%   mean loss: %.6f\n",
                100.0 * lsr_metrics_accuracy(metrics), lsr_metrics_mean_loss(metrics));
    std::printf("class   count   accuracy\n");
    for (int32_t c = 0; c < classes; ++c)
        std::printf("%5d   %5" PRId64 "   %.4f%%\n", c, lsr_metrics_class_total(metrics, c),
                    100.0 * lsr_metrics_class_accuracy(metrics, c));
    std::printf("confusion matrix (rows = actual, columns = predicted):\n");
    for (int32_t a = 0; a < classes; ++a) {
        for (int32_t p = 0; p < classes; ++p)
            std::printf("%8" PRId64, lsr_metrics_confusion(metrics, a, p));
        std::printf("\n");
    }
    lsr_metrics_free(metrics);
    return 0;
}

int cmd_analyze(const std::string& model_path, bool default_config, bool tsv, bool trace,
                uint64_t seed) {
    ModelHandle model;
    if (default_config) {
        if (auto s = lsr_model_create(4096, 3, seed, &model.m)) return run(s);
    } else {
        if (auto s = lsr_model_load(model_path.c_str(), &model.m)) return run(s);
    }

    if (trace) {
        char* text = nullptr;
        if (auto s = lsr_model_trace(model.m, &text)) return run(s);
        std::fputs(text, stdout);
        lsr_string_free(text);
        std::printf("\n");
    }

    lsr_report* report = nullptr;
    if (auto s = lsr_analyze(model.m, &report)) return run(s);
    std::fputs(tsv ? lsr_report_tsv(report) : lsr_report_table(report), stdout);
    lsr_report_free(report);
    return 0;
}

int cmd_bench(const std::string& model_path, int32_t repeats, int32_t warmup) {
    ModelHandle model;
    if (auto s = lsr_model_load(model_path.c_str(), &model.m)) return run(s);

    std::vector<double> samples(static_cast<size_t>(repeats > 0 ? repeats : 0));
    double mean = 0.0, stdev = 0.0;
    if (auto s = lsr_bench(model.m, repeats, warmup, &mean, &stdev, samples.data()))
        return run(s);
    for (size_t i = 0; i < samples.size(); ++i)
        std::printf("sample %3zu: %.4f ms\n", i + 1, samples[i]);
    std::printf("mean %.4f ms  std %.4f ms  (%d runs, %d warmup)\n", mean, stdev, repeats,
                warmup);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"LSR-Net bearing fault diagnosis toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
    int32_t classes = 3, per_class = 400, length = 4096;
    double fs = 64000.0;
    uint64_t seed = 0;
    std::string out;
    synth->add_option("--classes", classes, "number of classes");
    synth->add_option("--per-class", per_class, "segments per class");
    synth->add_option("--length", length, "segment length (multiple of 512)");
    synth->add_option("--fs", fs, "sampling rate in Hz");
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--out", out, "output .lsrd path")->required();

    // prepare
    auto* prepare = app.add_subcommand("prepare", "inject SNR-calibrated noise");
    std::string in_path, noise = "none";
    double snr_db = 0.0;
    prepare->add_option("--in", in_path, "input .lsrd path")->required();
    prepare->add_option("--noise", noise, "gaussian|laplace|none")
        ->check(CLI::IsMember({"gaussian", "laplace", "none"}));
    prepare->add_option("--snr-db", snr_db, "target SNR in dB");
    prepare->add_option("--seed", seed, "noise seed");
    prepare->add_option("--out", out, "output .lsrd path")->required();

    // split
    auto* split = app.add_subcommand("split", "8:1:1 train/val/test split");
    std::string out_train, out_val, out_test;
    split->add_option("--in", in_path, "input .lsrd path")->required();
    split->add_option("--seed", seed, "shuffle seed");
    split->add_option("--out-train", out_train, "train .lsrd path")->required();
    split->add_option("--out-val", out_val, "validation .lsrd path")->required();
    split->add_option("--out-test", out_test, "test .lsrd path")->required();

    // train
    auto* train = app.add_subcommand("train", "train a model");
    lsr_train_config cfg;
    lsr_train_config_init(&cfg);
    std::string train_path, val_path, prune_on = "val";
    train->add_option("--train", train_path, "training .lsrd path")->required();
    train->add_option("--val", val_path, "validation .lsrd path")->required();
    train->add_option("--snr-db", cfg.snr_db,
                      "SNR of the training data; < 0 arms adaptive pruning");
    train->add_option("--prune-fraction", cfg.prune_fraction, "pruned fraction per event");
    train->add_option("--epochs", cfg.epochs, "epoch count");
    train->add_option("--batch", cfg.batch_size, "mini-batch size");
    train->add_option("--lr", cfg.learning_rate, "learning rate");
    train->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay");
    train->add_option("--seed", cfg.seed, "run seed (init, batch order)");
    train->add_option("--prune-on", prune_on, "prune trigger loss: val|train")
        ->check(CLI::IsMember({"val", "train"}));
    train->add_option("--out", out, "output .lsrw path")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a model on a dataset");
    std::string model_path, data_path;
    eval->add_option("--model", model_path, "model .lsrw path")->required();
    eval->add_option("--data", data_path, "dataset .lsrd path")->required();

    // analyze
    auto* analyze = app.add_subcommand("analyze", "FLOPs/MAC/parameter report");
    bool default_config = false, tsv = false, trace = false;
    analyze->add_option("--model", model_path, "model .lsrw path");
    analyze->add_flag("--default-config", default_config,
                      "analyze the default architecture (N=4096, 3 classes)");
    analyze->add_flag("--tsv", tsv, "machine-readable output");
    analyze->add_flag("--trace", trace, "also print the layer shape trace");

    // bench
    auto* bench = app.add_subcommand("bench", "single-thread inference benchmark");
    int32_t repeats = 128, warmup = 8;
    bench->add_option("--model", model_path, "model .lsrw path")->required();
    bench->add_option("--repeats", repeats, "timed runs");
    bench->add_option("--warmup", warmup, "untimed warmup runs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (synth->parsed()) return cmd_synth(classes, per_class, length, fs, seed, out);
    if (prepare->parsed()) return cmd_prepare(in_path, noise, snr_db, seed, out);
    if (split->parsed()) return cmd_split(in_path, seed, out_train, out_val, out_test);
    if (train->parsed()) {
        cfg.prune_on_train_loss = prune_on == "train" ? 1 : 0;
        return cmd_train(train_path, val_path, cfg, out);
    }
    if (eval->parsed()) return cmd_eval(model_path, data_path);
    if (analyze->parsed()) {
        if (default_config != model_path.empty()) {
            // exactly one source must be given
            std::fprintf(stderr, "error: pass exactly one of --model or --default-config\n");
            return 2;
        }
        return cmd_analyze(model_path, default_config, tsv, trace, seed);
    }
    if (bench->parsed()) return cmd_bench(model_path, repeats, warmup);
    return 2;
}
