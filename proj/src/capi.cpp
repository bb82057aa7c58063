#include "lsrnet.h"

#include <cstring>
#include <string>

#include "lsr/analyzer.hpp"
#include "lsr/datapipe.hpp"
#include "lsr/errors.hpp"
#include "lsr/model.hpp"
#include "lsr/serialize.hpp"
#include "lsr/train.hpp"

struct lsr_dataset {
    lsr::DatasetContainer container;
};

struct lsr_model {
    lsr::LSRNet net;
};

struct lsr_metrics {
    lsr::EvalResult result;
};

struct lsr_report {
    lsr::ComplexityReport report;
    std::string table;
    std::string tsv;
};

namespace {

thread_local std::string g_last_error = "ok";

lsr_status fail(lsr_status code, const std::string& msg) {
    g_last_error = msg;
    return code;
}

/// Runs a body, translating the library's exception taxonomy to status codes.
template <typename Fn>
lsr_status guarded(Fn&& fn) {
    try {
        fn();
        return LSR_OK;
    } catch (const lsr::FormatError& e) {
        return fail(LSR_ERR_FORMAT, e.what());
    } catch (const lsr::ContractError& e) {
        return fail(LSR_ERR_CONTRACT, e.what());
    } catch (const lsr::NumericError& e) {
        return fail(LSR_ERR_NUMERIC, e.what());
    } catch (const std::exception& e) {
        return fail(LSR_ERROR, e.what());
    }
}

lsr_status check_args(bool ok) {
    return ok ? LSR_OK : fail(LSR_ERR_USAGE, "null or invalid argument");
}

} // namespace

extern "C" {

const char* lsr_last_error(void) { return g_last_error.c_str(); }

lsr_status lsr_dataset_synth(int32_t classes, int32_t per_class, int32_t length,
                             double sample_rate_hz, uint64_t seed, lsr_dataset** out) {
    if (check_args(out != nullptr)) return LSR_ERR_USAGE;
    return guarded([&] {
        auto ds = std::make_unique<lsr_dataset>();
        ds->container = lsr::synth_generate(classes, per_class, length, sample_rate_hz, seed);
        *out = ds.release();
    });
}

lsr_status lsr_dataset_read(const char* path, lsr_dataset** out) {
    if (check_args(path && out)) return LSR_ERR_USAGE;
    return guarded([&] {
        auto ds = std::make_unique<lsr_dataset>();
        ds->container = lsr::load_container(path);
        *out = ds.release();
    });
}

lsr_status lsr_dataset_write(const lsr_dataset* ds, const char* path) {
    if (check_args(ds && path)) return LSR_ERR_USAGE;
    return guarded([&] { lsr::store_container(ds->container, path); });
}

lsr_status lsr_dataset_add_noise(const lsr_dataset* ds, const char* kind, double snr_db,
                                 uint64_t seed, lsr_dataset** out) {
    if (check_args(ds && kind && out)) return LSR_ERR_USAGE;
    return guarded([&] {
        auto noisy = std::make_unique<lsr_dataset>();
        noisy->container = lsr::with_noise(ds->container,
                                           lsr::noise_kind_from_name(kind), snr_db, seed);
        *out = noisy.release();
    });
}

lsr_status lsr_dataset_split(const lsr_dataset* ds, uint64_t seed, lsr_dataset** train,
                             lsr_dataset** val, lsr_dataset** test) {
    if (check_args(ds && train && val && test)) return LSR_ERR_USAGE;
    return guarded([&] {
        auto parts = lsr::split_dataset(ds->container, seed);
        *train = new lsr_dataset{std::move(parts[0])};
        *val = new lsr_dataset{std::move(parts[1])};
        *test = new lsr_dataset{std::move(parts[2])};
    });
}

lsr_status lsr_dataset_info(const lsr_dataset* ds, int32_t* segment_count,
                            int32_t* segment_length, int32_t* class_count) {
    if (check_args(ds != nullptr)) return LSR_ERR_USAGE;
    if (segment_count) *segment_count = static_cast<int32_t>(ds->container.size());
    if (segment_length) *segment_length = static_cast<int32_t>(ds->container.segment_length);
    if (class_count) *class_count = static_cast<int32_t>(ds->container.class_count);
    return LSR_OK;
}

void lsr_dataset_free(lsr_dataset* ds) { delete ds; }

lsr_status lsr_model_create(int32_t input_length, int32_t classes, uint64_t seed,
                            lsr_model** out) {
    if (check_args(out != nullptr)) return LSR_ERR_USAGE;
    return guarded([&] {
        lsr::LSRNetConfig cfg{input_length, classes};
        *out = new lsr_model{lsr::LSRNet(cfg, seed)};
    });
}

lsr_status lsr_model_load(const char* path, lsr_model** out) {
    if (check_args(path && out)) return LSR_ERR_USAGE;
    return guarded([&] {
        const auto bytes = lsr::read_file(path);
        *out = new lsr_model{lsr::LSRNet::load(bytes)};
    });
}

lsr_status lsr_model_save(const lsr_model* m, const char* path) {
    if (check_args(m && path)) return LSR_ERR_USAGE;
    return guarded([&] { lsr::write_file(path, m->net.save()); });
}

lsr_status lsr_model_info(const lsr_model* m, int32_t* input_length, int32_t* classes) {
    if (check_args(m != nullptr)) return LSR_ERR_USAGE;
    if (input_length) *input_length = static_cast<int32_t>(m->net.config().input_length);
    if (classes) *classes = static_cast<int32_t>(m->net.config().classes);
    return LSR_OK;
}

lsr_status lsr_model_trace(const lsr_model* m, char** out) {
    if (check_args(m && out)) return LSR_ERR_USAGE;
    return guarded([&] {
        const std::string text = lsr::trace_text(lsr::shape_trace(m->net.config()));
        char* copy = new char[text.size() + 1];
        std::memcpy(copy, text.c_str(), text.size() + 1);
        *out = copy;
    });
}

void lsr_model_free(lsr_model* m) { delete m; }

void lsr_string_free(char* s) { delete[] s; }

void lsr_train_config_init(lsr_train_config* cfg) {
    if (!cfg) return;
    const lsr::TrainConfig d;
    cfg->epochs = static_cast<int32_t>(d.epochs);
    cfg->batch_size = static_cast<int32_t>(d.batch_size);
    cfg->learning_rate = d.learning_rate;
    cfg->weight_decay = d.weight_decay;
    cfg->beta1 = d.beta1;
    cfg->beta2 = d.beta2;
    cfg->eps = d.eps;
    cfg->seed = d.seed;
    cfg->snr_db = d.snr_db;
    cfg->prune_fraction = d.prune_fraction;
    cfg->prune_on_train_loss = 0;
}

lsr_status lsr_train(lsr_model* m, const lsr_dataset* train, const lsr_dataset* val,
                     const lsr_train_config* cfg, lsr_epoch_callback cb, void* user) {
    if (check_args(m && train && val && cfg)) return LSR_ERR_USAGE;
    return guarded([&] {
        lsr::TrainConfig tc;
        tc.epochs = cfg->epochs;
        tc.batch_size = cfg->batch_size;
        tc.learning_rate = cfg->learning_rate;
        tc.weight_decay = cfg->weight_decay;
        tc.beta1 = cfg->beta1;
        tc.beta2 = cfg->beta2;
        tc.eps = cfg->eps;
        tc.seed = cfg->seed;
        tc.snr_db = cfg->snr_db;
        tc.prune_fraction = cfg->prune_fraction;
        tc.prune_on_train_loss = cfg->prune_on_train_loss != 0;

        lsr::EpochCallback hook;
        if (cb) {
            hook = [cb, user](const lsr::EpochStats& s) {
                lsr_epoch_info info;
                info.epoch = static_cast<int32_t>(s.epoch);
                info.train_loss = s.train_loss;
                info.val_loss = s.val_loss;
                info.val_accuracy = s.val_accuracy;
                info.pruned_count = s.prune ? static_cast<int32_t>(s.prune->zeroed) : 0;
                info.prune_trigger = s.prune ? s.prune->trigger_loss : 0.0;
                cb(&info, user);
            };
        }
        lsr::train(m->net, train->container, val->container, tc, hook);
    });
}

lsr_status lsr_evaluate(const lsr_model* m, const lsr_dataset* data, lsr_metrics** out) {
    if (check_args(m && data && out)) return LSR_ERR_USAGE;
    return guarded([&] {
        // Eval-mode forward does not mutate the model.
        auto& net = const_cast<lsr_model*>(m)->net;
        *out = new lsr_metrics{lsr::evaluate(net, data->container)};
    });
}

double lsr_metrics_accuracy(const lsr_metrics* m) { return m ? m->result.accuracy : 0.0; }

double lsr_metrics_mean_loss(const lsr_metrics* m) { return m ? m->result.mean_loss : 0.0; }

int32_t lsr_metrics_class_count(const lsr_metrics* m) {
    return m ? static_cast<int32_t>(m->result.class_counts.size()) : 0;
}

double lsr_metrics_class_accuracy(const lsr_metrics* m, int32_t cls) {
    if (!m || cls < 0 || cls >= lsr_metrics_class_count(m)) return 0.0;
    return m->result.per_class_accuracy[static_cast<size_t>(cls)];
}

int64_t lsr_metrics_class_total(const lsr_metrics* m, int32_t cls) {
    if (!m || cls < 0 || cls >= lsr_metrics_class_count(m)) return -1;
    return m->result.class_counts[static_cast<size_t>(cls)];
}

int64_t lsr_metrics_confusion(const lsr_metrics* m, int32_t actual, int32_t predicted) {
    const int32_t classes = lsr_metrics_class_count(m);
    if (!m || actual < 0 || predicted < 0 || actual >= classes || predicted >= classes)
        return -1;
    return m->result.confusion[static_cast<size_t>(actual) * classes + predicted];
}

void lsr_metrics_free(lsr_metrics* m) { delete m; }

lsr_status lsr_analyze(const lsr_model* m, lsr_report** out) {
    if (check_args(m && out)) return LSR_ERR_USAGE;
    return guarded([&] {
        auto r = std::make_unique<lsr_report>();
        r->report = lsr::analyze_model(m->net);
        r->table = lsr::report_table(r->report);
        r->tsv = lsr::report_tsv(r->report);
        *out = r.release();
    });
}

const char* lsr_report_table(const lsr_report* r) { return r ? r->table.c_str() : ""; }

const char* lsr_report_tsv(const lsr_report* r) { return r ? r->tsv.c_str() : ""; }

int64_t lsr_report_total_flops(const lsr_report* r) { return r ? r->report.total_flops : 0; }

int64_t lsr_report_total_mac(const lsr_report* r) { return r ? r->report.total_mac : 0; }

int64_t lsr_report_total_params(const lsr_report* r) { return r ? r->report.total_params : 0; }

int64_t lsr_report_model_size_bytes(const lsr_report* r) {
    return r ? r->report.model_size_bytes : 0;
}

void lsr_report_free(lsr_report* r) { delete r; }

lsr_status lsr_bench(const lsr_model* m, int32_t repeats, int32_t warmup, double* mean_ms,
                     double* stdev_ms, double* samples_ms) {
    if (check_args(m != nullptr)) return LSR_ERR_USAGE;
    return guarded([&] {
        auto& net = const_cast<lsr_model*>(m)->net;
        const auto result = lsr::bench_inference(net, repeats, warmup);
        if (mean_ms) *mean_ms = result.mean_ms;
        if (stdev_ms) *stdev_ms = result.stdev_ms;
        if (samples_ms)
            std::copy(result.samples_ms.begin(), result.samples_ms.end(), samples_ms);
    });
}

} // extern "C"
