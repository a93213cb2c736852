#include "terse/terse.h"

#include <cstring>
#include <fstream>
#include <new>
#include <string>

#include "terse/data.hpp"
#include "terse/error.hpp"
#include "terse/experiment.hpp"
#include "terse/training.hpp"

struct terse_dataset {
    terse::DatasetMeta meta;
    terse::TimeSeriesBatch batch;
};

struct terse_model {
    terse::ModelBundle bundle;
};

namespace {

thread_local std::string g_last_error;

terse_status fail(terse_status s, const std::string& what) {
    g_last_error = what;
    return s;
}

// Maps every exception to a status; nothing escapes across the C boundary.
template <typename F>
terse_status guarded(F f) {
    try {
        g_last_error.clear();
        f();
        return TERSE_OK;
    } catch (const terse::Error& e) {
        return fail(static_cast<terse_status>(e.kind()), e.what());
    } catch (const nlohmann::json::exception& e) {
        return fail(TERSE_ERR_CONFIG, e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(TERSE_ERR_DATA, e.what());
    } catch (const std::bad_alloc&) {
        return fail(TERSE_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(TERSE_ERR_INTERNAL, e.what());
    }
}

void require(const void* p, const char* name) {
    if (!p) throw terse::ConfigError(std::string(name) + " must not be NULL");
}

terse::ExperimentConfig parse_config(const char* json) {
    if (!json || !*json) return {};
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
        throw terse::ConfigError(std::string("config JSON: ") + e.what());
    }
    auto cfg = terse::ExperimentConfig::from_json(j);
    cfg.validate();
    return cfg;
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

terse::TrainConfig seeded(const terse::ExperimentConfig& cfg, std::uint64_t seed) {
    terse::TrainConfig tc = cfg.train;
    tc.seed = seed;
    return tc;
}

struct LogFile {
    std::ofstream file;
    terse::TrainingLog log;
    LogFile(const char* path, const std::string& run_id)
        : file(path ? std::ofstream(path, std::ios::trunc) : std::ofstream()), log(run_id, path ? &file : nullptr) {
        if (path && !file) throw terse::DataError(std::string("cannot write log ") + path);
    }
};

template <typename Run>
terse_status run_domains(const char* config_json, const char* source_dir, const char* target_dir, char** report_json,
                         Run run) {
    return guarded([&] {
        require(source_dir, "source_dir");
        require(target_dir, "target_dir");
        require(report_json, "report_json");
        const auto cfg = parse_config(config_json);
        const auto source = terse::load_domain(source_dir, cfg.normalize);
        const auto target = terse::load_domain(target_dir, cfg.normalize);
        *report_json = dup_string(run(cfg, source, target).dump(2));
    });
}

}  // namespace

extern "C" {

const char* terse_version(void) { return "1.0.0"; }

const char* terse_last_error(void) { return g_last_error.c_str(); }

void terse_string_free(char* s) { std::free(s); }

terse_status terse_synth(const char* spec_json, int64_t n_per_class, uint64_t seed, const char* out_dir) {
    return guarded([&] {
        require(out_dir, "out_dir");
        nlohmann::json j = nlohmann::json::object();
        if (spec_json && *spec_json) {
            try {
                j = nlohmann::json::parse(spec_json);
            } catch (const nlohmann::json::exception& e) {
                throw terse::ConfigError(std::string("spec JSON: ") + e.what());
            }
        }
        const auto domains = terse::synth_domains(terse::shift_spec_from_json(j), n_per_class, seed);
        const std::filesystem::path root(out_dir);
        terse::save_dataset(root / "source", domains.source);
        terse::save_dataset(root / "target", domains.target);
    });
}

terse_status terse_import_csv(const char* values_csv, const char* labels_csv, const char* out_dir,
                              const char* options_json) {
    return guarded([&] {
        require(values_csv, "values_csv");
        require(out_dir, "out_dir");
        terse::CsvImportOptions opt;
        if (options_json && *options_json) {
            const auto j = nlohmann::json::parse(options_json);
            opt.name = j.value("name", opt.name);
            opt.split = j.value("split", opt.split);
            opt.classes = j.value("classes", opt.classes);
            if (j.contains("channels")) opt.channels = j["channels"].get<std::int64_t>();
            if (j.contains("length")) opt.length = j["length"].get<std::int64_t>();
        }
        std::optional<std::filesystem::path> labels;
        if (labels_csv) labels = labels_csv;
        terse::import_csv(values_csv, labels, out_dir, opt);
    });
}

terse_status terse_dataset_load(const char* dir, const char* split, int normalize, terse_dataset** out) {
    return guarded([&] {
        require(dir, "dir");
        require(split, "split");
        require(out, "out");
        auto d = std::make_unique<terse_dataset>();
        d->meta = terse::load_meta(dir);
        d->batch = terse::load_split(dir, split);
        if (normalize) {
            const auto fit = std::string(split) == "train" ? d->batch : terse::load_split(dir, "train");
            d->batch = terse::apply_normalization(d->batch, terse::fit_normalization(fit));
        }
        *out = d.release();
    });
}

terse_status terse_dataset_info(const terse_dataset* d, int64_t* samples, int64_t* channels, int64_t* length,
                                int64_t* classes, int* has_labels) {
    return guarded([&] {
        require(d, "dataset");
        if (samples) *samples = d->batch.size();
        if (channels) *channels = d->meta.channels;
        if (length) *length = d->meta.length;
        if (classes) *classes = d->meta.classes;
        if (has_labels) *has_labels = d->batch.labels ? 1 : 0;
    });
}

void terse_dataset_free(terse_dataset* d) { delete d; }

terse_status terse_pretrain(const terse_dataset* source, const char* config_json, uint64_t seed, const char* log_path,
                            const char* checkpoint_path, terse_model** out) {
    return guarded([&] {
        require(source, "source");
        require(out, "out");
        const auto cfg = parse_config(config_json);
        LogFile log(log_path, "pretrain_seed" + std::to_string(seed));
        terse::StageOptions opt{&log.log, {}};
        if (checkpoint_path) opt.checkpoint = checkpoint_path;
        auto m = std::make_unique<terse_model>(terse_model{
            terse::pretrain_source(source->batch, terse::model_for(cfg.model, source->meta), seeded(cfg, seed), opt)});
        *out = m.release();
    });
}

terse_status terse_adapt(terse_model* model, const terse_dataset* target, const char* config_json, uint64_t seed,
                         const char* log_path, const char* checkpoint_path) {
    return guarded([&] {
        require(model, "model");
        require(target, "target");
        const auto cfg = parse_config(config_json);
        LogFile log(log_path, "adapt_seed" + std::to_string(seed));
        terse::StageOptions opt{&log.log, {}};
        if (checkpoint_path) opt.checkpoint = checkpoint_path;
        terse::adapt_target(model->bundle, terse::UnlabeledData::from(target->batch), seeded(cfg, seed), opt);
    });
}

terse_status terse_model_load(const char* path, terse_model** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = new terse_model{terse::ModelBundle::load(path)};
    });
}

terse_status terse_model_save(const terse_model* model, const char* path) {
    return guarded([&] {
        require(model, "model");
        require(path, "path");
        model->bundle.save(path);
    });
}

void terse_model_free(terse_model* model) { delete model; }

terse_status terse_predict(terse_model* model, const terse_dataset* d, int32_t* out, size_t capacity) {
    return guarded([&] {
        require(model, "model");
        require(d, "dataset");
        if (capacity < static_cast<std::size_t>(d->batch.size())) {
            throw terse::ConfigError("predict: capacity " + std::to_string(capacity) + " below sample count " +
                                     std::to_string(d->batch.size()));
        }
        if (d->batch.size() > 0) require(out, "out");
        const auto preds = terse::predict(model->bundle, d->batch.values);
        std::copy(preds.begin(), preds.end(), out);
    });
}

terse_status terse_evaluate(terse_model* model, const terse_dataset* d, char** result_json) {
    return guarded([&] {
        require(model, "model");
        require(d, "dataset");
        require(result_json, "result_json");
        if (!d->batch.labels) throw terse::DataError("evaluate: split has no labels");
        const auto preds = terse::predict(model->bundle, d->batch.values);
        const auto f1 = terse::macro_f1(preds, *d->batch.labels, model->bundle.config.classes);
        auto j = terse::make_result(d->meta.name, 0, f1).to_json(false);
        j.erase("seed");
        j.erase("config_hash");
        j.erase("scenario");
        j.erase("source_only");
        j["dataset"] = d->meta.name;
        *result_json = dup_string(j.dump(2));
    });
}

terse_status terse_export_features(terse_model* model, const terse_dataset* d, const char* domain, const char* path,
                                   int append) {
    return guarded([&] {
        require(model, "model");
        require(d, "dataset");
        require(path, "path");
        const bool header = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
        std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
        if (!os) throw terse::DataError(std::string("cannot write ") + path);
        terse::export_features(model->bundle, d->batch, domain ? domain : "", os, header);
    });
}

terse_status terse_run_scenarios(const char* config_json, const char* out_dir, char** report_json) {
    return guarded([&] {
        require(report_json, "report_json");
        auto cfg = parse_config(config_json);
        if (cfg.scenarios.empty()) throw terse::ConfigError("config lists no scenarios");
        if (out_dir) cfg.out_dir = out_dir;
        std::vector<std::vector<terse::ScenarioResult>> all;
        nlohmann::json results = nlohmann::json::array();
        for (const auto& sc : cfg.scenarios) {
            all.push_back(terse::run_scenario(cfg, sc));
            for (const auto& r : all.back()) results.push_back(r.to_json());
        }
        nlohmann::json rep{{"results", results},
                           {"config_hash", cfg.hash()},
                           {"table", terse::format_scenario_table(all, cfg.source_only ? "Source" : "TERSE")},
                           {"csv", terse::scenario_csv(all)}};
        *report_json = dup_string(rep.dump(2));
    });
}

terse_status terse_run_ablation(const char* config_json, const char* source_dir, const char* target_dir,
                                char** report_json) {
    return run_domains(config_json, source_dir, target_dir, report_json, [](auto& cfg, auto& s, auto& t) {
        const auto rep = terse::run_ablation(cfg, s, t);
        auto j = rep.to_json();
        j["table"] = rep.table();
        j["csv"] = rep.csv();
        return j;
    });
}

terse_status terse_run_search(const char* config_json, const char* source_dir, const char* target_dir,
                              char** report_json) {
    return run_domains(config_json, source_dir, target_dir, report_json, [](auto& cfg, auto& s, auto& t) {
        const auto rep = terse::random_search(cfg, s, t);
        auto j = rep.to_json();
        std::vector<std::vector<terse::ScenarioResult>> best{rep.best_runs};
        j["table"] = terse::format_scenario_table(best, "best draw");
        std::string csv = "rank,index,alpha,beta,lr,temporal_ratio,spatial_ratio,objective,macro_f1\n";
        for (std::size_t i = 0; i < rep.ranked.size(); ++i) {
            const auto& d = rep.ranked[i];
            csv += std::to_string(i + 1) + "," + std::to_string(d.index) + "," + std::to_string(d.alpha) + "," +
                   std::to_string(d.beta) + "," + std::to_string(d.lr) + "," + std::to_string(d.temporal_ratio) + "," +
                   std::to_string(d.spatial_ratio) + "," + std::to_string(d.objective.total()) + "," +
                   std::to_string(d.macro_f1) + "\n";
        }
        j["csv"] = csv;
        return j;
    });
}

terse_status terse_run_sweep(const char* config_json, const char* source_dir, const char* target_dir,
                             char** report_json) {
    return run_domains(config_json, source_dir, target_dir, report_json, [](auto& cfg, auto& s, auto& t) {
        const auto rep = terse::sweep_mask(cfg, s, t);
        auto j = rep.to_json();
        j["table"] = rep.table();
        j["csv"] = rep.csv();
        return j;
    });
}

}  // extern "C"
