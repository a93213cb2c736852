// Command-line front end. Talks to the library only through terse.h.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "terse/terse.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string dataset;
    std::optional<double> alpha, beta, lr, temporal_ratio, spatial_ratio;
    std::optional<std::int64_t> epochs, adapt_epochs, batch_size, workers;
    bool disable_tr = false, disable_sr = false, source_only = false;
    std::string encoder;
};

struct CliError {
    int code;
    std::string message;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "Experiment config (JSON)");
    app->add_option("--seed", c.seed, "Base seed; runs use seed, seed+1, seed+2");
    app->add_option("--out-dir", c.out_dir, "Output directory");
    app->add_option("--dataset", c.dataset, "Dataset directory");
    app->add_option("--alpha", c.alpha, "Weight of the temporal restoration loss");
    app->add_option("--beta", c.beta, "Weight of the spatial rewiring loss");
    app->add_option("--lr", c.lr, "Learning rate");
    app->add_option("--temporal-ratio", c.temporal_ratio, "Temporal masking ratio");
    app->add_option("--spatial-ratio", c.spatial_ratio, "Spatial masking ratio");
    app->add_option("--epochs", c.epochs, "Epochs for both stages");
    app->add_option("--adapt-epochs", c.adapt_epochs, "Adaptation epochs (defaults to --epochs)");
    app->add_option("--batch-size", c.batch_size, "Mini-batch size");
    app->add_option("--workers", c.workers, "Concurrent runs");
    app->add_flag("--disable-tr", c.disable_tr, "Drop the temporal restoration task");
    app->add_flag("--disable-sr", c.disable_sr, "Drop the spatial rewiring task");
    app->add_option("--encoder", c.encoder, "Encoder variant")->check(CLI::IsMember({"full", "temporal", "spatial"}));
    app->add_flag("--source-only", c.source_only, "Skip adaptation");
}

json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw CliError{kExitConfig, "cannot open config " + path};
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw CliError{kExitConfig, path + ": " + e.what()};
    }
}

// Config file first, then command-line overrides.
json build_config(const Common& c) {
    json j = c.config.empty() ? json::object() : read_json_file(c.config);
    if (!j.is_object()) throw CliError{kExitConfig, "config must be a JSON object"};
    auto& t = j["train"];
    if (t.is_null()) t = json::object();
    if (c.alpha) t["alpha"] = *c.alpha;
    if (c.beta) t["beta"] = *c.beta;
    if (c.lr) t["lr"] = *c.lr;
    if (c.temporal_ratio) t["temporal_ratio"] = *c.temporal_ratio;
    if (c.spatial_ratio) t["spatial_ratio"] = *c.spatial_ratio;
    if (c.epochs) {
        t["epochs"] = *c.epochs;
        if (!c.adapt_epochs) t["adapt_epochs"] = *c.epochs;
    }
    if (c.adapt_epochs) t["adapt_epochs"] = *c.adapt_epochs;
    if (c.batch_size) t["batch_size"] = *c.batch_size;
    if (c.disable_tr) t["disable_tr"] = true;
    if (c.disable_sr) t["disable_sr"] = true;
    if (!c.encoder.empty()) {
        if (j["model"].is_null()) j["model"] = json::object();
        j["model"]["encoder"] = c.encoder;
    }
    if (c.seed) {
        j["seeds"] = {*c.seed, *c.seed + 1, *c.seed + 2};
        if (j["search"].is_null()) j["search"] = json::object();
        j["search"]["seed"] = *c.seed;
    }
    if (c.source_only) j["source_only"] = true;
    if (c.workers) j["workers"] = *c.workers;
    return j;
}

void check(terse_status s) {
    if (s != TERSE_OK) throw CliError{static_cast<int>(s), terse_last_error()};
}

std::string need_dataset(const Common& c) {
    if (c.dataset.empty()) throw CliError{kExitConfig, "--dataset is required"};
    return c.dataset;
}

fs::path out_dir_or(const Common& c, const fs::path& fallback) {
    fs::path p = c.out_dir.empty() ? fallback : fs::path(c.out_dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw CliError{kExitData, "cannot create " + p.string() + ": " + ec.message()};
    return p;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw CliError{kExitData, "cannot write " + path.string()};
    os << text;
}

struct Dataset {
    terse_dataset* h = nullptr;
    Dataset(const std::string& dir, const std::string& split) { check(terse_dataset_load(dir.c_str(), split.c_str(), 1, &h)); }
    ~Dataset() { terse_dataset_free(h); }
    Dataset(const Dataset&) = delete;
    Dataset& operator=(const Dataset&) = delete;
};

struct Model {
    terse_model* h = nullptr;
    Model() = default;
    explicit Model(const std::string& path) { check(terse_model_load(path.c_str(), &h)); }
    ~Model() { terse_model_free(h); }
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
};

struct OwnedString {
    char* s = nullptr;
    ~OwnedString() { terse_string_free(s); }
    json parse() const { return json::parse(s); }
};

// Emits a driver report: table on stdout, JSON and CSV next to it.
void emit_report(const json& rep, const fs::path& dir, const std::string& stem) {
    write_text(dir / (stem + ".json"), rep.dump(2) + "\n");
    if (rep.contains("csv")) write_text(dir / (stem + ".csv"), rep["csv"].get<std::string>());
    if (rep.contains("table")) {
        write_text(dir / (stem + ".txt"), rep["table"].get<std::string>());
        std::cout << rep["table"].get<std::string>();
    }
}

std::uint64_t first_seed(const json& cfg) {
    if (cfg.contains("seeds") && cfg["seeds"].is_array() && !cfg["seeds"].empty()) return cfg["seeds"][0].get<std::uint64_t>();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TERSE: source-free domain adaptation for multivariate time series"};
    app.require_subcommand(1);
    Common c;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic source/target pair");
    add_common(synth, c);
    std::int64_t n_per_class = 200;
    std::string spec_path;
    synth->add_option("--n-per-class", n_per_class, "Samples per class and domain");
    synth->add_option("--spec", spec_path, "Shift spec (JSON)");

    auto* import = app.add_subcommand("import-csv", "Import long-format CSV into a dataset directory");
    add_common(import, c);
    std::string values_csv, labels_csv, split = "train", name = "imported";
    std::int64_t classes = 0;
    import->add_option("--values", values_csv, "CSV with sample_id,channel,t,value")->required();
    import->add_option("--labels", labels_csv, "CSV with sample_id,label");
    import->add_option("--split", split, "Split name");
    import->add_option("--name", name, "Dataset name");
    import->add_option("--classes", classes, "Number of classes");

    auto* pretrain = app.add_subcommand("pretrain", "Stage 1 on a labelled source dataset");
    add_common(pretrain, c);
    auto* adapt = app.add_subcommand("adapt", "Stage 2 on an unlabelled target dataset");
    add_common(adapt, c);
    auto* eval = app.add_subcommand("eval", "Macro-F1 of a checkpoint on a labelled split");
    add_common(eval, c);
    auto* exportf = app.add_subcommand("export-features", "Write node embeddings as CSV");
    add_common(exportf, c);
    std::string checkpoint, eval_split = "test", domain_tag, output;
    bool append = false;
    for (auto* sub : {adapt, eval, exportf}) sub->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    eval->add_option("--split", eval_split, "Split to evaluate");
    exportf->add_option("--split", eval_split, "Split to export");
    exportf->add_option("--domain", domain_tag, "Domain tag written to every row");
    exportf->add_option("--output", output, "CSV path (default <out-dir>/features.csv)");
    exportf->add_flag("--append", append, "Append rows to an existing file");

    auto* scenario = app.add_subcommand("scenario", "Pretrain, adapt and evaluate over seeds");
    auto* ablate = app.add_subcommand("ablate", "Task and encoder ablation grid");
    auto* search = app.add_subcommand("search", "Random hyperparameter search with a label-free objective");
    auto* sweep = app.add_subcommand("sweep-mask", "Temporal x spatial masking-ratio grid");
    std::string source_dir, target_dir;
    for (auto* sub : {scenario, ablate, search, sweep}) {
        add_common(sub, c);
        sub->add_option("--source", source_dir, "Source dataset directory");
        sub->add_option("--target", target_dir, "Target dataset directory");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        const json cfg = build_config(c);
        const std::string cfg_text = cfg.dump();
        const std::uint64_t seed = c.seed.value_or(first_seed(cfg));

        if (synth->parsed()) {
            const fs::path out = out_dir_or(c, "synth");
            std::string spec_text;
            if (!spec_path.empty()) spec_text = read_json_file(spec_path).dump();
            check(terse_synth(spec_text.empty() ? nullptr : spec_text.c_str(), n_per_class, seed, out.string().c_str()));
            std::cout << "wrote " << (out / "source").string() << " and " << (out / "target").string() << "\n";
        } else if (import->parsed()) {
            const fs::path out = c.out_dir.empty() ? fs::path(need_dataset(c)) : fs::path(c.out_dir);
            const json opt{{"name", name}, {"split", split}, {"classes", classes}};
            check(terse_import_csv(values_csv.c_str(), labels_csv.empty() ? nullptr : labels_csv.c_str(),
                                   out.string().c_str(), opt.dump().c_str()));
            std::cout << "imported " << split << " into " << out.string() << "\n";
        } else if (pretrain->parsed()) {
            Dataset d(need_dataset(c), "train");
            const fs::path out = out_dir_or(c, "run");
            Model m;
            check(terse_pretrain(d.h, cfg_text.c_str(), seed, (out / "pretrain.jsonl").string().c_str(),
                                 (out / "pretrain.ckpt").string().c_str(), &m.h));
            check(terse_model_save(m.h, (out / "pretrain.ckpt").string().c_str()));
            std::cout << "checkpoint " << (out / "pretrain.ckpt").string() << "\n";
        } else if (adapt->parsed()) {
            Model m(checkpoint);
            Dataset d(need_dataset(c), "train");
            const fs::path out = out_dir_or(c, "run");
            check(terse_adapt(m.h, d.h, cfg_text.c_str(), seed, (out / "adapt.jsonl").string().c_str(),
                              (out / "adapt.ckpt").string().c_str()));
            check(terse_model_save(m.h, (out / "adapt.ckpt").string().c_str()));
            std::cout << "checkpoint " << (out / "adapt.ckpt").string() << "\n";
        } else if (eval->parsed()) {
            Model m(checkpoint);
            Dataset d(need_dataset(c), eval_split);
            OwnedString res;
            check(terse_evaluate(m.h, d.h, &res.s));
            std::cout << res.s << "\n";
            if (!c.out_dir.empty()) write_text(out_dir_or(c, ".") / "eval.json", std::string(res.s) + "\n");
        } else if (exportf->parsed()) {
            Model m(checkpoint);
            Dataset d(need_dataset(c), eval_split);
            const fs::path path = output.empty() ? out_dir_or(c, ".") / "features.csv" : fs::path(output);
            check(terse_export_features(m.h, d.h, domain_tag.empty() ? fs::path(c.dataset).filename().string().c_str()
                                                                      : domain_tag.c_str(),
                                        path.string().c_str(), append ? 1 : 0));
            std::cout << "wrote " << path.string() << "\n";
        } else {
            json run_cfg = cfg;
            if (!source_dir.empty() || !target_dir.empty()) {
                if (source_dir.empty() || target_dir.empty()) {
                    throw CliError{kExitConfig, "--source and --target go together"};
                }
                if (scenario->parsed()) {
                    run_cfg["scenarios"] = json::array(
                        {{{"id", fs::path(source_dir).filename().string() + "->" + fs::path(target_dir).filename().string()},
                          {"source", source_dir},
                          {"target", target_dir}}});
                }
            }
            const fs::path out = out_dir_or(c, "results");
            const std::string text = run_cfg.dump();
            OwnedString res;
            if (scenario->parsed()) {
                check(terse_run_scenarios(text.c_str(), out.string().c_str(), &res.s));
                emit_report(res.parse(), out, cfg.value("source_only", false) ? "source_only" : "scenario");
            } else {
                if (source_dir.empty()) {
                    const auto& sc = run_cfg.value("scenarios", json::array());
                    if (sc.empty()) throw CliError{kExitConfig, "give --source/--target or a scenario in the config"};
                    source_dir = sc[0].at("source").get<std::string>();
                    target_dir = sc[0].at("target").get<std::string>();
                }
                if (ablate->parsed()) {
                    check(terse_run_ablation(text.c_str(), source_dir.c_str(), target_dir.c_str(), &res.s));
                    emit_report(res.parse(), out, "ablation");
                } else if (search->parsed()) {
                    check(terse_run_search(text.c_str(), source_dir.c_str(), target_dir.c_str(), &res.s));
                    emit_report(res.parse(), out, "search");
                } else {
                    check(terse_run_sweep(text.c_str(), source_dir.c_str(), target_dir.c_str(), &res.s));
                    emit_report(res.parse(), out, "sweep");
                }
            }
        }
    } catch (const CliError& e) {
        std::cerr << "error: " << e.message << "\n";
        return e.code;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return 0;
}
