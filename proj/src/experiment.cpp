#include "terse/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "terse/error.hpp"
#include "terse/serialize.hpp"

namespace terse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; })) {
            throw ConfigError(where + ": unknown key '" + it.key() + "'");
        }
    }
}

// Runs f(i) for i in [0, n) on up to `workers` threads. Results go through
// index-addressed slots, so the outcome is independent of scheduling.
template <typename F>
void parallel_for(std::size_t n, std::int64_t workers, F f) {
    const auto w = static_cast<std::size_t>(std::clamp<std::int64_t>(workers, 1, 64));
    if (w == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(w, n); ++t) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    f(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::string file_stem(std::string s) {
    for (auto& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
    return s;
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
    return buf;
}

std::string pm(const Summary& s) { return pct(s.mean) + "±" + pct(s.std); }

// Pads by display width; "±" counts as one column.
std::string pad(const std::string& s, std::size_t width) {
    std::size_t cols = 0;
    for (unsigned char c : s) cols += (c & 0xC0) != 0x80;
    return s + std::string(width > cols ? width - cols : 0, ' ');
}

std::string render(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width;
    for (const auto& r : rows) {
        width.resize(std::max(width.size(), r.size()), 0);
        for (std::size_t i = 0; i < r.size(); ++i) {
            std::size_t cols = 0;
            for (unsigned char c : r[i]) cols += (c & 0xC0) != 0x80;
            width[i] = std::max(width[i], cols);
        }
    }
    std::ostringstream os;
    for (std::size_t ri = 0; ri < rows.size(); ++ri) {
        for (std::size_t i = 0; i < rows[ri].size(); ++i) os << (i ? "  " : "") << pad(rows[ri][i], width[i]);
        os << "\n";
        if (ri == 0) {
            std::size_t total = 0;
            for (auto w : width) total += w + 2;
            os << std::string(total - 2, '-') << "\n";
        }
    }
    return os.str();
}

struct RunPaths {
    std::optional<fs::path> log, pretrain_ckpt, adapt_ckpt;
};

RunPaths run_paths(const ExperimentConfig& cfg, const std::string& tag) {
    RunPaths p;
    if (!cfg.out_dir) return p;
    fs::create_directories(*cfg.out_dir / "logs");
    fs::create_directories(*cfg.out_dir / "checkpoints");
    const std::string stem = file_stem(tag);
    p.log = *cfg.out_dir / "logs" / (stem + ".jsonl");
    p.pretrain_ckpt = *cfg.out_dir / "checkpoints" / (stem + ".pretrain.ckpt");
    p.adapt_ckpt = *cfg.out_dir / "checkpoints" / (stem + ".adapt.ckpt");
    return p;
}

// Owns the optional JSONL sink of one run.
struct RunLog {
    std::ofstream file;
    TrainingLog log;
    RunLog(const std::string& run_id, const std::optional<fs::path>& path)
        : file(path ? std::ofstream(*path, std::ios::trunc) : std::ofstream()),
          log(run_id, path ? &file : nullptr) {}
};

double evaluate_f1(ModelBundle& model, const DomainData& target, F1Report* report = nullptr) {
    if (!target.test.labels) throw DataError("target test split has no labels to evaluate against");
    const auto preds = predict(model, target.test.values);
    F1Report r = macro_f1(preds, *target.test.labels, model.config.classes);
    if (report) *report = r;
    return r.macro;
}

void check_domains(const DomainData& source, const DomainData& target) {
    if (source.meta.channels != target.meta.channels || source.meta.length != target.meta.length ||
        source.meta.classes != target.meta.classes) {
        throw DataError("source and target disagree on channels, classes or length");
    }
}

}  // namespace

nlohmann::json train_config_to_json(const TrainConfig& c) {
    json j{{"epochs", c.epochs},
           {"adapt_epochs", c.adapt_epochs},
           {"batch_size", c.batch_size},
           {"lr", c.lr},
           {"temporal_ratio", c.temporal_ratio},
           {"spatial_ratio", c.spatial_ratio},
           {"temporal_segments", c.temporal_segments},
           {"alpha", c.alpha},
           {"beta", c.beta},
           {"eta", c.eta},
           {"disable_tr", c.disable_tr},
           {"disable_sr", c.disable_sr},
           {"detach_restoration_target", c.detach_restoration_target},
           {"adapt_bn_train", c.adapt_bn_train},
           {"cls_weight", c.cls_weight},
           {"reduction", c.reduction == Reduction::per_sample ? "per_sample" : "per_element"}};
    j["adapt_lr"] = c.adapt_lr ? json(*c.adapt_lr) : json(nullptr);
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    reject_unknown(j,
                   {"epochs", "adapt_epochs", "batch_size", "lr", "adapt_lr", "temporal_ratio", "spatial_ratio",
                    "temporal_segments", "alpha", "beta", "eta", "disable_tr", "disable_sr",
                    "detach_restoration_target", "adapt_bn_train", "cls_weight", "reduction"},
                   "train");
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.adapt_epochs = j.value("adapt_epochs", c.adapt_epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr = j.value("lr", c.lr);
        if (j.contains("adapt_lr")) {
            if (j["adapt_lr"].is_null()) c.adapt_lr.reset();
            else c.adapt_lr = j["adapt_lr"].get<double>();
        }
        c.temporal_ratio = j.value("temporal_ratio", c.temporal_ratio);
        c.spatial_ratio = j.value("spatial_ratio", c.spatial_ratio);
        c.temporal_segments = j.value("temporal_segments", c.temporal_segments);
        c.alpha = j.value("alpha", c.alpha);
        c.beta = j.value("beta", c.beta);
        c.eta = j.value("eta", c.eta);
        c.disable_tr = j.value("disable_tr", c.disable_tr);
        c.disable_sr = j.value("disable_sr", c.disable_sr);
        c.detach_restoration_target = j.value("detach_restoration_target", c.detach_restoration_target);
        c.adapt_bn_train = j.value("adapt_bn_train", c.adapt_bn_train);
        c.cls_weight = j.value("cls_weight", c.cls_weight);
        if (j.contains("reduction")) {
            const auto r = j["reduction"].get<std::string>();
            if (r == "per_sample") c.reduction = Reduction::per_sample;
            else if (r == "per_element") c.reduction = Reduction::per_element;
            else throw ConfigError("train.reduction must be per_sample or per_element");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
    return c;
}

void ExperimentConfig::validate() const {
    model.validate();
    train.validate();
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (search.draws < 1) throw ConfigError("search.draws must be >= 1");
    if (search.alpha_min > search.alpha_max || search.beta_min > search.beta_max) {
        throw ConfigError("search: empty alpha or beta range");
    }
    if (search.lr.empty() || search.temporal_ratio.empty() || search.spatial_ratio.empty()) {
        throw ConfigError("search: every choice list needs at least one value");
    }
    if (sweep.temporal.empty() || sweep.spatial.empty()) throw ConfigError("sweep: empty grid");
    if (workers < 1) throw ConfigError("workers must be >= 1");
}

nlohmann::json ExperimentConfig::to_json() const {
    json sc = json::array();
    for (const auto& s : scenarios) sc.push_back({{"id", s.id}, {"source", s.source.string()}, {"target", s.target.string()}});
    json j{{"model", model_config_to_json(model)},
           {"train", train_config_to_json(train)},
           {"seeds", seeds},
           {"scenarios", sc},
           {"source_only", source_only},
           {"normalize", normalize},
           {"search",
            {{"alpha", {search.alpha_min, search.alpha_max}},
             {"beta", {search.beta_min, search.beta_max}},
             {"lr", search.lr},
             {"temporal_ratio", search.temporal_ratio},
             {"spatial_ratio", search.spatial_ratio},
             {"draws", search.draws},
             {"seed", search.seed}}},
           {"sweep", {{"temporal", sweep.temporal}, {"spatial", sweep.spatial}}},
           {"workers", workers}};
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    reject_unknown(j, {"model", "train", "seeds", "scenarios", "source_only", "normalize", "search", "sweep", "workers"},
                   "config");
    ExperimentConfig c;
    try {
        if (j.contains("model")) {
            reject_unknown(j["model"],
                           {"channels", "classes", "length", "cnn_filters", "cnn_kernels", "pool", "embed_dim", "encoder"},
                           "model");
            c.model = model_config_from_json(j["model"]);
        }
        if (j.contains("train")) c.train = train_config_from_json(j["train"]);
        c.seeds = j.value("seeds", c.seeds);
        if (j.contains("scenarios")) {
            for (const auto& s : j["scenarios"]) {
                reject_unknown(s, {"id", "source", "target"}, "scenario");
                ScenarioSpec spec{s.value("id", std::string()), s.at("source").get<std::string>(),
                                  s.at("target").get<std::string>()};
                if (spec.id.empty()) spec.id = spec.source.filename().string() + "->" + spec.target.filename().string();
                c.scenarios.push_back(spec);
            }
        }
        c.source_only = j.value("source_only", c.source_only);
        c.normalize = j.value("normalize", c.normalize);
        if (j.contains("search")) {
            const auto& s = j["search"];
            reject_unknown(s, {"alpha", "beta", "lr", "temporal_ratio", "spatial_ratio", "draws", "seed"}, "search");
            if (s.contains("alpha")) {
                c.search.alpha_min = s["alpha"].at(0).get<double>();
                c.search.alpha_max = s["alpha"].at(1).get<double>();
            }
            if (s.contains("beta")) {
                c.search.beta_min = s["beta"].at(0).get<double>();
                c.search.beta_max = s["beta"].at(1).get<double>();
            }
            c.search.lr = s.value("lr", c.search.lr);
            c.search.temporal_ratio = s.value("temporal_ratio", c.search.temporal_ratio);
            c.search.spatial_ratio = s.value("spatial_ratio", c.search.spatial_ratio);
            c.search.draws = s.value("draws", c.search.draws);
            c.search.seed = s.value("seed", c.search.seed);
        }
        if (j.contains("sweep")) {
            reject_unknown(j["sweep"], {"temporal", "spatial"}, "sweep");
            c.sweep.temporal = j["sweep"].value("temporal", c.sweep.temporal);
            c.sweep.spatial = j["sweep"].value("spatial", c.sweep.spatial);
        }
        c.workers = j.value("workers", c.workers);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

std::string ExperimentConfig::hash() const {
    const std::string s = to_json().dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return ExperimentConfig::from_json(j);
}

DomainData prepare_domain(const Dataset& dataset, bool normalize) {
    DomainData d;
    d.meta = dataset.meta;
    d.train = dataset.split("train");
    auto it = dataset.splits.find("test");
    d.test = it != dataset.splits.end() ? it->second : d.train;
    d.stats = normalize ? fit_normalization(d.train)
                        : NormStats{std::vector<float>(d.meta.channels, 0.0f), std::vector<float>(d.meta.channels, 1.0f)};
    if (normalize) {
        d.train = apply_normalization(d.train, d.stats);
        d.test = apply_normalization(d.test, d.stats);
    }
    return d;
}

DomainData load_domain(const fs::path& dir, bool normalize) { return prepare_domain(load_dataset(dir), normalize); }

ModelConfig model_for(const ModelConfig& base, const DatasetMeta& meta) {
    ModelConfig m = base;
    m.channels = meta.channels;
    m.classes = meta.classes;
    m.length = meta.length;
    m.validate();
    return m;
}

nlohmann::json ScenarioResult::to_json(bool include_wall_time) const {
    json per_class = json::array();
    for (std::size_t k = 0; k < per_class_f1.size(); ++k) {
        per_class.push_back(k < class_included.size() && !class_included[k] ? json(nullptr) : json(per_class_f1[k]));
    }
    json conf = json::array();
    for (std::int64_t r = 0; r < classes; ++r) {
        conf.push_back(std::vector<std::int64_t>(confusion.begin() + r * classes, confusion.begin() + (r + 1) * classes));
    }
    json j{{"scenario", scenario},   {"seed", seed},           {"status", ok ? "ok" : "failed"},
           {"source_only", source_only}, {"macro_f1", macro_f1}, {"per_class_f1", per_class},
           {"confusion", conf},      {"config_hash", config_hash}};
    if (!ok) j["error"] = error;
    if (include_wall_time) j["wall_ms"] = wall_ms;
    return j;
}

ScenarioResult make_result(const std::string& scenario, std::uint64_t seed, const F1Report& f1) {
    ScenarioResult r;
    r.scenario = scenario;
    r.seed = seed;
    r.ok = true;
    r.macro_f1 = f1.macro;
    r.per_class_f1 = f1.per_class;
    r.class_included = f1.included;
    r.confusion = f1.confusion;
    r.classes = f1.classes();
    return r;
}

ScenarioResult run_seed(const ExperimentConfig& cfg, const std::string& scenario_id, const DomainData& source,
                        const DomainData& target, std::uint64_t seed, bool source_only) {
    const auto t0 = Clock::now();
    check_domains(source, target);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const ModelConfig mc = model_for(cfg.model, source.meta);
    const std::string tag = scenario_id + "_seed" + std::to_string(seed) + (source_only ? "_source_only" : "");
    const RunPaths paths = run_paths(cfg, tag);
    RunLog log(tag, paths.log);

    ModelBundle model = pretrain_source(source.train, mc, tc, StageOptions{&log.log, paths.pretrain_ckpt});
    if (!source_only) {
        adapt_target(model, UnlabeledData::from(target.train), tc, StageOptions{&log.log, paths.adapt_ckpt});
    }
    F1Report f1;
    evaluate_f1(model, target, &f1);
    ScenarioResult r = make_result(scenario_id, seed, f1);
    r.source_only = source_only;
    r.config_hash = cfg.hash();
    r.wall_ms = ms_since(t0);
    return r;
}

std::vector<ScenarioResult> run_scenario(const ExperimentConfig& cfg, const ScenarioSpec& scenario) {
    cfg.validate();
    std::vector<ScenarioResult> out(cfg.seeds.size());
    std::optional<DomainData> source, target;
    std::string load_error;
    try {
        source = load_domain(scenario.source, cfg.normalize);
        target = load_domain(scenario.target, cfg.normalize);
    } catch (const Error& e) {
        load_error = e.what();
    }
    parallel_for(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
        const auto t0 = Clock::now();
        try {
            if (!load_error.empty()) throw DataError(load_error);
            out[i] = run_seed(cfg, scenario.id, *source, *target, cfg.seeds[i], cfg.source_only);
        } catch (const std::exception& e) {
            ScenarioResult r;
            r.scenario = scenario.id;
            r.seed = cfg.seeds[i];
            r.source_only = cfg.source_only;
            r.error = e.what();
            r.config_hash = cfg.hash();
            r.wall_ms = ms_since(t0);
            out[i] = r;
        }
    });
    return out;
}

Summary summarize(const std::vector<double>& values) {
    Summary s;
    s.n = static_cast<std::int64_t>(values.size());
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size()));
    return s;
}

namespace {

std::vector<double> ok_f1(const std::vector<ScenarioResult>& runs) {
    std::vector<double> v;
    for (const auto& r : runs)
        if (r.ok) v.push_back(r.macro_f1);
    return v;
}

}  // namespace

std::string format_scenario_table(const std::vector<std::vector<ScenarioResult>>& per_scenario,
                                  const std::string& label) {
    std::vector<std::vector<std::string>> rows{{"Scenario", label, "failed"}};
    std::vector<double> means;
    for (const auto& runs : per_scenario) {
        if (runs.empty()) continue;
        const auto f1 = ok_f1(runs);
        const Summary s = summarize(f1);
        const auto failed = runs.size() - f1.size();
        rows.push_back({runs.front().scenario, f1.empty() ? "n/a" : pm(s), std::to_string(failed)});
        if (!f1.empty()) means.push_back(s.mean);
    }
    rows.push_back({"AVG", means.empty() ? "n/a" : pct(summarize(means).mean), ""});
    return render(rows);
}

std::string scenario_csv(const std::vector<std::vector<ScenarioResult>>& per_scenario) {
    std::ostringstream os;
    os << "scenario,seed,status,source_only,macro_f1\n";
    for (const auto& runs : per_scenario)
        for (const auto& r : runs)
            os << r.scenario << "," << r.seed << "," << (r.ok ? "ok" : "failed") << "," << (r.source_only ? 1 : 0) << ","
               << std::setprecision(6) << r.macro_f1 << "\n";
    return os.str();
}

std::string to_string(TaskVariant v) {
    switch (v) {
        case TaskVariant::both: return "both";
        case TaskVariant::tr_only: return "tr_only";
        case TaskVariant::sr_only: return "sr_only";
        case TaskVariant::neither: return "neither";
    }
    return "?";
}

TrainConfig apply_task_variant(TrainConfig cfg, TaskVariant v) {
    cfg.disable_tr = v == TaskVariant::sr_only || v == TaskVariant::neither;
    cfg.disable_sr = v == TaskVariant::tr_only || v == TaskVariant::neither;
    return cfg;
}

const AblationCell& AblationReport::cell(TaskVariant t, EncoderVariant e) const {
    for (const auto& c : cells)
        if (c.tasks == t && c.encoder == e) return c;
    throw ConfigError("ablation: no cell " + to_string(t) + "/" + terse::to_string(e));
}

std::string AblationReport::table() const {
    std::vector<TaskVariant> tasks;
    std::vector<EncoderVariant> encoders;
    for (const auto& c : cells) {
        if (std::find(tasks.begin(), tasks.end(), c.tasks) == tasks.end()) tasks.push_back(c.tasks);
        if (std::find(encoders.begin(), encoders.end(), c.encoder) == encoders.end()) encoders.push_back(c.encoder);
    }
    std::vector<std::vector<std::string>> rows{{"encoder"}};
    for (auto t : tasks) rows[0].push_back(to_string(t));
    for (auto e : encoders) {
        std::vector<std::string> row{terse::to_string(e)};
        for (auto t : tasks) row.push_back(pm(cell(t, e).summary));
        rows.push_back(row);
    }
    return render(rows);
}

std::string AblationReport::csv() const {
    std::ostringstream os;
    os << "encoder,tasks,mean,std,n\n" << std::setprecision(6);
    for (const auto& c : cells)
        os << terse::to_string(c.encoder) << "," << to_string(c.tasks) << "," << c.summary.mean << "," << c.summary.std
           << "," << c.summary.n << "\n";
    return os.str();
}

nlohmann::json AblationReport::to_json() const {
    json arr = json::array();
    for (const auto& c : cells) {
        arr.push_back({{"encoder", terse::to_string(c.encoder)},
                       {"tasks", to_string(c.tasks)},
                       {"macro_f1", c.f1},
                       {"mean", c.summary.mean},
                       {"std", c.summary.std}});
    }
    return {{"cells", arr}};
}

AblationReport run_ablation(const ExperimentConfig& cfg, const DomainData& source, const DomainData& target,
                            const std::vector<TaskVariant>& tasks, const std::vector<EncoderVariant>& encoders) {
    cfg.validate();
    check_domains(source, target);
    const auto S = cfg.seeds.size();
    const auto E = encoders.size();
    // [encoder][task][seed]
    std::vector<std::vector<std::vector<double>>> f1(E, std::vector<std::vector<double>>(tasks.size(), std::vector<double>(S)));
    parallel_for(E * S, cfg.workers, [&](std::size_t job) {
        const std::size_t e = job / S, s = job % S;
        ModelConfig mc = model_for(cfg.model, source.meta);
        mc.variant = encoders[e];
        TrainConfig tc = cfg.train;
        tc.seed = cfg.seeds[s];
        tc.disable_tr = tc.disable_sr = false;
        const ModelBundle pretrained = pretrain_source(source.train, mc, tc);
        std::map<std::pair<bool, bool>, double> done;
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            TrainConfig at = apply_task_variant(tc, tasks[t]);
            // Without a graph the spatial task is a no-op, so some cells coincide.
            const bool sr = !at.disable_sr && encoders[e] != EncoderVariant::temporal_only;
            const std::pair<bool, bool> key{!at.disable_tr, sr};
            if (auto it = done.find(key); it != done.end()) {
                f1[e][t][s] = it->second;
                continue;
            }
            ModelBundle m = pretrained.clone();
            adapt_target(m, UnlabeledData::from(target.train), at);
            f1[e][t][s] = done[key] = evaluate_f1(m, target);
        }
    });
    AblationReport rep;
    for (std::size_t e = 0; e < E; ++e)
        for (std::size_t t = 0; t < tasks.size(); ++t)
            rep.cells.push_back(AblationCell{tasks[t], encoders[e], f1[e][t], summarize(f1[e][t])});
    return rep;
}

nlohmann::json SearchDraw::to_json() const {
    return {{"index", index},
            {"alpha", alpha},
            {"beta", beta},
            {"lr", lr},
            {"temporal_ratio", temporal_ratio},
            {"spatial_ratio", spatial_ratio},
            {"objective", objective.total()},
            {"im", objective.im},
            {"tr", objective.tr},
            {"sr", objective.sr},
            {"macro_f1", macro_f1}};
}

std::vector<SearchDraw> draw_configs(const SearchSpace& space) {
    if (space.draws < 1) throw ConfigError("search.draws must be >= 1");
    Rng rng = Rng(space.seed).fork("search");
    std::vector<SearchDraw> out;
    for (std::int64_t i = 0; i < space.draws; ++i) {
        SearchDraw d;
        d.index = i;
        d.alpha = rng.uniform(space.alpha_min, space.alpha_max);
        d.beta = rng.uniform(space.beta_min, space.beta_max);
        d.lr = space.lr[rng.below(space.lr.size())];
        d.temporal_ratio = space.temporal_ratio[rng.below(space.temporal_ratio.size())];
        d.spatial_ratio = space.spatial_ratio[rng.below(space.spatial_ratio.size())];
        out.push_back(d);
    }
    return out;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) return 0.0;
    const auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](auto x, auto y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const Summary sa = summarize(ra), sb = summarize(rb);
    if (sa.std == 0.0 || sb.std == 0.0) return 0.0;
    double cov = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) cov += (ra[i] - sa.mean) * (rb[i] - sb.mean);
    return cov / static_cast<double>(ra.size()) / (sa.std * sb.std);
}

nlohmann::json SearchReport::to_json() const {
    json draws = json::array();
    for (const auto& d : ranked) draws.push_back(d.to_json());
    json best = json::array();
    for (const auto& r : best_runs) best.push_back(r.to_json());
    return {{"ranked", draws}, {"spearman_objective_vs_f1", spearman}, {"best_runs", best}};
}

SearchReport random_search(const ExperimentConfig& cfg, const DomainData& source, const DomainData& target) {
    cfg.validate();
    check_domains(source, target);
    auto draws = draw_configs(cfg.search);
    const ModelConfig mc = model_for(cfg.model, source.meta);
    const std::uint64_t seed = cfg.seeds.front();

    // Pretraining depends on the draw only through lr and the head ratios, so
    // one multi-head pretraining per distinct lr serves every draw.
    std::vector<double> lrs;
    for (const auto& d : draws)
        if (std::find(lrs.begin(), lrs.end(), d.lr) == lrs.end()) lrs.push_back(d.lr);
    std::vector<MultiHeadBundle> pretrained(lrs.size());
    parallel_for(lrs.size(), cfg.workers, [&](std::size_t i) {
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        tc.lr = lrs[i];
        tc.adapt_lr.reset();
        tc.disable_tr = tc.disable_sr = false;
        pretrained[i] = pretrain_source_multi(source.train, mc, tc, cfg.search.temporal_ratio, cfg.search.spatial_ratio);
    });
    const auto index_of = [](const std::vector<double>& v, double x) {
        return static_cast<std::size_t>(std::find(v.begin(), v.end(), x) - v.begin());
    };
    parallel_for(draws.size(), cfg.workers, [&](std::size_t i) {
        auto& d = draws[i];
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        tc.lr = d.lr;
        tc.adapt_lr.reset();
        tc.alpha = d.alpha;
        tc.beta = d.beta;
        tc.temporal_ratio = d.temporal_ratio;
        tc.spatial_ratio = d.spatial_ratio;
        const auto& mh = pretrained[index_of(lrs, d.lr)];
        ModelBundle m = mh.select(index_of(mh.temporal_ratios, d.temporal_ratio), index_of(mh.spatial_ratios, d.spatial_ratio));
        const UnlabeledData tgt = UnlabeledData::from(target.train);
        adapt_target(m, tgt, tc);
        d.objective = target_objective(m, tgt, tc);
        d.macro_f1 = evaluate_f1(m, target);
    });
    SearchReport rep;
    rep.ranked = draws;
    std::stable_sort(rep.ranked.begin(), rep.ranked.end(),
                     [](const SearchDraw& a, const SearchDraw& b) { return a.objective.total() < b.objective.total(); });
    std::vector<double> neg_obj, f1;
    for (const auto& d : draws) {
        neg_obj.push_back(-d.objective.total());
        f1.push_back(d.macro_f1);
    }
    rep.spearman = spearman(neg_obj, f1);

    ExperimentConfig best = cfg;
    const auto& top = rep.ranked.front();
    best.train.lr = top.lr;
    best.train.adapt_lr.reset();
    best.train.alpha = top.alpha;
    best.train.beta = top.beta;
    best.train.temporal_ratio = top.temporal_ratio;
    best.train.spatial_ratio = top.spatial_ratio;
    rep.best_runs.resize(cfg.seeds.size());
    parallel_for(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
        rep.best_runs[i] = run_seed(best, "search_best", source, target, cfg.seeds[i], false);
    });
    return rep;
}

std::string SweepReport::table() const {
    std::vector<std::vector<std::string>> rows{{"temporal \\ spatial"}};
    const auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4g", v);
        return std::string(buf);
    };
    for (double s : spatial) rows[0].push_back(num(s));
    for (std::size_t i = 0; i < temporal.size(); ++i) {
        std::vector<std::string> row{num(temporal[i])};
        for (std::size_t j = 0; j < spatial.size(); ++j) row.push_back(pm(cells[i][j]));
        rows.push_back(row);
    }
    return render(rows);
}

std::string SweepReport::csv() const {
    std::ostringstream os;
    os << "temporal_ratio,spatial_ratio,mean,std,n\n" << std::setprecision(6);
    for (std::size_t i = 0; i < temporal.size(); ++i)
        for (std::size_t j = 0; j < spatial.size(); ++j)
            os << temporal[i] << "," << spatial[j] << "," << cells[i][j].mean << "," << cells[i][j].std << ","
               << cells[i][j].n << "\n";
    return os.str();
}

nlohmann::json SweepReport::to_json() const {
    json mean = json::array(), sd = json::array();
    for (const auto& row : cells) {
        json m = json::array(), s = json::array();
        for (const auto& c : row) {
            m.push_back(c.mean);
            s.push_back(c.std);
        }
        mean.push_back(m);
        sd.push_back(s);
    }
    return {{"temporal", temporal}, {"spatial", spatial}, {"mean", mean}, {"std", sd}, {"per_seed", per_seed}};
}

double SweepReport::max_mean() const {
    double best = -1.0;
    for (const auto& row : cells)
        for (const auto& c : row) best = std::max(best, c.mean);
    return best;
}

double SweepReport::mean_at(double temporal_ratio, double spatial_ratio) const {
    for (std::size_t i = 0; i < temporal.size(); ++i)
        for (std::size_t j = 0; j < spatial.size(); ++j)
            if (std::abs(temporal[i] - temporal_ratio) < 1e-12 && std::abs(spatial[j] - spatial_ratio) < 1e-12) {
                return cells[i][j].mean;
            }
    throw ConfigError("sweep grid does not contain the requested ratios");
}

SweepReport sweep_mask(const ExperimentConfig& cfg, const DomainData& source, const DomainData& target) {
    cfg.validate();
    check_domains(source, target);
    const auto& T = cfg.sweep.temporal;
    const auto& Sp = cfg.sweep.spatial;
    const auto S = cfg.seeds.size();
    const ModelConfig mc = model_for(cfg.model, source.meta);
    SweepReport rep;
    rep.temporal = T;
    rep.spatial = Sp;
    rep.per_seed.assign(T.size(), std::vector<std::vector<double>>(Sp.size(), std::vector<double>(S)));
    std::vector<MultiHeadBundle> pretrained(S);
    parallel_for(S, cfg.workers, [&](std::size_t s) {
        TrainConfig tc = cfg.train;
        tc.seed = cfg.seeds[s];
        tc.disable_tr = tc.disable_sr = false;
        pretrained[s] = pretrain_source_multi(source.train, mc, tc, T, Sp);
    });
    const auto cells = T.size() * Sp.size();
    parallel_for(S * cells, cfg.workers, [&](std::size_t job) {
        const std::size_t s = job / cells, i = (job % cells) / Sp.size(), j = job % Sp.size();
        TrainConfig tc = cfg.train;
        tc.seed = cfg.seeds[s];
        tc.temporal_ratio = T[i];
        tc.spatial_ratio = Sp[j];
        ModelBundle m = pretrained[s].select(i, j);
        adapt_target(m, UnlabeledData::from(target.train), tc);
        rep.per_seed[i][j][s] = evaluate_f1(m, target);
    });
    rep.cells.assign(T.size(), std::vector<Summary>(Sp.size()));
    for (std::size_t i = 0; i < T.size(); ++i)
        for (std::size_t j = 0; j < Sp.size(); ++j) rep.cells[i][j] = summarize(rep.per_seed[i][j]);
    return rep;
}

void export_features(ModelBundle& model, const TimeSeriesBatch& batch, const std::string& domain, std::ostream& os,
                     bool header) {
    const Tensor h = embed(model, batch.values);
    const std::int64_t B = h.dim(0), width = h.dim(1) * h.dim(2);
    if (header) {
        for (std::int64_t f = 0; f < width; ++f) os << "f" << f << ",";
        os << "domain,label\n";
    }
    const auto v = h.data();
    char buf[32];
    for (std::int64_t i = 0; i < B; ++i) {
        for (std::int64_t f = 0; f < width; ++f) {
            std::snprintf(buf, sizeof(buf), "%.9g", v[static_cast<std::size_t>(i * width + f)]);
            os << buf << ",";
        }
        os << domain << ",";
        if (batch.labels) os << (*batch.labels)[static_cast<std::size_t>(i)];
        os << "\n";
    }
    if (!os) throw DataError("export_features: write failed");
}

}  // namespace terse
