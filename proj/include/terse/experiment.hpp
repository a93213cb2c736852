#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "terse/data.hpp"
#include "terse/metrics.hpp"
#include "terse/model.hpp"
#include "terse/training.hpp"

namespace terse {

struct ScenarioSpec {
    std::string id;  // e.g. "2->11"
    std::filesystem::path source;
    std::filesystem::path target;
};

struct SearchSpace {
    double alpha_min = 0.0, alpha_max = 1.0;
    double beta_min = 0.0, beta_max = 1.0;
    std::vector<double> lr{1e-4, 3e-4, 1e-3, 3e-3};
    std::vector<double> temporal_ratio{1.0 / 16, 1.0 / 8, 1.0 / 4};
    std::vector<double> spatial_ratio{0.25, 0.5, 0.75};
    std::int64_t draws = 50;
    std::uint64_t seed = 0;
};

struct SweepGrid {
    std::vector<double> temporal{1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0 / 2};
    std::vector<double> spatial{0.25, 0.5, 0.75};
};

struct ExperimentConfig {
    ModelConfig model;  // channels/classes/length are taken from the data
    TrainConfig train;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<ScenarioSpec> scenarios;
    bool source_only = false;
    bool normalize = true;
    SearchSpace search;
    SweepGrid sweep;
    std::int64_t workers = 1;
    std::optional<std::filesystem::path> out_dir;  // logs and checkpoints

    void validate() const;
    nlohmann::json to_json() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static ExperimentConfig from_json(const nlohmann::json& j);
    // FNV-1a of the canonical JSON, hex encoded.
    std::string hash() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// Train split plus normalisation fitted on it, and the test split under the
// same statistics. Each domain is normalised with its own statistics only.
struct DomainData {
    DatasetMeta meta;
    TimeSeriesBatch train;
    TimeSeriesBatch test;
    NormStats stats;
};

DomainData load_domain(const std::filesystem::path& dir, bool normalize);
DomainData prepare_domain(const Dataset& dataset, bool normalize);

// Model shape taken from the data, architecture from the config.
ModelConfig model_for(const ModelConfig& base, const DatasetMeta& meta);

struct ScenarioResult {
    std::string scenario;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    bool source_only = false;
    double macro_f1 = 0.0;
    std::vector<double> per_class_f1;
    std::vector<bool> class_included;
    std::vector<std::int64_t> confusion;
    std::int64_t classes = 0;
    std::string config_hash;
    double wall_ms = 0.0;

    nlohmann::json to_json(bool include_wall_time = true) const;
};

ScenarioResult make_result(const std::string& scenario, std::uint64_t seed, const F1Report& f1);

// Pretrain on source.train, optionally adapt on target.train (labels never
// read), evaluate on target.test.
ScenarioResult run_seed(const ExperimentConfig& cfg, const std::string& scenario_id, const DomainData& source,
                        const DomainData& target, std::uint64_t seed, bool source_only);

// Every configured seed; a failing seed is recorded and the rest still run.
std::vector<ScenarioResult> run_scenario(const ExperimentConfig& cfg, const ScenarioSpec& scenario);

struct Summary {
    double mean = 0.0;
    double std = 0.0;  // population std over seeds
    std::int64_t n = 0;
};
Summary summarize(const std::vector<double>& values);

// Scenario rows with mean±std macro-F1 (in %) and an AVG row.
std::string format_scenario_table(const std::vector<std::vector<ScenarioResult>>& per_scenario,
                                  const std::string& label);
std::string scenario_csv(const std::vector<std::vector<ScenarioResult>>& per_scenario);

enum class TaskVariant { both, tr_only, sr_only, neither };
std::string to_string(TaskVariant v);
TrainConfig apply_task_variant(TrainConfig cfg, TaskVariant v);

struct AblationCell {
    TaskVariant tasks;
    EncoderVariant encoder;
    std::vector<double> f1;  // per seed, in [0, 1]
    Summary summary;
};

struct AblationReport {
    std::vector<AblationCell> cells;
    const AblationCell& cell(TaskVariant t, EncoderVariant e) const;
    std::string table() const;
    std::string csv() const;
    nlohmann::json to_json() const;
};

// Pretraining runs once per (seed, encoder variant) and is shared by all
// task variants, which differ only during adaptation.
AblationReport run_ablation(const ExperimentConfig& cfg, const DomainData& source, const DomainData& target,
                            const std::vector<TaskVariant>& tasks = {TaskVariant::both, TaskVariant::tr_only,
                                                                     TaskVariant::sr_only, TaskVariant::neither},
                            const std::vector<EncoderVariant>& encoders = {EncoderVariant::full,
                                                                           EncoderVariant::temporal_only,
                                                                           EncoderVariant::spatial_only});

struct SearchDraw {
    std::int64_t index = 0;
    double alpha = 0, beta = 0, lr = 0, temporal_ratio = 0, spatial_ratio = 0;
    TargetObjective objective;
    double macro_f1 = 0.0;  // reported only, never used for ranking
    nlohmann::json to_json() const;
};

// Uniform, seed-deterministic draws from the space.
std::vector<SearchDraw> draw_configs(const SearchSpace& space);

struct SearchReport {
    std::vector<SearchDraw> ranked;  // ascending objective
    double spearman = 0.0;           // between -objective and macro_f1
    std::vector<ScenarioResult> best_runs;
    nlohmann::json to_json() const;
};

// One seed per draw (the first configured seed), ranked by the label-free
// target objective; the best draw is re-run on every configured seed.
SearchReport random_search(const ExperimentConfig& cfg, const DomainData& source, const DomainData& target);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct SweepReport {
    std::vector<double> temporal, spatial;
    std::vector<std::vector<Summary>> cells;  // [temporal][spatial]
    std::vector<std::vector<std::vector<double>>> per_seed;
    std::string table() const;
    std::string csv() const;
    nlohmann::json to_json() const;
    double max_mean() const;
    // Mean at the given ratios; throws when the grid lacks them.
    double mean_at(double temporal_ratio, double spatial_ratio) const;
};

// One multi-head pretraining per seed, then one adaptation per grid cell.
SweepReport sweep_mask(const ExperimentConfig& cfg, const DomainData& source, const DomainData& target);

// CSV with a header row, then one row per sample: N * D features, domain tag, label (empty when absent).
void export_features(ModelBundle& model, const TimeSeriesBatch& batch, const std::string& domain, std::ostream& os,
                     bool header = true);

}  // namespace terse
