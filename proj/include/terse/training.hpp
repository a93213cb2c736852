#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "terse/encoder.hpp"
#include "terse/losses.hpp"
#include "terse/model.hpp"
#include "terse/rng.hpp"

namespace terse {

struct TrainConfig {
    std::int64_t epochs = 40;        // source pre-training
    std::int64_t adapt_epochs = 40;  // target adaptation
    std::int64_t batch_size = 32;
    double lr = 1e-3;
    std::optional<double> adapt_lr;  // defaults to lr
    double temporal_ratio = 0.125;
    double spatial_ratio = 0.5;
    std::int64_t temporal_segments = 8;
    double alpha = 0.5;
    double beta = 0.5;
    double eta = 0.1;
    std::uint64_t seed = 0;
    bool disable_tr = false;
    bool disable_sr = false;
    bool detach_restoration_target = false;
    bool adapt_bn_train = true;
    // Debug weight on the classification term during pre-training.
    double cls_weight = 1.0;
    Reduction reduction = Reduction::per_sample;

    double adaptation_lr() const { return adapt_lr.value_or(lr); }
    void validate() const;
};

/// Per-step records of one run. Written as JSON lines when a sink is set.
class TrainingLog {
   public:
    explicit TrainingLog(std::string run_id = "run", std::ostream* sink = nullptr)
        : run_id_(std::move(run_id)), sink_(sink) {}

    void record(const std::string& stage, std::int64_t epoch, std::int64_t step, const LossReport& report, double lr,
                double wall_ms);

    const std::vector<nlohmann::json>& records() const noexcept { return records_; }
    const std::string& run_id() const noexcept { return run_id_; }

   private:
    std::string run_id_;
    std::ostream* sink_;
    std::vector<nlohmann::json> records_;
};

// Only what adaptation may see: values, never labels.
struct UnlabeledData {
    Tensor values;  // [B, N, L]

    static UnlabeledData from(const TimeSeriesBatch& batch) { return UnlabeledData{batch.values}; }
    std::int64_t size() const { return values.defined() ? values.dim(0) : 0; }
};

// Rows of a [B, ...] tensor, in the given order.
Tensor gather_rows(const Tensor& values, std::span<const std::size_t> rows);

// Mini-batch index lists for one epoch: seeded shuffle, last partial batch kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::int64_t batch_size, Rng& rng);

struct StageOptions {
    TrainingLog* log = nullptr;
    std::optional<std::filesystem::path> checkpoint;  // rewritten after every epoch
};

// Stage 1. Encoder and classifier learn from the classification term only;
// the auxiliary heads learn from their own losses on detached inputs.
ModelBundle pretrain_source(const TimeSeriesBatch& data, const ModelConfig& model_config, const TrainConfig& cfg,
                            const StageOptions& options = {});

// One encoder and classifier with a restoration head per temporal ratio and a
// rewiring head per spatial ratio, all trained in the same pass.
struct MultiHeadBundle {
    ModelBundle model;
    std::vector<double> temporal_ratios;
    std::vector<double> spatial_ratios;
    std::vector<RestorationParams> restorations;  // empty when the task is off
    std::vector<RewiringParams> rewirings;

    // Standalone bundle carrying heads (temporal, spatial).
    ModelBundle select(std::size_t temporal, std::size_t spatial) const;
};

MultiHeadBundle pretrain_source_multi(const TimeSeriesBatch& data, const ModelConfig& model_config,
                                      const TrainConfig& cfg, const std::vector<double>& temporal_ratios,
                                      const std::vector<double>& spatial_ratios, const StageOptions& options = {});

struct PluginLosses {
    Tensor tr;  // undefined when disabled
    Tensor sr;
};

/// Auxiliary adaptation terms for any host objective. `encoded` must be the
/// host's own forward of `x`, so the clean pass is shared.
PluginLosses plugin_losses(ModelBundle& model, const Tensor& x, const EncoderOutput& encoded, const TrainConfig& cfg,
                           Rng& temporal_rng, Rng& spatial_rng);

struct HostContext {
    ModelBundle& model;
    const Tensor& x;
    const EncoderOutput& encoded;
    const Tensor& logits;
};

// Host adaptation objective; fills the named components it contributes.
using HostObjective = std::function<Tensor(const HostContext&, LossReport&)>;

Tensor im_host(const HostContext& ctx, LossReport& report);

// Self-training on confident argmax pseudo-labels (confidence > threshold).
HostObjective pseudo_label_host(float threshold = 0.9f);

// Generic stage 2 loop: host + alpha * tr + beta * sr, encoder only.
void adapt_with_host(ModelBundle& model, const UnlabeledData& data, const TrainConfig& cfg, const HostObjective& host,
                     bool use_plugin, const StageOptions& options = {});

// Stage 2: IM + alpha * tr + beta * sr, classifier and heads frozen.
void adapt_target(ModelBundle& model, const UnlabeledData& data, const TrainConfig& cfg,
                  const StageOptions& options = {});

// Eval-mode argmax predictions.
std::vector<std::int32_t> predict(ModelBundle& model, const Tensor& values, std::int64_t batch_size = 256);

// Eval-mode node embeddings [B, N, D].
Tensor embed(ModelBundle& model, const Tensor& values, std::int64_t batch_size = 256);

struct TargetObjective {
    double im = 0.0;
    double tr = 0.0;
    double sr = 0.0;
    double total() const { return im + tr + sr; }
};

// Label-free model-selection score on target data (lower is better).
TargetObjective target_objective(ModelBundle& model, const UnlabeledData& data, const TrainConfig& cfg);

}  // namespace terse
