#include "terse/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "terse/auxiliary.hpp"
#include "terse/error.hpp"
#include "terse/ops.hpp"
#include "terse/optim.hpp"

namespace terse {

void TrainConfig::validate() const {
    if (epochs < 0 || adapt_epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0) || (adapt_lr && !(*adapt_lr > 0.0))) throw ConfigError("learning rate must be > 0");
    if (!(temporal_ratio > 0.0 && temporal_ratio < 1.0)) throw ConfigError("temporal_ratio must lie in (0, 1)");
    if (!(spatial_ratio > 0.0 && spatial_ratio < 1.0)) throw ConfigError("spatial_ratio must lie in (0, 1)");
    if (alpha < 0.0 || beta < 0.0) throw ConfigError("alpha and beta must be >= 0");
    if (!(eta >= 0.0 && eta < 1.0)) throw ConfigError("eta must lie in [0, 1)");
    if (temporal_segments < 1) throw ConfigError("temporal_segments must be >= 1");
}

void TrainingLog::record(const std::string& stage, std::int64_t epoch, std::int64_t step, const LossReport& report,
                         double lr, double wall_ms) {
    nlohmann::json rec{{"run_id", run_id_}, {"stage", stage},         {"epoch", epoch},  {"step", step},
                       {"components", report.components}, {"total", report.total}, {"lr", lr}, {"wall_ms", wall_ms}};
    if (sink_) *sink_ << rec.dump() << '\n';
    records_.push_back(std::move(rec));
}

Tensor gather_rows(const Tensor& values, std::span<const std::size_t> rows) {
    Shape shape = values.shape();
    const std::int64_t stride = values.numel() / std::max<std::int64_t>(shape[0], 1);
    shape[0] = static_cast<std::int64_t>(rows.size());
    std::vector<float> out(rows.size() * static_cast<std::size_t>(stride));
    const auto src = values.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<std::int64_t>(rows[i]) >= values.dim(0)) throw DimensionError("gather_rows: row out of range");
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[i]) * stride, stride,
                    out.begin() + static_cast<std::ptrdiff_t>(i) * stride);
    }
    return Tensor::from_vector(shape, std::move(out));
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::int64_t batch_size, Rng& rng) {
    const auto perm = rng.permutation(n);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size)) {
        const auto end = std::min(n, i + static_cast<std::size_t>(batch_size));
        out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i), perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void require_finite(const LossReport& report, const std::string& stage, std::int64_t epoch, std::int64_t step) {
    if (!std::isfinite(report.total)) {
        throw NumericError(stage + ": non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step));
    }
}

bool spatial_task_available(const ModelBundle& model) { return model.config.variant != EncoderVariant::temporal_only; }

}  // namespace

ModelBundle MultiHeadBundle::select(std::size_t temporal, std::size_t spatial) const {
    ModelBundle out = model.clone();
    if (temporal < restorations.size()) out.restoration = clone_params(restorations[temporal]);
    if (spatial < rewirings.size()) out.rewiring = clone_params(rewirings[spatial]);
    return out;
}

MultiHeadBundle pretrain_source_multi(const TimeSeriesBatch& data, const ModelConfig& model_config,
                                      const TrainConfig& cfg, const std::vector<double>& temporal_ratios,
                                      const std::vector<double>& spatial_ratios, const StageOptions& options) {
    cfg.validate();
    data.validate(model_config.classes);
    if (!data.labels) throw DataError("pretrain_source: source data must be labelled");
    if (data.size() == 0) throw DataError("pretrain_source: empty source data");
    for (double r : temporal_ratios)
        if (!(r > 0.0 && r < 1.0)) throw ConfigError("temporal_ratio must lie in (0, 1)");
    for (double r : spatial_ratios)
        if (!(r > 0.0 && r < 1.0)) throw ConfigError("spatial_ratio must lie in (0, 1)");

    const Rng base(cfg.seed);
    Rng init_rng = base.fork("init");
    Rng shuffle_rng = base.fork("pretrain.shuffle");

    MultiHeadBundle out{ModelBundle::create(model_config, init_rng), temporal_ratios, spatial_ratios, {}, {}};
    ModelBundle& model = out.model;
    for (const auto& g : model.param_groups()) model.set_trainable(g.name, true);

    const bool use_tr = !cfg.disable_tr && !temporal_ratios.empty();
    const bool use_sr = !cfg.disable_sr && spatial_task_available(model) && !spatial_ratios.empty();
    // Every head starts from the same initial values and mask stream, so head
    // i ends exactly where a single-head run with ratio i would.
    std::vector<ParamGroup> groups = {model.param_group(group::cnn), model.param_group(group::gnn),
                                      model.param_group(group::classifier)};
    std::vector<Rng> tmask_rngs, smask_rngs;
    if (use_tr) {
        for (std::size_t i = 0; i < temporal_ratios.size(); ++i) {
            out.restorations.push_back(clone_params(model.restoration));
            tmask_rngs.push_back(base.fork("pretrain.temporal_mask"));
        }
    }
    if (use_sr) {
        for (std::size_t i = 0; i < spatial_ratios.size(); ++i) {
            out.rewirings.push_back(clone_params(model.rewiring));
            smask_rngs.push_back(base.fork("pretrain.spatial_mask"));
        }
    }
    for (std::size_t i = 0; i < out.restorations.size(); ++i) {
        auto& r = out.restorations[i];
        groups.push_back(ParamGroup{std::string(group::restoration) + "." + std::to_string(i),
                                    {{"w_ih", r.w_ih}, {"w_hh", r.w_hh}, {"b", r.b}, {"w_out", r.w_out}, {"b_out", r.b_out}}});
    }
    for (std::size_t i = 0; i < out.rewirings.size(); ++i) {
        auto& r = out.rewirings[i];
        groups.push_back(ParamGroup{std::string(group::rewiring) + "." + std::to_string(i),
                                    {{"weight", r.weight}, {"slope", r.slope}}});
    }
    for (auto& g : groups)
        for (auto& p : g.params) p.tensor.set_requires_grad(true);
    Adam opt(groups, AdamOptions{cfg.lr});

    const auto& labels = *data.labels;
    std::int64_t step = 0;
    const auto save_checkpoint = [&] {
        if (!options.checkpoint) return;
        out.select(0, 0).save(*options.checkpoint);
    };
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& idx : epoch_batches(static_cast<std::size_t>(data.size()), cfg.batch_size, shuffle_rng)) {
            const auto t0 = Clock::now();
            const Tensor x = gather_rows(data.values, idx);
            std::vector<std::int32_t> y(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) y[i] = labels[idx[i]];

            const EncoderOutput enc = encode(model, x, ops::BnMode::train);
            const Tensor logits = classify(model.classifier, enc.h);
            const Tensor l_cls = cls_loss(logits, y, static_cast<float>(cfg.eta));

            std::vector<Tensor> l_tr, l_sr;
            for (std::size_t i = 0; i < out.restorations.size(); ++i) {
                Tensor h_masked;
                {
                    NoGradGuard no_grad;
                    auto [xm, spec] = temporal_mask(x, temporal_ratios[i], tmask_rngs[i], cfg.temporal_segments);
                    h_masked = encode(model, xm, ops::BnMode::train_no_track).h;
                }
                const Tensor h_hat = restore_temporal(out.restorations[i], h_masked);
                l_tr.push_back(restoration_loss(detach(enc.h), h_hat, cfg.reduction));
            }
            if (!out.rewirings.empty()) {
                const Tensor a = detach(enc.a);
                const Tensor z = detach(enc.z);
                for (std::size_t i = 0; i < out.rewirings.size(); ++i) {
                    auto [a_masked, spec] = spatial_mask(a, spatial_ratios[i], smask_rngs[i]);
                    Tensor h_graph;
                    {
                        NoGradGuard no_grad;
                        h_graph = spatial_gnn(model.encoder, z, a_masked);
                    }
                    const Tensor a_hat = rewire_spatial(out.rewirings[i], h_graph, a_masked);
                    l_sr.push_back(rewiring_loss(a, a_hat, cfg.reduction));
                }
            }

            Composite loss = source_composite(l_cls, l_tr.empty() ? Tensor() : l_tr[0],
                                              l_sr.empty() ? Tensor() : l_sr[0], static_cast<float>(cfg.cls_weight));
            for (std::size_t i = 1; i < l_tr.size(); ++i) {
                loss.total = ops::add(loss.total, l_tr[i]);
                loss.report.components["tr." + std::to_string(i)] = l_tr[i].item();
            }
            for (std::size_t i = 1; i < l_sr.size(); ++i) {
                loss.total = ops::add(loss.total, l_sr[i]);
                loss.report.components["sr." + std::to_string(i)] = l_sr[i].item();
            }
            loss.report.total = loss.total.item();
            loss.report.batch_size = static_cast<std::int64_t>(idx.size());
            require_finite(loss.report, "pretrain", epoch, step);
            opt.zero_grad();
            loss.total.backward();
            opt.step();
            if (options.log) options.log->record("pretrain", epoch, step, loss.report, cfg.lr, ms_since(t0));
            ++step;
        }
        save_checkpoint();
    }
    return out;
}

ModelBundle pretrain_source(const TimeSeriesBatch& data, const ModelConfig& model_config, const TrainConfig& cfg,
                            const StageOptions& options) {
    return pretrain_source_multi(data, model_config, cfg, {cfg.temporal_ratio}, {cfg.spatial_ratio}, options)
        .select(0, 0);
}

PluginLosses plugin_losses(ModelBundle& model, const Tensor& x, const EncoderOutput& encoded, const TrainConfig& cfg,
                           Rng& temporal_rng, Rng& spatial_rng) {
    if (!model.has_aux) throw ConfigError("bundle lacks auxiliary parameters");
    PluginLosses out;
    if (!cfg.disable_tr) {
        const auto mode = cfg.adapt_bn_train ? ops::BnMode::train_no_track : ops::BnMode::eval;
        auto [xm, spec] = temporal_mask(x, cfg.temporal_ratio, temporal_rng, cfg.temporal_segments);
        const Tensor h_masked = encode(model, xm, mode).h;
        const Tensor h_hat = restore_temporal(model.restoration, h_masked);
        const Tensor target = cfg.detach_restoration_target ? detach(encoded.h) : encoded.h;
        out.tr = restoration_loss(target, h_hat, cfg.reduction);
    }
    if (!cfg.disable_sr && spatial_task_available(model)) {
        auto [a_masked, spec] = spatial_mask(encoded.a, cfg.spatial_ratio, spatial_rng);
        const Tensor h_graph = spatial_gnn(model.encoder, encoded.z, a_masked);
        const Tensor a_hat = rewire_spatial(model.rewiring, h_graph, a_masked);
        out.sr = rewiring_loss(encoded.a, a_hat, cfg.reduction);
    }
    return out;
}

Tensor im_host(const HostContext& ctx, LossReport& report) {
    const ImLoss im = im_loss(ctx.logits);
    report.components["im_ent"] = im.entropy.item();
    report.components["im_div"] = im.diversity.item();
    return im.total;
}

HostObjective pseudo_label_host(float threshold) {
    return [threshold](const HostContext& ctx, LossReport& report) {
        const std::int64_t B = ctx.logits.dim(0), K = ctx.logits.dim(1);
        const Tensor p = ops::softmax(detach(ctx.logits));
        const auto pv = p.data();
        std::vector<float> target(static_cast<std::size_t>(B * K), 0.0f);
        std::int64_t confident = 0;
        for (std::int64_t i = 0; i < B; ++i) {
            const auto row = pv.subspan(static_cast<std::size_t>(i * K), static_cast<std::size_t>(K));
            const auto best = std::max_element(row.begin(), row.end());
            if (*best > threshold) {
                target[static_cast<std::size_t>(i * K + (best - row.begin()))] = 1.0f;
                ++confident;
            }
        }
        const float norm = confident > 0 ? 1.0f / static_cast<float>(confident) : 0.0f;
        const Tensor t = Tensor::from_vector({B, K}, std::move(target));
        const Tensor logp = ops::log(ops::softmax(ctx.logits), kLogEps);
        const Tensor loss = ops::scale(ops::sum(ops::mul(t, logp)), -norm);
        report.components["pl"] = loss.item();
        report.components["pl_confident"] = static_cast<double>(confident);
        return loss;
    };
}

void adapt_with_host(ModelBundle& model, const UnlabeledData& data, const TrainConfig& cfg, const HostObjective& host,
                     bool use_plugin, const StageOptions& options) {
    cfg.validate();
    if (data.size() == 0) throw DataError("adapt: empty target data");
    if (data.values.rank() != 3) throw DataError("adapt: target data must be [B, N, L]");
    if (use_plugin && !model.has_aux) throw ConfigError("bundle lacks auxiliary parameters");

    const Rng base(cfg.seed);
    Rng shuffle_rng = base.fork("adapt.shuffle");
    Rng tmask_rng = base.fork("adapt.temporal_mask");
    Rng smask_rng = base.fork("adapt.spatial_mask");

    model.set_trainable(group::cnn, true);
    model.set_trainable(group::gnn, true);
    model.set_trainable(group::classifier, false);
    model.set_trainable(group::restoration, false);
    model.set_trainable(group::rewiring, false);
    const double lr = cfg.adaptation_lr();
    Adam opt(model.encoder_groups(), AdamOptions{lr});
    const auto bn_mode = cfg.adapt_bn_train ? ops::BnMode::train : ops::BnMode::eval;
    const auto alpha = static_cast<float>(cfg.alpha);
    const auto beta = static_cast<float>(cfg.beta);

    std::int64_t step = 0;
    for (std::int64_t epoch = 0; epoch < cfg.adapt_epochs; ++epoch) {
        for (const auto& idx : epoch_batches(static_cast<std::size_t>(data.size()), cfg.batch_size, shuffle_rng)) {
            const auto t0 = Clock::now();
            const Tensor x = gather_rows(data.values, idx);
            const EncoderOutput enc = encode(model, x, bn_mode);
            const Tensor logits = classify(model.classifier, enc.h);
            LossReport report;
            report.batch_size = static_cast<std::int64_t>(idx.size());
            Tensor total = host(HostContext{model, x, enc, logits}, report);
            if (use_plugin) {
                const PluginLosses pl = plugin_losses(model, x, enc, cfg, tmask_rng, smask_rng);
                if (pl.tr.defined()) {
                    report.components["tr"] = pl.tr.item();
                    total = ops::add(total, ops::scale(pl.tr, alpha));
                }
                if (pl.sr.defined()) {
                    report.components["sr"] = pl.sr.item();
                    total = ops::add(total, ops::scale(pl.sr, beta));
                }
            }
            report.total = total.item();
            require_finite(report, "adapt", epoch, step);
            opt.zero_grad();
            total.backward();
            opt.step();
            if (options.log) options.log->record("adapt", epoch, step, report, lr, ms_since(t0));
            ++step;
        }
        if (options.checkpoint) model.save(*options.checkpoint);
    }
}

void adapt_target(ModelBundle& model, const UnlabeledData& data, const TrainConfig& cfg, const StageOptions& options) {
    adapt_with_host(model, data, cfg, im_host, true, options);
}

namespace {

template <typename F>
void for_each_chunk(std::int64_t n, std::int64_t batch_size, F f) {
    for (std::int64_t start = 0; start < n; start += batch_size) {
        const auto len = std::min(batch_size, n - start);
        std::vector<std::size_t> rows(static_cast<std::size_t>(len));
        for (std::int64_t i = 0; i < len; ++i) rows[static_cast<std::size_t>(i)] = static_cast<std::size_t>(start + i);
        f(rows);
    }
}

}  // namespace

std::vector<std::int32_t> predict(ModelBundle& model, const Tensor& values, std::int64_t batch_size) {
    NoGradGuard no_grad;
    std::vector<std::int32_t> out;
    out.reserve(static_cast<std::size_t>(values.dim(0)));
    for_each_chunk(values.dim(0), batch_size, [&](const std::vector<std::size_t>& rows) {
        const Tensor x = gather_rows(values, rows);
        const Tensor logits = classify(model.classifier, encode(model, x, ops::BnMode::eval).h);
        const std::int64_t K = logits.dim(1);
        const auto lv = logits.data();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto row = lv.subspan(i * static_cast<std::size_t>(K), static_cast<std::size_t>(K));
            out.push_back(static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
    });
    return out;
}

Tensor embed(ModelBundle& model, const Tensor& values, std::int64_t batch_size) {
    NoGradGuard no_grad;
    std::vector<Tensor> parts;
    for_each_chunk(values.dim(0), batch_size, [&](const std::vector<std::size_t>& rows) {
        parts.push_back(encode(model, gather_rows(values, rows), ops::BnMode::eval).h);
    });
    if (parts.empty()) {
        return Tensor::zeros({0, model.config.channels, model.config.embed_dim});
    }
    return ops::concat(parts, 0);
}

TargetObjective target_objective(ModelBundle& model, const UnlabeledData& data, const TrainConfig& cfg) {
    NoGradGuard no_grad;
    const Rng base(cfg.seed);
    Rng trng = base.fork("objective.temporal_mask");
    Rng srng = base.fork("objective.spatial_mask");
    TrainConfig eval_cfg = cfg;
    eval_cfg.adapt_bn_train = false;
    eval_cfg.disable_tr = false;
    eval_cfg.disable_sr = false;
    TargetObjective acc;
    std::int64_t seen = 0;
    for_each_chunk(data.size(), cfg.batch_size, [&](const std::vector<std::size_t>& rows) {
        const Tensor x = gather_rows(data.values, rows);
        const EncoderOutput enc = encode(model, x, ops::BnMode::eval);
        const Tensor logits = classify(model.classifier, enc.h);
        const double w = static_cast<double>(rows.size());
        acc.im += w * im_loss(logits).total.item();
        if (model.has_aux) {
            const PluginLosses pl = plugin_losses(model, x, enc, eval_cfg, trng, srng);
            if (pl.tr.defined()) acc.tr += w * pl.tr.item();
            if (pl.sr.defined()) acc.sr += w * pl.sr.item();
        }
        seen += static_cast<std::int64_t>(rows.size());
    });
    if (seen > 0) {
        acc.im /= static_cast<double>(seen);
        acc.tr /= static_cast<double>(seen);
        acc.sr /= static_cast<double>(seen);
    }
    return acc;
}

}  // namespace terse
