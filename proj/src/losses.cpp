#include "terse/losses.hpp"

#include "terse/error.hpp"
#include "terse/ops.hpp"

namespace terse {

Tensor cls_loss(const Tensor& logits, std::span<const std::int32_t> labels, float eta) {
    if (logits.rank() != 2) throw DimensionError("cls_loss: logits must be [B, K], got " + shape_str(logits.shape()));
    const std::int64_t B = logits.dim(0), K = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != B) {
        throw DimensionError("cls_loss: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(B));
    }
    if (!(eta >= 0.0f && eta < 1.0f)) throw ConfigError("cls_loss: eta must lie in [0, 1)");
    std::vector<float> target(static_cast<std::size_t>(B * K), eta / static_cast<float>(K));
    for (std::int64_t i = 0; i < B; ++i) {
        const auto y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= K) {
            throw DataError("cls_loss: label " + std::to_string(y) + " at index " + std::to_string(i) +
                            " outside [0, " + std::to_string(K) + ")");
        }
        target[static_cast<std::size_t>(i * K + y)] += 1.0f - eta;
    }
    const Tensor t = Tensor::from_vector({B, K}, std::move(target));
    const Tensor logp = ops::log(ops::softmax(logits), kLogEps);
    return ops::scale(ops::sum(ops::mul(t, logp)), -1.0f / static_cast<float>(B));
}

namespace {

Tensor squared_error(const Tensor& a, const Tensor& b, Reduction reduction, const char* name) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    if (a.rank() < 1 || a.dim(0) == 0) throw DimensionError(std::string(name) + ": empty batch");
    const Tensor d = ops::sub(a, b);
    const Tensor sq = ops::sum(ops::mul(d, d));
    const auto denom = reduction == Reduction::per_sample ? a.dim(0) : a.numel();
    return ops::scale(sq, 1.0f / static_cast<float>(denom));
}

}  // namespace

Tensor restoration_loss(const Tensor& h, const Tensor& h_hat, Reduction reduction) {
    return squared_error(h, h_hat, reduction, "restoration_loss");
}

Tensor rewiring_loss(const Tensor& a, const Tensor& a_hat, Reduction reduction) {
    return squared_error(a, a_hat, reduction, "rewiring_loss");
}

ImLoss im_loss(const Tensor& logits) {
    if (logits.rank() != 2 || logits.dim(0) < 1) {
        throw DimensionError("im_loss: logits must be [B, K] with B >= 1, got " + shape_str(logits.shape()));
    }
    const std::int64_t B = logits.dim(0);
    const Tensor p = ops::softmax(logits);
    ImLoss out;
    out.entropy = ops::scale(ops::sum(ops::mul(p, ops::log(p, kLogEps))), -1.0f / static_cast<float>(B));
    const Tensor pbar = ops::mean(p, 0);
    out.diversity = ops::sum(ops::mul(pbar, ops::log(pbar, kLogEps)));
    out.total = ops::add(out.entropy, out.diversity);
    return out;
}

namespace {

void accumulate(Composite& c, const Tensor& term, float weight, const char* name) {
    if (!term.defined()) return;
    c.report.components[name] = term.item();
    const Tensor weighted = weight == 1.0f ? term : ops::scale(term, weight);
    c.total = c.total.defined() ? ops::add(c.total, weighted) : weighted;
}

}  // namespace

Composite source_composite(const Tensor& cls, const Tensor& tr, const Tensor& sr, float cls_weight) {
    Composite c;
    accumulate(c, cls, cls_weight, "cls");
    accumulate(c, tr, 1.0f, "tr");
    accumulate(c, sr, 1.0f, "sr");
    if (!c.total.defined()) throw ConfigError("source_composite: no loss terms");
    c.report.total = c.total.item();
    return c;
}

Composite target_composite(const ImLoss& im, const Tensor& tr, const Tensor& sr, float alpha, float beta) {
    if (alpha < 0.0f || beta < 0.0f) throw ConfigError("target_composite: alpha and beta must be >= 0");
    Composite c;
    if (!im.total.defined()) throw ConfigError("target_composite: missing IM term");
    c.total = im.total;
    c.report.components["im_ent"] = im.entropy.item();
    c.report.components["im_div"] = im.diversity.item();
    accumulate(c, tr, alpha, "tr");
    accumulate(c, sr, beta, "sr");
    c.report.total = c.total.item();
    return c;
}

}  // namespace terse
