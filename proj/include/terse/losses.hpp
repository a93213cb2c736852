#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "terse/tensor.hpp"

namespace terse {

inline constexpr float kLogEps = 1e-8f;

// How the restoration/rewiring MSE is reduced.
enum class Reduction {
    per_sample,   // squared L2 per sample, averaged over the batch
    per_element,  // mean over every entry
};

struct LossReport {
    double total = 0.0;
    std::map<std::string, double> components;
    std::int64_t batch_size = 0;
};

// Label-smoothed cross entropy, batch mean. Targets (1 - eta) y + eta / K.
Tensor cls_loss(const Tensor& logits, std::span<const std::int32_t> labels, float eta);

// Squared-error reconstruction loss between equally shaped batches.
Tensor restoration_loss(const Tensor& h, const Tensor& h_hat, Reduction reduction = Reduction::per_sample);
Tensor rewiring_loss(const Tensor& a, const Tensor& a_hat, Reduction reduction = Reduction::per_sample);

struct ImLoss {
    Tensor total;
    Tensor entropy;    // mean per-sample entropy
    Tensor diversity;  // sum_k pbar_k log pbar_k (negative entropy of the batch marginal)
};
ImLoss im_loss(const Tensor& logits);

struct Composite {
    Tensor total;
    LossReport report;
};

// Undefined tensors stand for disabled terms.
Composite source_composite(const Tensor& cls, const Tensor& tr, const Tensor& sr, float cls_weight = 1.0f);
Composite target_composite(const ImLoss& im, const Tensor& tr, const Tensor& sr, float alpha, float beta);

}  // namespace terse
