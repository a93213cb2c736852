#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "terse/model.hpp"
#include "terse/ops.hpp"
#include "terse/tensor.hpp"

namespace terse {

/// Batch of multivariate windows [B, N, L] with optional labels in [0, K).
struct TimeSeriesBatch {
    Tensor values;
    std::optional<std::vector<std::int32_t>> labels;

    std::int64_t size() const { return values.defined() ? values.dim(0) : 0; }
    // Throws DataError on rank/label violations.
    void validate(std::int64_t num_classes) const;
};

struct EncoderOutput {
    Tensor z;  // [B, N, F]   per-channel temporal features
    Tensor a;  // [B, N, N]   learned adjacency
    Tensor h;  // [B, N, D]   node embeddings
};

// Shared-weight CNN over every channel: [B, N, L] -> [B, N, F].
Tensor temporal_cnn(EncoderParams& params, const Tensor& x, ops::BnMode mode);

// A = ReLU(Zn Zn^T) with Zn the row-normalised features.
Tensor graph_learner(const Tensor& z);

// D^-1/2 A D^-1/2; zero-degree nodes get coefficient 0.
Tensor normalize_adjacency(const Tensor& a);

// PReLU(norm(A) X W): one propagation-and-update step.
Tensor graph_conv(const Tensor& x, const Tensor& a, const Tensor& weight, const Tensor& slope);

Tensor spatial_gnn(const EncoderParams& params, const Tensor& z, const Tensor& a);

// Flattens the node axis and applies one affine map: [B, N, D] -> [B, K].
Tensor classify(const ClassifierParams& params, const Tensor& h);

// Full forward of the configured encoder variant.
EncoderOutput encode(ModelBundle& model, const Tensor& x, ops::BnMode mode);

// Identity adjacency batch [B, N, N].
Tensor identity_adjacency(std::int64_t batch, std::int64_t nodes);

}  // namespace terse
