#include "terse/encoder.hpp"

#include "terse/error.hpp"

namespace terse {

void TimeSeriesBatch::validate(std::int64_t num_classes) const {
    if (!values.defined() || values.rank() != 3) {
        throw DataError("time series batch must have shape [B, N, L]");
    }
    if (!labels) return;
    if (static_cast<std::int64_t>(labels->size()) != values.dim(0)) {
        throw DataError("label count " + std::to_string(labels->size()) + " does not match batch size " +
                        std::to_string(values.dim(0)));
    }
    for (std::size_t i = 0; i < labels->size(); ++i) {
        const auto y = (*labels)[i];
        if (y < 0 || y >= num_classes) {
            throw DataError("label " + std::to_string(y) + " at index " + std::to_string(i) + " outside [0, " +
                            std::to_string(num_classes) + ")");
        }
    }
}

Tensor temporal_cnn(EncoderParams& params, const Tensor& x, ops::BnMode mode) {
    if (x.rank() != 3) throw DimensionError("temporal_cnn: expected [B, N, L], got " + shape_str(x.shape()));
    const std::int64_t B = x.dim(0), N = x.dim(1), L = x.dim(2);
    Tensor out = ops::reshape(x, {B * N, 1, L});
    for (auto& block : params.cnn) {
        out = ops::conv1d(out, block.weight, block.bias, 1, block.pad);
        out = ops::relu(out);
        out = ops::batchnorm1d(out, block.gamma, block.beta, block.bn, mode);
        out = ops::maxpool1d(out, 2, 2);
    }
    const std::int64_t F = out.dim(1);
    out = ops::mean(out, -1);
    return ops::reshape(out, {B, N, F});
}

Tensor graph_learner(const Tensor& z) {
    const Tensor zn = ops::l2_normalize_rows(z);
    return ops::relu(ops::matmul(zn, ops::transpose(zn)));
}

Tensor normalize_adjacency(const Tensor& a) {
    if (a.rank() != 3 || a.dim(1) != a.dim(2)) {
        throw DimensionError("normalize_adjacency: expected [B, N, N], got " + shape_str(a.shape()));
    }
    const std::int64_t B = a.dim(0), N = a.dim(1);
    const Tensor d = ops::rsqrt_or_zero(ops::sum(a, -1));
    return ops::mul(ops::mul(a, ops::reshape(d, {B, N, 1})), ops::reshape(d, {B, 1, N}));
}

Tensor graph_conv(const Tensor& x, const Tensor& a, const Tensor& weight, const Tensor& slope) {
    return ops::prelu(ops::matmul(ops::matmul(normalize_adjacency(a), x), weight), slope);
}

Tensor spatial_gnn(const EncoderParams& params, const Tensor& z, const Tensor& a) {
    return graph_conv(z, a, params.gnn_weight, params.gnn_slope);
}

Tensor classify(const ClassifierParams& params, const Tensor& h) {
    if (h.rank() != 3) throw DimensionError("classify: expected [B, N, D], got " + shape_str(h.shape()));
    const Tensor flat = ops::reshape(h, {h.dim(0), h.dim(1) * h.dim(2)});
    return ops::add(ops::matmul(flat, params.weight), params.bias);
}

Tensor identity_adjacency(std::int64_t batch, std::int64_t nodes) {
    Tensor eye = Tensor::zeros({batch, nodes, nodes});
    auto v = eye.data();
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t i = 0; i < nodes; ++i) v[(b * nodes + i) * nodes + i] = 1.0f;
    return eye;
}

EncoderOutput encode(ModelBundle& model, const Tensor& x, ops::BnMode mode) {
    const auto& cfg = model.config;
    if (x.rank() != 3 || x.dim(1) != cfg.channels || x.dim(2) != cfg.length) {
        throw DimensionError("encode: input " + shape_str(x.shape()) + " does not match model [B, " +
                             std::to_string(cfg.channels) + ", " + std::to_string(cfg.length) + "]");
    }
    EncoderOutput out;
    switch (cfg.variant) {
        case EncoderVariant::full:
            out.z = temporal_cnn(model.encoder, x, mode);
            out.a = graph_learner(out.z);
            break;
        case EncoderVariant::temporal_only:
            out.z = temporal_cnn(model.encoder, x, mode);
            out.a = identity_adjacency(x.dim(0), x.dim(1));
            break;
        case EncoderVariant::spatial_only:
            out.z = x;
            out.a = graph_learner(out.z);
            break;
    }
    out.h = spatial_gnn(model.encoder, out.z, out.a);
    return out;
}

}  // namespace terse
