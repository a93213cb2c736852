#include "terse/auxiliary.hpp"

#include <algorithm>
#include <cmath>

#include "terse/error.hpp"
#include "terse/ops.hpp"

namespace terse {

namespace {

void check_ratio(double ratio, const char* what) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw ConfigError(std::string(what) + ": mask ratio must lie in (0, 1), got " + std::to_string(ratio));
    }
}

bool is_integral(double v) { return std::abs(v - std::round(v)) < 1e-9; }

}  // namespace

std::int64_t resolve_temporal_segments(std::int64_t length, double ratio, std::int64_t requested) {
    if (requested < 1 || length % requested != 0) {
        throw ConfigError("temporal mask: " + std::to_string(requested) + " segments do not tile length " +
                          std::to_string(length));
    }
    std::int64_t n = requested;
    while (!is_integral(ratio * static_cast<double>(n)) && 2 * n <= length && length % (2 * n) == 0) n *= 2;
    return is_integral(ratio * static_cast<double>(n)) ? n : requested;
}

std::pair<Tensor, TemporalMaskSpec> temporal_mask(const Tensor& x, double ratio, Rng& rng, std::int64_t num_segments) {
    check_ratio(ratio, "temporal mask");
    if (x.rank() != 3) throw DimensionError("temporal_mask: expected [B, N, L], got " + shape_str(x.shape()));
    const std::int64_t B = x.dim(0), N = x.dim(1), L = x.dim(2);
    TemporalMaskSpec spec;
    spec.mask_ratio = ratio;
    spec.num_segments = resolve_temporal_segments(L, ratio, num_segments);
    spec.segment_length = L / spec.num_segments;
    const auto count = static_cast<std::int64_t>(std::lround(ratio * static_cast<double>(spec.num_segments)));
    if (count == 0) throw ConfigError("temporal mask selects nothing (ratio " + std::to_string(ratio) + ")");

    Tensor out = x.clone();
    auto v = out.data();
    for (std::int64_t b = 0; b < B; ++b) {
        auto picks = rng.choose(static_cast<std::size_t>(spec.num_segments), static_cast<std::size_t>(count));
        std::vector<std::int64_t> segs(picks.begin(), picks.end());
        std::sort(segs.begin(), segs.end());
        for (auto s : segs)
            for (std::int64_t c = 0; c < N; ++c) {
                auto* row = v.data() + (b * N + c) * L + s * spec.segment_length;
                std::fill(row, row + spec.segment_length, 0.0f);
            }
        spec.masked_segments.push_back(std::move(segs));
    }
    return {std::move(out), std::move(spec)};
}

std::pair<TimeSeriesBatch, TemporalMaskSpec> temporal_mask(const TimeSeriesBatch& x, double ratio, Rng& rng,
                                                           std::int64_t num_segments) {
    auto [values, spec] = temporal_mask(x.values, ratio, rng, num_segments);
    return {TimeSeriesBatch{std::move(values), x.labels}, std::move(spec)};
}

std::pair<Tensor, SpatialMaskSpec> spatial_mask(const Tensor& a, double ratio, Rng& rng) {
    check_ratio(ratio, "spatial mask");
    if (a.rank() != 3 || a.dim(1) != a.dim(2)) {
        throw DimensionError("spatial_mask: expected [B, N, N], got " + shape_str(a.shape()));
    }
    const std::int64_t B = a.dim(0), N = a.dim(1);
    SpatialMaskSpec spec;
    spec.mask_ratio = ratio;
    Tensor mask = Tensor::full(a.shape(), 1.0f);
    auto m = mask.data();
    const auto av = a.data();
    for (std::int64_t b = 0; b < B; ++b) {
        std::vector<std::pair<std::int64_t, std::int64_t>> candidates;
        for (std::int64_t i = 0; i < N; ++i)
            for (std::int64_t j = i + 1; j < N; ++j)
                if (av[(b * N + i) * N + j] > 0.0f) candidates.emplace_back(i, j);
        std::vector<std::pair<std::int64_t, std::int64_t>> dropped;
        if (candidates.empty()) {
            ++spec.warnings;
        } else {
            const auto count = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(candidates.size())));
            for (auto k : rng.choose(candidates.size(), count)) dropped.push_back(candidates[k]);
            std::sort(dropped.begin(), dropped.end());
            for (auto [i, j] : dropped) {
                m[(b * N + i) * N + j] = 0.0f;
                m[(b * N + j) * N + i] = 0.0f;
            }
        }
        spec.dropped_edges.push_back(std::move(dropped));
    }
    return {ops::mul(a, mask), std::move(spec)};
}

Tensor restore_temporal(const RestorationParams& params, const Tensor& h_masked) {
    if (h_masked.rank() != 3) {
        throw DimensionError("restore_temporal: expected [B, N, D], got " + shape_str(h_masked.shape()));
    }
    const std::int64_t B = h_masked.dim(0), N = h_masked.dim(1), D = h_masked.dim(2);
    if (params.w_ih.dim(0) != D) {
        throw DimensionError("restore_temporal: embedding width " + std::to_string(D) + " does not match LSTM input " +
                             std::to_string(params.w_ih.dim(0)));
    }
    Tensor h = Tensor::zeros({B, D});
    Tensor c = Tensor::zeros({B, D});
    std::vector<Tensor> steps;
    steps.reserve(static_cast<std::size_t>(N));
    for (std::int64_t t = 0; t < N; ++t) {
        const Tensor x = ops::reshape(ops::slice(h_masked, 1, t, 1), {B, D});
        const Tensor gates =
            ops::add(ops::add(ops::matmul(x, params.w_ih), ops::matmul(h, params.w_hh)), params.b);
        const Tensor i = ops::sigmoid(ops::slice(gates, 1, 0, D));
        const Tensor f = ops::sigmoid(ops::slice(gates, 1, D, D));
        const Tensor g = ops::tanh(ops::slice(gates, 1, 2 * D, D));
        const Tensor o = ops::sigmoid(ops::slice(gates, 1, 3 * D, D));
        c = ops::add(ops::mul(f, c), ops::mul(i, g));
        h = ops::mul(o, ops::tanh(c));
        const Tensor y = ops::add(ops::matmul(h, params.w_out), params.b_out);
        steps.push_back(ops::reshape(y, {B, 1, D}));
    }
    return ops::concat(steps, 1);
}

Tensor rewire_spatial(const RewiringParams& params, const Tensor& h_masked_graph, const Tensor& a_masked) {
    const Tensor z = graph_conv(h_masked_graph, a_masked, params.weight, params.slope);
    const Tensor zn = ops::l2_normalize_rows(z);
    return ops::matmul(zn, ops::transpose(zn));
}

}  // namespace terse
