#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "terse/encoder.hpp"
#include "terse/model.hpp"
#include "terse/rng.hpp"
#include "terse/tensor.hpp"

namespace terse {

inline constexpr std::int64_t kDefaultTemporalSegments = 8;

struct TemporalMaskSpec {
    std::int64_t num_segments = kDefaultTemporalSegments;
    std::int64_t segment_length = 0;
    double mask_ratio = 0.0;
    std::vector<std::vector<std::int64_t>> masked_segments;  // per sample, ascending
};

struct SpatialMaskSpec {
    double mask_ratio = 0.0;
    std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> dropped_edges;  // per sample, i < j
    std::int64_t warnings = 0;  // samples with no candidate edge
};

// Segment count used for a ratio: the requested count, refined by doubling
// while ratio * count is fractional and a finer split still tiles L.
std::int64_t resolve_temporal_segments(std::int64_t length, double ratio, std::int64_t requested);

// Zeroes round(ratio * segments) randomly chosen segments per sample, across
// all channels. Returns a new tensor; x is untouched.
std::pair<Tensor, TemporalMaskSpec> temporal_mask(const Tensor& x, double ratio, Rng& rng,
                                                  std::int64_t num_segments = kDefaultTemporalSegments);
std::pair<TimeSeriesBatch, TemporalMaskSpec> temporal_mask(const TimeSeriesBatch& x, double ratio, Rng& rng,
                                                           std::int64_t num_segments = kDefaultTemporalSegments);

// Symmetrically zeroes round(ratio * |candidates|) of the strictly positive
// off-diagonal pairs per sample. The result is a * mask, so gradient still
// flows to the kept entries of a.
std::pair<Tensor, SpatialMaskSpec> spatial_mask(const Tensor& a, double ratio, Rng& rng);

// LSTM over the node axis of [B, N, D], projected back to D per step.
Tensor restore_temporal(const RestorationParams& params, const Tensor& h_masked);

// A_hat = Zn Zn^T with Z = PReLU(norm(A') H'' W').
Tensor rewire_spatial(const RewiringParams& params, const Tensor& h_masked_graph, const Tensor& a_masked);

}  // namespace terse
