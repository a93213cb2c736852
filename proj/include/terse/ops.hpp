#pragma once

#include <cstdint>
#include <vector>

#include "terse/tensor.hpp"

// Differentiable primitives. Every function records a backward closure when
// grad mode is on and an input requires grad.
namespace terse::ops {

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float s);

// [..., M, K] x [..., K, P] -> [..., M, P]; batch dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);
Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length);

Tensor relu(const Tensor& x);
// slope holds a single element.
Tensor prelu(const Tensor& x, const Tensor& slope);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
// log(x + eps)
Tensor log(const Tensor& x, float eps = 0.0f);
// x^-1/2 where x > 0, else 0 (and zero gradient).
Tensor rsqrt_or_zero(const Tensor& x);

// Along the last axis, max-subtracted.
Tensor softmax(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::int64_t axis);
Tensor mean(const Tensor& x, std::int64_t axis);

inline constexpr float kNormEps = 1e-12f;
// Each row along the last axis divided by max(||row||_2, eps).
Tensor l2_normalize_rows(const Tensor& x, float eps = kNormEps);

// x [B, Cin, L], w [Cout, Cin, K], b [Cout]; cross-correlation, zero padding.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t stride, std::int64_t pad);

// Pools the last axis; floor mode, first maximum wins ties.
Tensor maxpool1d(const Tensor& x, std::int64_t kernel, std::int64_t stride);

struct BatchNormState {
    std::vector<float> running_mean;
    std::vector<float> running_var;
    float momentum = 0.1f;
    float eps = 1e-5f;

    explicit BatchNormState(std::int64_t channels = 0)
        : running_mean(static_cast<std::size_t>(channels), 0.0f),
          running_var(static_cast<std::size_t>(channels), 1.0f) {}
};

enum class BnMode {
    train,          // batch statistics, running averages updated
    train_no_track, // batch statistics, running averages untouched
    eval,           // running averages
};

// x [B, C] or [B, C, L]; statistics per channel over batch and length.
Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, BnMode mode);

}  // namespace terse::ops
