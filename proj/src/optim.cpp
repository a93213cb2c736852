#include "terse/optim.hpp"

#include <cmath>

#include "terse/error.hpp"

namespace terse {

Adam::Adam(std::vector<ParamGroup> groups, AdamOptions options) : groups_(std::move(groups)), options_(options) {
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        for (auto& p : groups_[g].params) {
            const auto n = static_cast<std::size_t>(p.tensor.numel());
            slots_.push_back(Slot{g, p.tensor, std::vector<float>(n, 0.0f), std::vector<float>(n, 0.0f)});
        }
    }
}

void Adam::zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
}

void Adam::step() {
    for (const auto& s : slots_) {
        for (float g : s.param.grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient in parameter group '" + groups_[s.group].name + "'");
            }
        }
    }
    ++t_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double step_size = options_.lr / bc1;
    const double sqrt_bc2 = std::sqrt(bc2);
    for (auto& s : slots_) {
        auto grad = s.param.grad();
        if (grad.empty()) continue;  // never reached by backward: zero gradient
        auto value = s.param.data();
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad[i];
            const double m = b1 * s.m[i] + (1.0 - b1) * g;
            const double v = b2 * s.v[i] + (1.0 - b2) * g * g;
            s.m[i] = static_cast<float>(m);
            s.v[i] = static_cast<float>(v);
            const double denom = std::sqrt(v) / sqrt_bc2 + options_.eps;
            const auto next = static_cast<float>(value[i] - step_size * m / denom);
            if (!std::isfinite(next)) {
                throw NumericError("non-finite value after update in parameter group '" + groups_[s.group].name + "'");
            }
            value[i] = next;
        }
    }
}

}  // namespace terse
