#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "terse/tensor.hpp"

namespace terse {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// A named set of parameters that is frozen or trained as a unit.
struct ParamGroup {
    std::string name;
    std::vector<NamedTensor> params;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. The optimizer aliases the parameter tensors it
/// was built from and only ever touches those.
class Adam {
   public:
    Adam(std::vector<ParamGroup> groups, AdamOptions options);

    // Throws NumericError naming the group if any gradient is non-finite; no
    // parameter is modified in that case.
    void step();
    void zero_grad();

    std::int64_t steps() const noexcept { return t_; }
    const AdamOptions& options() const noexcept { return options_; }
    void set_lr(double lr) noexcept { options_.lr = lr; }

   private:
    struct Slot {
        std::size_t group;
        Tensor param;
        std::vector<float> m, v;
    };
    std::vector<ParamGroup> groups_;
    std::vector<Slot> slots_;
    AdamOptions options_;
    std::int64_t t_ = 0;
};

}  // namespace terse
