#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace terse {

struct F1Report {
    double macro = 0.0;
    std::vector<double> per_class;        // [K]; 0 for excluded classes
    std::vector<bool> included;           // false: no instances and no predictions
    std::vector<std::int64_t> confusion;  // [K, K], row = true class, column = prediction

    std::int64_t classes() const { return static_cast<std::int64_t>(per_class.size()); }
    std::int64_t at(std::int64_t truth, std::int64_t pred) const { return confusion[truth * classes() + pred]; }
};

// Per-class F1 = 2PR / (P + R) with 0/0 -> 0. The macro mean skips classes
// that have neither instances nor predictions.
F1Report macro_f1(std::span<const std::int32_t> preds, std::span<const std::int32_t> labels, std::int64_t num_classes);

// Multinomial logistic regression on standardised features.
class LinearProbe {
   public:
    struct Options {
        std::int64_t iterations = 300;
        double lr = 0.5;
        double l2 = 1e-3;
    };

    // features is row-major [B, F].
    static LinearProbe fit(std::span<const float> features, std::int64_t dim, std::span<const std::int32_t> labels,
                           std::int64_t num_classes, const Options& options);
    static LinearProbe fit(std::span<const float> features, std::int64_t dim, std::span<const std::int32_t> labels,
                           std::int64_t num_classes) {
        return fit(features, dim, labels, num_classes, Options{});
    }

    std::vector<std::int32_t> predict(std::span<const float> features) const;

   private:
    std::int64_t dim_ = 0, classes_ = 0;
    std::vector<double> mean_, inv_std_;
    std::vector<double> weight_;  // [F + 1, K], last row is the bias
};

}  // namespace terse
