#include "terse/metrics.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "terse/error.hpp"

namespace terse {

F1Report macro_f1(std::span<const std::int32_t> preds, std::span<const std::int32_t> labels, std::int64_t num_classes) {
    if (preds.size() != labels.size()) {
        throw DataError("macro_f1: " + std::to_string(preds.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
    }
    if (num_classes < 1) throw ConfigError("macro_f1: need at least one class");
    const auto K = num_classes;
    F1Report r;
    r.confusion.assign(static_cast<std::size_t>(K * K), 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || preds[i] >= K || labels[i] < 0 || labels[i] >= K) {
            throw DataError("macro_f1: class index out of [0, " + std::to_string(K) + ") at position " +
                            std::to_string(i));
        }
        ++r.confusion[static_cast<std::size_t>(labels[i] * K + preds[i])];
    }
    r.per_class.assign(static_cast<std::size_t>(K), 0.0);
    r.included.assign(static_cast<std::size_t>(K), false);
    double sum = 0.0;
    std::int64_t counted = 0;
    for (std::int64_t k = 0; k < K; ++k) {
        std::int64_t tp = r.at(k, k), actual = 0, predicted = 0;
        for (std::int64_t j = 0; j < K; ++j) {
            actual += r.at(k, j);
            predicted += r.at(j, k);
        }
        if (actual == 0 && predicted == 0) continue;
        const double p = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
        const double rec = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
        const double f1 = p + rec > 0.0 ? 2.0 * p * rec / (p + rec) : 0.0;
        r.per_class[static_cast<std::size_t>(k)] = f1;
        r.included[static_cast<std::size_t>(k)] = true;
        sum += f1;
        ++counted;
    }
    r.macro = counted ? sum / static_cast<double>(counted) : 0.0;
    return r;
}

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

LinearProbe LinearProbe::fit(std::span<const float> features, std::int64_t dim, std::span<const std::int32_t> labels,
                             std::int64_t num_classes, const Options& options) {
    if (dim < 1 || features.size() != labels.size() * static_cast<std::size_t>(dim)) {
        throw DataError("linear probe: feature matrix does not match label count");
    }
    if (labels.empty()) throw DataError("linear probe: no training samples");
    const auto B = static_cast<std::int64_t>(labels.size());
    LinearProbe m;
    m.dim_ = dim;
    m.classes_ = num_classes;
    m.mean_.assign(static_cast<std::size_t>(dim), 0.0);
    m.inv_std_.assign(static_cast<std::size_t>(dim), 1.0);
    for (std::int64_t f = 0; f < dim; ++f) {
        double s = 0.0, sq = 0.0;
        for (std::int64_t i = 0; i < B; ++i) s += features[static_cast<std::size_t>(i * dim + f)];
        const double mu = s / static_cast<double>(B);
        for (std::int64_t i = 0; i < B; ++i) {
            const double d = features[static_cast<std::size_t>(i * dim + f)] - mu;
            sq += d * d;
        }
        m.mean_[static_cast<std::size_t>(f)] = mu;
        m.inv_std_[static_cast<std::size_t>(f)] = 1.0 / std::max(std::sqrt(sq / static_cast<double>(B)), 1e-6);
    }
    Mat X(B, dim + 1);
    for (std::int64_t i = 0; i < B; ++i) {
        for (std::int64_t f = 0; f < dim; ++f) {
            X(i, f) = (features[static_cast<std::size_t>(i * dim + f)] - m.mean_[static_cast<std::size_t>(f)]) *
                      m.inv_std_[static_cast<std::size_t>(f)];
        }
        X(i, dim) = 1.0;
    }
    Mat Y = Mat::Zero(B, num_classes);
    for (std::int64_t i = 0; i < B; ++i) {
        if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= num_classes) {
            throw DataError("linear probe: label out of range");
        }
        Y(i, labels[static_cast<std::size_t>(i)]) = 1.0;
    }
    Mat W = Mat::Zero(dim + 1, num_classes);
    for (std::int64_t it = 0; it < options.iterations; ++it) {
        Mat P = X * W;
        for (std::int64_t i = 0; i < B; ++i) {
            const double mx = P.row(i).maxCoeff();
            P.row(i) = (P.row(i).array() - mx).exp();
            P.row(i) /= P.row(i).sum();
        }
        Mat G = X.transpose() * (P - Y) / static_cast<double>(B);
        G.topRows(dim) += options.l2 * W.topRows(dim);
        W -= options.lr * G;
    }
    m.weight_.assign(W.data(), W.data() + W.size());
    return m;
}

std::vector<std::int32_t> LinearProbe::predict(std::span<const float> features) const {
    if (features.size() % static_cast<std::size_t>(dim_) != 0) throw DataError("linear probe: bad feature width");
    const auto B = static_cast<std::int64_t>(features.size()) / dim_;
    std::vector<std::int32_t> out(static_cast<std::size_t>(B));
    std::vector<double> score(static_cast<std::size_t>(classes_));
    for (std::int64_t i = 0; i < B; ++i) {
        std::fill(score.begin(), score.end(), 0.0);
        for (std::int64_t f = 0; f <= dim_; ++f) {
            const double x = f < dim_ ? (features[static_cast<std::size_t>(i * dim_ + f)] -
                                         mean_[static_cast<std::size_t>(f)]) *
                                            inv_std_[static_cast<std::size_t>(f)]
                                      : 1.0;
            for (std::int64_t k = 0; k < classes_; ++k) score[static_cast<std::size_t>(k)] += x * weight_[static_cast<std::size_t>(f * classes_ + k)];
        }
        out[static_cast<std::size_t>(i)] =
            static_cast<std::int32_t>(std::max_element(score.begin(), score.end()) - score.begin());
    }
    return out;
}

}  // namespace terse
