#include <doctest.h>

#include <cmath>

#include "oracle/gradcheck.hpp"
#include "terse/error.hpp"
#include "terse/losses.hpp"

using namespace terse;

namespace {

// Logits whose softmax is one-hot to float precision.
Tensor one_hot_logits(const std::vector<int>& cls, std::int64_t K) {
    const auto B = static_cast<std::int64_t>(cls.size());
    Tensor t = Tensor::full({B, K}, -60.0f);
    for (std::int64_t i = 0; i < B; ++i) t.data()[i * K + cls[i]] = 60.0f;
    return t;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("label smoothing targets for K = 6, eta = 0.1") {
    // With logits log(target), the cross entropy equals the target entropy;
    // one class at 0.9167 and five at 0.0167.
    const double hi = 0.9 + 0.1 / 6, lo = 0.1 / 6;
    CHECK(hi == doctest::Approx(0.9167).epsilon(1e-4));
    CHECK(lo == doctest::Approx(0.0167).epsilon(1e-2));
    std::vector<float> z(6, static_cast<float>(std::log(lo)));
    z[2] = static_cast<float>(std::log(hi));
    const std::vector<std::int32_t> y{2};
    const double h = -(hi * std::log(hi) + 5 * lo * std::log(lo));
    CHECK(cls_loss(Tensor::from_vector({1, 6}, z), y, 0.1f).item() == doctest::Approx(h).epsilon(1e-5));
}

TEST_CASE("uniform logits with eta = 0 cost ln K") {
    const std::vector<std::int32_t> y{0, 3, 5};
    CHECK(cls_loss(Tensor::zeros({3, 6}), y, 0.0f).item() == doctest::Approx(std::log(6.0)).epsilon(1e-6));
}

TEST_CASE("cross entropy matches the float64 reference on random logits") {
    Rng rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const auto in = oracle::random_input({7, 5}, rng, -3, 3);
        std::vector<int> y(7);
        for (auto& v : y) v = static_cast<int>(rng.below(5));
        const std::vector<std::int32_t> y32(y.begin(), y.end());
        const double ref = oracle::cls_loss(oracle::Arr({7, 5}, std::vector<double>(in.values.begin(), in.values.end())), y,
                                            static_cast<double>(0.1f));
        CHECK(std::abs(cls_loss(Tensor::from_vector({7, 5}, in.values), y32, 0.1f).item() - ref) < 1e-5);
    }
}

TEST_CASE("cross entropy argument errors") {
    const std::vector<std::int32_t> bad{0, 7};
    CHECK_THROWS_AS(cls_loss(Tensor::zeros({2, 3}), bad, 0.1f), DataError);
    const std::vector<std::int32_t> short_labels{0};
    CHECK_THROWS_AS(cls_loss(Tensor::zeros({2, 3}), short_labels, 0.1f), DimensionError);
    const std::vector<std::int32_t> ok{0, 1};
    CHECK_THROWS_AS(cls_loss(Tensor::zeros({2, 3}), ok, 1.0f), ConfigError);
}

TEST_CASE("reconstruction losses use the per-sample squared norm") {
    const Tensor h = Tensor::zeros({2, 9, 256});
    CHECK(restoration_loss(h, h).item() == 0.0f);
    CHECK(restoration_loss(h, Tensor::full({2, 9, 256}, 1.0f)).item() == doctest::Approx(2304.0));
    CHECK(restoration_loss(h, Tensor::full({2, 9, 256}, 1.0f), Reduction::per_element).item() == doctest::Approx(1.0));
    const Tensor a = Tensor::full({3, 9, 9}, 1.0f);
    CHECK(rewiring_loss(a, a).item() == 0.0f);
    CHECK(rewiring_loss(a, Tensor::zeros({3, 9, 9})).item() == doctest::Approx(81.0));
    CHECK_THROWS_AS(rewiring_loss(a, Tensor::zeros({3, 9, 8})), DimensionError);
}

TEST_CASE("reconstruction losses match the float64 reference") {
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const auto a = oracle::random_input({4, 9, 16}, rng), b = oracle::random_input({4, 9, 16}, rng);
        const double ref = oracle::squared_error(oracle::Arr(a.shape, {a.values.begin(), a.values.end()}),
                                                 oracle::Arr(b.shape, {b.values.begin(), b.values.end()}));
        const double got =
            restoration_loss(Tensor::from_vector(a.shape, a.values), Tensor::from_vector(b.shape, b.values)).item();
        CHECK(std::abs(got - ref) / ref < 1e-4);
    }
}

TEST_CASE("information maximisation anchors") {
    for (std::int64_t K : {2, 4, 6}) {
        const double lnk = std::log(static_cast<double>(K));
        const ImLoss uniform = im_loss(Tensor::zeros({5, K}));
        CHECK(std::abs(uniform.total.item()) < 1e-5);
        CHECK(uniform.entropy.item() == doctest::Approx(lnk).epsilon(1e-5));
        CHECK(uniform.diversity.item() == doctest::Approx(-lnk).epsilon(1e-5));

        std::vector<int> each(static_cast<std::size_t>(K));
        for (std::int64_t k = 0; k < K; ++k) each[k] = static_cast<int>(k);
        const ImLoss ideal = im_loss(one_hot_logits(each, K));
        CHECK(std::abs(ideal.total.item() + lnk) < 1e-5);
        CHECK(std::abs(ideal.entropy.item()) < 1e-5);

        const ImLoss collapsed = im_loss(one_hot_logits(std::vector<int>(5, 1), K));
        CHECK(std::abs(collapsed.total.item()) < 1e-5);
        CHECK(std::abs(collapsed.diversity.item()) < 1e-5);
    }
}

TEST_CASE("composites add their terms") {
    const ImLoss im{Tensor::scalar(0.5f), Tensor::scalar(0.7f), Tensor::scalar(-0.2f)};
    const auto c = target_composite(im, Tensor::scalar(0.2f), Tensor::scalar(0.3f), 1.0f, 1.0f);
    CHECK(c.total.item() == doctest::Approx(1.0));
    CHECK(c.report.components.at("tr") == doctest::Approx(0.2));
    CHECK(c.report.components.at("im_ent") == doctest::Approx(0.7));
    const auto zero = target_composite(im, Tensor::scalar(0.2f), Tensor::scalar(0.3f), 0.0f, 0.0f);
    CHECK(zero.total.item() == doctest::Approx(0.5));
    const auto no_aux = target_composite(im, Tensor{}, Tensor{}, 0.5f, 0.5f);
    CHECK(no_aux.total.item() == doctest::Approx(0.5));
    CHECK(no_aux.report.components.count("tr") == 0);
    CHECK_THROWS_AS(target_composite(im, Tensor{}, Tensor{}, -1.0f, 0.0f), ConfigError);

    const auto s = source_composite(Tensor::scalar(1.0f), Tensor::scalar(2.0f), Tensor{});
    CHECK(s.total.item() == doctest::Approx(3.0));
    CHECK(source_composite(Tensor::scalar(1.0f), Tensor{}, Tensor{}, 0.0f).total.item() == 0.0f);
    CHECK_THROWS_AS(source_composite(Tensor{}, Tensor{}, Tensor{}), ConfigError);
}

}
