#include <doctest.h>

#include <cmath>
#include <set>

#include "terse/error.hpp"
#include "terse/ops.hpp"
#include "terse/optim.hpp"
#include "terse/rng.hpp"
#include "terse/tensor.hpp"

using namespace terse;

TEST_SUITE("tensor") {

TEST_CASE("broadcast shapes follow numpy rules") {
    const Tensor a = Tensor::zeros({2, 3, 4});
    CHECK(ops::add(a, Tensor::zeros({4})).shape() == Shape{2, 3, 4});
    CHECK(ops::mul(a, Tensor::zeros({3, 1})).shape() == Shape{2, 3, 4});
    CHECK(ops::sub(Tensor::zeros({1, 4}), Tensor::zeros({5, 1})).shape() == Shape{5, 4});
    CHECK_THROWS_AS(ops::add(a, Tensor::zeros({3})), DimensionError);
}

TEST_CASE("matmul shape errors name both shapes") {
    try {
        ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
        FAIL("expected throw");
    } catch (const DimensionError& e) {
        const std::string what = e.what();
        CHECK(what.find("[2, 3]") != std::string::npos);
        CHECK(what.find("[4, 5]") != std::string::npos);
    }
}

TEST_CASE("a value used twice accumulates both gradient paths") {
    Tensor x = Tensor::from_vector({3}, {1.0f, -2.0f, 0.5f}, true);
    const Tensor y = ops::sum(ops::add(ops::mul(x, x), ops::scale(x, 3.0f)));
    y.backward();
    const auto g = x.grad();
    CHECK(g[0] == doctest::Approx(5.0));
    CHECK(g[1] == doctest::Approx(-1.0));
    CHECK(g[2] == doctest::Approx(4.0));
}

TEST_CASE("detach and no-grad stop recording") {
    Tensor x = Tensor::from_vector({2}, {1.0f, 2.0f}, true);
    const Tensor d = detach(x);
    CHECK_FALSE(d.requires_grad());
    {
        NoGradGuard guard;
        const Tensor y = ops::mul(x, x);
        CHECK_FALSE(y.requires_grad());
        CHECK(y.node()->parents.empty());
    }
    CHECK(GradMode::enabled());
    const Tensor y = ops::sum(ops::mul(x, d));
    y.backward();
    CHECK(x.grad()[0] == doctest::Approx(1.0));
    CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("clone owns an independent buffer") {
    Tensor x = Tensor::from_vector({2}, {1.0f, 2.0f});
    Tensor c = x.clone();
    c.data()[0] = 9.0f;
    CHECK(x.data()[0] == 1.0f);
    Tensor alias = x;
    alias.data()[1] = 7.0f;
    CHECK(x.data()[1] == 7.0f);
}

TEST_CASE("backward requires a scalar") {
    Tensor x = Tensor::from_vector({2}, {1.0f, 2.0f}, true);
    CHECK_THROWS(ops::mul(x, x).backward());
}

TEST_CASE("softmax rows sum to one and survive large logits") {
    const Tensor z = Tensor::from_vector({2, 3}, {1000.0f, 1001.0f, 999.0f, -5.0f, 0.0f, 5.0f});
    const Tensor p = ops::softmax(z);
    for (int r = 0; r < 2; ++r) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c) {
            CHECK(std::isfinite(p.at({r, c})));
            s += p.at({r, c});
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("maxpool routes the gradient to the first maximum on ties") {
    Tensor x = Tensor::from_vector({1, 1, 4}, {2.0f, 2.0f, 1.0f, 3.0f}, true);
    const Tensor y = ops::maxpool1d(x, 2, 2);
    CHECK(y.at({0, 0, 0}) == 2.0f);
    CHECK(y.at({0, 0, 1}) == 3.0f);
    ops::sum(y).backward();
    CHECK(x.grad()[0] == 1.0f);
    CHECK(x.grad()[1] == 0.0f);
    CHECK(x.grad()[3] == 1.0f);
}

TEST_CASE("conv1d rejects a kernel wider than the padded input") {
    CHECK_THROWS_AS(ops::conv1d(Tensor::zeros({1, 1, 3}), Tensor::zeros({1, 1, 6}), Tensor::zeros({1}), 1, 1),
                    DimensionError);
    CHECK(ops::conv1d(Tensor::zeros({2, 1, 8}), Tensor::zeros({3, 1, 8}), Tensor::zeros({3}), 1, 4).shape() ==
          Shape{2, 3, 9});
}

TEST_CASE("rsqrt_or_zero maps zero to zero with zero gradient") {
    Tensor x = Tensor::from_vector({3}, {0.0f, 4.0f, -1.0f}, true);
    const Tensor y = ops::rsqrt_or_zero(x);
    CHECK(y.data()[0] == 0.0f);
    CHECK(y.data()[1] == doctest::Approx(0.5));
    CHECK(y.data()[2] == 0.0f);
    ops::sum(y).backward();
    CHECK(x.grad()[0] == 0.0f);
    CHECK(x.grad()[2] == 0.0f);
    CHECK(x.grad()[1] == doctest::Approx(-0.0625));
}

TEST_CASE("l2 normalisation leaves a zero row at zero") {
    Tensor x = Tensor::from_vector({2, 2}, {0.0f, 0.0f, 3.0f, 4.0f}, true);
    const Tensor y = ops::l2_normalize_rows(x);
    CHECK(y.at({0, 0}) == 0.0f);
    CHECK(y.at({1, 0}) == doctest::Approx(0.6));
    ops::sum(y).backward();
    CHECK(std::isfinite(x.grad()[0]));
}

TEST_CASE("batchnorm running statistics move only in train mode") {
    ops::BatchNormState st(2);
    const Tensor g = Tensor::full({2}, 1.0f), b = Tensor::zeros({2});
    const Tensor x = Tensor::from_vector({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    ops::batchnorm1d(x, g, b, st, ops::BnMode::train_no_track);
    CHECK(st.running_mean[0] == 0.0f);
    ops::batchnorm1d(x, g, b, st, ops::BnMode::eval);
    CHECK(st.running_var[1] == 1.0f);
    ops::batchnorm1d(x, g, b, st, ops::BnMode::train);
    // channel 0 holds {1, 2, 5, 6}: mean 3.5, unbiased var 17/3
    CHECK(st.running_mean[0] == doctest::Approx(0.35));
    CHECK(st.running_var[0] == doctest::Approx(0.9 + 0.1 * 17.0 / 3.0));
    CHECK_THROWS_AS(ops::batchnorm1d(Tensor::zeros({1, 2}), g, b, st, ops::BnMode::train), DimensionError);
    CHECK_NOTHROW(ops::batchnorm1d(Tensor::zeros({1, 2}), g, b, st, ops::BnMode::eval));
}

TEST_CASE("one Adam step matches the bias-corrected update") {
    Tensor p = Tensor::from_vector({2}, {1.0f, -1.0f}, true);
    Adam opt({ParamGroup{"g", {{"p", p}}}}, AdamOptions{0.1, 0.9, 0.999, 1e-8});
    ops::sum(ops::mul(p, Tensor::from_vector({2}, {2.0f, -0.5f}))).backward();
    opt.step();
    // First step: m_hat = g, v_hat = g^2, update = lr * sign(g).
    CHECK(p.data()[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(p.data()[1] == doctest::Approx(-0.9).epsilon(1e-6));
    CHECK(opt.steps() == 1);
}

TEST_CASE("Adam refuses non-finite gradients without touching parameters") {
    Tensor p = Tensor::from_vector({2}, {1.0f, 2.0f}, true);
    Tensor q = Tensor::from_vector({1}, {3.0f}, true);
    Adam opt({ParamGroup{"ok", {{"q", q}}}, ParamGroup{"bad", {{"p", p}}}}, AdamOptions{});
    ops::sum(ops::add(ops::sum(ops::mul(p, Tensor::from_vector({2}, {NAN, 1.0f}))), q)).backward();
    try {
        opt.step();
        FAIL("expected throw");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("bad") != std::string::npos);
    }
    CHECK(p.data()[1] == 2.0f);
    CHECK(q.data()[0] == 3.0f);
}

TEST_CASE("hand-computed primitive examples") {
    const Tensor id = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
    const Tensor m = Tensor::from_vector({2, 2}, {3, 4, 5, 6});
    const Tensor p = ops::matmul(id, m);
    for (int i = 0; i < 4; ++i) CHECK(p.data()[i] == m.data()[i]);
    CHECK(ops::matmul(Tensor::from_vector({1, 2}, {1, 2}), Tensor::from_vector({2, 1}, {3, 4})).item() == 11.0f);

    const Tensor c = ops::conv1d(Tensor::from_vector({1, 1, 4}, {1, 2, 3, 4}), Tensor::from_vector({1, 1, 2}, {1, 1}),
                                 Tensor::zeros({1}), 1, 0);
    CHECK(c.shape() == Shape{1, 1, 3});
    CHECK(c.data()[0] == 3.0f);
    CHECK(c.data()[1] == 5.0f);
    CHECK(c.data()[2] == 7.0f);
    const Tensor x = Tensor::from_vector({1, 1, 3}, {-1.5f, 2.0f, 0.25f});
    const Tensor d = ops::conv1d(x, Tensor::from_vector({1, 1, 1}, {1}), Tensor::zeros({1}), 1, 0);
    for (int i = 0; i < 3; ++i) CHECK(d.data()[i] == x.data()[i]);

    const Tensor s = ops::softmax(Tensor::zeros({1, 3}));
    for (int i = 0; i < 3; ++i) CHECK(s.data()[i] == doctest::Approx(1.0 / 3.0));
    const Tensor n = ops::l2_normalize_rows(Tensor::from_vector({1, 2}, {3, 4}));
    CHECK(n.data()[0] == doctest::Approx(0.6));
    CHECK(n.data()[1] == doctest::Approx(0.8));
}

TEST_CASE("detach of a constant equals the constant") {
    const Tensor c = Tensor::from_vector({3}, {1, 2, 3});
    const Tensor d = detach(c);
    for (int i = 0; i < 3; ++i) CHECK(d.data()[i] == c.data()[i]);
    Tensor w = Tensor::from_vector({3}, {1, 1, 1}, true);
    Tensor x = Tensor::from_vector({3}, {4, 5, 6}, true);
    ops::sum(ops::mul(detach(ops::scale(x, 2.0f)), w)).backward();
    CHECK(w.has_grad());
    CHECK(w.grad()[2] == 12.0f);
    CHECK_FALSE(x.has_grad());
}

TEST_CASE("Adam with zero gradient only advances the step counter") {
    Tensor p = Tensor::from_vector({1}, {0.5f}, true);
    Adam opt({ParamGroup{"g", {{"p", p}}}}, AdamOptions{0.1});
    ops::scale(ops::sum(p), 0.0f).backward();
    opt.step();
    CHECK(p.data()[0] == 0.5f);
    CHECK(opt.steps() == 1);
}

TEST_CASE("Adam trajectory on a quadratic matches a hand-rolled trace") {
    // f(p) = (p - 3)^2, lr 0.1, defaults otherwise.
    Tensor p = Tensor::from_vector({1}, {0.0f}, true);
    Adam opt({ParamGroup{"g", {{"p", p}}}}, AdamOptions{0.1});
    double ref = 0.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        opt.zero_grad();
        const Tensor d = ops::sub(p, Tensor::scalar(3.0f));
        ops::sum(ops::mul(d, d)).backward();
        opt.step();
        const double g = 2.0 * (ref - 3.0);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
        ref -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(p.data()[0] == doctest::Approx(ref).epsilon(1e-6));
    }
    CHECK(ref > 0.29);
    CHECK(ref <= 0.3);
}

TEST_CASE("rng streams are reproducible and forks are independent of draws") {
    Rng a(42), b(42);
    for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42);
    const auto f1 = c.fork("x").next_u64();
    c.next_u64();
    CHECK(c.fork("x").next_u64() == f1);
    CHECK(Rng(42).fork("y").next_u64() != f1);
    Rng d(1);
    for (int i = 0; i < 1000; ++i) CHECK(d.below(7) < 7u);
    const auto pick = d.choose(20, 8);
    CHECK(std::set<std::size_t>(pick.begin(), pick.end()).size() == 8);
    auto perm = d.permutation(50);
    std::sort(perm.begin(), perm.end());
    for (std::size_t i = 0; i < 50; ++i) CHECK(perm[i] == i);
}

TEST_CASE("rng normal draws have unit moments") {
    Rng r(9);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        s += v;
        s2 += v * v;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

}
