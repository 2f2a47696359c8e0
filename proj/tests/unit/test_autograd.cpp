#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "melreport/grad_check.hpp"

using namespace melreport;
using testutil::scalar;

TEST_CASE("softmax of zeros is uniform")
{
    Graph<double> g(false);
    auto s = ag::softmax_rows(g.constant(Tensor<double>(1, 4)));
    for (double v : s.value().data) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one and stay finite at large magnitude")
{
    Graph<double> g(false);
    Tensor<double> x = testutil::randn(6, 9, 3, 1e4);
    auto s = ag::softmax_rows(g.constant(x)).value();
    for (std::size_t r = 0; r < s.rows; ++r) {
        double sum = 0.0;
        for (double v : s.row(r)) {
            CHECK(std::isfinite(v));
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
}

TEST_CASE("layer norm of a constant row is zero")
{
    Graph<double> g(false);
    auto y = ag::layer_norm<double>(g.constant(Tensor<double>(1, 5, 3.0)), std::nullopt, std::nullopt).value();
    for (double v : y.data) CHECK(v == 0.0);
}

TEST_CASE("causal attention: first row equals first value row")
{
    Graph<double> g(false);
    Tensor<double> x(2, 2, std::vector<double>{0.3, -1.2, 2.0, 0.7});
    auto q = g.constant(x);
    auto out = ag::attention(q, q, q, ag::AttentionConfig{2, 1, true}).value();
    CHECK(out(0, 0) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(out(0, 1) == doctest::Approx(-1.2).epsilon(1e-15));
}

TEST_CASE("backward of sum and of a quadratic form")
{
    Graph<double> g;
    auto x = g.leaf(Tensor<double>(1, 3, std::vector<double>{1, 2, 3}));
    g.backward(ag::sum(x));
    for (double v : g.grad(x).data) CHECK(v == 1.0);

    Graph<double> h;
    auto y = h.leaf(Tensor<double>(1, 2, std::vector<double>{1, 2}));
    h.backward(ag::sum(ag::mul(y, y)));
    CHECK(h.grad(y).data[0] == 2.0);
    CHECK(h.grad(y).data[1] == 4.0);
}

TEST_CASE("backward needs a scalar loss")
{
    Graph<double> g;
    auto x = g.leaf(Tensor<double>(2, 2, 1.0));
    CHECK_THROWS_AS(g.backward(x), ContractError);
}

TEST_CASE("matmul shape mismatch is a shape error")
{
    Graph<double> g(false);
    CHECK_THROWS_AS(ag::matmul(g.constant(Tensor<double>(2, 3)), g.constant(Tensor<double>(2, 3))), ShapeError);
}

TEST_CASE("attention with an all-masked query row is rejected")
{
    Graph<double> g(false);
    auto x = g.constant(testutil::randn(2, 4, 1));
    const std::vector<std::uint8_t> none{0, 0};
    CHECK_THROWS(ag::attention(x, x, x, ag::AttentionConfig{4, 2, false}, none));
}

TEST_CASE("cross entropy over padding only is a contract error")
{
    Graph<double> g(false);
    auto logits = g.constant(Tensor<double>(2, 3));
    const std::vector<std::int32_t> t{0, 1};
    const std::vector<std::uint8_t> valid{0, 0};
    CHECK_THROWS_AS(ag::cross_entropy(logits, t, valid), ContractError);
}

TEST_CASE("grad_check on a linear layer is exact")
{
    ParamStore<double> ps;
    ps.add("W", testutil::randn(3, 4, 5));
    const Tensor<double> x = testutil::randn(2, 4, 6);
    auto r = grad_check([&](auto& g, auto& p) {
        using T = typename std::remove_reference_t<decltype(p)>::value_type;
        return ag::sum(ag::linear(g.constant(x.cast<T>()), g.param(p.get("W"))));
    }, ps);
    CHECK(r.max_rel_err <= 1e-8);
    CHECK(r.passed);
}

TEST_CASE("grad_check on a softmax cross-entropy head")
{
    ParamStore<double> ps;
    ps.add("W", testutil::randn(5, 4, 7));
    ps.add("b", testutil::randn(1, 5, 8));
    const Tensor<double> x = testutil::randn(3, 4, 9);
    const std::vector<std::int32_t> targets{0, 3, 4};
    auto r = grad_check([&](auto& g, auto& p) {
        using T = typename std::remove_reference_t<decltype(p)>::value_type;
        return ag::cross_entropy(ag::linear(g.constant(x.cast<T>()), g.param(p.get("W")), std::optional{g.param(p.get("b"))}), targets);
    }, ps);
    CHECK(r.max_rel_err <= 1e-4);
}

TEST_CASE("grad_check of a constant function reports zero error")
{
    ParamStore<double> ps;
    ps.add("W", testutil::randn(2, 2, 1));
    auto r = grad_check([](auto& g, auto&) {
        using T = typename std::remove_reference_t<decltype(g)>::value_type;
        return g.constant(Tensor<T>(1, 1, T{2}));
    }, ps);
    CHECK(r.max_rel_err == 0.0);
    CHECK(r.passed);
}

TEST_CASE("grad_check on a tiny attention block, 64-bit numeric oracle")
{
    ParamStore<double> ps;
    ps.add("Wq", testutil::randn(4, 4, 11, 0.5));
    ps.add("Wk", testutil::randn(4, 4, 12, 0.5));
    ps.add("Wv", testutil::randn(4, 4, 13, 0.5));
    const Tensor<double> x = testutil::randn(3, 4, 14);
    const Tensor<double> w = testutil::randn(3, 4, 15);
    for (auto prec : {Precision::f32, Precision::f64}) {
        GradCheckOptions o;
        o.precision = prec;
        auto r = grad_check([&](auto& g, auto& p) {
            using T = typename std::remove_reference_t<decltype(p)>::value_type;
            auto xi = g.constant(x.cast<T>());
            auto out = ag::attention(ag::linear(xi, g.param(p.get("Wq"))), ag::linear(xi, g.param(p.get("Wk"))),
                                     ag::linear(xi, g.param(p.get("Wv"))), ag::AttentionConfig{4, 2, true});
            return ag::sum(ag::mul(out, g.constant(w.cast<T>())));
        }, ps, o);
        CHECK(r.passed);
        CHECK(r.max_rel_err <= (prec == Precision::f32 ? 1e-3 : 1e-6));
    }
}
