#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "melreport/losses.hpp"

using namespace melreport;
using testutil::scalar;

namespace {

// Direct double-loop evaluation of the symmetric InfoNCE objective.
double contrastive_oracle(const Tensor<double>& x, const Tensor<double>& y, double tau)
{
    const std::size_t n = x.rows, d = x.cols;
    auto norm = [d](const Tensor<double>& m, std::size_t i) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += m(i, c) * m(i, c);
        return std::sqrt(s);
    };
    std::vector<double> s(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += x(i, c) * y(j, c);
            s[i * n + j] = dot / (norm(x, i) * norm(y, j)) / tau;
        }
    double i2t = 0.0, t2i = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double zr = 0.0, zc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            zr += std::exp(s[i * n + j]);
            zc += std::exp(s[j * n + i]);
        }
        i2t += std::log(zr) - s[i * n + i];
        t2i += std::log(zc) - s[i * n + i];
    }
    return (i2t + t2i) / static_cast<double>(n);
}

double con(const Tensor<double>& x, const Tensor<double>& y, double tau)
{
    Graph<double> g(false);
    return scalar(contrastive_loss(g.constant(x), g.constant(y), tau));
}

}  // namespace

TEST_CASE("identical embeddings give 2 ln N for any temperature")
{
    Tensor<double> e(4, 3);
    for (std::size_t i = 0; i < 4; ++i) e(i, 1) = 1.0;
    for (double tau : {0.07, 0.5, 1.0}) CHECK(std::abs(con(e, e, tau) - 2.0 * std::log(4.0)) <= 1e-12);
}

TEST_CASE("orthonormal pairs at unit temperature")
{
    Tensor<double> e(2, 2, std::vector<double>{1, 0, 0, 1});
    const double expected = 2.0 * std::log(1.0 + std::exp(-1.0));
    CHECK(std::abs(expected - 0.62652) < 1e-5);
    CHECK(std::abs(con(e, e, 1.0) - expected) <= 1e-12);
    CHECK(con(e, e, 0.5) < con(e, e, 1.0));
}

TEST_CASE("contrastive loss matches the direct oracle, is symmetric and scale invariant")
{
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> scale(0.1, 10.0);
    for (std::uint64_t t = 0; t < 30; ++t) {
        const Tensor<double> x = testutil::randn(5, 6, 100 + t), y = testutil::randn(5, 6, 200 + t);
        const double base = con(x, y, 0.3);
        CHECK(std::abs(base - contrastive_oracle(x, y, 0.3)) <= 1e-10);
        CHECK(std::abs(base - con(y, x, 0.3)) <= 1e-10);
        Tensor<double> xs = x;
        const double c = scale(rng);
        for (double& v : xs.data) v *= c;
        CHECK(std::abs(base - con(xs, y, 0.3)) <= 1e-10);
    }
}

TEST_CASE("single pair batch has zero contrastive loss")
{
    CHECK(con(testutil::randn(1, 4, 1), testutil::randn(1, 4, 2), 0.07) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("zero-norm embedding is rejected")
{
    CHECK_THROWS_AS(con(Tensor<double>(2, 3), testutil::randn(2, 3, 1), 1.0), ContractError);
}

TEST_CASE("learned temperature is clamped at the minimum and then receives no gradient")
{
    Graph<double> g;
    auto lit = g.leaf(Tensor<double>(1, 1, std::log(1.0 / 0.001)));
    const Tensor<double> x = testutil::randn(3, 4, 5), y = testutil::randn(3, 4, 6);
    auto loss = contrastive_loss(g.constant(x), g.constant(y), lit);
    CHECK(std::abs(scalar(loss) - contrastive_oracle(x, y, kMinTemperature)) <= 1e-10);
    g.backward(loss);
    CHECK(g.grad(lit).data[0] == 0.0);
}

TEST_CASE("captioning loss on uniform logits is ln V")
{
    Graph<double> g(false);
    std::vector<CaptionItem<double>> items;
    items.push_back({g.constant(Tensor<double>(3, 16)), {0, 7, 15}, {}});
    items.push_back({g.constant(Tensor<double>(2, 16)), {4, 2}, {}});
    CHECK(std::abs(scalar(captioning_loss(items)) - std::log(16.0)) <= 1e-12);
}

TEST_CASE("captioning loss of confident correct logits is near zero")
{
    Graph<double> g(false);
    Tensor<double> l(2, 5);
    l(0, 3) = 100.0;
    l(1, 1) = 100.0;
    std::vector<CaptionItem<double>> items{{g.constant(l), {3, 1}, {}}};
    CHECK(scalar(captioning_loss(items)) < 1e-6);
}

TEST_CASE("captioning loss on a 2-step, 3-word example")
{
    Graph<double> g(false);
    std::vector<CaptionItem<double>> items{{g.constant(Tensor<double>(2, 3, std::vector<double>{1, 0, 0, 0, 2, 0})), {0, 1}, {}}};
    const double e = std::exp(1.0);
    const double expected = -0.5 * (std::log(e / (e + 2.0)) + std::log(e * e / (e * e + 2.0)));
    CHECK(std::abs(expected - 0.3954947400769678) < 1e-12);
    CHECK(std::abs(scalar(captioning_loss(items)) - expected) <= 1e-12);
}

TEST_CASE("captioning loss averages per sequence, then over the batch")
{
    Graph<double> g(false);
    Tensor<double> a(1, 2, std::vector<double>{0.0, std::log(3.0)});  // p(target 1) = 3/4
    Tensor<double> b(3, 2);                                            // p = 1/2 everywhere
    std::vector<CaptionItem<double>> items{{g.constant(a), {1}, {}}, {g.constant(b), {0, 1, 0}, {}}};
    const double expected = 0.5 * (-std::log(0.75) + std::log(2.0));
    CHECK(std::abs(scalar(captioning_loss(items)) - expected) <= 1e-12);
}

TEST_CASE("total loss weighting")
{
    CHECK(total_loss(1.0, 0.0) == 1.0);
    CHECK(total_loss(0.0, 1.0) == 2.0);
    CHECK(total_loss(0.5, 0.25) == 1.0);
}
