#include <doctest.h>

#include <cmath>
#include <random>

#include "seqmask/errors.hpp"
#include "seqmask/tensor.hpp"
#include "support.hpp"

using namespace seqmask;
using testing::check_inputs;
using testing::random_tensor;
using testing::weighted;

TEST_CASE("softmax of equal logits is uniform") {
    auto p = softmax(Tensor::vector({0.0, 0.0}));
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));
}

TEST_CASE("product rule on scalars") {
    auto x = Tensor::vector({2.0}, true);
    auto y = Tensor::vector({3.0}, true);
    sum(mul(x, y)).backward();
    CHECK(x.grad()[0] == 3.0);
    CHECK(y.grad()[0] == 2.0);
}

TEST_CASE("matmul 2x3 by 3x2 against central differences") {
    std::mt19937_64 rng(11);
    auto a = random_tensor({2, 3}, rng);
    auto b = random_tensor({3, 2}, rng);
    CHECK(check_inputs([&] { return weighted(matmul(a, b)); }, {a, b}) < 1e-6);
}

TEST_CASE("matmul forward by hand") {
    auto a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    auto b = Tensor::matrix(2, 1, {5, 6});
    auto c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c[0] == 17.0);
    CHECK(c[1] == 39.0);
}

TEST_CASE("shape mismatches raise dimension errors") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
    CHECK_THROWS_AS(add(a, Tensor::zeros({3, 2})), DimensionError);
    CHECK_THROWS_AS(concat(a, Tensor::zeros({3, 1})), DimensionError);
}

TEST_CASE("randomized elementwise and reduction gradients") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> dim(1, 5);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t r = dim(rng), c = dim(rng);
        auto a = random_tensor({r, c}, rng);
        auto b = random_tensor({r, c}, rng);
        auto pos = random_tensor({r, c}, rng, 0.5, 2.0);
        auto row = random_tensor({c}, rng);
        double worst = 0;
        worst = std::max(worst, check_inputs([&] { return weighted(mul(tanh(a), sigmoid(b))); }, {a, b}));
        worst = std::max(worst, check_inputs([&] { return weighted(add(exp(a), log(pos))); }, {a, pos}));
        worst = std::max(worst, check_inputs([&] { return weighted(softmax(a)); }, {a}));
        worst = std::max(worst, check_inputs([&] { return weighted(mul_row(a, row)); }, {a, row}));
        worst = std::max(worst, check_inputs([&] { return weighted(mean_rows(concat(a, b))); }, {a, b}));
        worst = std::max(worst, check_inputs([&] { return weighted(row_norms(pos)); }, {pos}));
        REQUIRE(worst < 1e-4);
    }
}

TEST_CASE("relu passes gradient only where positive") {
    auto x = Tensor::vector({-1.0, 2.0, 0.5}, true);
    sum(relu(x)).backward();
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("cross entropy matches hand value and gradient") {
    auto logits = Tensor::matrix(1, 3, {0.0, std::log(2.0), 0.0}, true);
    const int label[] = {1};
    auto loss = cross_entropy(logits, label);
    CHECK(loss.item() == doctest::Approx(std::log(2.0)));
    loss.backward();
    CHECK(logits.grad()[0] == doctest::Approx(0.25));
    CHECK(logits.grad()[1] == doctest::Approx(-0.5));
    CHECK(logits.grad()[2] == doctest::Approx(0.25));
}

TEST_CASE("backward of a sum equals the sum of backwards") {
    std::mt19937_64 rng(3);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    auto f = [&] { return weighted(tanh(matmul(a, b))); };
    auto g = [&] { return sum(exp(scale(a, 0.3))); };

    f().backward();
    auto fa = a.grad_or_zero();
    a.zero_grad();
    b.zero_grad();
    g().backward();
    auto ga = a.grad_or_zero();
    a.zero_grad();
    b.zero_grad();
    add(f(), g()).backward();
    auto both = a.grad_or_zero();
    for (std::size_t i = 0; i < both.size(); ++i) CHECK(std::abs(both[i] - (fa[i] + ga[i])) < 1e-12);
}

TEST_CASE("unreachable leaves keep no gradient") {
    auto a = Tensor::vector({1.0, 2.0}, true);
    auto unused = Tensor::vector({3.0}, true);
    sum(a).backward();
    CHECK(a.has_grad());
    CHECK_FALSE(unused.has_grad());
}

TEST_CASE("forward is deterministic") {
    std::mt19937_64 r1(9), r2(9);
    auto a1 = random_tensor({4, 4}, r1);
    auto a2 = random_tensor({4, 4}, r2);
    auto y1 = softmax(matmul(a1, a1));
    auto y2 = softmax(matmul(a2, a2));
    for (std::size_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("blocked ops against central differences") {
    std::mt19937_64 rng(21);
    auto q = random_tensor({6, 4}, rng);
    auto k = random_tensor({6, 4}, rng);
    auto v = random_tensor({6, 4}, rng);
    auto m = random_tensor({4}, rng);
    auto w = random_tensor({6}, rng);
    CHECK(check_inputs([&] { return weighted(block_attention(q, k, v, 3, 2)); }, {q, k, v}) < 1e-6);
    CHECK(check_inputs([&] { return weighted(cosine_rows(q, m)); }, {q, m}) < 1e-6);
    CHECK(check_inputs([&] { return weighted(block_weighted_sum(block_softmax(w, 3), v, 3)); }, {w, v}) < 1e-6);
}

TEST_CASE("straight-through uses hard values forward and soft gradient backward") {
    auto soft = Tensor::vector({0.2, 0.8}, true);
    auto st = straight_through({0.0, 1.0}, soft);
    CHECK(st[0] == 0.0);
    CHECK(st[1] == 1.0);
    sum(scale(st, 2.0)).backward();
    CHECK(soft.grad()[0] == 2.0);
    CHECK(soft.grad()[1] == 2.0);
}
