#include <doctest.h>

#include <cmath>
#include <random>

#include "seqmask/errors.hpp"
#include "seqmask/mask.hpp"
#include "seqmask/optim.hpp"
#include "support.hpp"

using namespace seqmask;

namespace {

MaskState make_state(std::vector<double> r, std::vector<double> s) {
    MaskState st;
    st.r = Tensor::vector(std::move(r), true);
    st.s = Tensor::vector(std::move(s), true);
    return st;
}

// Independent reading of the surrogate rule, written out from the piecewise definition.
double reference_slope(double t) {
    if (t >= -0.4 && t <= 0.4) return 2.0 - 4.0 * std::abs(t);
    if (t >= -1.0 && t <= 1.0) return 0.4;
    return 0.0;
}

}  // namespace

TEST_CASE("unit step") {
    CHECK(unit_step(-0.3) == 0);
    CHECK(unit_step(0.0) == 1);
    CHECK(unit_step(2.7) == 1);
}

TEST_CASE("surrogate derivative table") {
    CHECK(surrogate_step_grad(0.0) == 2.0);
    CHECK(surrogate_step_grad(0.7) == doctest::Approx(0.4));
    CHECK(surrogate_step_grad(1.5) == 0.0);
    CHECK(surrogate_step_grad(0.4) == doctest::Approx(0.4));
    CHECK(surrogate_step_grad(-0.1) == doctest::Approx(1.6));
    CHECK(surrogate_step_grad(-1.0) == doctest::Approx(0.4));
}

TEST_CASE("apply_mask by hand") {
    auto st = make_state({0.5, -0.2}, {0.3, 0.3});
    auto out = apply_mask(Tensor::matrix(1, 2, {2.0, 3.0}), st);
    CHECK(out.pattern == std::vector<std::uint8_t>{1, 0});
    CHECK(out.m[0] == 0.5);
    CHECK(out.m[1] == 0.0);
    CHECK(out.x_c[0] == 1.0);
    CHECK(out.x_c[1] == 0.0);
    CHECK(out.retained_fraction == 0.5);
    CHECK(out.support == std::vector<std::size_t>{0});
}

TEST_CASE("very negative thresholds keep every feature") {
    auto st = make_state({0.4, -0.1, 0.0}, {-10, -10, -10});
    auto x = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    auto out = apply_mask(x, st);
    for (std::size_t i = 0; i < 6; ++i) CHECK(out.x_c[i] == x[i] * st.r[i % 3]);
}

TEST_CASE("exactly at threshold the feature is retained") {
    auto st = make_state({0.25, -0.25}, {0.25, 0.25});
    CHECK(retained_fraction(st) == 1.0);
}

TEST_CASE("mask gradient matches a hand-built surrogate reference") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-1.2, 1.2);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t d = 5, tokens = 3;
        std::vector<double> r(d), s(d), x(tokens * d), w(tokens * d);
        for (auto& v : r) v = u(rng);
        for (auto& v : s) v = 0.5 * u(rng);
        for (auto& v : x) v = u(rng);
        for (auto& v : w) v = u(rng);
        r[0] = 0.0;
        auto st = make_state(r, s);
        auto xt = Tensor::matrix(tokens, d, x, true);
        sum(mul(apply_mask(xt, st).x_c, Tensor::matrix(tokens, d, w))).backward();

        for (std::size_t i = 0; i < d; ++i) {
            const double t = std::abs(r[i]) - s[i];
            const double p = t >= 0 ? 1.0 : 0.0;
            const double sgn = r[i] > 0 ? 1.0 : (r[i] < 0 ? -1.0 : 0.0);
            double dm = 0;
            for (std::size_t j = 0; j < tokens; ++j) dm += x[j * d + i] * w[j * d + i];
            const double want_r = dm * (p + r[i] * reference_slope(t) * sgn);
            const double want_s = -dm * r[i] * reference_slope(t);
            CHECK(std::abs(st.r.grad()[i] - want_r) < 1e-12);
            CHECK(std::abs(st.s.grad()[i] - want_s) < 1e-12);
            for (std::size_t j = 0; j < tokens; ++j) {
                CHECK(std::abs(xt.grad()[j * d + i] - w[j * d + i] * r[i] * p) < 1e-12);
            }
        }
    }
}

TEST_CASE("masked coordinates pass no gradient to x") {
    auto st = make_state({0.5, 0.1}, {0.3, 0.3});
    auto x = Tensor::matrix(2, 2, {1, 2, 3, 4}, true);
    sum(apply_mask(x, st).x_c).backward();
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[3] == 0.0);
    CHECK(x.grad()[0] == 0.5);
}

TEST_CASE("apply_mask rejects a width mismatch") {
    auto st = make_state({0.5, 0.1}, {0.3, 0.3});
    CHECK_THROWS_AS(apply_mask(Tensor::zeros({2, 3}), st), DimensionError);
}

TEST_CASE("sparse loss values and gradient") {
    CHECK(sparse_loss(make_state({1, 1, 1}, {0, 0, 0})).item() == doctest::Approx(3.0));
    CHECK(sparse_loss(make_state({1}, {std::log(2.0)})).item() == doctest::Approx(0.5));
    auto st = make_state({1}, {0});
    sparse_loss(st).backward();
    CHECK(st.s.grad()[0] == -1.0);
}

TEST_CASE("one step on the sparse loss raises every threshold") {
    Rng rng(4);
    auto st = MaskState::init(16, Modality::text, rng);
    std::vector<double> before(st.s.values().begin(), st.s.values().end());
    Adam opt(st.params(), AdamConfig{.lr = 0.01, .warmup_epochs = 0});
    opt.zero_grad();
    sparse_loss(st).backward();
    opt.step(0);
    for (std::size_t i = 0; i < 16; ++i) CHECK(st.s[i] > before[i]);
}

TEST_CASE("token fusion of one token is the token") {
    auto x = Tensor::matrix(1, 3, {0.2, -1.0, 4.0});
    auto f = token_fuse(x, Tensor::vector({1.0, 0.5, 0.0}));
    for (std::size_t i = 0; i < 3; ++i) CHECK(f[i] == doctest::Approx(x[i]));
}

TEST_CASE("token fusion of identical tokens") {
    auto x = Tensor::matrix(2, 2, {0.3, 0.7, 0.3, 0.7});
    auto f = token_fuse(x, Tensor::vector({1.0, -2.0}));
    CHECK(f[0] == doctest::Approx(0.3));
    CHECK(f[1] == doctest::Approx(0.7));
}

TEST_CASE("token fusion weights follow exp of cosine") {
    // token A orthogonal to m, token B parallel to m
    auto x = Tensor::matrix(2, 2, {0.0, 1.0, 1.0, 0.0});
    auto f = token_fuse(x, Tensor::vector({1.0, 0.0}));
    const double wa = f[1], wb = f[0];
    CHECK(wa + wb == doctest::Approx(1.0));
    CHECK(wb / wa == doctest::Approx(std::exp(1.0)));
}

TEST_CASE("token fusion treats zero vectors as similarity zero") {
    auto x = Tensor::matrix(2, 2, {0.0, 0.0, 1.0, 1.0});
    auto f = token_fuse(x, Tensor::vector({0.0, 0.0}));
    CHECK(f[0] == doctest::Approx(0.5));
    CHECK(f[1] == doctest::Approx(0.5));
    CHECK_THROWS_AS(token_fuse(Tensor::zeros({0, 2}), Tensor::vector({1.0, 0.0}), 0), InputError);
}

TEST_CASE("retained fraction counts") {
    CHECK(retained_fraction(make_state({0.5, 0.1}, {-1, -1})) == 1.0);
    CHECK(retained_fraction(make_state({0.5, 0.1}, {1, 1})) == 0.0);
    CHECK(retained_fraction(make_state({0.5, 0.1}, {0.3, 0.3})) == 0.5);
}

TEST_CASE("mask init ranges") {
    Rng rng(2);
    auto st = MaskState::init(100, Modality::video, rng);
    for (std::size_t i = 0; i < 100; ++i) {
        CHECK(std::abs(st.r[i]) <= 0.5);
        CHECK(st.s[i] == 0.05);
    }
    CHECK(to_string(st.modality) == "video");
    CHECK_THROWS_AS(modality_from_string("audio"), ConfigError);
}
