#pragma once

// Test-side oracles, deliberately independent of the library's gradcheck.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "seqmask/tensor.hpp"

namespace testing {

using seqmask::Tensor;

inline Tensor random_tensor(seqmask::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool grad = true) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return Tensor(std::move(shape), std::move(v), grad);
}

// Central differences of a scalar function with respect to every entry of `t`.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, Tensor t, double h = 1e-5) {
    auto v = t.mutable_values();
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = v[i];
        v[i] = x + h;
        const double up = f();
        v[i] = x - h;
        const double down = f();
        v[i] = x;
        out[i] = (up - down) / (2 * h);
    }
    return out;
}

// The floor keeps exactly-zero gradients (e.g. attention key biases) from
// turning round-off into a large ratio.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(d) / std::max(std::sqrt(na) + std::sqrt(nb), 1e-6);
}

// Weighted sum with fixed weights so every entry matters.
inline Tensor weighted(const Tensor& t) {
    std::vector<double> w(t.numel());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 + std::sin(1.3 * static_cast<double>(i));
    return seqmask::sum(seqmask::mul(t, Tensor(t.shape(), std::move(w))));
}

// Analytic vs numeric gradient of `loss` for each input.
inline double check_inputs(const std::function<Tensor()>& loss, std::vector<Tensor> inputs, double h = 1e-5) {
    for (auto& t : inputs) t.zero_grad();
    loss().backward();
    double worst = 0;
    for (auto& t : inputs) {
        auto analytic = t.grad_or_zero();
        auto numeric = numeric_gradient([&] { return loss().item(); }, t, h);
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    return worst;
}

}  // namespace testing
