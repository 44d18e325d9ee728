#pragma once

// Shared test oracles: triple-loop matmul reference and a central
// finite-difference gradient checker. Both stay independent of the
// implementation paths they verify.

#include <functional>
#include <random>
#include <vector>

#include <doctest.h>

#include "opamp/tensor.hpp"

namespace testutil {

// Independent reference: plain triple loop over flat row-major buffers.
inline std::vector<double> matmul_reference(const std::vector<double>& a,
                                            const std::vector<double>& b, int m, int k, int n) {
    std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int p = 0; p < k; ++p)
                c[static_cast<std::size_t>(i) * n + j] +=
                    a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * n + j];
    return c;
}

// Central finite differences against analytic gradients. `make_loss`
// must rebuild the graph from the leaves' current data on every call.
inline void check_gradients(std::vector<opamp::Tensor<double>> leaves,
                            const std::function<opamp::Tensor<double>()>& make_loss,
                            double tol = 1e-4, double step = 1e-4) {
    for (auto& l : leaves) l.zero_grad();
    auto loss = make_loss();
    opamp::backward(loss);
    for (auto& leaf : leaves) {
        REQUIRE(leaf.has_grad());
        for (std::size_t i = 0; i < leaf.size(); ++i) {
            const double orig = leaf.data()[i];
            leaf.data()[i] = orig + step;
            const double up = make_loss().item();
            leaf.data()[i] = orig - step;
            const double down = make_loss().item();
            leaf.data()[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double analytic = leaf.grad()[i];
            const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
            INFO("element ", i, ": analytic ", analytic, " numeric ", numeric);
            CHECK(std::abs(numeric - analytic) / denom <= tol);
        }
    }
}

template <typename S>
opamp::Tensor<S> random_tensor(std::vector<int> shape, std::mt19937_64& rng,
                               bool requires_grad = false, double scale = 1.0) {
    return opamp::Tensor<S>::uniform(std::move(shape), static_cast<S>(-scale),
                                     static_cast<S>(scale), rng, requires_grad);
}

}  // namespace testutil
