#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "eduseg/autodiff.hpp"
#include "fixtures.hpp"

namespace eduseg::testing {

using Build = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

inline double relative_error(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Compares backward() against central differences of sum(out * C) for a fixed
// random C, perturbing every element of every input.
inline void expect_gradients_match(const std::vector<Tensor<double>>& inputs, const Build& build,
                                   double step = 1e-5, double tol = 1e-4) {
  std::mt19937_64 rng(99);
  Tensor<double> weights;
  auto loss_of = [&](const std::vector<Tensor<double>>& xs, Gradients<double>* grads) {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (std::size_t i = 0; i < xs.size(); ++i) vars.push_back(g.param(xs[i], i));
    Var<double> out = build(g, vars);
    if (weights.empty()) weights = random_tensor<double>(out.shape(), rng, -1.0, 1.0);
    Var<double> loss = ad::sum(ad::mul_const(out, weights));
    if (grads) *grads = g.backward(loss);
    return loss.value().item();
  };
  Gradients<double> analytic;
  loss_of(inputs, &analytic);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    ASSERT_TRUE(analytic.contains(i)) << "input " << i;
    for (std::size_t e = 0; e < inputs[i].size(); ++e) {
      auto plus = inputs;
      auto minus = inputs;
      plus[i][e] += step;
      minus[i][e] -= step;
      const double fd = (loss_of(plus, nullptr) - loss_of(minus, nullptr)) / (2 * step);
      const double a = analytic.at(i)[e];
      EXPECT_LT(relative_error(a, fd), tol) << "input " << i << " element " << e << ": analytic " << a
                                             << " vs numeric " << fd;
    }
  }
}

}  // namespace eduseg::testing
