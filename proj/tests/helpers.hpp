#pragma once

// Shared test utilities: finite-difference gradient oracle and tolerances.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ctckd/tensor.hpp"

namespace testutil {

// Central finite difference d(forward)/d(param[idx]) at step h. forward()
// must recompute the scalar from current parameter values.
inline double fd_grad(ctckd::Tensor& param, int64_t idx,
                      const std::function<double()>& forward, double h = 1e-5) {
  double* p = param.mutable_data();
  const double orig = p[idx];
  p[idx] = orig + h;
  const double fp = forward();
  p[idx] = orig - h;
  const double fm = forward();
  p[idx] = orig;
  return (fp - fm) / (2.0 * h);
}

inline bool grad_close(double analytic, double numeric, double rel_tol = 1e-4,
                       double abs_tol = 1e-8) {
  const double scale = std::max({std::fabs(analytic), std::fabs(numeric), 1.0});
  return std::fabs(analytic - numeric) <= rel_tol * scale + abs_tol;
}

// Checks analytic gradients of `forward` w.r.t. every element of each listed
// parameter against central differences. forward() must run under its own
// tape and backward pass, returning the scalar loss value, with grads left
// populated on the parameters.
inline void check_gradients(std::vector<ctckd::Tensor> params,
                            const std::function<double()>& forward_backward,
                            const std::function<double()>& forward_only,
                            double rel_tol = 1e-4) {
  for (auto& p : params) p.zero_grad();
  forward_backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params)
    analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0));
  for (size_t pi = 0; pi < params.size(); pi++) {
    for (int64_t i = 0; i < params[pi].numel(); i++) {
      const double numeric = fd_grad(params[pi], i, forward_only);
      if (!grad_close(analytic[pi][i], numeric, rel_tol)) {
        INFO("param " << pi << " element " << i << ": analytic=" << analytic[pi][i]
                      << " numeric=" << numeric);
        REQUIRE(grad_close(analytic[pi][i], numeric, rel_tol));
      }
    }
  }
}

inline ctckd::Tensor tracked_randn(ctckd::Shape shape, std::mt19937_64& rng,
                                   double stddev = 1.0) {
  ctckd::Tensor t = ctckd::Tensor::randn(std::move(shape), rng, stddev);
  t.set_requires_grad(true);
  return t;
}

}  // namespace testutil
