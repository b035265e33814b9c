#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "msaec/tensor.hpp"

namespace msaec {

// Maximum over checked elements of |analytic - numeric| /
// max(|analytic|, |numeric|, 1e-12), numeric from central differences.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-5);

struct GradCheckOptions {
  double eps = 1e-5;
  // Elements sampled per tensor; 0 checks every element.
  std::size_t samples_per_tensor = 0;
  std::uint64_t seed = 0;
};

// Checks d f() / d p for every tensor p in `params`. `f` must rebuild its
// computation from the current parameter values on every call.
double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                  const GradCheckOptions& opts = {});

}  // namespace msaec
