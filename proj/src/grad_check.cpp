#include "msaec/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "msaec/error.hpp"

namespace msaec {
namespace {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

double evaluate(const std::function<Tensor()>& f) {
  const Tensor y = f();
  if (y.numel() != 1) throw ContractError("grad_check: function must be scalar-valued");
  return y.item();
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = x;
  const bool had = leaf.requires_grad();
  leaf.set_requires_grad(true);
  GradCheckOptions opts;
  opts.eps = eps;
  const double err = grad_check([&] { return f(leaf); }, {leaf}, opts);
  leaf.set_requires_grad(had);
  return err;
}

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, const GradCheckOptions& opts) {
  for (auto p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor y = f();
    if (y.numel() != 1) throw ContractError("grad_check: function must be scalar-valued");
    tape.backward(y);
  }
  std::mt19937_64 rng(opts.seed);
  double worst = 0.0;
  for (auto p : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    std::vector<std::size_t> indices(p.numel());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (opts.samples_per_tensor != 0 && opts.samples_per_tensor < indices.size()) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(opts.samples_per_tensor);
    }
    auto values = p.mutable_data();
    for (std::size_t i : indices) {
      const double saved = values[i];
      values[i] = saved + opts.eps;
      const double up = evaluate(f);
      values[i] = saved - opts.eps;
      const double down = evaluate(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      worst = std::max(worst, relative_error(analytic[i], numeric));
    }
    p.zero_grad();
  }
  return worst;
}

}  // namespace msaec
