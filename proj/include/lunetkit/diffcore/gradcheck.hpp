#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "lunetkit/diffcore/tape.hpp"

namespace lunetkit::diffcore {

struct GradCheckOptions {
  /// Checks at most this many elements per input (0 = all), chosen by a
  /// seeded shuffle. Large parameter tensors are sampled this way.
  std::size_t max_elements_per_input = 0;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. fn(tape, vars) must build the function from the leaves in
/// vars (one per input, same order). Returns max |g_ad - g_fd| / max(1, |g_fd|).
template <class Fn>
double check_gradients(Fn&& fn, std::vector<Tensor<double>*> inputs, double eps,
                       GradCheckOptions options = {}) {
  require(eps > 0.0, ErrorCode::InvalidArgument, "gradient check step must be positive");
  auto evaluate = [&](bool with_backward) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    vars.reserve(inputs.size());
    for (Tensor<double>* in : inputs) vars.push_back(tape.leaf(*in));
    Var<double> out = fn(tape, std::span<const Var<double>>(vars));
    require(out.value().size() == 1, ErrorCode::NotScalarLoss, "gradient check needs a scalar");
    if (with_backward) tape.backward(out);
    return out.value()[0];
  };

  std::vector<bool> saved_flags;
  for (Tensor<double>* in : inputs) {
    saved_flags.push_back(in->requires_grad());
    in->set_requires_grad(true);
    in->zero_grad();
  }
  evaluate(true);
  std::vector<std::vector<double>> analytic;
  for (Tensor<double>* in : inputs) analytic.emplace_back(in->grad().begin(), in->grad().end());

  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double>& in = *inputs[k];
    std::vector<std::size_t> indices(in.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (options.max_elements_per_input != 0 && indices.size() > options.max_elements_per_input) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_elements_per_input);
      std::sort(indices.begin(), indices.end());
    }
    for (std::size_t idx : indices) {
      const double original = in[idx];
      in[idx] = original + eps;
      const double plus = evaluate(false);
      in[idx] = original - eps;
      const double minus = evaluate(false);
      in[idx] = original;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = std::abs(analytic[k][idx] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, std::isfinite(err) ? err : INFINITY);
    }
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    inputs[k]->set_requires_grad(saved_flags[k]);
    inputs[k]->clear_grad();
  }
  return worst;
}

}  // namespace lunetkit::diffcore
