#pragma once

// Central-difference verification of analytic gradients.

#include <cmath>
#include <functional>
#include <random>

#include "ntex/tensor.hpp"

namespace ntex {

template <typename T>
using TensorFunction = std::function<Tensor<T>(const std::vector<Tensor<T>>&)>;

/// Compares backward() against central differences for every coordinate of
/// every input. Tensor-valued outputs are reduced to a scalar by a fixed random
/// projection. Returns max |analytic - numeric| / max(1, |numeric|).
template <typename T>
double finite_difference_check(const TensorFunction<T>& f, const std::vector<Tensor<T>>& inputs,
                               double eps, std::uint64_t projection_seed = 12345) {
  std::vector<Tensor<T>> probe;
  probe.reserve(inputs.size());
  for (const auto& in : inputs) probe.push_back(in.detach_copy(true));

  const Tensor<T> reference = f(probe);
  {
    const Tensor<T> again = f(probe);
    if (again.shape() != reference.shape() ||
        !std::equal(again.data().begin(), again.data().end(), reference.data().begin())) {
      throw CheckError("finite_difference_check: function is not deterministic");
    }
  }

  Buffer<T> projection(reference.numel());
  std::mt19937_64 rng(projection_seed);
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  for (auto& p : projection) p = static_cast<T>(dist(rng));

  auto objective = [&](const std::vector<Tensor<T>>& args) {
    return sum(mul_constant(f(args), projection));
  };

  backward(objective(probe));

  double worst = 0.0;
  for (auto& tensor : probe) {
    Buffer<T> analytic = tensor.has_grad()
                                  ? Buffer<T>(tensor.grad().begin(), tensor.grad().end())
                                  : Buffer<T>(tensor.numel(), T(0));
    auto values = tensor.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T original = values[i];
      values[i] = original + static_cast<T>(eps);
      const double plus = static_cast<double>(objective(probe).item());
      values[i] = original - static_cast<T>(eps);
      const double minus = static_cast<double>(objective(probe).item());
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = std::abs(static_cast<double>(analytic[i]) - numeric) /
                         std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace ntex
