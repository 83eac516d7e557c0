#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fedshot/rng.hpp"
#include "fedshot/tensor/ops.hpp"
#include "fedshot/tensor/tensor.hpp"

// Central finite-difference oracle for the reverse pass. Lives entirely in
// test code and never touches the tape internals: it only perturbs leaf
// values and re-runs the forward function.

namespace fedshot::testing {

struct GradCheckReport {
  bool ok = true;
  std::string detail;
};

// make_loss must rebuild the scalar loss from the given leaves on each call.
template <typename T, typename F>
GradCheckReport check_gradients(F&& make_loss, std::vector<Tensor<T>> leaves, T h, T tol) {
  for (auto& l : leaves) l.zero_grad();
  Tensor<T> loss = make_loss();
  loss.backward();

  std::vector<std::vector<T>> analytic;
  for (auto& l : leaves)
    analytic.push_back(l.has_grad() ? l.grad()
                                    : std::vector<T>(static_cast<size_t>(l.numel()), T(0)));

  auto eval = [&]() -> T {
    NoGradGuard guard;
    return make_loss().item();
  };

  GradCheckReport report;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& values = leaves[li].raw_data();
    for (size_t ei = 0; ei < values.size(); ++ei) {
      const T orig = values[ei];
      values[ei] = orig + h;
      const T fplus = eval();
      values[ei] = orig - h;
      const T fminus = eval();
      values[ei] = orig;
      const T fd = (fplus - fminus) / (T(2) * h);
      const T an = analytic[li][ei];
      const T denom = std::max(std::max(std::abs(an), std::abs(fd)), T(1));
      if (std::abs(an - fd) > tol * denom) {
        std::ostringstream os;
        os << "leaf " << li << " elem " << ei << ": analytic " << an << " vs fd " << fd
           << " (|diff| " << std::abs(an - fd) << ", tol " << tol * denom << ")";
        report.ok = false;
        report.detail = os.str();
        return report;
      }
    }
  }
  return report;
}

// Shuffled arithmetic progression with random signs: pairwise gaps at least
// `gap` and magnitudes at least `base`, so max-selections and relu branches
// stay stable under the +-h probes.
template <typename T>
Tensor<T> spread_values(Rng& rng, Shape shape, double gap = 0.05, double base = 0.15) {
  const int64_t n = numel_of(shape);
  std::vector<T> vals(static_cast<size_t>(n));
  const double g = std::min(gap, 1.85 / std::max<int64_t>(n, 1));
  for (int64_t i = 0; i < n; ++i) vals[static_cast<size_t>(i)] = static_cast<T>(base + g * i);
  for (size_t i = vals.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.uniform_int(i));
    std::swap(vals[i - 1], vals[j]);
  }
  for (auto& v : vals)
    if (rng.uniform() < 0.5) v = -v;
  return Tensor<T>::from_vector(std::move(shape), std::move(vals));
}

template <typename T>
Tensor<T> random_uniform(Rng& rng, Shape shape, double lo, double hi) {
  const int64_t n = numel_of(shape);
  std::vector<T> vals(static_cast<size_t>(n));
  for (auto& v : vals) v = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from_vector(std::move(shape), std::move(vals));
}

}  // namespace fedshot::testing
