#pragma once

#include <functional>
#include <string>
#include <vector>

#include "resa/autodiff.hpp"
#include "resa/parameters.hpp"

namespace resa {

/// Central differences (f(x + eps) - f(x - eps)) / 2 eps for every entry of
/// every parameter. Throws if f returns a non-finite value.
std::vector<Scalar> finite_difference_gradient(const std::vector<Parameter*>& params,
                                               const std::function<Scalar()>& f, double eps = 1e-5);

/// |a - b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor);

struct GradcheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  double floor = 1e-5;  // gradients below this are compared absolutely
  std::size_t instances = 3;  // random instances per case
  std::uint64_t seed = 1;
};

struct GradcheckResult {
  std::string name;
  std::size_t coordinates = 0;
  double max_error = 0;
  bool passed = false;
};

using LossBuilder = std::function<Tensor(Graph&)>;

/// Compares reverse-mode gradients of build(g) with finite differences for
/// every entry of params.
GradcheckResult check_gradient(const std::string& name, const std::vector<Parameter*>& params,
                               const LossBuilder& build, const GradcheckOptions& options = {});

/// Randomized checks of every parameterized operation (n <= 5, d <= 6).
std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace resa
