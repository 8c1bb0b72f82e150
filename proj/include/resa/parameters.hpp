#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "resa/autodiff.hpp"

namespace resa {

/// Trainable array. Bias vectors are 1 x d; weight matrices are out x in.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;
  bool is_bias = false;

  Parameter() = default;
  Parameter(std::string n, Shape s, bool bias = false)
      : name(std::move(n)), shape(s), value(s.size(), 0), grad(s.size(), 0), is_bias(bias) {}

  void zero_grad() { std::fill(grad.begin(), grad.end(), Scalar{0}); }
};

/// Named, ordered collection of all trainable arrays. Iteration order is the
/// lexical order of names, which is also the flat-index order.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Shape shape, bool bias = false);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> with_prefix(const std::string& prefix);
  std::vector<Parameter*> without_prefix(const std::string& prefix);

  std::size_t count() const;
  void zero_grad();

  /// Glorot-uniform weights, zero biases, deterministic in seed.
  void initialize(std::uint64_t seed);

 private:
  std::map<std::string, Parameter> params_;
};

/// Glorot-uniform bound sqrt(6 / (fan_in + fan_out)).
Scalar glorot_bound(const Shape& shape);

/// Flattened concatenation of the parameters' gradients, in the given order.
std::vector<Scalar> flatten_grads(const std::vector<Parameter*>& params);

}  // namespace resa
