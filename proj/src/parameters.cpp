#include "resa/parameters.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "resa/rng.hpp"

namespace resa {

Parameter& ParameterSet::add(const std::string& name, Shape shape, bool bias) {
  auto [it, inserted] = params_.try_emplace(name, name, shape, bias);
  if (!inserted) throw std::invalid_argument("duplicate parameter " + name);
  return it->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  for (auto& [_, p] : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  for (const auto& [_, p] : params_) out.push_back(&p);
  return out;
}

std::vector<Parameter*> ParameterSet::with_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& [name, p] : params_)
    if (name.rfind(prefix, 0) == 0) out.push_back(&p);
  return out;
}

std::vector<Parameter*> ParameterSet::without_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& [name, p] : params_)
    if (name.rfind(prefix, 0) != 0) out.push_back(&p);
  return out;
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [_, p] : params_) p.zero_grad();
}

Scalar glorot_bound(const Shape& shape) {
  return static_cast<Scalar>(std::sqrt(6.0 / static_cast<double>(shape.rows + shape.cols)));
}

void ParameterSet::initialize(std::uint64_t seed) {
  for (auto& [name, p] : params_) {
    if (p.is_bias) {
      std::fill(p.value.begin(), p.value.end(), Scalar{0});
      continue;
    }
    // Each array gets its own stream so adding a parameter leaves others unchanged.
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
    std::mt19937_64 rng(stream_id({seed, h}));
    const double a = glorot_bound(p.shape);
    std::uniform_real_distribution<double> dist(-a, a);
    for (Scalar& v : p.value) v = static_cast<Scalar>(dist(rng));
  }
}

std::vector<Scalar> flatten_grads(const std::vector<Parameter*>& params) {
  std::vector<Scalar> out;
  for (const Parameter* p : params) out.insert(out.end(), p->grad.begin(), p->grad.end());
  return out;
}

}  // namespace resa
