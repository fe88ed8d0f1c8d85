#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "astbridge/diff/tensor.hpp"
#include "astbridge/error.hpp"

namespace astbridge::diff {

// Named parameter tensors in a fixed order.
template <class Real>
struct ParameterSet {
  std::vector<std::string> names;
  std::vector<Tensor<Real>> tensors;

  std::size_t add(std::string name, Tensor<Real> value) {
    names.push_back(std::move(name));
    tensors.push_back(std::move(value));
    return tensors.size() - 1;
  }

  std::size_t size() const { return tensors.size(); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw Error("no parameter named " + name);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& t : tensors)
      if (!t.all_finite()) return false;
    return true;
  }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

// Gradients aligned index-for-index with a ParameterSet.
template <class Real>
struct GradientSet {
  std::vector<Tensor<Real>> tensors;

  static GradientSet zeros_like(const ParameterSet<Real>& params) {
    GradientSet g;
    for (const auto& t : params.tensors) g.tensors.emplace_back(t.shape(), Real(0));
    return g;
  }

  GradientSet& operator+=(const GradientSet& o) {
    for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i] += o.tensors[i];
    return *this;
  }

  void scale(Real s) {
    for (auto& t : tensors)
      for (auto& v : t.data()) v *= s;
  }

  bool all_finite() const {
    for (const auto& t : tensors)
      if (!t.all_finite()) return false;
    return true;
  }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class Real>
struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<Tensor<Real>> first_moment;
  std::vector<Tensor<Real>> second_moment;

  static AdamState for_parameters(const ParameterSet<Real>& params, AdamConfig cfg = {}) {
    AdamState s;
    s.config = cfg;
    for (const auto& t : params.tensors) {
      s.first_moment.emplace_back(t.shape(), Real(0));
      s.second_moment.emplace_back(t.shape(), Real(0));
    }
    return s;
  }
};

// One bias-corrected Adam update. Moments are accumulated in double to keep
// the float instantiation's step sizes accurate.
template <class Real>
void adam_step(ParameterSet<Real>& params, const GradientSet<Real>& grads, AdamState<Real>& state) {
  if (grads.tensors.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ShapeMismatch("adam_step: parameter, gradient and state counts differ");
  }
  if (!grads.all_finite()) throw NonFiniteValue("adam_step: non-finite gradient");
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& w = params.tensors[p];
    const auto& g = grads.tensors[p];
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    if (g.size() != w.size() || m.size() != w.size()) {
      throw ShapeMismatch("adam_step: shape mismatch for " + params.names[p]);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double update = c.lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
      w[i] = static_cast<Real>(static_cast<double>(w[i]) - update);
    }
  }
  if (!params.all_finite()) throw NonFiniteValue("adam_step: parameters became non-finite");
}

}  // namespace astbridge::diff
