#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace unmt {

enum class OptimizerKind : std::uint8_t { adam, rmsprop };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "rmsprop"; }

/// Moment buffers and hyperparameters for one parameter group. Buffers are
/// sized on the first step and must match the parameter list afterwards.
template <std::floating_point T>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 3e-4;
  double beta1 = 0.5;   // Adam first-moment decay
  double beta2 = 0.999; // Adam second-moment decay
  double decay = 0.99;  // RMSProp accumulator decay
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first;   // Adam m
  std::vector<std::vector<T>> second;  // Adam v / RMSProp mean square

  static OptimizerState adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    OptimizerState s;
    s.kind = OptimizerKind::adam;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    return s;
  }

  static OptimizerState rmsprop(double lr, double decay = 0.99, double eps = 1e-8) {
    OptimizerState s;
    s.kind = OptimizerKind::rmsprop;
    s.lr = lr;
    s.decay = decay;
    s.eps = eps;
    return s;
  }
};

namespace detail {

template <class T>
void prepare_buffers(const std::vector<Tensor<T>>& params, OptimizerState<T>& st, OptimizerKind want) {
  if (st.kind != want) {
    throw ContractError(std::string("optimizer step: state is ") + to_string(st.kind) + ", call is " + to_string(want));
  }
  if (st.second.empty()) {
    for (const auto& p : params) {
      st.second.emplace_back(p.size(), T(0));
      if (want == OptimizerKind::adam) st.first.emplace_back(p.size(), T(0));
    }
  }
  if (st.second.size() != params.size()) {
    throw DimensionError("optimizer step: " + std::to_string(params.size()) + " parameters but state holds " +
                         std::to_string(st.second.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (st.second[i].size() != params[i].size() ||
        (want == OptimizerKind::adam && st.first[i].size() != params[i].size())) {
      throw DimensionError("optimizer step: buffer " + std::to_string(i) + " does not match parameter shape " +
                           shape_str(params[i].shape()));
    }
  }
}

}  // namespace detail

/// Bias-corrected Adam, in place. Parameters without a gradient are treated as
/// having a zero gradient.
template <class T>
void adam_step(std::vector<Tensor<T>>& params, OptimizerState<T>& st) {
  detail::prepare_buffers(params, st, OptimizerKind::adam);
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  const T b1 = static_cast<T>(st.beta1), b2 = static_cast<T>(st.beta2);
  const T step_size = static_cast<T>(st.lr / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T eps = static_cast<T>(st.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) continue;  // never touched by backward
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = st.first[i];
    auto& v = st.second[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_c2 + eps);
    }
  }
}

template <class T>
void rmsprop_step(std::vector<Tensor<T>>& params, OptimizerState<T>& st) {
  detail::prepare_buffers(params, st, OptimizerKind::rmsprop);
  ++st.step;
  const T a = static_cast<T>(st.decay), lr = static_cast<T>(st.lr), eps = static_cast<T>(st.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& v = st.second[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = a * v[j] + (T(1) - a) * g[j] * g[j];
      w[j] -= lr * g[j] / (std::sqrt(v[j]) + eps);
    }
  }
}

/// Global L2 norm of all gradients; rescales them to `max_norm` when larger.
/// Returns the norm before clipping. max_norm <= 0 disables clipping.
template <class T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params)
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : params)
      if (p.has_grad())
        for (T& g : p.mutable_grad()) g *= s;
  }
  return norm;
}

template <class T>
void zero_grads(std::vector<Tensor<T>>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace unmt
