#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace unmt {

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::size_t checked = 0;
};

namespace detail {

template <class Hi>
GradCheckReport grad_check_impl(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> params,
                                const std::function<Hi()>& f_ref, std::vector<Tensor<Hi>> params_ref, double eps,
                                std::size_t coords_per_param, std::uint64_t seed, double floor) {
  if (params_ref.size() != params.size()) throw ContractError("grad_check: reference parameter list differs");
  for (auto& p : params) p.zero_grad();
  const auto loss = f();
  backward(loss);

  GradCheckReport rep;
  Rng rng(seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    auto& q = params_ref[pi];
    if (q.size() != p.size()) throw DimensionError("grad_check: reference parameter " + std::to_string(pi) + " differs");
    std::vector<std::size_t> coords(p.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > coords_per_param) {
      rng.shuffle(coords);
      coords.resize(coords_per_param);
    }
    const std::vector<double> analytic_all =
        p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end()) : std::vector<double>(p.size(), 0.0);
    for (std::size_t c : coords) {
      auto w = q.mutable_data();
      const Hi orig = w[c];
      w[c] = orig + static_cast<Hi>(eps);
      const Hi up = f_ref();
      w[c] = orig - static_cast<Hi>(eps);
      const Hi down = f_ref();
      w[c] = orig;
      const double numeric = static_cast<double>((up - down) / (2 * static_cast<Hi>(eps)));
      const double analytic = analytic_all[c];
      if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
        throw NumericError("grad_check: non-finite value at parameter " + std::to_string(pi) + " coordinate " +
                           std::to_string(c));
      }
      const double err = std::abs(analytic - numeric) / std::max(floor, std::abs(analytic) + std::abs(numeric));
      ++rep.checked;
      if (err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst_param = pi;
        rep.worst_index = c;
        rep.worst_analytic = analytic;
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace detail

/// Compares backprop gradients with central differences
/// (f(x+eps) - f(x-eps)) / 2eps on up to `coords_per_param` coordinates of
/// each parameter (all of them when the parameter is smaller). The error of
/// a coordinate is |analytic - numeric| / max(floor, |analytic| + |numeric|).
/// `f` must be deterministic: reseed any randomness inside it.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> params,
                                  double eps = 1e-4, std::size_t coords_per_param = 16, std::uint64_t seed = 7,
                                  double floor = 1e-8) {
  auto same = params;
  return detail::grad_check_impl<double>(
      f, std::move(params), [&f] { return f().item(); }, std::move(same), eps, coords_per_param, seed, floor);
}

/// Same check, but the finite differences are taken on `f_ref`, an
/// extended-precision evaluation of the same function whose parameters
/// `params_ref` mirror `params`. Rounding in double limits central
/// differences to roughly 1e-12 absolute, which is coarser than many
/// gradients of a freshly initialised recurrent model; the long double
/// reference lowers that floor by three orders of magnitude.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> params,
                                  const std::function<Tensor<long double>()>& f_ref,
                                  std::vector<Tensor<long double>> params_ref, double eps = 1e-4,
                                  std::size_t coords_per_param = 16, std::uint64_t seed = 7, double floor = 1e-8) {
  return detail::grad_check_impl<long double>(
      f, std::move(params), [&f_ref] { return f_ref().item(); }, std::move(params_ref), eps, coords_per_param, seed,
      floor);
}

}  // namespace unmt
