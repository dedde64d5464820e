#pragma once

#include <algorithm>
#include <optional>
#include <numeric>
#include <vector>

#include "corpus.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace unmt {

/// Corruption C(x): word dropout followed by a bounded local shuffle.
struct NoiseConfig {
  double p_wd = 0.1;
  int k = 3;
  std::optional<double> alpha;  // permutation temperature; k + 1 when unset

  double temperature() const { return alpha ? *alpha : static_cast<double>(k) + 1.0; }

  void validate() const {
    if (!(p_wd >= 0.0 && p_wd < 1.0)) throw ConfigError("noise.p_wd must be in [0,1)");
    if (k < 0) throw ConfigError("noise.k must be >= 0");
    if (alpha && !(*alpha >= 0.0)) throw ConfigError("noise.alpha must be >= 0");
  }

  static NoiseConfig none() { return {0.0, 0, std::nullopt}; }
};

/// Permutation that sorts q_i = i + U(0, alpha); ties keep index order.
/// Position i of the shuffled sentence takes original token perm[i].
inline std::vector<std::size_t> sample_permutation(std::size_t n, double alpha, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  if (n < 2) return perm;
  std::vector<double> q(n);
  for (std::size_t i = 0; i < n; ++i) q[i] = static_cast<double>(i) + alpha * rng.uniform();
  std::stable_sort(perm.begin(), perm.end(), [&q](std::size_t a, std::size_t b) { return q[a] < q[b]; });
  return perm;
}

/// Drops each token with probability p_wd; never returns an empty sentence
/// for a nonempty input (one uniformly chosen token survives).
inline TokenIds drop_words(const TokenIds& tokens, double p_wd, Rng& rng) {
  if (p_wd <= 0.0 || tokens.empty()) return tokens;
  TokenIds out;
  out.reserve(tokens.size());
  for (auto t : tokens)
    if (!rng.bernoulli(p_wd)) out.push_back(t);
  if (out.empty()) out.push_back(tokens[rng.below(tokens.size())]);
  return out;
}

inline TokenIds corrupt(const TokenIds& tokens, const NoiseConfig& cfg, Rng& rng) {
  auto kept = drop_words(tokens, cfg.p_wd, rng);
  if (cfg.k == 0 && !cfg.alpha) return kept;
  const auto perm = sample_permutation(kept.size(), cfg.temperature(), rng);
  TokenIds out(kept.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out[i] = kept[perm[i]];
  return out;
}

}  // namespace unmt
