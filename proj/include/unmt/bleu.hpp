#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "errors.hpp"

namespace unmt {

inline constexpr std::size_t kBleuOrder = 4;

struct BleuReport {
  double bleu = 0;  // in [0, 100]
  std::array<double, kBleuOrder> precisions{};
  std::array<std::size_t, kBleuOrder> matches{};  // clipped, before smoothing
  std::array<std::size_t, kBleuOrder> totals{};
  std::array<bool, kBleuOrder> smoothed{};
  double brevity_penalty = 0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;

  static constexpr const char* method =
      "corpus BLEU-4, clipped counts, BP=exp(1-r/c) when c<=r, add-1 on n>=2 precisions with zero matches";
};

namespace detail {

template <class Tok>
std::map<std::vector<Tok>, std::size_t> ngram_counts(const std::vector<Tok>& s, std::size_t n) {
  std::map<std::vector<Tok>, std::size_t> m;
  if (s.size() < n) return m;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++m[std::vector<Tok>(s.begin() + i, s.begin() + i + n)];
  return m;
}

}  // namespace detail

/// Corpus-level BLEU-4 over tokenized sentences, one reference each.
template <class Tok>
BleuReport bleu(const std::vector<std::vector<Tok>>& candidates, const std::vector<std::vector<Tok>>& references) {
  if (candidates.size() != references.size()) {
    throw ContractError("bleu: " + std::to_string(candidates.size()) + " candidates for " +
                        std::to_string(references.size()) + " references");
  }
  if (candidates.empty()) throw ContractError("bleu: empty candidate set");

  BleuReport r;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const auto& ref = references[i];
    r.candidate_length += c.size();
    r.reference_length += ref.size();
    for (std::size_t n = 1; n <= kBleuOrder; ++n) {
      const auto cc = detail::ngram_counts(c, n);
      const auto rc = detail::ngram_counts(ref, n);
      for (const auto& [g, k] : cc) {
        auto it = rc.find(g);
        if (it != rc.end()) r.matches[n - 1] += std::min(k, it->second);
      }
      if (c.size() >= n) r.totals[n - 1] += c.size() - n + 1;
    }
  }

  const double c = static_cast<double>(r.candidate_length), ref = static_cast<double>(r.reference_length);
  r.brevity_penalty = c == 0 ? 0.0 : (c > ref ? 1.0 : std::exp(1.0 - ref / c));

  double log_sum = 0;
  bool zero = false;
  for (std::size_t n = 0; n < kBleuOrder; ++n) {
    double num = static_cast<double>(r.matches[n]), den = static_cast<double>(r.totals[n]);
    if (n >= 1 && r.matches[n] == 0) {
      num += 1;
      den += 1;
      r.smoothed[n] = true;
    }
    r.precisions[n] = den > 0 ? num / den : 0.0;
    if (r.precisions[n] <= 0) zero = true;
    else log_sum += std::log(r.precisions[n]);
  }
  r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / static_cast<double>(kBleuOrder));
  return r;
}

}  // namespace unmt
