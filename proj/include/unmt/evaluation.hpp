#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "bleu.hpp"
#include "corpus.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "translator.hpp"

namespace unmt {

/// Corpus BLEU of `model` on an aligned test set.
inline BleuReport translation_bleu(const SentenceTranslator& model, const std::vector<TokenIds>& sources,
                                   const std::vector<TokenIds>& references) {
  return bleu(model.translate_all(sources), references);
}

struct MsReport {
  double ms = 0;
  double bleu_src = 0;  // src -> tgt -> src round trip on src validation data
  double bleu_tgt = 0;  // tgt -> src -> tgt round trip on tgt validation data
};

/// Unsupervised model-selection score: mean of the two round-trip BLEUs,
/// computed from monolingual validation data only.
inline MsReport model_selection_score(const SentenceTranslator& src_to_tgt, const SentenceTranslator& tgt_to_src,
                                      const std::vector<TokenIds>& src_valid, const std::vector<TokenIds>& tgt_valid) {
  if (src_to_tgt.from() != Lang::src || tgt_to_src.from() != Lang::tgt) {
    throw ContractError("model_selection_score: translators must be src->tgt and tgt->src");
  }
  MsReport r;
  r.bleu_src = bleu(tgt_to_src.translate_all(src_to_tgt.translate_all(src_valid)), src_valid).bleu;
  r.bleu_tgt = bleu(src_to_tgt.translate_all(tgt_to_src.translate_all(tgt_valid)), tgt_valid).bleu;
  r.ms = 0.5 * r.bleu_src + 0.5 * r.bleu_tgt;
  return r;
}

/// Ranks starting at 1; tied values share the mean of their ranks.
inline std::vector<double> average_ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation: Pearson correlation of average ranks.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw ContractError("spearman: sequences differ in length");
  if (xs.size() < 2) throw ContractError("spearman: need at least two points");
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) throw ContractError("spearman: constant sequence, correlation undefined");
  return sxy / std::sqrt(sxx * syy);
}

/// Left-to-right LSTM language model over one vocabulary.
template <std::floating_point T>
struct LanguageModel {
  Tensor<T> emb;
  LstmWeights<T> lstm;
  Tensor<T> out_w, out_b;

  static LanguageModel init(std::size_t vocab, std::size_t dim, std::size_t hidden, Rng& rng) {
    LanguageModel m;
    m.emb = random_uniform<T>({vocab, dim}, rng);
    m.lstm = init_lstm<T>(dim, hidden, rng);
    m.out_w = random_uniform<T>({hidden, vocab}, rng);
    m.out_b = Tensor<T>::zeros({vocab}, true);
    return m;
  }

  std::vector<Tensor<T>> tensors() const { return {emb, lstm.w, lstm.b, out_w, out_b}; }
  std::size_t vocab_size() const { return emb.rows(); }

  /// Per-position negative log-likelihoods [batch*(steps+1)]: inputs SOS y..,
  /// targets y.. EOS, PAD positions contribute zero.
  Tensor<T> token_nll(const SeqBatch& batch) const {
    const std::size_t B = batch.batch, S = batch.max_len + 1, n = lstm.b.size() / 4;
    LstmState<T> s{Tensor<T>::zeros({B, n}), Tensor<T>::zeros({B, n})};
    std::vector<Tensor<T>> hs;
    std::vector<TokenId> targets(B * S, kPad);
    for (std::size_t t = 0; t < S; ++t) {
      std::vector<TokenId> prev(B);
      for (std::size_t b = 0; b < B; ++b) {
        prev[b] = t == 0 ? kSos : (t - 1 < batch.lengths[b] ? batch.at(b, t - 1) : kPad);
        if (t < batch.lengths[b]) targets[b * S + t] = batch.at(b, t);
        else if (t == batch.lengths[b]) targets[b * S + t] = kEos;
      }
      s = lstm_step(lstm, embedding(emb, prev), s);
      hs.push_back(s.h);
    }
    return cross_entropy(add_bias(matmul(stack_steps(hs), out_w), out_b), targets, kPad);
  }

  /// Sentence log-probabilities (EOS included), in input order. Each result
  /// depends only on its own sentence.
  std::vector<double> log_prob(const std::vector<TokenIds>& sentences) const {
    std::vector<double> out(sentences.size(), 0.0);
    std::vector<TokenIds> nonempty;
    std::vector<std::size_t> where;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (sentences[i].empty()) continue;
      nonempty.push_back(sentences[i]);
      where.push_back(i);
    }
    if (nonempty.empty()) return out;
    const auto batch = make_batch(nonempty, Lang::tgt);
    const auto nll = token_nll(batch);
    const std::size_t S = batch.max_len + 1;
    for (std::size_t b = 0; b < nonempty.size(); ++b) {
      double lp = 0;
      for (std::size_t t = 0; t <= batch.lengths[b]; ++t) lp -= static_cast<double>(nll[b * S + t]);
      out[where[b]] = lp;
    }
    return out;
  }
};

struct LmTrainConfig {
  std::size_t dim = 64;
  std::size_t hidden = 64;
  std::size_t epochs = 2;
  std::size_t batch_size = 32;
  double lr = 2e-3;
  double beta1 = 0.5;
  double clip = 5.0;
};

/// Trains a language model on one monolingual corpus with Adam.
inline LanguageModel<float> train_language_model(const MonolingualDataset& data, std::size_t vocab_size,
                                                 const LmTrainConfig& cfg, std::uint64_t seed) {
  auto init_rng = Rng::stream(seed, "lm.init");
  auto lm = LanguageModel<float>::init(vocab_size, cfg.dim, cfg.hidden, init_rng);
  auto params = lm.tensors();
  auto opt = OptimizerState<float>::adam(cfg.lr, cfg.beta1);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (const auto& batch : make_batches(data, cfg.batch_size, Rng::derive(seed, "lm.epoch." + std::to_string(e)))) {
      zero_grads(params);
      auto loss = scale(sum(lm.token_nll(batch)), 1.0f / static_cast<float>(batch.batch));
      if (!std::isfinite(loss.item())) throw NumericError("language model: non-finite loss");
      backward(loss);
      clip_grad_norm(params, cfg.clip);
      adam_step(params, opt);
    }
  }
  return lm;
}

/// Greedy adjacent-swap reordering under a language model: each round applies
/// the single best swap if it strictly raises the log-probability.
template <class T>
TokenIds word_reorder(const TokenIds& sentence, const LanguageModel<T>& lm, std::size_t rounds = 10,
                      std::size_t* swaps_applied = nullptr) {
  TokenIds cur = sentence;
  std::size_t swaps = 0;
  if (cur.size() >= 2) {
    double cur_lp = lm.log_prob({cur})[0];
    for (std::size_t r = 0; r < rounds; ++r) {
      std::vector<TokenIds> variants;
      for (std::size_t i = 0; i + 1 < cur.size(); ++i) {
        variants.push_back(cur);
        std::swap(variants.back()[i], variants.back()[i + 1]);
      }
      const auto lps = lm.log_prob(variants);
      const auto best = static_cast<std::size_t>(std::max_element(lps.begin(), lps.end()) - lps.begin());
      if (!(lps[best] > cur_lp)) break;
      cur = std::move(variants[best]);
      cur_lp = lps[best];
      ++swaps;
    }
  }
  if (swaps_applied) *swaps_applied = swaps;
  return cur;
}

/// Sentence BLEU against one fixed reference, with the same clipping, brevity
/// penalty and smoothing as bleu(); cheap enough to score many permutations.
class SentenceBleu {
 public:
  explicit SentenceBleu(const TokenIds& reference) : ref_len_(reference.size()) {
    for (std::size_t n = 1; n <= kBleuOrder; ++n) ref_[n - 1] = grams(reference, n);
  }

  double operator()(const TokenIds& cand) const {
    if (cand.empty()) return 0.0;
    double log_sum = 0;
    for (std::size_t n = 1; n <= kBleuOrder; ++n) {
      const auto g = grams(cand, n);
      const auto& r = ref_[n - 1];
      std::size_t m = 0, i = 0, j = 0;
      while (i < g.size() && j < r.size()) {  // clipped matches of two sorted multisets
        if (g[i] < r[j]) ++i;
        else if (r[j] < g[i]) ++j;
        else {
          ++m;
          ++i;
          ++j;
        }
      }
      double num = static_cast<double>(m), den = static_cast<double>(g.size());
      if (n >= 2 && m == 0) {
        num += 1;
        den += 1;
      }
      if (num <= 0 || den <= 0) return 0.0;
      log_sum += std::log(num / den);
    }
    const double c = static_cast<double>(cand.size()), r = static_cast<double>(ref_len_);
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return 100.0 * bp * std::exp(log_sum / static_cast<double>(kBleuOrder));
  }

 private:
  using Gram = std::array<TokenId, kBleuOrder>;

  static std::vector<Gram> grams(const TokenIds& s, std::size_t n) {
    std::vector<Gram> g;
    if (s.size() < n) return g;
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      Gram x;
      x.fill(-1);
      for (std::size_t k = 0; k < n; ++k) x[k] = s[i + k];
      g.push_back(x);
    }
    std::sort(g.begin(), g.end());
    return g;
  }

  std::array<std::vector<Gram>, kBleuOrder> ref_;
  std::size_t ref_len_;
};

inline constexpr std::size_t kOracleMaxDistinct = 8;
inline constexpr double kOracleMaxPermutations = 2e6;

/// Permutation of `tokens` with the highest sentence BLEU against `reference`.
/// Exhaustive over distinct permutations when there are at most 8 distinct
/// tokens (and at most 2e6 arrangements); otherwise an approximation that
/// emits tokens in reference order, appends the rest in input order, and keeps
/// the better of that and the input order. `exact` reports which was used.
inline TokenIds oracle_reorder(const TokenIds& tokens, const TokenIds& reference, bool* exact = nullptr) {
  const SentenceBleu score(reference);
  TokenIds sorted = tokens;
  std::sort(sorted.begin(), sorted.end());
  std::size_t n_distinct = 0;
  double arrangements = 1;
  for (std::size_t i = 0, k = 1; i < sorted.size(); ++i) {
    if (i == 0 || sorted[i] != sorted[i - 1]) {
      ++n_distinct;
      k = 1;
    } else {
      ++k;
    }
    arrangements = arrangements * static_cast<double>(i + 1) / static_cast<double>(k);
  }

  TokenIds best = tokens;
  double best_score = score(tokens);
  if (n_distinct <= kOracleMaxDistinct && arrangements <= kOracleMaxPermutations) {
    TokenIds perm = sorted;
    do {
      const double s = score(perm);
      if (s > best_score) {
        best_score = s;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    if (exact) *exact = true;
    return best;
  }

  std::vector<std::uint8_t> used(tokens.size(), 0);
  TokenIds greedy;
  for (auto r : reference) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!used[i] && tokens[i] == r) {
        used[i] = 1;
        greedy.push_back(r);
        break;
      }
    }
  }
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (!used[i]) greedy.push_back(tokens[i]);
  if (score(greedy) > best_score) best = greedy;
  if (exact) *exact = false;
  return best;
}

}  // namespace unmt
