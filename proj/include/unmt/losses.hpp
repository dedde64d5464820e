#pragma once

#include <optional>
#include <vector>

#include "adversary.hpp"
#include "corpus.hpp"
#include "noise.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "translator.hpp"

namespace unmt {

/// Denoising auto-encoding: reconstruct x from C(x) within one language.
/// Token cross-entropies are summed per sentence and averaged over sentences.
template <class T>
Tensor<T> loss_auto(const ModelParams<T>& p, const std::vector<TokenIds>& sentences, Lang lang,
                    const NoiseConfig& noise, Rng& rng) {
  std::vector<TokenIds> noisy;
  noisy.reserve(sentences.size());
  for (const auto& s : sentences) noisy.push_back(corrupt(s, noise, rng));
  const auto enc = encode(p, make_batch(noisy, lang), lang);
  return sequence_loss(decode_teacher_forced(p, enc, lang, make_batch(sentences, lang)), sentences.size());
}

/// Cross-domain reconstruction: x in `lang` is rebuilt from C(y), where y is
/// a stored translation of x into the other language. Pairs with an empty
/// translation are left out and counted in `skipped`; the loss is averaged
/// over the remaining pairs (zero when none remain).
template <class T>
Tensor<T> loss_cd(const ModelParams<T>& p, const std::vector<TokenIds>& originals,
                  const std::vector<TokenIds>& translations, Lang lang, const NoiseConfig& noise, Rng& rng,
                  std::size_t* skipped = nullptr) {
  if (originals.size() != translations.size()) {
    throw DimensionError("loss_cd: " + std::to_string(originals.size()) + " sentences but " +
                         std::to_string(translations.size()) + " translations");
  }
  const Lang from = other(lang);
  std::vector<TokenIds> xs, noisy;
  for (std::size_t i = 0; i < originals.size(); ++i) {
    if (translations[i].empty()) {
      if (skipped) ++*skipped;
      continue;
    }
    xs.push_back(originals[i]);
    noisy.push_back(corrupt(translations[i], noise, rng));
  }
  if (xs.empty()) return Tensor<T>::scalar(T(0));
  const auto enc = encode(p, make_batch(noisy, from), from);
  return sequence_loss(decode_teacher_forced(p, enc, lang, make_batch(xs, lang)), xs.size());
}

/// Same loss with translations produced on the spot by a frozen model.
template <class T>
Tensor<T> loss_cd(const ModelParams<T>& p, const std::vector<TokenIds>& originals, const SentenceTranslator& prev,
                  const NoiseConfig& noise, Rng& rng, std::size_t* skipped = nullptr) {
  return loss_cd(p, originals, prev.translate_all(originals), prev.from(), noise, rng, skipped);
}

struct LossWeights {
  double lambda_auto = 1.0;
  double lambda_cd = 1.0;
  double lambda_adv = 1.0;
};

/// One update's sentences: a src batch and a tgt batch, with their stored
/// translations into the other language (absent before any translator exists).
struct StepInputs {
  std::vector<TokenIds> src, tgt;
  std::optional<std::vector<TokenIds>> src_bt, tgt_bt;
};

/// Encodings of C(x) for the src and tgt batches. They feed the
/// auto-encoding decoder, the discriminator and the adversarial term.
template <class T>
struct NoisyEncodings {
  Encoded<T> src, tgt;
};

template <class T>
NoisyEncodings<T> encode_noisy(const ModelParams<T>& p, const StepInputs& in, const NoiseConfig& noise, Rng& rng) {
  auto enc_one = [&](const std::vector<TokenIds>& sents, Lang l) {
    std::vector<TokenIds> noisy;
    noisy.reserve(sents.size());
    for (const auto& s : sents) noisy.push_back(corrupt(s, noise, rng));
    return encode(p, make_batch(noisy, l), l);
  };
  NoisyEncodings<T> e;
  e.src = enc_one(in.src, Lang::src);
  e.tgt = enc_one(in.tgt, Lang::tgt);
  return e;
}

template <class T>
struct StepLoss {
  Tensor<T> total;
  std::optional<double> auto_src, auto_tgt, cd_src, cd_tgt, adv;  // unset when the term is switched off
  std::size_t cd_skipped = 0;
};

/// Combined objective given the noisy encodings:
/// lambda_auto [L_auto(src) + L_auto(tgt)] + lambda_cd [L_cd(src) + L_cd(tgt)] + lambda_adv L_adv.
/// Terms with a zero weight are not computed.
template <class T>
StepLoss<T> total_loss_from(const ModelParams<T>& p, const Discriminator<T>& d, const NoisyEncodings<T>& enc,
                            const StepInputs& in, const LossWeights& w, const NoiseConfig& noise, Rng& rng) {
  StepLoss<T> out;
  Tensor<T> total = Tensor<T>::scalar(T(0));
  auto accumulate = [&](const Tensor<T>& term, double weight) { total = add(total, scale(term, static_cast<T>(weight))); };

  if (w.lambda_auto > 0) {
    const auto as = sequence_loss(decode_teacher_forced(p, enc.src, Lang::src, make_batch(in.src, Lang::src)),
                                  in.src.size());
    const auto at = sequence_loss(decode_teacher_forced(p, enc.tgt, Lang::tgt, make_batch(in.tgt, Lang::tgt)),
                                  in.tgt.size());
    out.auto_src = static_cast<double>(as.item());
    out.auto_tgt = static_cast<double>(at.item());
    accumulate(as, w.lambda_auto);
    accumulate(at, w.lambda_auto);
  }
  if (w.lambda_cd > 0 && in.src_bt && in.tgt_bt) {
    const auto cs = loss_cd(p, in.src, *in.src_bt, Lang::src, noise, rng, &out.cd_skipped);
    const auto ct = loss_cd(p, in.tgt, *in.tgt_bt, Lang::tgt, noise, rng, &out.cd_skipped);
    out.cd_src = static_cast<double>(cs.item());
    out.cd_tgt = static_cast<double>(ct.item());
    accumulate(cs, w.lambda_cd);
    accumulate(ct, w.lambda_cd);
  }
  if (w.lambda_adv > 0) {
    const auto a = adv_loss(d, std::vector<const Encoded<T>*>{&enc.src, &enc.tgt});
    out.adv = static_cast<double>(a.item());
    accumulate(a, w.lambda_adv);
  }
  out.total = total;
  return out;
}

/// Combined objective from raw sentences. Noise is drawn in a fixed order:
/// auto src, auto tgt, cd src, cd tgt.
template <class T>
StepLoss<T> total_loss(const ModelParams<T>& p, const Discriminator<T>& d, const StepInputs& in, const LossWeights& w,
                       const NoiseConfig& noise, Rng& rng) {
  const auto enc = encode_noisy(p, in, noise, rng);
  return total_loss_from(p, d, enc, in, w, noise, rng);
}

}  // namespace unmt
