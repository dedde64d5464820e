#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "corpus.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "translator.hpp"

namespace unmt {

struct DiscriminatorConfig {
  std::size_t hidden = 128;  // 1024 in the paper preset
  std::size_t layers = 3;
  double smoothing = 0.1;
  double leaky_slope = 0.2;
  bool smooth_adv = true;  // apply the same smoothing to the encoder's adversarial loss
};

/// Position-wise MLP p_D(tgt | z_j): hidden Leaky-ReLU layers and a logistic
/// output. Language 0 is src, 1 is tgt.
template <std::floating_point T>
struct Discriminator {
  DiscriminatorConfig cfg;
  std::vector<Tensor<T>> w, b;

  static Discriminator init(std::size_t input_dim, const DiscriminatorConfig& cfg, Rng& rng) {
    if (!(cfg.smoothing >= 0 && cfg.smoothing < 0.5)) throw ConfigError("adv.smoothing must be in [0, 0.5)");
    Discriminator d;
    d.cfg = cfg;
    std::size_t in = input_dim;
    for (std::size_t l = 0; l <= cfg.layers; ++l) {
      const std::size_t out = l == cfg.layers ? 1 : cfg.hidden;
      d.w.push_back(random_uniform<T>({in, out}, rng));
      d.b.push_back(Tensor<T>::zeros({out}, true));
      in = out;
    }
    return d;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named() const {
    std::vector<std::pair<std::string, Tensor<T>>> v;
    for (std::size_t l = 0; l < w.size(); ++l) {
      v.emplace_back("disc." + std::to_string(l) + ".w", w[l]);
      v.emplace_back("disc." + std::to_string(l) + ".b", b[l]);
    }
    return v;
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> v;
    for (auto& [_, t] : named()) v.push_back(t);
    return v;
  }

  /// Copy whose parameters do not require gradients.
  Discriminator frozen() const {
    Discriminator d;
    d.cfg = cfg;
    for (auto& t : w) d.w.push_back(t.detach());
    for (auto& t : b) d.b.push_back(t.detach());
    return d;
  }

  /// Deep copy with a different scalar type / grad flag.
  template <std::floating_point U>
  Discriminator<U> cast(bool requires_grad) const {
    Discriminator<U> d;
    d.cfg = cfg;
    for (auto& t : w) d.w.push_back(t.template cast<U>(requires_grad));
    for (auto& t : b) d.b.push_back(t.template cast<U>(requires_grad));
    return d;
  }

  /// Logits for a stack of latent positions [P x dim] -> [P x 1].
  Tensor<T> logits(const Tensor<T>& z) const {
    Tensor<T> x = z;
    for (std::size_t l = 0; l < w.size(); ++l) {
      x = add_bias(matmul(x, w[l]), b[l]);
      if (l + 1 < w.size()) x = leaky_relu(x, static_cast<T>(cfg.leaky_slope));
    }
    return x;
  }
};

struct DiscPrediction {
  std::vector<std::vector<double>> position_prob;  // p_D(tgt | z_j) per sentence
  std::vector<double> sequence_log_prob_tgt;       // mean_j log p_D(tgt | z_j)
};

/// Per-position probabilities of the target language. PAD positions are not
/// fed to the discriminator.
template <class T>
DiscPrediction disc_predict(const Discriminator<T>& d, const Encoded<T>& enc) {
  const auto rows = enc.position_rows();
  const auto lg = d.logits(select_rows(enc.z, rows));
  DiscPrediction out;
  std::size_t k = 0;
  for (std::size_t b = 0; b < enc.batch; ++b) {
    std::vector<double> p;
    double lp = 0;
    for (std::size_t t = 0; t < enc.lengths[b]; ++t, ++k) {
      const double x = lg[k];
      p.push_back(detail::sigmoid_scalar(x));
      lp += -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x))));  // log sigmoid(x)
    }
    out.position_prob.push_back(std::move(p));
    out.sequence_log_prob_tgt.push_back(lp / static_cast<double>(enc.lengths[b]));
  }
  return out;
}

namespace detail {

// Smoothed binary cross-entropy over the latent positions of several encoded
// batches. Each sentence contributes the mean over its positions; sentences
// are averaged. `label_of(lang)` gives the class (0 src, 1 tgt) to predict.
template <class T, class LabelFn>
Tensor<T> latent_bce(const Discriminator<T>& d, const std::vector<const Encoded<T>*>& encs, double smoothing,
                     LabelFn label_of) {
  std::size_t sentences = 0;
  for (auto* e : encs) sentences += e->batch;
  Tensor<T> total;
  for (auto* e : encs) {
    const T y = static_cast<T>(label_of(e->lang) == 1 ? 1.0 - smoothing : smoothing);
    std::vector<T> targets, weights;
    for (std::size_t b = 0; b < e->batch; ++b)
      for (std::size_t t = 0; t < e->lengths[b]; ++t) {
        targets.push_back(y);
        weights.push_back(static_cast<T>(1.0 / (static_cast<double>(e->lengths[b]) * static_cast<double>(sentences))));
      }
    auto lg = d.logits(select_rows(e->z, e->position_rows()));
    auto l = weighted_sum(bce_with_logits(lg, std::move(targets)), std::move(weights));
    total = total.defined() ? add(total, l) : l;
  }
  return total;
}

}  // namespace detail

/// Discriminator loss L_D: predict the true language with smoothed targets.
/// The encodings are detached so only the discriminator receives gradients.
template <class T>
Tensor<T> disc_loss(const Discriminator<T>& d, const std::vector<const Encoded<T>*>& encs) {
  std::vector<Encoded<T>> detached;
  detached.reserve(encs.size());
  for (auto* e : encs) {
    Encoded<T> c = *e;
    c.z = e->z.detach();
    detached.push_back(std::move(c));
  }
  std::vector<const Encoded<T>*> ptrs;
  for (auto& e : detached) ptrs.push_back(&e);
  return detail::latent_bce(d, ptrs, d.cfg.smoothing, [](Lang l) { return static_cast<int>(l); });
}

template <class T>
Tensor<T> disc_loss(const Discriminator<T>& d, const Encoded<T>& src, const Encoded<T>& tgt) {
  return disc_loss(d, std::vector<const Encoded<T>*>{&src, &tgt});
}

/// Adversarial loss L_adv: the encoder is scored against the flipped language
/// label by a frozen discriminator, so gradients reach only the encoder side.
template <class T>
Tensor<T> adv_loss(const Discriminator<T>& d, const std::vector<const Encoded<T>*>& encs) {
  const auto frozen = d.frozen();
  const double s = d.cfg.smooth_adv ? d.cfg.smoothing : 0.0;
  return detail::latent_bce(frozen, encs, s, [](Lang l) { return 1 - static_cast<int>(l); });
}

template <class T>
Tensor<T> adv_loss(const Discriminator<T>& d, const Encoded<T>& enc) {
  return adv_loss(d, std::vector<const Encoded<T>*>{&enc});
}

}  // namespace unmt
