#include <catch_amalgamated.hpp>

#include <cmath>

#include "unmt/gradcheck.hpp"
#include "unmt/losses.hpp"
#include "unmt/optim.hpp"

using namespace unmt;
using Catch::Matchers::WithinRel;

namespace {

StepInputs toy_inputs() {
  StepInputs in;
  in.src = {{4, 5, 6, 7}, {8, 9, 5}};
  in.tgt = {{6, 7, 4}, {9, 10, 11, 5, 4}};
  in.src_bt = std::vector<TokenIds>{{5, 6, 4, 9}, {10, 7}};
  in.tgt_bt = std::vector<TokenIds>{{7, 4, 6}, {8, 9, 10, 11}};
  return in;
}

template <class T>
struct Toy {
  ModelParams<T> p;
  Discriminator<T> d;
};

Toy<double> toy(const ArchConfig& arch, std::size_t disc_hidden = 16) {
  Rng rng(21);
  DiscriminatorConfig dc;
  dc.hidden = disc_hidden;
  auto p = ModelParams<double>::init(arch, 12, 13, rng);
  auto d = Discriminator<double>::init(arch.hidden, dc, rng);
  return {std::move(p), std::move(d)};
}

}  // namespace

TEST_CASE("combined objective equals the weighted sum of separately computed terms") {
  auto [p, d] = toy({6, 5, 1});
  const auto in = toy_inputs();
  const NoiseConfig noise;
  const LossWeights w{0.7, 1.3, 0.4};

  Rng a(5);
  const auto total = total_loss(p, d, in, w, noise, a);

  // same noise stream, consumed in the documented order
  Rng b(5);
  const double as = loss_auto(p, in.src, Lang::src, noise, b).item();
  const double at = loss_auto(p, in.tgt, Lang::tgt, noise, b).item();
  const double cs = loss_cd(p, in.src, *in.src_bt, Lang::src, noise, b).item();
  const double ct = loss_cd(p, in.tgt, *in.tgt_bt, Lang::tgt, noise, b).item();
  Rng c(5);
  const auto enc = encode_noisy(p, in, noise, c);
  const double adv = adv_loss(d, std::vector<const Encoded<double>*>{&enc.src, &enc.tgt}).item();

  const double expected = 0.7 * (as + at) + 1.3 * (cs + ct) + 0.4 * adv;
  CHECK_THAT(total.total.item(), WithinRel(expected, 1e-6));
  CHECK_THAT(*total.auto_src, WithinRel(as, 1e-12));
  CHECK_THAT(*total.cd_tgt, WithinRel(ct, 1e-12));
  CHECK_THAT(*total.adv, WithinRel(adv, 1e-12));
}

TEST_CASE("all weights zero gives a zero objective") {
  auto [p, d] = toy({6, 5, 1});
  Rng rng(1);
  const auto l = total_loss(p, d, toy_inputs(), LossWeights{0, 0, 0}, NoiseConfig{}, rng);
  CHECK(l.total.item() == 0.0);
  CHECK(!l.auto_src);
  CHECK(!l.cd_src);
  CHECK(!l.adv);
}

TEST_CASE("doubling a weight doubles that term and its gradient") {
  auto [p, d] = toy({6, 5, 1});
  const auto in = toy_inputs();
  auto params = p.tensors();
  auto grads = [&](double lambda) {
    zero_grads(params);
    Rng rng(3);
    auto l = total_loss(p, d, in, LossWeights{lambda, 0, 0}, NoiseConfig{}, rng);
    backward(l.total);
    std::vector<double> g;
    for (const auto& t : params)
      if (t.has_grad()) g.insert(g.end(), t.grad().begin(), t.grad().end());
    return std::pair{l.total.item(), g};
  };
  const auto [l1, g1] = grads(1.0);
  const auto [l2, g2] = grads(2.0);
  CHECK(l2 == 2 * l1);
  REQUIRE(g1.size() == g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == 2 * g1[i]);
}

TEST_CASE("cross-domain loss without noise is supervised cross-entropy on the pairs") {
  auto [p, d] = toy({6, 5, 1});
  const auto in = toy_inputs();
  Rng rng(0);
  const double cd = loss_cd(p, in.src, *in.src_bt, Lang::src, NoiseConfig::none(), rng).item();
  const auto enc = encode(p, make_batch(*in.src_bt, Lang::tgt), Lang::tgt);
  const double ce = sequence_loss(decode_teacher_forced(p, enc, Lang::src, make_batch(in.src, Lang::src)), 2).item();
  CHECK(cd == ce);
}

TEST_CASE("empty back-translations are skipped and counted") {
  auto [p, d] = toy({6, 5, 1});
  Rng rng(0);
  std::size_t skipped = 0;
  const auto none = NoiseConfig::none();
  const auto l = loss_cd(p, {{4, 5}, {6, 7}}, {{}, {8, 9}}, Lang::src, none, rng, &skipped);
  CHECK(skipped == 1);
  Rng rng2(0);
  CHECK(l.item() == loss_cd(p, {{6, 7}}, {{8, 9}}, Lang::src, none, rng2).item());
  CHECK(loss_cd(p, {{4}}, {{}}, Lang::src, none, rng, &skipped).item() == 0.0);
  CHECK(skipped == 2);
  CHECK_THROWS_AS(loss_cd(p, {{4}}, {}, Lang::src, none, rng), DimensionError);
}

TEST_CASE("no gradient reaches the frozen translator or the stored translations") {
  auto [p, d] = toy({6, 5, 1});
  const auto prev = TranslationModel<double>::freeze(p, Lang::tgt, Lang::src);
  const std::vector<TokenIds> tgt{{6, 7, 4}, {9, 10, 11}};
  const auto stored = prev.translate_all(tgt);
  const auto stored_copy = stored;
  Rng rng(2);
  auto l = loss_cd(p, tgt, stored, Lang::tgt, NoiseConfig{}, rng);
  backward(l);
  CHECK(stored == stored_copy);
  for (const auto& t : prev.params().tensors()) {
    CHECK(!t.requires_grad());
    CHECK(!t.has_grad());
  }
  bool any = false;
  for (const auto& t : p.tensors())
    for (double g : t.grad()) any |= g != 0.0;
  CHECK(any);
}

TEST_CASE("auto-encoding loss is unweighted and falls to near zero when overfit without noise") {
  Rng rng(9);
  auto p = ModelParams<float>::init({16, 16, 1}, 10, 10, rng);
  const std::vector<TokenIds> data{{4, 5, 6, 7}, {8, 9, 4}, {7, 6, 5, 4, 9}};
  auto params = p.tensors();
  auto opt = OptimizerState<float>::adam(1e-2, 0.5);
  const auto none = NoiseConfig::none();
  float first = 0, last = 0;
  for (int step = 0; step < 500; ++step) {
    zero_grads(params);
    auto l = loss_auto(p, data, Lang::src, none, rng);
    if (step == 0) first = l.item();
    last = l.item();
    backward(l);
    clip_grad_norm(params, 5.0);
    adam_step(params, opt);
  }
  INFO("first " << first << " last " << last);
  CHECK(first > 5.0f);
  CHECK(last < 0.05f);
}

TEST_CASE("combined objective gradients match central differences at desk size") {
  // desk architecture, two sentences per side, every term switched on
  auto [p, d] = toy(ArchConfig::desk(), 128);
  // discriminator weights scaled so that pre-activations sit well away from
  // the leaky kink; at init scale they are within a step size of it
  Rng wr(3);
  for (std::size_t l = 0; l < d.w.size(); ++l) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d.w[l].rows()));
    for (auto& x : d.w[l].mutable_data()) x = wr.uniform(-s, s);
    for (auto& x : d.b[l].mutable_data()) x = wr.uniform(-1.0, 1.0);
  }
  auto pq = p.cast<long double>(false);
  auto dq = d.cast<long double>(false);
  StepInputs in;
  in.src = {{4, 5, 6, 7}, {8, 9, 5}};
  in.tgt = {{6, 7, 4}, {9, 10, 11, 5, 4}};
  in.src_bt = std::vector<TokenIds>{{5, 6, 4, 9}, {10, 7}};
  in.tgt_bt = std::vector<TokenIds>{{7, 4, 6}, {8, 9, 10, 11}};
  const LossWeights w;
  const NoiseConfig noise;
  auto f = [&] {
    Rng rng(17);
    return total_loss(p, d, in, w, noise, rng).total;
  };
  auto fq = [&] {
    Rng rng(17);
    return total_loss(pq, dq, in, w, noise, rng).total;
  };
  auto params = p.tensors();
  auto params_q = pq.tensors();
  const auto rep = grad_check(f, params, fq, params_q, 3e-4, 16);
  INFO(rep.worst_param << " " << rep.worst_analytic << " vs " << rep.worst_numeric);
  CHECK(rep.max_rel_error <= 1e-6);
}

TEST_CASE("copying fifty sentences is learnt to below 0.1 nats per token") {
  Rng rng(12);
  std::vector<TokenIds> data;
  std::size_t tokens = 0;
  for (int i = 0; i < 50; ++i) {
    TokenIds s;
    for (std::size_t j = 0, n = 3 + rng.below(6); j < n; ++j) s.push_back(static_cast<TokenId>(4 + rng.below(20)));
    tokens += s.size() + 1;  // EOS is predicted too
    data.push_back(std::move(s));
  }
  auto p = ModelParams<float>::init({16, 32, 1}, 24, 24, rng);
  auto params = p.tensors();
  auto opt = OptimizerState<float>::adam(1e-2, 0.5);
  const auto none = NoiseConfig::none();
  double per_token = 0;
  for (int step = 0; step < 600; ++step) {
    zero_grads(params);
    auto l = loss_auto(p, data, Lang::src, none, rng);
    per_token = l.item() * 50.0 / static_cast<double>(tokens);
    if (per_token < 0.1) break;
    backward(l);
    clip_grad_norm(params, 5.0);
    adam_step(params, opt);
  }
  CHECK(per_token < 0.1);
}
