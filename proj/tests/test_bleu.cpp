#include <catch_amalgamated.hpp>

#include <cmath>

#include "unmt/bleu.hpp"
#include "unmt/corpus.hpp"
#include "unmt/rng.hpp"

using namespace unmt;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

using Sents = std::vector<std::vector<std::string>>;

Sents toks(std::initializer_list<const char*> lines) {
  Sents out;
  for (const char* l : lines) out.push_back(split_ws(l));
  return out;
}

}  // namespace

TEST_CASE("identical candidates and references score 100 with no brevity penalty") {
  const auto s = toks({"a b c d e", "f g h i", "j k l m n o"});
  const auto r = bleu(s, s);
  CHECK(r.bleu == 100.0);
  CHECK(r.brevity_penalty == 1.0);
  for (double p : r.precisions) CHECK(p == 1.0);
}

TEST_CASE("repeated word is clipped to its reference count") {
  const auto r = bleu(toks({"the the the the"}), toks({"the cat"}));
  CHECK(r.matches[0] == 1);
  CHECK(r.totals[0] == 4);
  CHECK(r.precisions[0] == 0.25);
  // c = 4 > r = 2, so no penalty; p2..p4 have zero matches and are add-one smoothed
  CHECK(r.brevity_penalty == 1.0);
  const double expected = 100.0 * std::pow(0.25 * (1.0 / 4.0) * (1.0 / 3.0) * (1.0 / 2.0), 0.25);
  CHECK_THAT(r.bleu, WithinRel(expected, 1e-12));
}

TEST_CASE("short candidate pays the brevity penalty") {
  const auto r = bleu(toks({"a b c"}), toks({"a b c d e f"}));
  // p1 = p2 = p3 = 1; no 4-grams at all, smoothed to (0+1)/(0+1)
  CHECK(r.precisions[3] == 1.0);
  CHECK(r.smoothed[3]);
  CHECK_THAT(r.brevity_penalty, WithinRel(std::exp(-1.0), 1e-15));
  CHECK_THAT(r.bleu, WithinRel(100.0 * std::exp(-1.0), 1e-12));
}

TEST_CASE("empty candidate sentence gives zero") {
  const auto r = bleu(toks({""}), toks({"a b"}));
  CHECK(r.brevity_penalty == 0.0);
  CHECK(r.bleu == 0.0);
}

TEST_CASE("zero higher-order matches are add-one smoothed") {
  const auto r = bleu(toks({"a b c d"}), toks({"a c b d"}));
  CHECK(r.precisions[0] == 1.0);
  CHECK(r.precisions[1] == 0.25);
  CHECK_THAT(r.precisions[2], WithinRel(1.0 / 3.0, 1e-15));
  CHECK(r.precisions[3] == 0.5);
  CHECK_THAT(r.bleu, WithinRel(100.0 * std::pow(1.0 / 24.0, 0.25), 1e-12));
}

TEST_CASE("counts are pooled over the corpus before taking precisions") {
  const auto r = bleu(toks({"a b", "c"}), toks({"a b", "d"}));
  CHECK(r.matches[0] == 2);
  CHECK(r.totals[0] == 3);
  CHECK(r.matches[1] == 1);
  CHECK(r.totals[1] == 1);
  CHECK_THAT(r.bleu, WithinRel(100.0 * std::pow(2.0 / 3.0, 0.25), 1e-12));
}

TEST_CASE("long candidate has no penalty and plain precisions") {
  const auto r = bleu(toks({"a b c d e"}), toks({"a b c d"}));
  CHECK(r.brevity_penalty == 1.0);
  CHECK_THAT(r.bleu, WithinRel(100.0 * std::pow(0.8 * 0.75 * (2.0 / 3.0) * 0.5, 0.25), 1e-12));
}

TEST_CASE("no unigram matches yields zero") {
  const auto r = bleu(toks({"x y z"}), toks({"a b c"}));
  CHECK(r.precisions[0] == 0.0);
  CHECK(r.bleu == 0.0);
}

TEST_CASE("bleu contract errors") {
  CHECK_THROWS_AS(bleu(toks({"a"}), toks({"a", "b"})), ContractError);
  CHECK_THROWS_AS(bleu(Sents{}, Sents{}), ContractError);
}

TEST_CASE("dropping a leading fully matched n-gram never raises its clipped precision") {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<int> cand, ref;
    const auto lc = 2 + rng.below(10), lr = 1 + rng.below(10);
    for (std::size_t i = 0; i < lc; ++i) cand.push_back(static_cast<int>(rng.below(4)));
    for (std::size_t i = 0; i < lr; ++i) ref.push_back(static_cast<int>(rng.below(4)));
    const auto before = bleu(std::vector<std::vector<int>>{cand}, std::vector<std::vector<int>>{ref});
    const std::vector<int> rest(cand.begin() + 1, cand.end());
    const auto after = bleu(std::vector<std::vector<int>>{rest}, std::vector<std::vector<int>>{ref});
    for (std::size_t n = 1; n <= kBleuOrder; ++n) {
      if (cand.size() < n) continue;
      const std::vector<int> lead(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n));
      // every occurrence of the lead n-gram is matched, so dropping one removes a match
      const auto cc = detail::ngram_counts(cand, n), rc = detail::ngram_counts(ref, n);
      const auto it = rc.find(lead);
      if (it == rc.end() || cc.at(lead) > it->second || after.totals[n - 1] == 0) continue;
      const double p0 = double(before.matches[n - 1]) / double(before.totals[n - 1]);
      const double p1 = double(after.matches[n - 1]) / double(after.totals[n - 1]);
      CHECK(p1 <= p0 + 1e-15);
    }
  }
}

TEST_CASE("bleu lies in [0, 100] and its report is self-consistent") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::vector<int>> c(3), r(3);
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t i = 0, n = rng.below(8); i < n; ++i) c[s].push_back(static_cast<int>(rng.below(5)));
      for (std::size_t i = 0, n = 1 + rng.below(8); i < n; ++i) r[s].push_back(static_cast<int>(rng.below(5)));
    }
    const auto b = bleu(c, r);
    REQUIRE(b.bleu >= 0.0);
    REQUIRE(b.bleu <= 100.0 + 1e-9);
    if (b.bleu > 0) {
      double ls = 0;
      for (double p : b.precisions) ls += std::log(p);
      CHECK_THAT(b.bleu, WithinRel(100.0 * b.brevity_penalty * std::exp(ls / 4), 1e-12));
      CHECK(b.brevity_penalty > 0.0);
      CHECK(b.brevity_penalty <= 1.0);
    }
  }
}
