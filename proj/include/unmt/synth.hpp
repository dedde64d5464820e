#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "translator.hpp"

namespace unmt {

enum class ReorderRule { none, adjacent_swap, block_reverse };

inline const char* to_string(ReorderRule r) {
  switch (r) {
    case ReorderRule::none: return "none";
    case ReorderRule::adjacent_swap: return "adjacent-swap";
    default: return "block-reverse";
  }
}

inline ReorderRule parse_reorder(const std::string& s) {
  if (s == "none") return ReorderRule::none;
  if (s == "adjacent-swap") return ReorderRule::adjacent_swap;
  if (s == "block-reverse") return ReorderRule::block_reverse;
  throw ConfigError("reorder rule must be none, adjacent-swap or block-reverse, got '" + s + "'");
}

/// Parameters of a synthetic language pair. Both languages share one
/// class-based bigram grammar; the target side is the image of the source
/// side under a bijective lexicon followed by a reordering rule.
struct SynthSpec {
  std::size_t vocab = 100;  // words per language
  std::size_t min_len = 4, max_len = 10;
  std::size_t mono = 5000;  // monolingual training sentences per side
  std::size_t valid = 300;  // monolingual validation sentences per side
  std::size_t test = 500;   // parallel test pairs
  ReorderRule reorder = ReorderRule::adjacent_swap;
  std::size_t block = 3;    // width for block-reverse
  double zipf = 1.1;
  std::uint64_t seed = 1;
  std::size_t emb_dim = 64;

  void validate() const {
    if (vocab < 10) throw ConfigError("synthetic vocabulary must have at least 10 words");
    if (min_len < 1 || min_len > max_len) throw ConfigError("synthetic lengths need 1 <= min_len <= max_len");
    if (mono < 1 || valid < 1 || test < 1) throw ConfigError("synthetic sentence counts must be >= 1");
    if (reorder == ReorderRule::block_reverse && block < 2) throw ConfigError("block-reverse width must be >= 2");
    if (!(zipf > 0)) throw ConfigError("zipf exponent must be > 0");
  }
};

/// Applies the reordering rule. Both rules are involutions, so this is also
/// the inverse transform.
inline std::vector<std::string> apply_reorder(std::vector<std::string> s, ReorderRule rule, std::size_t block) {
  if (rule == ReorderRule::adjacent_swap) {
    for (std::size_t i = 0; i + 1 < s.size(); i += 2) std::swap(s[i], s[i + 1]);
  } else if (rule == ReorderRule::block_reverse) {
    for (std::size_t i = 0; i < s.size(); i += block) std::reverse(s.begin() + i, s.begin() + std::min(s.size(), i + block));
  }
  return s;
}

/// The generative process and the ground-truth translation for one spec.
class SynthLanguagePair {
 public:
  explicit SynthLanguagePair(SynthSpec spec) : spec_(spec) {
    spec_.validate();
    const std::size_t V = spec_.vocab;
    classes_ = std::max<std::size_t>(1, V / 10);
    for (std::size_t i = 0; i < V; ++i) {
      src_words_.push_back(word("s", i));
      tgt_words_.push_back(word("t", i));
    }
    auto lex_rng = Rng::stream(spec_.seed, "synth.lexicon");
    std::vector<std::size_t> perm(V);
    for (std::size_t i = 0; i < V; ++i) perm[i] = i;
    lex_rng.shuffle(perm);
    for (std::size_t i = 0; i < V; ++i) {
      fwd_[src_words_[i]] = tgt_words_[perm[i]];
      bwd_[tgt_words_[perm[i]]] = src_words_[i];
    }

    // Word classes with a sparse successor structure and Zipf-ranked members.
    auto g = Rng::stream(spec_.seed, "synth.grammar");
    members_.assign(classes_, {});
    for (std::size_t i = 0; i < V; ++i) members_[i % classes_].push_back(i);
    for (auto& m : members_) g.shuffle(m);
    successors_.assign(classes_, {});
    for (std::size_t c = 0; c < classes_; ++c) {
      const std::size_t a = g.below(classes_);
      std::size_t b = g.below(classes_);
      if (classes_ > 1)
        while (b == a) b = g.below(classes_);
      successors_[c] = {a, b};
    }
  }

  const SynthSpec& spec() const { return spec_; }
  const std::vector<std::string>& src_words() const { return src_words_; }
  const std::vector<std::string>& tgt_words() const { return tgt_words_; }
  std::size_t class_of(std::size_t word_index) const { return word_index % classes_; }

  /// Samples one source-language sentence.
  std::vector<std::string> sample(Rng& rng) const {
    const std::size_t len = spec_.min_len + rng.below(spec_.max_len - spec_.min_len + 1);
    std::vector<std::string> s;
    std::size_t c = rng.below(classes_);
    for (std::size_t i = 0; i < len; ++i) {
      s.push_back(src_words_[members_[c][zipf_index(members_[c].size(), rng)]]);
      c = rng.uniform() < 0.7 ? successors_[c][0] : successors_[c][1];
    }
    return s;
  }

  /// Lexicon substitution then reordering (src -> tgt), or the inverse.
  std::vector<std::string> translate(const std::vector<std::string>& s, Lang from) const {
    const auto& table = from == Lang::src ? fwd_ : bwd_;
    std::vector<std::string> out;
    if (from == Lang::src) {
      for (const auto& w : s) out.push_back(lookup(table, w));
      return apply_reorder(out, spec_.reorder, spec_.block);
    }
    for (const auto& w : apply_reorder(s, spec_.reorder, spec_.block)) out.push_back(lookup(table, w));
    return out;
  }

  Lexicon lexicon() const { return Lexicon(fwd_); }

  /// Synthetic cross-lingual word vectors: class centroid plus a word
  /// component, shared by a word and its translation up to small noise.
  std::pair<std::vector<std::string>, std::vector<std::string>> embeddings() const {
    auto rng = Rng::stream(spec_.seed, "synth.embeddings");
    const std::size_t d = spec_.emb_dim;
    std::vector<std::vector<double>> centroid(classes_, std::vector<double>(d));
    for (auto& c : centroid)
      for (auto& x : c) x = rng.uniform(-0.3, 0.3);
    std::vector<std::string> src_lines, tgt_lines;
    for (std::size_t i = 0; i < src_words_.size(); ++i) {
      std::string ls = src_words_[i], lt = lookup(fwd_, src_words_[i]);
      for (std::size_t j = 0; j < d; ++j) {
        const double v = centroid[class_of(i)][j] + rng.uniform(-0.3, 0.3);
        ls += " " + fmt(v);
        lt += " " + fmt(v + rng.uniform(-0.03, 0.03));
      }
      src_lines.push_back(std::move(ls));
      tgt_lines.push_back(std::move(lt));
    }
    std::sort(tgt_lines.begin(), tgt_lines.end());
    return {src_lines, tgt_lines};
  }

 private:
  static std::string word(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%03zu", prefix, i);
    return buf;
  }

  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.5f", v);
    return buf;
  }

  static const std::string& lookup(const std::map<std::string, std::string>& m, const std::string& w) {
    auto it = m.find(w);
    if (it == m.end()) throw ContractError("synthetic translation: word '" + w + "' is not in the vocabulary");
    return it->second;
  }

  std::size_t zipf_index(std::size_t n, Rng& rng) const {
    double total = 0;
    for (std::size_t r = 0; r < n; ++r) total += std::pow(static_cast<double>(r + 1), -spec_.zipf);
    double u = rng.uniform() * total;
    for (std::size_t r = 0; r < n; ++r) {
      u -= std::pow(static_cast<double>(r + 1), -spec_.zipf);
      if (u < 0) return r;
    }
    return n - 1;
  }

  SynthSpec spec_;
  std::size_t classes_ = 1;
  std::vector<std::string> src_words_, tgt_words_;
  std::map<std::string, std::string> fwd_, bwd_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::array<std::size_t, 2>> successors_;
};

inline std::vector<std::string> ground_truth_translate(const SynthSpec& spec, const std::vector<std::string>& sentence,
                                                       Lang from) {
  return SynthLanguagePair(spec).translate(sentence, from);
}

/// Sentences of one generated dataset, as whitespace-joined lines.
struct SynthCorpus {
  std::vector<std::string> train_src, train_tgt;
  std::vector<std::string> valid_src, valid_tgt;
  std::vector<std::string> test_src, test_tgt;  // aligned
};

/// Draws all sets from separate seed streams. No source-side sentence (or
/// source preimage of a target sentence) occurs in two places.
inline SynthCorpus generate(const SynthLanguagePair& pair) {
  const auto& spec = pair.spec();
  std::set<std::vector<std::string>> used;
  auto draw = [&](const std::string& label, std::size_t n) {
    auto rng = Rng::stream(spec.seed, label);
    std::vector<std::vector<std::string>> out;
    std::size_t attempts = 0;
    while (out.size() < n) {
      if (++attempts > 100 * n + 1000) throw ContractError("synthetic generator cannot find enough distinct sentences");
      auto s = pair.sample(rng);
      if (used.insert(s).second) out.push_back(std::move(s));
    }
    return out;
  };
  auto to_tgt = [&](const std::vector<std::vector<std::string>>& ss) {
    std::vector<std::string> out;
    for (const auto& s : ss) out.push_back(join(pair.translate(s, Lang::src)));
    return out;
  };
  auto lines = [](const std::vector<std::vector<std::string>>& ss) {
    std::vector<std::string> out;
    for (const auto& s : ss) out.push_back(join(s));
    return out;
  };

  SynthCorpus c;
  const auto test = draw("synth.test", spec.test);
  c.test_src = lines(test);
  c.test_tgt = to_tgt(test);
  c.valid_src = lines(draw("synth.valid.src", spec.valid));
  c.valid_tgt = to_tgt(draw("synth.valid.tgt", spec.valid));
  c.train_src = lines(draw("synth.mono.src", spec.mono));
  c.train_tgt = to_tgt(draw("synth.mono.tgt", spec.mono));
  return c;
}

/// Writes corpora, the ground-truth lexicon, word vectors and a training
/// config into `dir`; returns the config path.
inline std::string write_synthetic_dataset(const SynthSpec& spec, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const SynthLanguagePair pair(spec);
  const auto c = generate(pair);
  auto p = [&](const char* name) { return (fs::path(dir) / name).string(); };
  write_lines(p("train.src"), c.train_src);
  write_lines(p("train.tgt"), c.train_tgt);
  write_lines(p("valid.src"), c.valid_src);
  write_lines(p("valid.tgt"), c.valid_tgt);
  write_lines(p("test.src"), c.test_src);
  write_lines(p("test.tgt"), c.test_tgt);
  pair.lexicon().save(p("lexicon.tsv"));
  const auto [es, et] = pair.embeddings();
  write_lines(p("emb.src.vec"), es);
  write_lines(p("emb.tgt.vec"), et);
  write_lines(p("synth.txt"), {"vocab = " + std::to_string(spec.vocab), "min_len = " + std::to_string(spec.min_len),
                               "max_len = " + std::to_string(spec.max_len), "mono = " + std::to_string(spec.mono),
                               "valid = " + std::to_string(spec.valid), "test = " + std::to_string(spec.test),
                               std::string("reorder = ") + to_string(spec.reorder),
                               "block = " + std::to_string(spec.block), "zipf = " + std::to_string(spec.zipf),
                               "seed = " + std::to_string(spec.seed), "emb_dim = " + std::to_string(spec.emb_dim)});
  write_lines(p("train.conf"), {"# synthetic language pair, desk preset",
                                "preset = desk",
                                "seed = " + std::to_string(spec.seed),
                                "model.emb_dim = " + std::to_string(spec.emb_dim),
                                "data.src_train = train.src",
                                "data.tgt_train = train.tgt",
                                "data.src_valid = valid.src",
                                "data.tgt_valid = valid.tgt",
                                "data.test_src = test.src",
                                "data.test_tgt = test.tgt",
                                "data.lexicon = lexicon.tsv",
                                "data.src_emb = emb.src.vec",
                                "data.tgt_emb = emb.tgt.vec"});
  return p("train.conf");
}

}  // namespace unmt
