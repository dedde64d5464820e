#pragma once

// Shared attentional encoder-decoder. The two languages differ only in their
// lookup tables (embeddings) and output projections; the recurrent stacks and
// the attention map are shared.

#include <algorithm>
#include <array>
#include <exception>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "corpus.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace unmt {

struct ArchConfig {
  std::size_t emb_dim = 64;
  std::size_t hidden = 64;  // per direction in the encoder; decoder state size
  std::size_t layers = 1;

  static ArchConfig desk() { return {64, 64, 1}; }
  static ArchConfig paper() { return {300, 300, 3}; }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

template <std::floating_point T>
struct LstmWeights {
  Tensor<T> w;  // [(input + hidden) x 4*hidden], gate order i, f, g, o
  Tensor<T> b;  // [4*hidden]
};

template <class T>
struct LstmState {
  Tensor<T> h;
  Tensor<T> c;
};

template <class T>
LstmState<T> lstm_step(const LstmWeights<T>& p, const Tensor<T>& x, const LstmState<T>& s) {
  const std::size_t n = s.h.cols();
  auto gates = add_bias(matmul(concat<T>({x, s.h}), p.w), p.b);
  auto i = sigmoid(slice_cols(gates, 0, n));
  auto f = sigmoid(slice_cols(gates, n, 2 * n));
  auto g = tanh(slice_cols(gates, 2 * n, 3 * n));
  auto o = sigmoid(slice_cols(gates, 3 * n, 4 * n));
  auto c = add(mul(f, s.c), mul(i, g));
  return {mul(o, tanh(c)), c};
}

template <class T>
LstmWeights<T> init_lstm(std::size_t input, std::size_t hidden, Rng& rng) {
  return {random_uniform<T>({input + hidden, 4 * hidden}, rng), Tensor<T>::zeros({4 * hidden}, true)};
}

/// All trainable translator parameters: Z^src, Z^tgt, the shared encoder and
/// decoder stacks, attention, and per-language output projections.
template <std::floating_point T>
struct ModelParams {
  ArchConfig arch;
  std::array<Tensor<T>, 2> emb;
  std::vector<LstmWeights<T>> enc_fwd, enc_bwd;
  Tensor<T> proj_w, proj_b;               // [2n x n], [n]: top bidirectional states to z
  std::vector<Tensor<T>> init_w, init_b;  // decoder initial state per layer
  Tensor<T> attn;                         // [n x n]
  std::vector<LstmWeights<T>> dec;
  std::array<Tensor<T>, 2> out_w, out_b;  // [2n x V_l], [V_l]

  static ModelParams init(const ArchConfig& arch, std::size_t vocab_src, std::size_t vocab_tgt, Rng& rng) {
    const std::size_t d = arch.emb_dim, n = arch.hidden;
    if (arch.layers == 0 || d == 0 || n == 0) throw ConfigError("model dimensions must be positive");
    ModelParams p;
    p.arch = arch;
    p.emb[0] = random_uniform<T>({vocab_src, d}, rng);
    p.emb[1] = random_uniform<T>({vocab_tgt, d}, rng);
    for (std::size_t l = 0; l < arch.layers; ++l) {
      const std::size_t in = l == 0 ? d : 2 * n;
      p.enc_fwd.push_back(init_lstm<T>(in, n, rng));
      p.enc_bwd.push_back(init_lstm<T>(in, n, rng));
    }
    p.proj_w = random_uniform<T>({2 * n, n}, rng);
    p.proj_b = Tensor<T>::zeros({n}, true);
    for (std::size_t l = 0; l < arch.layers; ++l) {
      p.init_w.push_back(random_uniform<T>({2 * n, n}, rng));
      p.init_b.push_back(Tensor<T>::zeros({n}, true));
    }
    p.attn = random_uniform<T>({n, n}, rng);
    for (std::size_t l = 0; l < arch.layers; ++l) p.dec.push_back(init_lstm<T>(l == 0 ? d + n : n, n, rng));
    for (int l = 0; l < 2; ++l) {
      const std::size_t V = p.emb[l].rows();
      p.out_w[l] = random_uniform<T>({2 * n, V}, rng);
      p.out_b[l] = Tensor<T>::zeros({V}, true);
    }
    return p;
  }

  std::size_t vocab_size(Lang l) const { return emb[static_cast<int>(l)].rows(); }

  /// Stable names in a fixed order (checkpoints and optimizers rely on it).
  std::vector<std::pair<std::string, Tensor<T>>> named() const {
    std::vector<std::pair<std::string, Tensor<T>>> v;
    v.emplace_back("emb.src", emb[0]);
    v.emplace_back("emb.tgt", emb[1]);
    for (std::size_t l = 0; l < enc_fwd.size(); ++l) {
      const auto L = std::to_string(l);
      v.emplace_back("enc.fwd." + L + ".w", enc_fwd[l].w);
      v.emplace_back("enc.fwd." + L + ".b", enc_fwd[l].b);
      v.emplace_back("enc.bwd." + L + ".w", enc_bwd[l].w);
      v.emplace_back("enc.bwd." + L + ".b", enc_bwd[l].b);
    }
    v.emplace_back("enc.proj.w", proj_w);
    v.emplace_back("enc.proj.b", proj_b);
    for (std::size_t l = 0; l < init_w.size(); ++l) {
      v.emplace_back("dec.init." + std::to_string(l) + ".w", init_w[l]);
      v.emplace_back("dec.init." + std::to_string(l) + ".b", init_b[l]);
    }
    v.emplace_back("dec.attn", attn);
    for (std::size_t l = 0; l < dec.size(); ++l) {
      v.emplace_back("dec.lstm." + std::to_string(l) + ".w", dec[l].w);
      v.emplace_back("dec.lstm." + std::to_string(l) + ".b", dec[l].b);
    }
    v.emplace_back("dec.out.src.w", out_w[0]);
    v.emplace_back("dec.out.src.b", out_b[0]);
    v.emplace_back("dec.out.tgt.w", out_w[1]);
    v.emplace_back("dec.out.tgt.b", out_b[1]);
    return v;
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> v;
    for (auto& [_, t] : named()) v.push_back(t);
    return v;
  }

  /// Embeddings plus encoder stacks: what the adversarial loss may update.
  std::vector<Tensor<T>> encoder_tensors() const {
    std::vector<Tensor<T>> v;
    for (auto& [name, t] : named())
      if (name.rfind("emb.", 0) == 0 || name.rfind("enc.", 0) == 0) v.push_back(t);
    return v;
  }

  /// Deep copy with a different scalar type / grad flag.
  template <std::floating_point U>
  ModelParams<U> cast(bool requires_grad) const {
    ModelParams<U> p;
    p.arch = arch;
    auto cv = [&](const Tensor<T>& t) { return t.template cast<U>(requires_grad); };
    auto cl = [&](const LstmWeights<T>& w) { return LstmWeights<U>{cv(w.w), cv(w.b)}; };
    for (int l = 0; l < 2; ++l) {
      p.emb[l] = cv(emb[l]);
      p.out_w[l] = cv(out_w[l]);
      p.out_b[l] = cv(out_b[l]);
    }
    for (auto& w : enc_fwd) p.enc_fwd.push_back(cl(w));
    for (auto& w : enc_bwd) p.enc_bwd.push_back(cl(w));
    for (auto& w : dec) p.dec.push_back(cl(w));
    for (auto& t : init_w) p.init_w.push_back(cv(t));
    for (auto& t : init_b) p.init_b.push_back(cv(t));
    p.proj_w = cv(proj_w);
    p.proj_b = cv(proj_b);
    p.attn = cv(attn);
    return p;
  }

  /// Read-only deep copy that builds no graph when used.
  ModelParams frozen() const { return cast<T>(false); }
};

/// Encoder output z = (z_1..z_m) per sentence, stored as rows b*steps + t.
template <class T>
struct Encoded {
  Lang lang = Lang::src;
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::vector<std::size_t> lengths;
  Tensor<T> z;                  // [batch*steps x n]; PAD rows are zero
  std::vector<Tensor<T>> last;  // per layer [batch x 2n]: final fwd state ++ final bwd state

  /// Row indices of real (non-PAD) positions, sentence by sentence.
  std::vector<std::size_t> position_rows() const {
    std::vector<std::size_t> r;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < lengths[b]; ++t) r.push_back(b * steps + t);
    return r;
  }
};

template <class T>
Encoded<T> encode(const ModelParams<T>& p, const SeqBatch& batch, Lang lang) {
  if (batch.lang != lang) {
    throw ContractError(std::string("encode: batch is ") + to_string(batch.lang) + " but language tag is " + to_string(lang));
  }
  const std::size_t B = batch.batch, S = batch.max_len, n = p.arch.hidden;
  const auto& table = p.emb[static_cast<int>(lang)];

  std::vector<std::vector<std::uint8_t>> masks(S);
  std::vector<Tensor<T>> inputs(S);
  for (std::size_t t = 0; t < S; ++t) {
    masks[t] = batch.mask(t);
    inputs[t] = embedding(table, batch.column(t));
  }

  Encoded<T> e;
  e.lang = lang;
  e.batch = B;
  e.steps = S;
  e.lengths = batch.lengths;
  for (std::size_t l = 0; l < p.arch.layers; ++l) {
    std::vector<Tensor<T>> fwd(S), bwd(S);
    LstmState<T> s{Tensor<T>::zeros({B, n}), Tensor<T>::zeros({B, n})};
    for (std::size_t t = 0; t < S; ++t) {
      auto nx = lstm_step(p.enc_fwd[l], inputs[t], s);
      s = {where_rows(masks[t], nx.h, s.h), where_rows(masks[t], nx.c, s.c)};
      fwd[t] = s.h;
    }
    auto last_fwd = s.h;
    s = {Tensor<T>::zeros({B, n}), Tensor<T>::zeros({B, n})};
    for (std::size_t t = S; t-- > 0;) {
      auto nx = lstm_step(p.enc_bwd[l], inputs[t], s);
      s = {where_rows(masks[t], nx.h, s.h), where_rows(masks[t], nx.c, s.c)};
      bwd[t] = s.h;
    }
    e.last.push_back(concat<T>({last_fwd, s.h}));
    for (std::size_t t = 0; t < S; ++t) inputs[t] = mask_rows(concat<T>({fwd[t], bwd[t]}), masks[t]);
  }
  std::vector<std::uint8_t> keep(B * S, 0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) keep[b * S + t] = 1;
  e.z = mask_rows(add_bias(matmul(stack_steps(inputs), p.proj_w), p.proj_b), keep);
  return e;
}

template <class T>
struct Attention {
  Tensor<T> context;  // [B x n]
  Tensor<T> weights;  // [B x steps], zero past each length
};

/// Bilinear attention: score(h, z_j) = h . (z_j W_a), masked softmax over j.
template <class T>
Attention<T> attend(const Tensor<T>& h, const Tensor<T>& keys, const Encoded<T>& enc) {
  auto w = softmax(rows_dot(h, keys), enc.lengths);
  return {weighted_rows(w, enc.z), w};
}

template <class T>
struct DecoderState {
  std::vector<LstmState<T>> layers;
};

template <class T>
DecoderState<T> decoder_init(const ModelParams<T>& p, const Encoded<T>& enc) {
  DecoderState<T> s;
  for (std::size_t l = 0; l < p.arch.layers; ++l) {
    auto h = tanh(add_bias(matmul(enc.last[l], p.init_w[l]), p.init_b[l]));
    s.layers.push_back({h, Tensor<T>::zeros({enc.batch, p.arch.hidden})});
  }
  return s;
}

/// One decoder step. The context is computed from the previous top state and
/// fed with the previous word; the output feature is [h_top ; context].
template <class T>
std::pair<DecoderState<T>, Tensor<T>> decoder_step(const ModelParams<T>& p, const Encoded<T>& enc, const Tensor<T>& keys,
                                                   Lang lang, const std::vector<TokenId>& prev,
                                                   const DecoderState<T>& s) {
  auto ctx = attend(s.layers.back().h, keys, enc).context;
  auto x = concat<T>({embedding(p.emb[static_cast<int>(lang)], prev), ctx});
  DecoderState<T> next;
  for (std::size_t l = 0; l < p.arch.layers; ++l) {
    next.layers.push_back(lstm_step(p.dec[l], x, s.layers[l]));
    x = next.layers.back().h;
  }
  return {std::move(next), concat<T>({x, ctx})};
}

template <class T>
struct TeacherForced {
  Tensor<T> logits;               // [B*steps x V_l]
  std::vector<TokenId> targets;   // row-aligned; PAD rows are ignored
  std::size_t steps = 0;
};

/// Decoder run conditioned on gold prefixes: inputs SOS y_1..y_k, targets
/// y_1..y_k EOS.
template <class T>
TeacherForced<T> decode_teacher_forced(const ModelParams<T>& p, const Encoded<T>& enc, Lang lang, const SeqBatch& target) {
  if (target.lang != lang) throw ContractError("decode_teacher_forced: target batch language differs from decoder language");
  if (target.batch != enc.batch) {
    throw DimensionError("decode_teacher_forced: " + std::to_string(target.batch) + " targets for " +
                         std::to_string(enc.batch) + " encoded sentences");
  }
  const std::size_t B = enc.batch, S = target.max_len + 1;
  const auto keys = matmul(enc.z, p.attn);
  auto state = decoder_init(p, enc);
  std::vector<Tensor<T>> feats;
  TeacherForced<T> out;
  out.steps = S;
  out.targets.assign(B * S, kPad);
  for (std::size_t t = 0; t < S; ++t) {
    std::vector<TokenId> prev(B);
    for (std::size_t b = 0; b < B; ++b) {
      if (t == 0) prev[b] = kSos;
      else prev[b] = t - 1 < target.lengths[b] ? target.at(b, t - 1) : kPad;
      if (t < target.lengths[b]) out.targets[b * S + t] = target.at(b, t);
      else if (t == target.lengths[b]) out.targets[b * S + t] = kEos;
    }
    auto [next, feat] = decoder_step(p, enc, keys, lang, prev, state);
    state = std::move(next);
    feats.push_back(std::move(feat));
  }
  const int li = static_cast<int>(lang);
  out.logits = add_bias(matmul(stack_steps(feats), p.out_w[li]), p.out_b[li]);
  return out;
}

/// Sum of token cross-entropies per sentence, averaged over the batch.
template <class T>
Tensor<T> sequence_loss(const TeacherForced<T>& tf, std::size_t batch) {
  return scale(sum(cross_entropy(tf.logits, tf.targets, kPad)), T(1) / static_cast<T>(batch));
}

inline std::size_t default_max_len(std::size_t source_len) { return source_len * 3 / 2 + 5; }

/// Greedy decoding from SOS until EOS or the per-sentence length cap. EOS is
/// not included in the output. PAD and SOS are never emitted.
template <class T>
std::vector<TokenIds> decode_greedy(const ModelParams<T>& p, const Encoded<T>& enc, Lang lang,
                                    const std::vector<std::size_t>& max_len) {
  const std::size_t B = enc.batch;
  if (max_len.size() != B) throw DimensionError("decode_greedy: max_len list does not match batch");
  const auto keys = matmul(enc.z, p.attn);
  auto state = decoder_init(p, enc);
  const int li = static_cast<int>(lang);
  const std::size_t V = p.vocab_size(lang);
  std::vector<TokenIds> out(B);
  std::vector<std::uint8_t> done(B, 0);
  std::vector<TokenId> prev(B, kSos);
  const std::size_t cap = *std::max_element(max_len.begin(), max_len.end());
  for (std::size_t t = 0; t < cap; ++t) {
    auto [next, feat] = decoder_step(p, enc, keys, lang, prev, state);
    state = std::move(next);
    auto logits = add_bias(matmul(feat, p.out_w[li]), p.out_b[li]);
    std::size_t remaining = 0;
    for (std::size_t b = 0; b < B; ++b) {
      if (done[b]) continue;
      const T* row = logits.data().data() + b * V;
      TokenId best = kUnk;
      for (std::size_t j = 0; j < V; ++j) {
        if (j == static_cast<std::size_t>(kPad) || j == static_cast<std::size_t>(kSos)) continue;
        if (row[j] > row[best]) best = static_cast<TokenId>(j);
      }
      prev[b] = best;
      if (best == kEos) {
        done[b] = 1;
      } else {
        out[b].push_back(best);
        if (out[b].size() >= max_len[b]) done[b] = 1;
      }
      remaining += !done[b];
    }
    if (remaining == 0) break;
  }
  return out;
}

/// Anything that maps sentences of one language to the other.
class SentenceTranslator {
 public:
  virtual ~SentenceTranslator() = default;
  virtual Lang from() const = 0;
  virtual Lang to() const = 0;
  virtual std::vector<TokenIds> translate_all(const std::vector<TokenIds>& sentences) const = 0;
};

/// M_{from->to} = d(e(., from), to) over a frozen parameter copy.
template <std::floating_point T>
class TranslationModel final : public SentenceTranslator {
 public:
  TranslationModel(std::shared_ptr<const ModelParams<T>> params, Lang from, Lang to, std::size_t batch_size = 64)
      : params_(std::move(params)), from_(from), to_(to), batch_size_(batch_size) {}

  static TranslationModel freeze(const ModelParams<T>& p, Lang from, Lang to) {
    return TranslationModel(std::make_shared<const ModelParams<T>>(p.frozen()), from, to);
  }

  Lang from() const override { return from_; }
  Lang to() const override { return to_; }
  const ModelParams<T>& params() const { return *params_; }
  std::shared_ptr<const ModelParams<T>> shared_params() const { return params_; }

  TokenIds translate(const TokenIds& sentence) const { return translate_all({sentence}).front(); }

  /// Worker threads for translate_all; the output does not depend on it.
  void set_threads(std::size_t n) { threads_ = std::max<std::size_t>(1, n); }

  /// Batched by length for speed; results come back in input order and do not
  /// depend on batch composition. Empty inputs translate to empty outputs.
  std::vector<TokenIds> translate_all(const std::vector<TokenIds>& sentences) const override {
    std::vector<TokenIds> out(sentences.size());
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < sentences.size(); ++i)
      if (!sentences[i].empty()) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sentences[a].size() < sentences[b].size(); });
    const std::size_t chunks = (order.size() + batch_size_ - 1) / batch_size_;
    auto run_chunk = [&](std::size_t k) {
      const std::size_t i = k * batch_size_, end = std::min(order.size(), i + batch_size_);
      std::vector<TokenIds> chunk;
      std::vector<std::size_t> caps;
      for (std::size_t j = i; j < end; ++j) {
        chunk.push_back(sentences[order[j]]);
        caps.push_back(default_max_len(chunk.back().size()));
      }
      const auto enc = encode(*params_, make_batch(chunk, from_), from_);
      auto res = decode_greedy(*params_, enc, to_, caps);
      for (std::size_t j = i; j < end; ++j) out[order[j]] = std::move(res[j - i]);
    };
    const std::size_t workers = std::min(threads_, chunks);
    if (workers <= 1) {
      for (std::size_t k = 0; k < chunks; ++k) run_chunk(k);
      return out;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t k = w; k < chunks; k += workers) run_chunk(k);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    return out;
  }

 private:
  std::shared_ptr<const ModelParams<T>> params_;
  Lang from_, to_;
  std::size_t batch_size_;
  std::size_t threads_ = 1;
};

/// Word-to-word dictionary from one language's surface forms to the other's.
class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(std::map<std::string, std::string> m) : map_(std::move(m)) {}

  /// "source_word<TAB>target_word" lines; keys must be unique.
  static Lexicon load(const std::string& path) {
    Lexicon lx;
    const auto lines = read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto tab = lines[i].find('\t');
      if (tab == std::string::npos || tab == 0 || tab + 1 >= lines[i].size()) {
        throw FormatError("lexicon '" + path + "' line " + std::to_string(i + 1) + ": expected 'source<TAB>target'");
      }
      auto key = lines[i].substr(0, tab);
      if (!lx.map_.emplace(key, lines[i].substr(tab + 1)).second) {
        throw FormatError("lexicon '" + path + "' line " + std::to_string(i + 1) + ": duplicate key '" + key + "'");
      }
    }
    return lx;
  }

  void save(const std::string& path) const {
    std::vector<std::string> lines;
    for (const auto& [a, b] : map_) lines.push_back(a + "\t" + b);
    write_lines(path, lines);
  }

  /// Inverse mapping (first entry wins if the mapping is not injective).
  Lexicon inverted() const {
    std::map<std::string, std::string> inv;
    for (const auto& [a, b] : map_) inv.emplace(b, a);
    return Lexicon(std::move(inv));
  }

  const std::string* find(const std::string& w) const {
    auto it = map_.find(w);
    return it == map_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return map_.size(); }
  const std::map<std::string, std::string>& entries() const { return map_; }

 private:
  std::map<std::string, std::string> map_;
};

/// Per-word substitution; words missing from the lexicon are copied through.
inline std::vector<std::string> wbw_translate(const Lexicon& lex, const std::vector<std::string>& sentence) {
  std::vector<std::string> out;
  out.reserve(sentence.size());
  for (const auto& w : sentence) {
    const auto* t = lex.find(w);
    out.push_back(t ? *t : w);
  }
  return out;
}

inline std::string wbw_translate(const Lexicon& lex, const std::string& sentence) {
  return join(wbw_translate(lex, split_ws(sentence)));
}

/// Word-by-word model M^(1) over token ids.
class WordByWordModel final : public SentenceTranslator {
 public:
  WordByWordModel(Lexicon lex, const Vocabulary& from, const Vocabulary& to)
      : lex_(std::move(lex)), from_(&from), to_(&to) {}

  Lang from() const override { return from_->lang(); }
  Lang to() const override { return to_->lang(); }

  std::vector<TokenIds> translate_all(const std::vector<TokenIds>& sentences) const override {
    std::vector<TokenIds> out;
    out.reserve(sentences.size());
    for (const auto& s : sentences) {
      TokenIds ids;
      for (auto id : s) {
        const auto& w = from_->word_of(id);
        const auto* t = lex_.find(w);
        ids.push_back(to_->id_of(t ? *t : w));
      }
      out.push_back(std::move(ids));
    }
    return out;
  }

 private:
  Lexicon lex_;
  const Vocabulary* from_;
  const Vocabulary* to_;
};

}  // namespace unmt
