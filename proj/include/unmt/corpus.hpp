#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace unmt {

enum class Lang : std::uint8_t { src = 0, tgt = 1 };

inline const char* to_string(Lang l) { return l == Lang::src ? "src" : "tgt"; }
inline Lang other(Lang l) { return l == Lang::src ? Lang::tgt : Lang::src; }
inline Lang parse_lang(std::string_view s) {
  if (s == "src") return Lang::src;
  if (s == "tgt") return Lang::tgt;
  throw ContractError("unknown language tag '" + std::string(s) + "'");
}

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kSos = 2;  // one per vocabulary, so language dependent
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kNumReserved = 4;

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += words[i];
  }
  return s;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

/// Word <-> id mapping for one language. Ids 0..3 are PAD, UNK, SOS, EOS.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(Lang::src) {}
  explicit Vocabulary(Lang lang) : lang_(lang), words_{"<pad>", "<unk>", "<s>", "</s>"} {
    for (TokenId i = 0; i < kNumReserved; ++i) index_[words_[i]] = i;
  }

  /// Words occurring more than `min_count` times, ordered by descending count
  /// then lexicographically.
  static Vocabulary from_lines(const std::vector<std::string>& lines, std::size_t min_count, Lang lang) {
    std::map<std::string, std::size_t> counts;
    std::size_t tokens = 0;
    for (const auto& l : lines)
      for (auto& w : split_ws(l)) {
        ++counts[w];
        ++tokens;
      }
    if (tokens == 0) throw ContractError("build_vocab: empty corpus");
    std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v(lang);
    for (const auto& [w, c] : items) {
      if (c > min_count && !v.contains(w)) v.add(w);
    }
    return v;
  }

  /// One word per line, reserved tokens included, in id order.
  static Vocabulary load(const std::string& path, Lang lang) {
    auto lines = read_lines(path);
    if (lines.size() < static_cast<std::size_t>(kNumReserved)) throw FormatError("vocabulary file '" + path + "' too short");
    Vocabulary v(lang);
    for (std::size_t i = kNumReserved; i < lines.size(); ++i) {
      if (lines[i].empty() || v.contains(lines[i])) {
        throw FormatError("vocabulary file '" + path + "' line " + std::to_string(i + 1) + ": empty or duplicate word");
      }
      v.add(lines[i]);
    }
    return v;
  }

  void save(const std::string& path) const { write_lines(path, words_); }

  Lang lang() const { return lang_; }
  std::size_t size() const { return words_.size(); }
  bool contains(const std::string& w) const { return index_.count(w) != 0; }

  TokenId id_of(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& word_of(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
      throw ContractError("vocabulary: id " + std::to_string(id) + " outside [0," + std::to_string(words_.size()) + ")");
    }
    return words_[static_cast<std::size_t>(id)];
  }

  TokenIds encode(std::string_view text) const {
    auto words = split_ws(text);
    if (words.empty()) throw ContractError("encode: empty sentence");
    TokenIds ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(id_of(w));
    return ids;
  }

  std::string decode(const TokenIds& ids) const {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) s += ' ';
      s += word_of(ids[i]);
    }
    return s;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.lang_ == b.lang_ && a.words_ == b.words_;
  }

 private:
  void add(const std::string& w) {
    index_[w] = static_cast<TokenId>(words_.size());
    words_.push_back(w);
  }

  Lang lang_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

inline Vocabulary build_vocab(const std::string& corpus_file, std::size_t min_count, Lang lang) {
  return Vocabulary::from_lines(read_lines(corpus_file), min_count, lang);
}

struct MonolingualDataset {
  Lang lang = Lang::src;
  std::vector<TokenIds> sentences;
  std::string path;
  std::size_t dropped_too_long = 0;

  std::size_t size() const { return sentences.size(); }
};

/// Encodes every nonempty line; sentences longer than `max_len` words are left out.
inline MonolingualDataset make_dataset(const std::vector<std::string>& lines, const Vocabulary& vocab,
                                       std::size_t max_len = 50, std::string path = {}) {
  MonolingualDataset d;
  d.lang = vocab.lang();
  d.path = std::move(path);
  for (const auto& l : lines) {
    if (split_ws(l).empty()) continue;
    auto ids = vocab.encode(l);
    if (ids.size() > max_len) {
      ++d.dropped_too_long;
      continue;
    }
    d.sentences.push_back(std::move(ids));
  }
  return d;
}

inline MonolingualDataset load_dataset(const std::string& path, const Vocabulary& vocab, std::size_t max_len = 50) {
  return make_dataset(read_lines(path), vocab, max_len, path);
}

/// Padded id matrix [batch x max_len] for sentences of one language.
struct SeqBatch {
  Lang lang = Lang::src;
  std::size_t batch = 0;
  std::size_t max_len = 0;
  std::vector<TokenId> ids;
  std::vector<std::size_t> lengths;

  TokenId at(std::size_t b, std::size_t t) const { return ids[b * max_len + t]; }

  /// Column t across the batch (PAD past each row's length).
  std::vector<TokenId> column(std::size_t t) const {
    std::vector<TokenId> c(batch);
    for (std::size_t b = 0; b < batch; ++b) c[b] = at(b, t);
    return c;
  }

  /// 1 where position t is inside row b.
  std::vector<std::uint8_t> mask(std::size_t t) const {
    std::vector<std::uint8_t> m(batch);
    for (std::size_t b = 0; b < batch; ++b) m[b] = t < lengths[b];
    return m;
  }

  TokenIds row(std::size_t b) const { return TokenIds(ids.begin() + b * max_len, ids.begin() + b * max_len + lengths[b]); }
};

inline SeqBatch make_batch(const std::vector<TokenIds>& sentences, Lang lang) {
  if (sentences.empty()) throw ContractError("make_batch: no sentences");
  SeqBatch b;
  b.lang = lang;
  b.batch = sentences.size();
  for (const auto& s : sentences) {
    if (s.empty()) throw ContractError("make_batch: empty sentence");
    b.max_len = std::max(b.max_len, s.size());
  }
  b.ids.assign(b.batch * b.max_len, kPad);
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    for (std::size_t t = 0; t < sentences[i].size(); ++t) {
      if (sentences[i][t] == kPad) throw ContractError("make_batch: sentence contains PAD");
      b.ids[i * b.max_len + t] = sentences[i][t];
    }
    b.lengths.push_back(sentences[i].size());
  }
  return b;
}

/// Seeded shuffle of dataset indices split into consecutive groups of
/// `batch_size` (the last group may be smaller).
inline std::vector<std::vector<std::size_t>> make_batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw ContractError("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch_size));
  return out;
}

inline std::vector<SeqBatch> make_batches(const MonolingualDataset& data, std::size_t batch_size, std::uint64_t seed) {
  std::vector<SeqBatch> out;
  for (const auto& idx : make_batch_indices(data.size(), batch_size, seed)) {
    std::vector<TokenIds> s;
    for (auto i : idx) s.push_back(data.sentences[i]);
    out.push_back(make_batch(s, data.lang));
  }
  return out;
}

/// Uniform [-0.1, 0.1] initialisation used for embeddings and weights.
template <class T>
Tensor<T> random_uniform(Shape shape, Rng& rng, double range = 0.1) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-range, range));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <class T>
struct LoadedEmbeddings {
  Tensor<T> table;
  double coverage = 0;  // fraction of non-reserved words found in the file
};

/// Reads "word v1 ... vd" lines. Vocabulary rows present in the file are
/// copied; all others (reserved ids included) keep the random initialisation.
template <class T>
LoadedEmbeddings<T> load_embeddings(const Vocabulary& vocab, const std::string& path, std::size_t dim, Rng& rng) {
  auto table = random_uniform<T>({vocab.size(), dim}, rng);
  auto lines = read_lines(path);
  std::vector<std::uint8_t> found(vocab.size(), 0);
  auto w = table.mutable_data();
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    auto fields = split_ws(lines[ln]);
    if (fields.empty()) continue;
    if (fields.size() != dim + 1) {
      throw FormatError("embeddings '" + path + "' line " + std::to_string(ln + 1) + ": expected " +
                        std::to_string(dim) + " values, got " + std::to_string(fields.size() - 1));
    }
    const TokenId id = vocab.id_of(fields[0]);
    if (id < kNumReserved || !vocab.contains(fields[0])) continue;
    for (std::size_t j = 0; j < dim; ++j) {
      try {
        w[static_cast<std::size_t>(id) * dim + j] = static_cast<T>(std::stod(fields[j + 1]));
      } catch (const std::exception&) {
        throw FormatError("embeddings '" + path + "' line " + std::to_string(ln + 1) + ": bad number '" +
                          fields[j + 1] + "'");
      }
    }
    found[static_cast<std::size_t>(id)] = 1;
  }
  const std::size_t words = vocab.size() - kNumReserved;
  std::size_t hit = 0;
  for (auto f : found) hit += f;
  return {table, words ? static_cast<double>(hit) / static_cast<double>(words) : 0.0};
}

}  // namespace unmt
