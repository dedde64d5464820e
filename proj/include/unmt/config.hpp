#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "adversary.hpp"
#include "errors.hpp"
#include "noise.hpp"
#include "translator.hpp"

namespace unmt {

/// Model used to produce back-translations in the first outer iteration.
enum class InitModel { wbw, identity, none };

inline const char* to_string(InitModel m) {
  switch (m) {
    case InitModel::wbw: return "wbw";
    case InitModel::identity: return "identity";
    default: return "none";
  }
}

struct DataPaths {
  std::string src_train, tgt_train;
  std::string src_valid, tgt_valid;  // monolingual, used by model selection
  std::string test_src, test_tgt;    // aligned parallel test set (optional)
  std::string lexicon;               // src<TAB>tgt, needed for init.model = wbw
  std::string src_emb, tgt_emb;      // word vectors, needed for init.pretrained = true
  std::size_t min_count = 0;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string preset = "desk";

  ArchConfig arch = ArchConfig::desk();
  DiscriminatorConfig disc;
  double disc_lr = 5e-4;
  double disc_decay = 0.99;

  double lr = 3e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 5.0;

  double lambda_auto = 1.0, lambda_cd = 1.0, lambda_adv = 1.0;
  NoiseConfig noise;

  std::size_t batch_size = 32;
  std::size_t epochs_per_iter = 1;
  std::size_t iterations = 3;
  std::size_t max_len = 50;
  std::size_t eval_every = 0;      // steps between evaluations; 0 = end of each epoch only
  std::size_t eval_sentences = 0;  // cap on validation/test sentences per evaluation; 0 = all
  std::size_t log_every = 0;       // steps between metrics rows; 0 = evaluations only
  std::size_t bt_subsample = 0;    // sentences back-translated per side and iteration; 0 = all
  std::size_t bt_threads = 1;
  std::size_t ckpt_every = 0;      // steps between resumable mid-iteration checkpoints; 0 = off

  InitModel init_model = InitModel::wbw;
  bool pretrained = true;

  DataPaths data;

  static ExperimentConfig for_preset(const std::string& name) {
    ExperimentConfig c;
    c.apply_preset(name);
    return c;
  }

  void apply_preset(const std::string& name) {
    if (name == "desk") {
      arch = ArchConfig::desk();
      disc.hidden = 128;
      lr = 2e-3;
      epochs_per_iter = 3;
    } else if (name == "paper") {
      arch = ArchConfig::paper();
      disc.hidden = 1024;
      lr = 3e-4;
      epochs_per_iter = 1;
    } else {
      throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
    }
    preset = name;
  }

  void set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> items() const;

  /// Canonical "key = value" text, one entry per line in a fixed key order.
  std::string to_text() const {
    std::string s;
    for (const auto& [k, v] : items()) s += k + " = " + v + "\n";
    return s;
  }

  void validate() const {
    if (lambda_auto < 0 || lambda_cd < 0 || lambda_adv < 0) throw ConfigError("lambda.* must be >= 0");
    if (iterations < 1) throw ConfigError("train.iterations must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (arch.layers < 1 || arch.hidden < 1 || arch.emb_dim < 1) throw ConfigError("model.* sizes must be >= 1");
    if (!(lr > 0) || !(disc_lr > 0)) throw ConfigError("learning rates must be > 0");
    if (!(disc.smoothing >= 0 && disc.smoothing < 0.5)) throw ConfigError("adv.smoothing must be in [0, 0.5)");
    if (bt_threads < 1) throw ConfigError("train.bt_threads must be >= 1");
    noise.validate();
  }

  /// Parses config text. Relative data paths resolve against `base_dir`.
  /// A `preset` line is applied before all other keys.
  static ExperimentConfig parse(const std::string& text, const std::string& base_dir = {},
                                const std::string& origin = "config") {
    std::vector<std::tuple<std::size_t, std::string, std::string>> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t ln = 0;
    std::string preset = "desk";
    while (std::getline(in, line)) {
      ++ln;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(origin + " line " + std::to_string(ln) + ": expected 'key = value'");
      auto key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      if (key == "preset") preset = value;
      else kv.emplace_back(ln, key, value);
    }
    auto c = for_preset(preset);
    for (const auto& [n, key, value] : kv) {
      try {
        c.set(key, value);
      } catch (const ConfigError& e) {
        throw ConfigError(origin + " line " + std::to_string(n) + ": " + e.what());
      }
    }
    if (!base_dir.empty()) c.resolve_paths(base_dir);
    c.validate();
    return c;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    auto dir = std::filesystem::absolute(std::filesystem::path(path)).parent_path().string();
    return parse(ss.str(), dir, path);
  }

  void resolve_paths(const std::string& base_dir) {
    namespace fs = std::filesystem;
    for (auto* p : {&data.src_train, &data.tgt_train, &data.src_valid, &data.tgt_valid, &data.test_src, &data.test_tgt,
                    &data.lexicon, &data.src_emb, &data.tgt_emb}) {
      if (!p->empty() && fs::path(*p).is_relative()) *p = (fs::path(base_dir) / *p).lexically_normal().string();
    }
  }

  bool has_test() const { return !data.test_src.empty() && !data.test_tgt.empty(); }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("'" + s + "' is not a number");
  return v;
}

inline std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("'" + s + "' is not a nonnegative integer");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("'" + s + "' is not a boolean");
}

struct ConfigField {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class M>
ConfigField size_field(const char* key, M ExperimentConfig::*m) {
  return {key, [m](ExperimentConfig& c, const std::string& v) { c.*m = static_cast<M>(parse_uint(v)); },
          [m](const ExperimentConfig& c) { return std::to_string(c.*m); }};
}

inline ConfigField double_field(const char* key, double ExperimentConfig::*m) {
  return {key, [m](ExperimentConfig& c, const std::string& v) { c.*m = parse_double(v); },
          [m](const ExperimentConfig& c) { return fmt_double(c.*m); }};
}

inline ConfigField path_field(const char* key, std::string DataPaths::*m) {
  return {key, [m](ExperimentConfig& c, const std::string& v) { c.data.*m = v; },
          [m](const ExperimentConfig& c) { return c.data.*m; }};
}

inline const std::vector<ConfigField>& config_fields() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<ConfigField> fields = {
      {"seed", [](C& c, S v) { c.seed = parse_uint(v); }, [](const C& c) { return std::to_string(c.seed); }},
      {"preset", [](C& c, S v) { c.apply_preset(v); }, [](const C& c) { return c.preset; }},
      {"model.emb_dim", [](C& c, S v) { c.arch.emb_dim = parse_uint(v); },
       [](const C& c) { return std::to_string(c.arch.emb_dim); }},
      {"model.hidden", [](C& c, S v) { c.arch.hidden = parse_uint(v); },
       [](const C& c) { return std::to_string(c.arch.hidden); }},
      {"model.layers", [](C& c, S v) { c.arch.layers = parse_uint(v); },
       [](const C& c) { return std::to_string(c.arch.layers); }},
      {"adv.hidden", [](C& c, S v) { c.disc.hidden = parse_uint(v); },
       [](const C& c) { return std::to_string(c.disc.hidden); }},
      {"adv.layers", [](C& c, S v) { c.disc.layers = parse_uint(v); },
       [](const C& c) { return std::to_string(c.disc.layers); }},
      {"adv.smoothing", [](C& c, S v) { c.disc.smoothing = parse_double(v); },
       [](const C& c) { return fmt_double(c.disc.smoothing); }},
      {"adv.smooth_adv", [](C& c, S v) { c.disc.smooth_adv = parse_bool(v); },
       [](const C& c) { return std::string(c.disc.smooth_adv ? "true" : "false"); }},
      {"adv.leaky_slope", [](C& c, S v) { c.disc.leaky_slope = parse_double(v); },
       [](const C& c) { return fmt_double(c.disc.leaky_slope); }},
      double_field("adv.lr", &C::disc_lr),
      double_field("adv.decay", &C::disc_decay),
      double_field("optim.lr", &C::lr),
      double_field("optim.beta1", &C::beta1),
      double_field("optim.beta2", &C::beta2),
      double_field("optim.eps", &C::eps),
      double_field("optim.clip", &C::clip),
      double_field("lambda.auto", &C::lambda_auto),
      double_field("lambda.cd", &C::lambda_cd),
      double_field("lambda.adv", &C::lambda_adv),
      {"noise.p_wd", [](C& c, S v) { c.noise.p_wd = parse_double(v); },
       [](const C& c) { return fmt_double(c.noise.p_wd); }},
      {"noise.k", [](C& c, S v) { c.noise.k = static_cast<int>(parse_uint(v)); },
       [](const C& c) { return std::to_string(c.noise.k); }},
      {"noise.alpha",
       [](C& c, S v) {
         if (v == "auto") c.noise.alpha.reset();
         else c.noise.alpha = parse_double(v);
       },
       [](const C& c) { return c.noise.alpha ? fmt_double(*c.noise.alpha) : std::string("auto"); }},
      size_field("train.batch_size", &C::batch_size),
      size_field("train.epochs_per_iter", &C::epochs_per_iter),
      size_field("train.iterations", &C::iterations),
      size_field("train.max_len", &C::max_len),
      size_field("train.eval_every", &C::eval_every),
      size_field("train.eval_sentences", &C::eval_sentences),
      size_field("train.log_every", &C::log_every),
      size_field("train.bt_subsample", &C::bt_subsample),
      size_field("train.bt_threads", &C::bt_threads),
      size_field("train.ckpt_every", &C::ckpt_every),
      {"init.model",
       [](C& c, S v) {
         if (v == "wbw") c.init_model = InitModel::wbw;
         else if (v == "identity") c.init_model = InitModel::identity;
         else if (v == "none") c.init_model = InitModel::none;
         else throw ConfigError("init.model must be wbw, identity or none, got '" + v + "'");
       },
       [](const C& c) { return std::string(to_string(c.init_model)); }},
      {"init.pretrained", [](C& c, S v) { c.pretrained = parse_bool(v); },
       [](const C& c) { return std::string(c.pretrained ? "true" : "false"); }},
      path_field("data.src_train", &DataPaths::src_train),
      path_field("data.tgt_train", &DataPaths::tgt_train),
      path_field("data.src_valid", &DataPaths::src_valid),
      path_field("data.tgt_valid", &DataPaths::tgt_valid),
      path_field("data.test_src", &DataPaths::test_src),
      path_field("data.test_tgt", &DataPaths::test_tgt),
      path_field("data.lexicon", &DataPaths::lexicon),
      path_field("data.src_emb", &DataPaths::src_emb),
      path_field("data.tgt_emb", &DataPaths::tgt_emb),
      {"data.min_count", [](C& c, S v) { c.data.min_count = parse_uint(v); },
       [](const C& c) { return std::to_string(c.data.min_count); }},
  };
  return fields;
}

}  // namespace detail

inline void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields()) {
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

inline std::vector<std::pair<std::string, std::string>> ExperimentConfig::items() const {
  std::vector<std::pair<std::string, std::string>> v;
  for (const auto& f : detail::config_fields()) v.emplace_back(f.key, f.get(*this));
  return v;
}

}  // namespace unmt
