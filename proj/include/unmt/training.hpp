#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "adversary.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "evaluation.hpp"
#include "losses.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "translator.hpp"

namespace unmt {

inline constexpr const char* kMetricsHeader =
    "iter,epoch,step,loss_total,loss_auto_src,loss_auto_tgt,loss_cd_src,loss_cd_tgt,loss_adv,loss_disc,ms_score,"
    "bleu_src_tgt,bleu_tgt_src";

struct EvalRecord {
  std::size_t iter = 0, epoch = 0, step = 0;
  double ms = 0, ms_src = 0, ms_tgt = 0;
  std::optional<double> bleu_src_tgt, bleu_tgt_src;

  /// Mean of the two test directions (requires a test set).
  double bleu_mean() const { return 0.5 * (bleu_src_tgt.value_or(0) + bleu_tgt_src.value_or(0)); }
};

struct RunResult {
  std::string run_dir;
  std::optional<EvalRecord> bootstrap;  // the first-iteration translator (word-by-word or identity)
  std::vector<EvalRecord> evals;        // every evaluation after training started, in order
  std::vector<EvalRecord> iteration_end;
  std::optional<EvalRecord> best;       // highest model-selection score
  double emb_coverage_src = 0, emb_coverage_tgt = 0;
  std::size_t cd_skipped = 0;
};

/// Vocabularies, monolingual training data and evaluation sets for one config.
struct ExperimentData {
  Vocabulary vocab_src{Lang::src}, vocab_tgt{Lang::tgt};
  MonolingualDataset train_src, train_tgt;
  std::vector<TokenIds> valid_src, valid_tgt;
  std::vector<TokenIds> test_src, test_tgt;  // aligned
  std::optional<Lexicon> lexicon;

  static ExperimentData load(const ExperimentConfig& cfg) {
    if (cfg.data.src_train.empty() || cfg.data.tgt_train.empty()) {
      throw ConfigError("data.src_train and data.tgt_train are required");
    }
    ExperimentData d;
    d.vocab_src = build_vocab(cfg.data.src_train, cfg.data.min_count, Lang::src);
    d.vocab_tgt = build_vocab(cfg.data.tgt_train, cfg.data.min_count, Lang::tgt);
    d.train_src = load_dataset(cfg.data.src_train, d.vocab_src, cfg.max_len);
    d.train_tgt = load_dataset(cfg.data.tgt_train, d.vocab_tgt, cfg.max_len);
    if (d.train_src.size() == 0 || d.train_tgt.size() == 0) throw ContractError("training corpora are empty");
    auto encode_file = [&](const std::string& path, const Vocabulary& v) {
      std::vector<TokenIds> out;
      if (path.empty()) return out;
      for (const auto& line : read_lines(path)) {
        if (split_ws(line).empty()) continue;
        out.push_back(v.encode(line));
        if (cfg.eval_sentences && out.size() >= cfg.eval_sentences) break;
      }
      return out;
    };
    d.valid_src = encode_file(cfg.data.src_valid, d.vocab_src);
    d.valid_tgt = encode_file(cfg.data.tgt_valid, d.vocab_tgt);
    if (cfg.has_test()) {
      d.test_src = encode_file(cfg.data.test_src, d.vocab_src);
      d.test_tgt = encode_file(cfg.data.test_tgt, d.vocab_tgt);
      if (d.test_src.size() != d.test_tgt.size()) throw FormatError("parallel test files differ in line count");
    }
    if (!cfg.data.lexicon.empty()) d.lexicon = Lexicon::load(cfg.data.lexicon);
    return d;
  }
};

/// Initial translators for the first outer iteration.
inline std::pair<std::unique_ptr<SentenceTranslator>, std::unique_ptr<SentenceTranslator>> bootstrap_translators(
    const ExperimentConfig& cfg, const ExperimentData& d) {
  switch (cfg.init_model) {
    case InitModel::wbw:
      if (!d.lexicon) throw ConfigError("init.model = wbw needs data.lexicon");
      return {std::make_unique<WordByWordModel>(*d.lexicon, d.vocab_src, d.vocab_tgt),
              std::make_unique<WordByWordModel>(d.lexicon->inverted(), d.vocab_tgt, d.vocab_src)};
    case InitModel::identity:
      return {std::make_unique<WordByWordModel>(Lexicon{}, d.vocab_src, d.vocab_tgt),
              std::make_unique<WordByWordModel>(Lexicon{}, d.vocab_tgt, d.vocab_src)};
    default:
      return {nullptr, nullptr};
  }
}

namespace detail {

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

template <class T>
void add_params(Checkpoint& ck, const std::string& prefix, const std::vector<std::pair<std::string, Tensor<T>>>& named) {
  for (const auto& [n, t] : named) ck.add(prefix + n, t);
}

template <class T>
void restore_params(const Checkpoint& ck, const std::string& prefix,
                    const std::vector<std::pair<std::string, Tensor<T>>>& named) {
  for (auto [n, t] : named) ck.restore(prefix + n, t);
}

template <class T>
void add_optimizer(Checkpoint& ck, const std::string& prefix, const OptimizerState<T>& st,
                   const std::vector<std::pair<std::string, Tensor<T>>>& named) {
  for (std::size_t i = 0; i < st.first.size(); ++i)
    ck.add(prefix + "m." + named[i].first, named[i].second.shape(), std::vector<float>(st.first[i].begin(), st.first[i].end()));
  for (std::size_t i = 0; i < st.second.size(); ++i)
    ck.add(prefix + "v." + named[i].first, named[i].second.shape(), std::vector<float>(st.second[i].begin(), st.second[i].end()));
}

template <class T>
void restore_optimizer(const Checkpoint& ck, const std::string& prefix, OptimizerState<T>& st,
                       const std::vector<std::pair<std::string, Tensor<T>>>& named) {
  st.first.clear();
  st.second.clear();
  for (const auto& [n, t] : named) {
    if (const auto* r = ck.find(prefix + "m." + n)) st.first.emplace_back(r->data.begin(), r->data.end());
    if (const auto* r = ck.find(prefix + "v." + n)) st.second.emplace_back(r->data.begin(), r->data.end());
  }
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> f;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      f.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  f.push_back(cur);
  return f;
}

}  // namespace detail

/// Parses the evaluation rows (those with an MS value) of a metrics CSV.
inline std::vector<EvalRecord> read_eval_rows(const std::string& csv_path) {
  std::vector<EvalRecord> out;
  const auto lines = read_lines(csv_path);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = detail::split_csv(lines[i]);
    if (f.size() != 13) throw FormatError("metrics '" + csv_path + "' line " + std::to_string(i + 1) + ": expected 13 fields");
    if (f[10].empty()) continue;
    EvalRecord r;
    r.iter = detail::parse_uint(f[0]);
    r.epoch = detail::parse_uint(f[1]);
    r.step = detail::parse_uint(f[2]);
    r.ms = detail::parse_double(f[10]);
    if (!f[11].empty()) r.bleu_src_tgt = detail::parse_double(f[11]);
    if (!f[12].empty()) r.bleu_tgt_src = detail::parse_double(f[12]);
    out.push_back(r);
  }
  return out;
}

/// Running sums of the loss columns between two metrics rows.
struct LossAccumulator {
  std::array<double, 7> sum{};  // total, auto_src, auto_tgt, cd_src, cd_tgt, adv, disc
  std::array<std::size_t, 7> count{};

  void add(std::size_t i, const std::optional<double>& v) {
    if (!v) return;
    sum[i] += *v;
    ++count[i];
  }

  std::string fields() const {
    std::string s;
    for (std::size_t i = 0; i < sum.size(); ++i) {
      if (i) s += ",";
      if (count[i]) s += detail::fmt_double(sum[i] / static_cast<double>(count[i]));
    }
    return s;
  }

  bool empty() const {
    for (auto c : count)
      if (c) return false;
    return true;
  }

  std::string state() const {
    std::string s;
    for (std::size_t i = 0; i < sum.size(); ++i) s += detail::fmt_double(sum[i]) + ":" + std::to_string(count[i]) + ";";
    return s;
  }

  void set_state(const std::string& s) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < sum.size(); ++i) {
      const auto colon = s.find(':', pos), semi = s.find(';', pos);
      if (colon == std::string::npos || semi == std::string::npos) throw FormatError("bad accumulator state");
      sum[i] = detail::parse_double(s.substr(pos, colon - pos));
      count[i] = detail::parse_uint(s.substr(colon + 1, semi - colon - 1));
      pos = semi + 1;
    }
  }
};

/// Runs the outer iterations for one experiment inside a run directory:
/// back-translate with the current translator, train the encoder/decoder and
/// the discriminator in alternation, evaluate, checkpoint.
class Trainer {
 public:
  Trainer(ExperimentConfig cfg, std::string run_dir)
      : cfg_(std::move(cfg)), dir_(std::move(run_dir)), data_(ExperimentData::load(cfg_)), noise_rng_(0) {
    cfg_.validate();
    std::filesystem::create_directories(dir_);
    data_.vocab_src.save(path("vocab.src.txt"));
    data_.vocab_tgt.save(path("vocab.tgt.txt"));
    init_state();
  }

  const ExperimentConfig& config() const { return cfg_; }
  const ExperimentData& data() const { return data_; }
  const ModelParams<float>& params() const { return params_; }
  const Discriminator<float>& discriminator() const { return disc_; }
  const OptimizerState<float>& optimizer() const { return opt_; }
  const OptimizerState<float>& disc_optimizer() const { return disc_opt_; }
  std::string path(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }

  /// Stop after this many paired updates in total (for interruption tests).
  void set_step_limit(std::size_t n) { step_limit_ = n; }
  bool stopped_early() const { return stopped_; }

  /// Fresh run from the initialisation.
  RunResult run() {
    std::ofstream(path("metrics.csv"), std::ios::trunc) << kMetricsHeader << "\n";
    metrics_rows_ = 0;
    if (auto [s2t, t2s] = bootstrap_translators(cfg_, data_); s2t) {
      auto r = evaluate(*s2t, *t2s, 0, 0, 0);
      result_.bootstrap = r;
      write_row(r.iter, r.epoch, r.step, LossAccumulator{}, &r);
    }
    return loop(1, 0, 0, false);
  }

  /// Continues from a full-state checkpoint written by this trainer.
  RunResult resume(const std::string& checkpoint_path) {
    const auto ck = load_checkpoint(checkpoint_path);
    if (ck.state_at("kind") != "full") throw ContractError("checkpoint '" + checkpoint_path + "' is not resumable");
    detail::restore_params(ck, "model.", params_.named());
    detail::restore_params(ck, "disc.", disc_.named());
    detail::restore_optimizer(ck, "opt.", opt_, params_.named());
    detail::restore_optimizer(ck, "dopt.", disc_opt_, disc_.named());
    opt_.step = detail::parse_uint(ck.state_at("opt.step"));
    disc_opt_.step = detail::parse_uint(ck.state_at("dopt.step"));
    noise_rng_.set_state(ck.rng_state);
    step_ = detail::parse_uint(ck.state_at("step"));
    acc_.set_state(ck.state_at("acc"));
    result_.cd_skipped = detail::parse_uint(ck.state_at("cd_skipped"));
    const auto iter = detail::parse_uint(ck.state_at("iter"));
    const auto epoch = detail::parse_uint(ck.state_at("epoch"));
    const auto batch = detail::parse_uint(ck.state_at("batch"));
    const bool mid = ck.state_at("phase") == "mid";
    if (mid && iter >= 2) {
      prev_ = std::make_shared<ModelParams<float>>(params_.frozen());
      detail::restore_params(ck, "prev.", prev_->named());
    }

    // The metrics file is cut back to the rows that existed at checkpoint time.
    metrics_rows_ = detail::parse_uint(ck.state_at("metrics_rows"));
    auto lines = read_lines(path("metrics.csv"));
    if (lines.size() < metrics_rows_ + 1) throw FormatError("metrics.csv is shorter than the checkpoint expects");
    lines.resize(metrics_rows_ + 1);
    write_lines(path("metrics.csv"), lines);
    for (const auto& r : read_eval_rows(path("metrics.csv"))) {
      if (r.iter == 0) result_.bootstrap = r;
      else result_.evals.push_back(r);
    }
    rebuild_iteration_ends();
    if (ck.state.count("best_step")) {
      const auto best_step = detail::parse_uint(ck.state_at("best_step"));
      for (const auto& r : result_.evals)
        if (r.step == best_step) result_.best = r;
      // a later evaluation of the interrupted run may have replaced best.unmt
      std::filesystem::copy_file(path("eval-" + std::to_string(best_step) + ".unmt"), path("best.unmt"),
                                 std::filesystem::copy_options::overwrite_existing);
    }
    return loop(iter, epoch, batch, mid);
  }

 private:
  void init_state() {
    auto init_rng = Rng::stream(cfg_.seed, "model.init");
    params_ = ModelParams<float>::init(cfg_.arch, data_.vocab_src.size(), data_.vocab_tgt.size(), init_rng);
    if (cfg_.pretrained && !cfg_.data.src_emb.empty() && !cfg_.data.tgt_emb.empty()) {
      auto emb_rng = Rng::stream(cfg_.seed, "model.embeddings");
      auto es = load_embeddings<float>(data_.vocab_src, cfg_.data.src_emb, cfg_.arch.emb_dim, emb_rng);
      auto et = load_embeddings<float>(data_.vocab_tgt, cfg_.data.tgt_emb, cfg_.arch.emb_dim, emb_rng);
      params_.emb[0] = es.table;
      params_.emb[1] = et.table;
      result_.emb_coverage_src = es.coverage;
      result_.emb_coverage_tgt = et.coverage;
    } else if (cfg_.pretrained && (!cfg_.data.src_emb.empty() || !cfg_.data.tgt_emb.empty())) {
      throw ConfigError("init.pretrained needs both data.src_emb and data.tgt_emb");
    }
    auto disc_rng = Rng::stream(cfg_.seed, "disc.init");
    disc_ = Discriminator<float>::init(cfg_.arch.hidden, cfg_.disc, disc_rng);
    opt_ = OptimizerState<float>::adam(cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps);
    disc_opt_ = OptimizerState<float>::rmsprop(cfg_.disc_lr, cfg_.disc_decay, cfg_.eps);
    noise_rng_ = Rng::stream(cfg_.seed, "noise");
    result_.run_dir = dir_;
  }

  std::size_t steps_per_epoch() const {
    const auto b = cfg_.batch_size;
    return std::max((data_.train_src.size() + b - 1) / b, (data_.train_tgt.size() + b - 1) / b);
  }

  /// Translations of each training sentence into the other language by the
  /// current translator pair; empty for sentences outside the subsample.
  std::pair<std::vector<TokenIds>, std::vector<TokenIds>> back_translate(std::size_t iter) {
    std::unique_ptr<SentenceTranslator> s2t, t2s;
    if (iter == 1) {
      std::tie(s2t, t2s) = bootstrap_translators(cfg_, data_);
      if (!s2t) return {};
    } else {
      auto a = std::make_unique<TranslationModel<float>>(prev_, Lang::src, Lang::tgt);
      auto b = std::make_unique<TranslationModel<float>>(prev_, Lang::tgt, Lang::src);
      a->set_threads(cfg_.bt_threads);
      b->set_threads(cfg_.bt_threads);
      s2t = std::move(a);
      t2s = std::move(b);
    }
    auto run_side = [&](const MonolingualDataset& d, const SentenceTranslator& m, const std::string& label) {
      std::vector<TokenIds> out(d.size());
      std::vector<std::size_t> pick(d.size());
      std::iota(pick.begin(), pick.end(), std::size_t{0});
      if (cfg_.bt_subsample && cfg_.bt_subsample < d.size()) {
        auto rng = Rng::stream(Rng::derive(cfg_.seed, label), "iter." + std::to_string(iter));
        rng.shuffle(pick);
        pick.resize(cfg_.bt_subsample);
        std::sort(pick.begin(), pick.end());
      }
      std::vector<TokenIds> in;
      for (auto i : pick) in.push_back(d.sentences[i]);
      auto tr = m.translate_all(in);
      for (std::size_t k = 0; k < pick.size(); ++k) out[pick[k]] = std::move(tr[k]);
      return out;
    };
    return {run_side(data_.train_src, *s2t, "bt.src"), run_side(data_.train_tgt, *t2s, "bt.tgt")};
  }

  EvalRecord evaluate(const SentenceTranslator& s2t, const SentenceTranslator& t2s, std::size_t iter,
                      std::size_t epoch, std::size_t step) const {
    EvalRecord r;
    r.iter = iter;
    r.epoch = epoch;
    r.step = step;
    if (!data_.valid_src.empty() && !data_.valid_tgt.empty()) {
      const auto ms = model_selection_score(s2t, t2s, data_.valid_src, data_.valid_tgt);
      r.ms = ms.ms;
      r.ms_src = ms.bleu_src;
      r.ms_tgt = ms.bleu_tgt;
    }
    if (!data_.test_src.empty()) {
      r.bleu_src_tgt = translation_bleu(s2t, data_.test_src, data_.test_tgt).bleu;
      r.bleu_tgt_src = translation_bleu(t2s, data_.test_tgt, data_.test_src).bleu;
    }
    return r;
  }

  EvalRecord evaluate_current(std::size_t iter, std::size_t epoch) {
    auto frozen = std::make_shared<const ModelParams<float>>(params_.frozen());
    TranslationModel<float> s2t(frozen, Lang::src, Lang::tgt), t2s(frozen, Lang::tgt, Lang::src);
    s2t.set_threads(cfg_.bt_threads);
    t2s.set_threads(cfg_.bt_threads);
    auto r = evaluate(s2t, t2s, iter, epoch, step_);
    result_.evals.push_back(r);
    if (!result_.best || r.ms > result_.best->ms) {
      result_.best = r;
      save_checkpoint(path("best.unmt"), model_checkpoint(iter, epoch));
    }
    save_checkpoint(path("eval-" + std::to_string(step_) + ".unmt"), model_checkpoint(iter, epoch));
    return r;
  }

  void write_row(std::size_t iter, std::size_t epoch, std::size_t step, const LossAccumulator& acc,
                 const EvalRecord* ev) {
    std::ofstream f(path("metrics.csv"), std::ios::app);
    f << iter << "," << epoch << "," << step << "," << acc.fields() << ",";
    if (ev) {
      f << detail::fmt_double(ev->ms) << "," << detail::fmt_opt(ev->bleu_src_tgt) << ","
        << detail::fmt_opt(ev->bleu_tgt_src);
    } else {
      f << ",,";
    }
    f << "\n";
    if (!f) throw IoError("cannot append to metrics.csv in '" + dir_ + "'");
    ++metrics_rows_;
  }

  Checkpoint base_checkpoint(std::size_t iter, std::size_t epoch) const {
    Checkpoint ck;
    detail::add_params(ck, "model.", params_.named());
    ck.config_text = cfg_.to_text();
    ck.state["iter"] = std::to_string(iter);
    ck.state["epoch"] = std::to_string(epoch);
    ck.state["step"] = std::to_string(step_);
    ck.state["vocab_src"] = std::to_string(data_.vocab_src.size());
    ck.state["vocab_tgt"] = std::to_string(data_.vocab_tgt.size());
    return ck;
  }

  Checkpoint model_checkpoint(std::size_t iter, std::size_t epoch) const {
    auto ck = base_checkpoint(iter, epoch);
    ck.state["kind"] = "model";
    return ck;
  }

  Checkpoint full_checkpoint(std::size_t iter, std::size_t epoch, std::size_t batch, bool mid) const {
    auto ck = base_checkpoint(iter, epoch);
    ck.state["kind"] = "full";
    ck.state["phase"] = mid ? "mid" : "start";
    ck.state["batch"] = std::to_string(batch);
    detail::add_params(ck, "disc.", disc_.named());
    detail::add_optimizer(ck, "opt.", opt_, params_.named());
    detail::add_optimizer(ck, "dopt.", disc_opt_, disc_.named());
    ck.state["opt.step"] = std::to_string(opt_.step);
    ck.state["dopt.step"] = std::to_string(disc_opt_.step);
    ck.state["acc"] = acc_.state();
    ck.state["metrics_rows"] = std::to_string(metrics_rows_);
    ck.state["cd_skipped"] = std::to_string(result_.cd_skipped);
    if (result_.best) ck.state["best_step"] = std::to_string(result_.best->step);
    if (mid && prev_) detail::add_params(ck, "prev.", prev_->named());
    ck.rng_state = noise_rng_.state();
    return ck;
  }

  void rebuild_iteration_ends() {
    result_.iteration_end.clear();
    for (std::size_t i = 0; i < result_.evals.size(); ++i) {
      const bool last_of_iter = i + 1 == result_.evals.size() || result_.evals[i + 1].iter != result_.evals[i].iter;
      if (last_of_iter && iteration_complete(result_.evals[i])) result_.iteration_end.push_back(result_.evals[i]);
    }
  }

  bool iteration_complete(const EvalRecord& r) const {
    return r.step == r.iter * cfg_.epochs_per_iter * steps_per_epoch();
  }

  void dump_batch(const StepInputs& in) const {
    std::vector<std::string> lines{"# non-finite loss at step " + std::to_string(step_)};
    for (const auto& s : in.src) lines.push_back("src: " + data_.vocab_src.decode(s));
    for (const auto& s : in.tgt) lines.push_back("tgt: " + data_.vocab_tgt.decode(s));
    write_lines(path("nonfinite-batch.txt"), lines);
  }

  /// One discriminator update followed by one encoder/decoder update.
  void train_step(const StepInputs& in) {
    const LossWeights w{cfg_.lambda_auto, cfg_.lambda_cd, cfg_.lambda_adv};
    const auto enc = encode_noisy(params_, in, cfg_.noise, noise_rng_);

    std::optional<double> disc_value;
    if (cfg_.lambda_adv > 0) {
      auto dparams = disc_.tensors();
      zero_grads(dparams);
      auto dl = disc_loss(disc_, enc.src, enc.tgt);
      disc_value = static_cast<double>(dl.item());
      if (!std::isfinite(*disc_value)) {
        dump_batch(in);
        throw NumericError("discriminator loss is not finite at step " + std::to_string(step_));
      }
      backward(dl);
      rmsprop_step(dparams, disc_opt_);
    }

    auto params = params_.tensors();
    zero_grads(params);
    auto loss = total_loss_from(params_, disc_, enc, in, w, cfg_.noise, noise_rng_);
    const double total = static_cast<double>(loss.total.item());
    if (!std::isfinite(total)) {
      dump_batch(in);
      throw NumericError("training loss is not finite at step " + std::to_string(step_) +
                         " (batch written to nonfinite-batch.txt)");
    }
    if (loss.total.requires_grad()) {
      backward(loss.total);
      clip_grad_norm(params, cfg_.clip);
    }
    adam_step(params, opt_);
    result_.cd_skipped += loss.cd_skipped;

    acc_.add(0, total);
    acc_.add(1, loss.auto_src);
    acc_.add(2, loss.auto_tgt);
    acc_.add(3, loss.cd_src);
    acc_.add(4, loss.cd_tgt);
    acc_.add(5, loss.adv);
    acc_.add(6, disc_value);
  }

  void record(std::size_t iter, std::size_t epoch, bool evaluate_now) {
    EvalRecord ev;
    if (evaluate_now) ev = evaluate_current(iter, epoch);
    write_row(iter, epoch, step_, acc_, evaluate_now ? &ev : nullptr);
    acc_ = LossAccumulator{};
  }

  RunResult loop(std::size_t first_iter, std::size_t first_epoch, std::size_t first_batch, bool mid) {
    const std::size_t spe = steps_per_epoch();
    for (std::size_t t = first_iter; t <= cfg_.iterations; ++t) {
      const bool resuming_mid = mid && t == first_iter;
      if (!resuming_mid) {
        prev_ = std::make_shared<ModelParams<float>>(params_.frozen());
        save_checkpoint(path("iter-" + std::to_string(t) + ".unmt"), full_checkpoint(t, 0, 0, false));
      }
      auto [bt_src, bt_tgt] = back_translate(t);
      const bool have_bt = !bt_src.empty();

      for (std::size_t e = resuming_mid ? first_epoch : 0; e < cfg_.epochs_per_iter; ++e) {
        const auto tag = "iter." + std::to_string(t) + ".epoch." + std::to_string(e);
        const auto src_batches = make_batch_indices(data_.train_src.size(), cfg_.batch_size,
                                                    Rng::derive(cfg_.seed, "batches.src." + tag));
        const auto tgt_batches = make_batch_indices(data_.train_tgt.size(), cfg_.batch_size,
                                                    Rng::derive(cfg_.seed, "batches.tgt." + tag));
        const std::size_t start = (resuming_mid && e == first_epoch) ? first_batch : 0;
        for (std::size_t b = start; b < spe; ++b) {
          if (step_limit_ && step_ >= step_limit_) {
            stopped_ = true;
            return result_;
          }
          if (cfg_.ckpt_every && step_ > 0 && step_ % cfg_.ckpt_every == 0 && !(resuming_mid && b == start)) {
            save_checkpoint(path("latest.unmt"), full_checkpoint(t, e, b, true));
          }
          StepInputs in;
          for (auto i : src_batches[b % src_batches.size()]) in.src.push_back(data_.train_src.sentences[i]);
          for (auto i : tgt_batches[b % tgt_batches.size()]) in.tgt.push_back(data_.train_tgt.sentences[i]);
          if (have_bt) {
            in.src_bt.emplace();
            in.tgt_bt.emplace();
            for (auto i : src_batches[b % src_batches.size()]) in.src_bt->push_back(bt_src[i]);
            for (auto i : tgt_batches[b % tgt_batches.size()]) in.tgt_bt->push_back(bt_tgt[i]);
          }
          train_step(in);
          ++step_;
          const bool end_of_iter = e + 1 == cfg_.epochs_per_iter && b + 1 == spe;
          const bool end_of_epoch = b + 1 == spe;
          const bool eval_now = end_of_iter || (cfg_.eval_every ? step_ % cfg_.eval_every == 0 : end_of_epoch);
          const bool log_now = cfg_.log_every && step_ % cfg_.log_every == 0;
          if (eval_now || log_now) record(t, e, eval_now);
        }
      }
      if (result_.evals.empty() || result_.evals.back().iter != t || result_.evals.back().step != step_) {
        record(t, cfg_.epochs_per_iter, true);
      }
      result_.iteration_end.push_back(result_.evals.back());
    }
    save_checkpoint(path("final.unmt"), full_checkpoint(cfg_.iterations + 1, 0, 0, false));
    return result_;
  }

  ExperimentConfig cfg_;
  std::string dir_;
  ExperimentData data_;
  ModelParams<float> params_;
  Discriminator<float> disc_;
  OptimizerState<float> opt_, disc_opt_;
  Rng noise_rng_;
  std::shared_ptr<ModelParams<float>> prev_;
  std::size_t step_ = 0;
  std::size_t step_limit_ = 0;
  bool stopped_ = false;
  std::size_t metrics_rows_ = 0;
  LossAccumulator acc_;
  RunResult result_;
};

/// The full outer-iteration loop in `run_dir`.
inline RunResult iterate(const ExperimentConfig& cfg, const std::string& run_dir) {
  Trainer t(cfg, run_dir);
  return t.run();
}

/// Supervised reference: the same architecture trained on aligned pairs in
/// both directions with plain cross-entropy (no noise, no adversary).
inline ModelParams<float> train_supervised(const ExperimentConfig& cfg, std::size_t vocab_src, std::size_t vocab_tgt,
                                           const std::vector<TokenIds>& src, const std::vector<TokenIds>& tgt,
                                           std::size_t epochs) {
  if (src.size() != tgt.size() || src.empty()) throw ContractError("train_supervised: need aligned nonempty pairs");
  auto rng = Rng::stream(cfg.seed, "supervised.init");
  auto p = ModelParams<float>::init(cfg.arch, vocab_src, vocab_tgt, rng);
  auto params = p.tensors();
  auto opt = OptimizerState<float>::adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  auto noise_rng = Rng::stream(cfg.seed, "supervised.noise");
  const auto none = NoiseConfig::none();
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto batches = make_batch_indices(src.size(), cfg.batch_size,
                                            Rng::derive(cfg.seed, "supervised.epoch." + std::to_string(e)));
    for (const auto& idx : batches) {
      std::vector<TokenIds> xs, ys;
      for (auto i : idx) {
        xs.push_back(src[i]);
        ys.push_back(tgt[i]);
      }
      zero_grads(params);
      auto loss = add(loss_cd(p, xs, ys, Lang::src, none, noise_rng), loss_cd(p, ys, xs, Lang::tgt, none, noise_rng));
      if (!std::isfinite(loss.item())) throw NumericError("supervised baseline: non-finite loss");
      backward(loss);
      clip_grad_norm(params, cfg.clip);
      adam_step(params, opt);
    }
  }
  return p;
}

/// Model parameters stored in a checkpoint, with the config it was trained under.
struct LoadedModel {
  ExperimentConfig config;
  ModelParams<float> params;
  Checkpoint checkpoint;
};

inline LoadedModel load_model(const std::string& checkpoint_path) {
  auto ck = load_checkpoint(checkpoint_path);
  auto cfg = ExperimentConfig::parse(ck.config_text, {}, checkpoint_path + " (config snapshot)");
  const auto vs = detail::parse_uint(ck.state_at("vocab_src")), vt = detail::parse_uint(ck.state_at("vocab_tgt"));
  Rng rng(0);
  auto p = ModelParams<float>::init(cfg.arch, vs, vt, rng);
  detail::restore_params(ck, "model.", p.named());
  return {std::move(cfg), std::move(p), std::move(ck)};
}

/// Stable identifier for a run: a hash of its canonical config text.
inline std::string run_id(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(Rng::derive(0, cfg.to_text())));
  return std::string(buf, 12);
}

/// One row of the ablation table: a name and the config keys it overrides.
struct AblationRow {
  std::string name;
  std::vector<std::pair<std::string, std::string>> overrides;
};

/// The full system followed by the six single or combined ablations.
inline std::vector<AblationRow> ablation_rows() {
  return {
      {"full", {}},
      {"no_cd", {{"lambda.cd", "0"}}},
      {"no_pretraining", {{"init.pretrained", "false"}}},
      {"no_pretraining_no_cd", {{"init.pretrained", "false"}, {"lambda.cd", "0"}, {"init.model", "none"}}},
      {"no_noise", {{"noise.p_wd", "0"}, {"noise.k", "0"}}},
      {"no_auto", {{"lambda.auto", "0"}}},
      {"no_adv", {{"lambda.adv", "0"}}},
  };
}

inline ExperimentConfig apply_overrides(ExperimentConfig cfg, const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [k, v] : kv) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

}  // namespace unmt
