#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "unmt/unmt.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::size_t thread_cap() {
  const char* env = std::getenv("UNMT_THREADS");
  if (!env || !*env) return std::max(1u, std::thread::hardware_concurrency());
  const auto n = unmt::detail::parse_uint(env);
  if (n < 1) throw unmt::ConfigError("UNMT_THREADS must be >= 1");
  return n;
}

struct Common {
  std::string config, out = "runs", preset;
  std::uint64_t seed = 0;
  bool seed_set = false, force = false;
  std::vector<std::string> sets;
};

unmt::ExperimentConfig load_config(const Common& c) {
  std::ifstream f(c.config);
  if (!f) throw unmt::IoError("cannot open config '" + c.config + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  std::string text = ss.str();
  if (!c.preset.empty()) text += "\npreset = " + c.preset + "\n";
  auto cfg = unmt::ExperimentConfig::parse(text, fs::absolute(c.config).parent_path().string(), c.config);
  if (c.seed_set) cfg.seed = c.seed;
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw unmt::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void prepare_dir(const std::string& dir, bool force) {
  if (fs::exists(dir)) {
    if (!force) throw unmt::IoError("'" + dir + "' already exists (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

json eval_json(const unmt::EvalRecord& r) {
  json j{{"iter", r.iter}, {"epoch", r.epoch}, {"step", r.step}, {"ms", r.ms}};
  if (r.bleu_src_tgt) j["bleu_src_tgt"] = *r.bleu_src_tgt;
  if (r.bleu_tgt_src) j["bleu_tgt_src"] = *r.bleu_tgt_src;
  return j;
}

void write_manifest(const std::string& dir, const unmt::ExperimentConfig& cfg, const unmt::RunResult* r,
                    const std::vector<std::string>& argv) {
  json m;
  m["run_id"] = unmt::run_id(cfg);
  m["run_dir"] = fs::absolute(dir).string();
  m["config"] = cfg.to_text();
  m["metrics"] = "metrics.csv";
  m["command"] = argv;
  std::vector<std::string> cks;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".unmt") cks.push_back(e.path().filename().string());
  std::sort(cks.begin(), cks.end());
  m["checkpoints"] = cks;
  if (r) {
    m["status"] = "complete";
    if (r->bootstrap) m["bootstrap"] = eval_json(*r->bootstrap);
    json ends = json::array();
    for (const auto& e : r->iteration_end) ends.push_back(eval_json(e));
    m["iteration_end"] = ends;
    if (r->best) m["best"] = eval_json(*r->best);
    m["cd_skipped"] = r->cd_skipped;
  } else {
    m["status"] = "running";
  }
  std::ofstream(fs::path(dir) / "manifest.json") << m.dump(2) << "\n";
}

unmt::RunResult train_run(const unmt::ExperimentConfig& cfg, const std::string& dir,
                          const std::vector<std::string>& argv, const std::string& resume = {}) {
  write_manifest(dir, cfg, nullptr, argv);
  std::ofstream(fs::path(dir) / "config.txt") << cfg.to_text();
  unmt::Trainer t(cfg, dir);
  auto r = resume.empty() ? t.run() : t.resume(resume);
  write_manifest(dir, cfg, &r, argv);
  return r;
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void print_result(const unmt::RunResult& r) {
  auto line = [](const char* label, const unmt::EvalRecord& e) {
    std::cout << label << " ms=" << fmt2(e.ms);
    if (e.bleu_src_tgt) std::cout << " bleu_src_tgt=" << fmt2(*e.bleu_src_tgt) << " bleu_tgt_src=" << fmt2(*e.bleu_tgt_src);
    std::cout << "\n";
  };
  if (r.bootstrap) line("bootstrap", *r.bootstrap);
  for (const auto& e : r.iteration_end) line(("iteration " + std::to_string(e.iter)).c_str(), e);
  if (r.best) line(("best (step " + std::to_string(r.best->step) + ")").c_str(), *r.best);
}

/// Model from a checkpoint plus the vocabularies saved next to it.
struct Restored {
  unmt::LoadedModel model;
  unmt::Vocabulary vs, vt;
};

Restored restore(const std::string& checkpoint) {
  auto m = unmt::load_model(checkpoint);
  const auto dir = fs::path(checkpoint).parent_path();
  auto vs = unmt::Vocabulary::load((dir / "vocab.src.txt").string(), unmt::Lang::src);
  auto vt = unmt::Vocabulary::load((dir / "vocab.tgt.txt").string(), unmt::Lang::tgt);
  return {std::move(m), std::move(vs), std::move(vt)};
}

std::pair<unmt::Lang, unmt::Lang> parse_direction(const std::string& d) {
  if (d == "src-tgt") return {unmt::Lang::src, unmt::Lang::tgt};
  if (d == "tgt-src") return {unmt::Lang::tgt, unmt::Lang::src};
  throw unmt::ConfigError("--direction must be src-tgt or tgt-src, got '" + d + "'");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Unsupervised neural machine translation from monolingual corpora"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sc) {
    sc->add_option("--config", common.config, "experiment config file");
    sc->add_option("--seed", common.seed, "override the config seed")->each([&](const std::string&) { common.seed_set = true; });
    sc->add_option("--out", common.out, "output root directory");
    sc->add_option("--preset", common.preset, "architecture preset")->check(CLI::IsMember({"paper", "desk"}));
    sc->add_option("--set", common.sets, "extra key=value config overrides");
    sc->add_flag("--force", common.force, "overwrite an existing output directory");
  };

  unmt::SynthSpec spec;
  std::string reorder = "adjacent-swap";
  auto* synth = app.add_subcommand("synth", "generate a synthetic language pair");
  synth->add_option("--out", common.out, "dataset directory")->required();
  synth->add_option("--seed", spec.seed, "generator seed");
  synth->add_option("--vocab", spec.vocab, "words per language");
  synth->add_option("--min-len", spec.min_len);
  synth->add_option("--max-len", spec.max_len);
  synth->add_option("--mono", spec.mono, "monolingual sentences per side");
  synth->add_option("--valid", spec.valid, "monolingual validation sentences per side");
  synth->add_option("--test", spec.test, "parallel test pairs");
  synth->add_option("--reorder", reorder)->check(CLI::IsMember({"none", "adjacent-swap", "block-reverse"}));
  synth->add_option("--block", spec.block, "block width for block-reverse");
  synth->add_option("--zipf", spec.zipf);
  synth->add_option("--emb-dim", spec.emb_dim);
  synth->add_flag("--force", common.force);

  auto* train = app.add_subcommand("train", "run the iterative training loop");
  add_common(train);
  std::string resume;
  train->add_option("--resume", resume, "continue from a full checkpoint in an existing run directory");

  std::string checkpoint, input, output, direction = "src-tgt";
  auto* translate = app.add_subcommand("translate", "translate a file with a trained checkpoint");
  translate->add_option("--checkpoint", checkpoint)->required();
  translate->add_option("--input", input)->required();
  translate->add_option("--output", output)->required();
  translate->add_option("--direction", direction);

  std::string test_src, test_tgt, valid_src, valid_tgt, candidates, references, report;
  auto* evaluate = app.add_subcommand("evaluate", "BLEU and model-selection score");
  evaluate->add_option("--checkpoint", checkpoint);
  evaluate->add_option("--test-src", test_src);
  evaluate->add_option("--test-tgt", test_tgt);
  evaluate->add_option("--valid-src", valid_src);
  evaluate->add_option("--valid-tgt", valid_tgt);
  evaluate->add_option("--candidates", candidates, "score a candidate file directly");
  evaluate->add_option("--references", references);
  evaluate->add_option("--report", report, "also write the report to this file");

  std::size_t parallel = 1;
  auto* ablate = app.add_subcommand("ablate", "run the full system and every ablation row");
  add_common(ablate);
  ablate->add_option("--parallel", parallel, "concurrent runs (capped by UNMT_THREADS)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*synth) {
      spec.reorder = unmt::parse_reorder(reorder);
      prepare_dir(common.out, common.force);
      const auto conf = unmt::write_synthetic_dataset(spec, common.out);
      std::cout << conf << "\n";
    } else if (*train) {
      if (common.config.empty()) throw unmt::ConfigError("--config is required");
      const auto cfg = load_config(common);
      std::string dir;
      if (!resume.empty()) {
        dir = fs::path(resume).parent_path().string();
      } else {
        dir = (fs::path(common.out) / ("run-" + unmt::run_id(cfg))).string();
        prepare_dir(dir, common.force);
      }
      const auto r = train_run(cfg, dir, args, resume);
      std::cout << "run " << dir << "\n";
      print_result(r);
    } else if (*translate) {
      const auto [from, to] = parse_direction(direction);
      auto m = restore(checkpoint);
      const auto& vin = from == unmt::Lang::src ? m.vs : m.vt;
      const auto& vout = to == unmt::Lang::src ? m.vs : m.vt;
      std::vector<unmt::TokenIds> in;
      for (const auto& l : unmt::read_lines(input)) in.push_back(vin.encode(l));
      unmt::TranslationModel<float> model(std::make_shared<const unmt::ModelParams<float>>(m.model.params.frozen()),
                                          from, to);
      model.set_threads(thread_cap());
      std::vector<std::string> lines;
      for (const auto& s : model.translate_all(in)) lines.push_back(vout.decode(s));
      unmt::write_lines(output, lines);
    } else if (*evaluate) {
      json rep;
      if (!candidates.empty()) {
        std::vector<std::vector<std::string>> c, r;
        for (const auto& l : unmt::read_lines(candidates)) c.push_back(unmt::split_ws(l));
        for (const auto& l : unmt::read_lines(references)) r.push_back(unmt::split_ws(l));
        const auto b = unmt::bleu(c, r);
        rep = {{"bleu", b.bleu}, {"precisions", b.precisions}, {"brevity_penalty", b.brevity_penalty},
               {"candidate_length", b.candidate_length}, {"reference_length", b.reference_length},
               {"smoothing", unmt::BleuReport::method}};
      } else {
        if (checkpoint.empty()) throw unmt::ConfigError("evaluate needs --checkpoint or --candidates");
        auto m = restore(checkpoint);
        const auto& dp = m.model.config.data;
        auto pick = [](const std::string& a, const std::string& b) { return a.empty() ? b : a; };
        auto enc = [](const std::string& path, const unmt::Vocabulary& v) {
          std::vector<unmt::TokenIds> out;
          for (const auto& l : unmt::read_lines(path))
            if (!unmt::split_ws(l).empty()) out.push_back(v.encode(l));
          return out;
        };
        auto frozen = std::make_shared<const unmt::ModelParams<float>>(m.model.params.frozen());
        unmt::TranslationModel<float> s2t(frozen, unmt::Lang::src, unmt::Lang::tgt), t2s(frozen, unmt::Lang::tgt, unmt::Lang::src);
        s2t.set_threads(thread_cap());
        t2s.set_threads(thread_cap());
        rep["checkpoint"] = checkpoint;
        const auto vsrc = pick(valid_src, dp.src_valid), vtgt = pick(valid_tgt, dp.tgt_valid);
        if (!vsrc.empty() && !vtgt.empty()) {
          const auto ms = unmt::model_selection_score(s2t, t2s, enc(vsrc, m.vs), enc(vtgt, m.vt));
          rep["ms"] = ms.ms;
          rep["ms_src_round_trip"] = ms.bleu_src;
          rep["ms_tgt_round_trip"] = ms.bleu_tgt;
        }
        const auto tsrc = pick(test_src, dp.test_src), ttgt = pick(test_tgt, dp.test_tgt);
        if (!tsrc.empty() && !ttgt.empty()) {
          const auto xs = enc(tsrc, m.vs), ys = enc(ttgt, m.vt);
          rep["bleu_src_tgt"] = unmt::translation_bleu(s2t, xs, ys).bleu;
          rep["bleu_tgt_src"] = unmt::translation_bleu(t2s, ys, xs).bleu;
        }
        const auto csv = fs::path(checkpoint).parent_path() / "evaluations.csv";
        const bool fresh = !fs::exists(csv);
        std::ofstream f(csv, std::ios::app);
        if (fresh) f << unmt::kMetricsHeader << "\n";
        const auto& st = m.model.checkpoint.state;
        auto num = [&](const char* k) { return rep.contains(k) ? unmt::detail::fmt_double(rep[k].get<double>()) : std::string(); };
        f << st.at("iter") << "," << st.at("epoch") << "," << st.at("step") << ",,,,,,,," << num("ms") << ","
          << num("bleu_src_tgt") << "," << num("bleu_tgt_src") << "\n";
      }
      const auto text = rep.dump(2);
      std::cout << text << "\n";
      if (!report.empty()) std::ofstream(report) << text << "\n";
    } else if (*ablate) {
      if (common.config.empty()) throw unmt::ConfigError("--config is required");
      const auto base = load_config(common);
      const auto root = (fs::path(common.out) / ("ablate-" + unmt::run_id(base))).string();
      prepare_dir(root, common.force);
      const auto rows = unmt::ablation_rows();
      std::vector<std::optional<unmt::RunResult>> results(rows.size());
      std::vector<std::string> errors(rows.size());
      std::size_t next = 0;
      std::mutex mu;
      auto worker = [&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= rows.size()) return;
            i = next++;
          }
          try {
            const auto cfg = unmt::apply_overrides(base, rows[i].overrides);
            const auto dir = (fs::path(root) / rows[i].name).string();
            fs::create_directories(dir);
            results[i] = train_run(cfg, dir, args);
          } catch (const std::exception& e) {
            errors[i] = e.what();
          }
        }
      };
      const std::size_t n = std::max<std::size_t>(1, std::min({parallel, thread_cap(), rows.size()}));
      std::vector<std::thread> pool;
      for (std::size_t k = 0; k < n; ++k) pool.emplace_back(worker);
      for (auto& t : pool) t.join();

      std::vector<std::string> table{"row,bleu_src_tgt,bleu_tgt_src,bleu_mean,ms"};
      std::cout << "row                    bleu_src_tgt  bleu_tgt_src  mean    ms\n";
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!results[i]) {
          std::cout << rows[i].name << " failed: " << errors[i] << "\n";
          continue;
        }
        const auto& e = results[i]->iteration_end.back();
        table.push_back(rows[i].name + "," + unmt::detail::fmt_opt(e.bleu_src_tgt) + "," +
                        unmt::detail::fmt_opt(e.bleu_tgt_src) + "," + unmt::detail::fmt_double(e.bleu_mean()) + "," +
                        unmt::detail::fmt_double(e.ms));
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-22s %12.2f  %12.2f  %6.2f  %6.2f\n", rows[i].name.c_str(),
                      e.bleu_src_tgt.value_or(0), e.bleu_tgt_src.value_or(0), e.bleu_mean(), e.ms);
        std::cout << buf;
      }
      unmt::write_lines((fs::path(root) / "ablation.csv").string(), table);
      for (std::size_t i = 0; i < rows.size(); ++i)
        if (!results[i]) throw unmt::Error("ablation", "row '" + rows[i].name + "' failed: " + errors[i]);
    }
  } catch (const unmt::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
