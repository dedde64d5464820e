// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion (also
// written to <work_dir>/report.txt) and exits nonzero when any fails.
// Usage: acceptance [work_dir] [criteria...]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "unmt/unmt.hpp"

using namespace unmt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail += (detail.empty() ? "" : "; ") + what + (ok ? "" : " [failed]");
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double cpu_minutes(std::clock_t since) { return static_cast<double>(std::clock() - since) / CLOCKS_PER_SEC / 60.0; }

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

using TD = Tensor<double>;

TD rand_tensor(Shape s, Rng& rng) {
  std::vector<double> v(numel(s));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return TD(std::move(s), std::move(v), true);
}

// ---------------------------------------------------------------- gradients

Outcome gradient_correctness() {
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_name;
  auto check = [&](const std::string& name, const std::function<TD()>& f, std::vector<TD> params) {
    const auto rep = grad_check(f, std::move(params), 1e-4, 64);
    if (rep.max_rel_error > worst || worst_name.empty()) {
      worst = std::max(worst, rep.max_rel_error);
      worst_name = name;
    }
  };

  Rng rng(11);
  auto a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 5}, rng), c = rand_tensor({3, 4}, rng);
  auto bias = rand_tensor({4}, rng);
  auto proj = [](const TD& t) {
    Rng r(99);
    std::vector<double> w(t.size());
    for (auto& x : w) x = r.uniform(-1, 1);
    return weighted_sum(t, w);
  };
  check("matmul", [&] { return proj(matmul(a, b)); }, {a, b});
  check("add/sub/mul/scale", [&] { return proj(mul(add(a, c), sub(scale(a, 0.5), c))); }, {a, c});
  check("add_bias", [&] { return proj(add_bias(a, bias)); }, {a, bias});
  check("sigmoid/tanh", [&] { return proj(tanh(sigmoid(a))); }, {a});
  auto x = TD({2, 3}, {0.5, -0.7, 1.2, -0.3, 0.9, -1.5}, true);
  check("relu/leaky_relu", [&] { return proj(add(relu(x), leaky_relu(x, 0.2))); }, {x});
  check("softmax", [&] { return proj(softmax(a)); }, {a});
  check("masked softmax", [&] { return proj(softmax(a, {4, 2, 3})); }, {a});
  check("cross_entropy", [&] { return sum(cross_entropy(a, {0, 3, 1})); }, {a});
  check("bce_with_logits", [&] { return sum(bce_with_logits(a, std::vector<double>(12, 0.9))); }, {a});
  check("sum/mean", [&] { return add(mean(mul(a, a)), proj(a)); }, {a});
  check("embedding", [&] { return proj(embedding(a, {2, 0, 2, 1})); }, {a});
  check("concat/slice", [&] { return proj(slice_cols(concat<double>({a, c, a}), 2, 9)); }, {a, c});
  check("row selection", [&] { return proj(select_rows(where_rows({1, 0, 1}, a, c), {2, 2, 0})); }, {a, c});
  check("mask_rows", [&] { return proj(mask_rows(a, {0, 1, 1})); }, {a});
  auto h = rand_tensor({2, 4}, rng);
  auto s0 = rand_tensor({2, 4}, rng), s1 = rand_tensor({2, 4}, rng), s2 = rand_tensor({2, 4}, rng);
  check(
      "attention ops",
      [&] {
        auto keys = stack_steps<double>({s0, s1, s2});
        auto w = softmax(rows_dot(h, keys), {3, 2});
        return proj(weighted_rows(w, keys));
      },
      {h, s0, s1, s2});
  out.require(worst <= 1e-6, "primitives max rel error " + fmt("%.2e", worst) + " (" + worst_name + ")");

  // combined objective at desk size, two sentences per side
  Rng init(21);
  DiscriminatorConfig dc;
  auto p = ModelParams<double>::init(ArchConfig::desk(), 12, 13, init);
  auto d = Discriminator<double>::init(p.arch.hidden, dc, init);
  Rng wr(3);
  for (std::size_t l = 0; l < d.w.size(); ++l) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d.w[l].rows()));
    for (auto& v : d.w[l].mutable_data()) v = wr.uniform(-s, s);
    for (auto& v : d.b[l].mutable_data()) v = wr.uniform(-1.0, 1.0);
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
    Rng r(17);
    return total_loss(p, d, in, w, noise, r).total;
  };
  auto fq = [&] {
    Rng r(17);
    return total_loss(pq, dq, in, w, noise, r).total;
  };
  const auto rep = grad_check(f, p.tensors(), fq, pq.tensors(), 3e-4, 16);
  out.require(rep.max_rel_error <= 1e-6,
              "combined objective max rel error " + fmt("%.2e", rep.max_rel_error) + " over " +
                  std::to_string(rep.checked) + " coordinates");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.require(secs < 60.0, "runtime " + fmt("%.1f", secs) + " s");
  return out;
}

// -------------------------------------------------------------------- noise

Outcome noise_laws() {
  Outcome out;
  Rng rng = Rng::stream(2024, "acceptance.noise");
  std::size_t violations = 0;
  for (int i = 0; i < 100000; ++i) {
    const std::size_t n = 2 + rng.below(49);
    const auto perm = sample_permutation(n, 4.0, rng);
    for (std::size_t j = 0; j < n; ++j)
      if (std::abs(static_cast<long>(perm[j]) - static_cast<long>(j)) > 3) ++violations;
  }
  out.require(violations == 0, std::to_string(violations) + " displacement violations at alpha 4");

  std::size_t non_identity = 0;
  for (int i = 0; i < 100000; ++i) {
    const std::size_t n = 2 + rng.below(49);
    const auto perm = sample_permutation(n, 0.5, rng);
    for (std::size_t j = 0; j < n; ++j)
      if (perm[j] != j) {
        ++non_identity;
        break;
      }
  }
  out.require(non_identity == 0, std::to_string(non_identity) + " non-identity permutations at alpha 0.5");

  TokenIds sent(20);
  std::iota(sent.begin(), sent.end(), 4);
  std::size_t kept = 0, total = 0;
  while (total < 100000) {
    kept += drop_words(sent, 0.1, rng).size();
    total += sent.size();
  }
  const double rate = 1.0 - static_cast<double>(kept) / static_cast<double>(total);
  out.require(std::abs(rate - 0.1) <= 0.01, "drop rate " + fmt("%.4f", rate));
  return out;
}

// --------------------------------------------------------------------- bleu

Outcome bleu_oracle() {
  Outcome out;
  auto toks = [](std::initializer_list<const char*> lines) {
    std::vector<std::vector<std::string>> v;
    for (const char* l : lines) v.push_back(split_ws(l));
    return v;
  };
  struct Case {
    const char* name;
    std::vector<std::vector<std::string>> cand, ref;
    double expected;
  };
  const std::vector<Case> cases{
      {"identical", toks({"a b c d e", "f g h i"}), toks({"a b c d e", "f g h i"}), 100.0},
      {"clipping", toks({"the the the the"}), toks({"the cat"}),
       100.0 * std::pow(0.25 * (1.0 / 4.0) * (1.0 / 3.0) * (1.0 / 2.0), 0.25)},
      {"brevity", toks({"a b c"}), toks({"a b c d e f"}), 100.0 * std::exp(-1.0)},
      {"empty candidate", toks({""}), toks({"a b"}), 0.0},
      {"smoothing", toks({"a b c d"}), toks({"a c b d"}), 100.0 * std::pow(1.0 / 24.0, 0.25)},
      {"corpus pooling", toks({"a b", "c"}), toks({"a b", "d"}), 100.0 * std::pow(2.0 / 3.0, 0.25)},
      {"long candidate", toks({"a b c d e"}), toks({"a b c d"}), 100.0 * std::pow(0.8 * 0.75 * (2.0 / 3.0) * 0.5, 0.25)},
      {"no unigram match", toks({"x y z"}), toks({"a b c"}), 0.0},
  };
  std::size_t matched = 0;
  for (const auto& c : cases) {
    const double got = bleu(c.cand, c.ref).bleu;
    const bool ok = c.expected == 0.0 || c.expected == 100.0 ? got == c.expected
                                                             : std::abs(got - c.expected) <= 1e-12 * c.expected;
    if (ok)
      ++matched;
    else
      out.require(false, std::string(c.name) + " gave " + fmt("%.15g", got) + " expected " + fmt("%.15g", c.expected));
  }
  out.require(matched == cases.size(), std::to_string(matched) + "/" + std::to_string(cases.size()) + " hand cases");
  return out;
}

// ------------------------------------------------------------ synthetic runs

struct Workspace {
  fs::path root;
  std::string conf;
  std::optional<RunResult> main_run;
  double main_cpu_minutes = 0;

  ExperimentConfig config() const {
    auto c = ExperimentConfig::load(conf);
    c.iterations = 3;
    c.eval_every = 79;  // about two evaluations per epoch
    return c;
  }

  const RunResult& run4() {
    if (!main_run) {
      const auto dir = root / "run-a";
      fs::remove_all(dir);
      const auto t0 = std::clock();
      main_run = iterate(config(), dir.string());
      main_cpu_minutes = cpu_minutes(t0);
    }
    return *main_run;
  }
};

Workspace make_workspace(const fs::path& root) {
  Workspace w;
  w.root = root;
  fs::remove_all(root / "data");
  w.conf = write_synthetic_dataset(SynthSpec{}, (root / "data").string());
  return w;
}

Outcome end_to_end(Workspace& ws) {
  Outcome out;
  const auto& r = ws.run4();
  const double wbw = r.bootstrap->bleu_mean();
  const double it1 = r.iteration_end.at(0).bleu_mean();
  const double it3 = r.iteration_end.at(2).bleu_mean();
  out.require(it1 >= wbw + 5.0, "iter 1 BLEU " + fmt("%.2f", it1) + " vs word-by-word " + fmt("%.2f", wbw));
  out.require(it3 >= it1 - 0.5, "iter 3 BLEU " + fmt("%.2f", it3) + " (iter 2 " +
                                    fmt("%.2f", r.iteration_end.at(1).bleu_mean()) + ")");
  out.require(ws.main_cpu_minutes <= 30.0, fmt("%.1f", ws.main_cpu_minutes) + " CPU-min");
  return out;
}

Outcome model_selection(Workspace& ws) {
  Outcome out;
  const auto& r = ws.run4();
  std::vector<double> ms, bl;
  for (const auto& e : r.evals) {
    ms.push_back(e.ms);
    bl.push_back(e.bleu_mean());
  }
  out.require(ms.size() >= 10, std::to_string(ms.size()) + " checkpoints");
  const double rho = ms.size() >= 2 ? spearman(ms, bl) : 0.0;
  out.require(rho >= 0.8, "spearman " + fmt("%.3f", rho));
  return out;
}

Outcome ablations(Workspace& ws) {
  Outcome out;
  const auto& full = ws.run4();
  const double full_bleu = full.iteration_end.back().bleu_mean();
  const double wbw = full.bootstrap->bleu_mean();
  out.detail = "full " + fmt("%.2f", full_bleu);
  for (const auto& row : ablation_rows()) {
    if (row.name == "full" || row.name == "no_pretraining") continue;
    const auto dir = ws.root / ("ablate-" + row.name);
    fs::remove_all(dir);
    const auto r = iterate(apply_overrides(ws.config(), row.overrides), dir.string());
    const double b = r.iteration_end.back().bleu_mean();
    if (row.name == "no_pretraining_no_cd") {
      out.require(b < wbw + 5.0, row.name + " " + fmt("%.2f", b) + " (floor " + fmt("%.2f", wbw) + ")");
    } else {
      out.require(full_bleu >= b + 1.0, row.name + " " + fmt("%.2f", b));
    }
  }
  return out;
}

Outcome baseline_ordering(Workspace& ws) {
  Outcome out;
  const auto cfg = ws.config();
  const auto lex = Lexicon::load(cfg.data.lexicon);
  struct Side {
    const char* name;
    Lexicon lex;
    std::string from_test, to_test, to_train;
    Lang to;
  };
  const std::vector<Side> sides{
      {"src-tgt", lex, cfg.data.test_src, cfg.data.test_tgt, cfg.data.tgt_train, Lang::tgt},
      {"tgt-src", lex.inverted(), cfg.data.test_tgt, cfg.data.test_src, cfg.data.src_train, Lang::src},
  };
  for (const auto& s : sides) {
    const auto vocab = build_vocab(s.to_train, 0, s.to);
    const auto lm = train_language_model(load_dataset(s.to_train, vocab, cfg.max_len), vocab.size(), LmTrainConfig{},
                                         cfg.seed);
    std::vector<TokenIds> wbw, wr, owr, ref;
    const auto refs = read_lines(s.to_test);
    const auto srcs = read_lines(s.from_test);
    for (std::size_t i = 0; i < srcs.size(); ++i) {
      const auto w = vocab.encode(wbw_translate(s.lex, srcs[i]));
      const auto r = vocab.encode(refs[i]);
      wbw.push_back(w);
      wr.push_back(word_reorder(w, lm));
      owr.push_back(oracle_reorder(w, r));
      ref.push_back(r);
    }
    const double b_wbw = bleu(wbw, ref).bleu, b_wr = bleu(wr, ref).bleu, b_owr = bleu(owr, ref).bleu;
    out.require(b_owr >= b_wr && b_wr >= b_wbw, std::string(s.name) + " OWR " + fmt("%.2f", b_owr) + " WR " +
                                                    fmt("%.2f", b_wr) + " WBW " + fmt("%.2f", b_wbw));
  }
  return out;
}

Outcome determinism(Workspace& ws) {
  Outcome out;
  ws.run4();
  const auto a = ws.root / "run-a", b = ws.root / "run-b";
  fs::remove_all(b);
  iterate(ws.config(), b.string());
  std::size_t compared = 0, differing = 0;
  std::set<std::string> names;
  for (const auto& dir : {a, b})
    for (const auto& e : fs::directory_iterator(dir)) names.insert(e.path().filename().string());
  for (const auto& n : names) {
    ++compared;
    if (!fs::exists(a / n) || !fs::exists(b / n) || slurp(a / n) != slurp(b / n)) {
      ++differing;
      out.require(false, n + " differs");
    }
  }
  out.require(differing == 0 && compared > 0, std::to_string(compared) + " files compared");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_work";
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::stoi(argv[i]));
  fs::create_directories(root);

  std::optional<Workspace> ws;
  auto workspace = [&]() -> Workspace& {
    if (!ws) ws = make_workspace(root);
    return *ws;
  };
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"noise laws", noise_laws},
      {"bleu oracle", bleu_oracle},
      {"end-to-end unsupervised learning", [&] { return end_to_end(workspace()); }},
      {"model-selection fidelity", [&] { return model_selection(workspace()); }},
      {"ablation trend", [&] { return ablations(workspace()); }},
      {"baseline ordering", [&] { return baseline_ordering(workspace()); }},
      {"determinism", [&] { return determinism(workspace()); }},
  };
  std::ofstream report(root / "report.txt");
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    char line[2048];
    std::snprintf(line, sizeof line, "criterion %d %s: %s (%s)\n", n, criteria[i].first, o.pass ? "PASS" : "FAIL",
                  o.detail.c_str());
    std::fputs(line, stdout);
    std::fflush(stdout);
    report << line << std::flush;
  }
  return failed ? 1 : 0;
}
