// Acceptance run: one PASS/FAIL line per criterion, nonzero exit when any fails.
#define DOCTEST_CONFIG_DISABLE
#include "grad_suite.hpp"

#include "segalign/ablation.hpp"
#include "segalign/config.hpp"
#include "segalign/corpus.hpp"
#include "segalign/encoder.hpp"
#include "segalign/eval.hpp"
#include "segalign/trainer.hpp"
#include "segalign/twin.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>

using namespace segalign;
using testing::randn;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  failures += !o.pass;
  std::printf("%s  %-28s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt_double(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

TrainConfig desk_config() { return load_config(fs::path(SEGALIGN_SOURCE_DIR) / "configs" / "desk.json"); }

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const int seeds = 20;
  int checked = 0, failed = 0;
  double worst = 0;
  std::string worst_name;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    auto cases = testing::primitive_cases(s);
    auto comp = testing::composite_cases(s);
    cases.insert(cases.end(), comp.begin(), comp.end());
    for (const auto& c : cases) {
      const auto r = grad_check(c.f, c.point, 1e-4, 1e-4);
      ++checked;
      if (!r.passed) {
        ++failed;
        std::printf("      grad_check %s seed %llu: rel err %.3g at (%lld,%lld)\n", c.name.c_str(),
                    static_cast<unsigned long long>(s), r.max_rel_error, static_cast<long long>(r.worst_row),
                    static_cast<long long>(r.worst_col));
      }
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_name = c.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {failed == 0 && secs <= 120,
          std::to_string(checked) + " checks over " + std::to_string(seeds) + " seeds, " + std::to_string(failed) +
              " failed, worst rel err " + fmt_double(worst) + " (" + worst_name + ")"};
}

Outcome st_identity() {
  double worst = 0;
  int exact = 0;
  const int draws = 1000;
  for (std::uint64_t s = 0; s < draws; ++s) {
    const Eigen::Index m = 1 + Eigen::Index(s % 5), v = 3 + Eigen::Index(s % 11), dim = 2 + Eigen::Index(s % 7);
    const auto vocab = testing::random_vocab(v, dim, s + 77);
    const Mat<double> segs = randn(m, dim, s);
    const Mat<double> w = randn(m, dim, s + 100000);
    Graph<double> ga, gb;
    auto xa = ga.leaf(segs, true), xb = gb.leaf(segs, true);
    auto hard = vq_straight_through(cos_matrix(xa, vocab), vocab, 0.1);
    const auto idx = nearest_vocab(cos_matrix(xa, vocab).value());
    bool rows_ok = true;
    for (Eigen::Index j = 0; j < m; ++j) rows_ok &= hard.value().row(j) == vocab.rows.row(idx[std::size_t(j)]);
    exact += rows_ok;
    ga.backward(sum(mul(hard, ga.leaf(w))));
    gb.backward(sum(mul(vq_soft(cos_matrix(xb, vocab), vocab, 0.1), gb.leaf(w))));
    worst = std::max(worst, (ga.grad(xa) - gb.grad(xb)).cwiseAbs().maxCoeff());
  }
  return {exact == draws && worst <= 1e-10, std::to_string(exact) + "/" + std::to_string(draws) +
                                                 " forwards are vocabulary rows, max grad diff " + fmt_double(worst)};
}

Outcome pooling_oracle() {
  auto rng = stream_rng(0, "acceptance/pool");
  double worst = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Eigen::Index len = 1 + Eigen::Index(uniform_index(rng, 80));
    const Mat<double> x = randn(len, 1 + Eigen::Index(s % 9), s);
    Starts starts{0};
    for (Eigen::Index t = 1; t < len; ++t)
      if (uniform_index(rng, 4) == 0) starts.push_back(t);
    Mat<double> naive = Mat<double>::Zero(Eigen::Index(starts.size()), x.cols());
    for (std::size_t j = 0; j < starts.size(); ++j) {
      const Eigen::Index end = j + 1 < starts.size() ? starts[j + 1] : len;
      for (Eigen::Index t = starts[j]; t < end; ++t) naive.row(Eigen::Index(j)) += x.row(t);
      naive.row(Eigen::Index(j)) /= double(end - starts[j]);
    }
    Graph<double> g;
    worst = std::max(worst, (pool_segments(g.leaf(x), starts).value() - naive).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-12, "1000 partitions, max abs diff " + fmt_double(worst)};
}

double oracle_spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        less += w < v[i];
        equal += w == v[i];
      }
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  const auto rx = ranks(xs), ry = ranks(ys);
  const double n = double(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i] / n;
    my += ry[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

Outcome metric_oracles() {
  const auto r1 = mean_of_directions({28.5, 0, 0}, {28.2, 0, 0}).r1;
  const auto r5 = mean_of_directions({56.1, 0, 0}, {55.3, 0, 0}).r1;
  const auto r10 = mean_of_directions({68.9, 0, 0}, {67.5, 0, 0}).r1;
  const bool means = std::abs(r1 - 28.4) <= 0.05 + 1e-9 && std::abs(r5 - 55.7) <= 1e-12 && std::abs(r10 - 68.2) <= 1e-12;

  RetrievalReport rep;
  rep.speech_to_image = {0.282, 0.553, 0.675};
  rep.image_to_speech = {0.285, 0.561, 0.689};
  rep.mean = mean_of_directions(rep.speech_to_image, rep.image_to_speech);
  const auto table = report_table(rep);
  const bool printed = table.find("28.4") != std::string::npos && table.find("55.7") != std::string::npos &&
                       table.find("68.2") != std::string::npos;

  auto rng = stream_rng(1, "acceptance/spearman");
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 4 + uniform_index(rng, 60);
    std::vector<double> xs(n), ys(n);
    for (auto& x : xs) x = double(uniform_index(rng, 5));
    for (std::size_t i = 0; i < n; ++i) ys[i] = double(uniform_index(rng, 7)) + xs[i];
    if (std::adjacent_find(xs.begin(), xs.end(), std::not_equal_to<>()) == xs.end()) xs[0] += 1;
    worst = std::max(worst, std::abs(spearman(xs, ys) - oracle_spearman(xs, ys)));
  }
  return {means && printed && worst <= 1e-12, "means " + fmt_double(r1) + "/" + fmt_double(r5) + "/" +
                                                   fmt_double(r10) + (printed ? " printed 28.4/55.7/68.2" : " misprinted") +
                                                   ", spearman max diff " + fmt_double(worst)};
}

Outcome boundary_recovery(const Dataset& d) {
  const auto t0 = Clock::now();
  std::vector<BoundaryScore> scores;
  for (std::size_t u = 0; u < 600 && u < d.utterances.size(); ++u) {
    const Mat<float> frames = d.utterance_frames(u);
    const auto starts = detect_boundaries(frames, 0.5);
    scores.push_back(boundary_f1(std::vector<std::int64_t>(starts.begin(), starts.end()), *d.utterances[u].boundaries_gt));
  }
  const auto c = combine(scores);
  const double secs = seconds_since(t0);
  return {c.f1 >= 0.95 && scores.size() >= 500 && secs <= 60,
          "F1 " + fmt_double(c.f1) + " (P " + fmt_double(c.precision) + ", R " + fmt_double(c.recall) + ") over " +
              std::to_string(scores.size()) + " utterances"};
}

struct E2E {
  fs::path checkpoint;
  std::optional<SpeechSystem> system;
};

Outcome end_to_end(const Dataset& d, const TrainConfig& cfg, const fs::path& run_dir, E2E& out) {
  const auto t0 = Clock::now();
  fs::remove_all(run_dir);
  const auto r = fit(d, cfg, run_dir);
  const double secs = seconds_since(t0);
  out.checkpoint = r.last_checkpoint;
  out.system = load_system(r.last_checkpoint, d);
  const auto rep = evaluate_retrieval(*out.system, d);

  int early = 0, bad_early = 0, late_ret = 0;
  std::istringstream lines(slurp(run_dir / "metrics.jsonl"));
  for (std::string line; std::getline(lines, line);) {
    const auto j = nlohmann::json::parse(line);
    if (j.at("epoch") == 1 && j.at("step").get<std::int64_t>() < 100) {
      ++early;
      bad_early += j.at("loss_nfc").is_null() || !j.at("loss_ret").is_null() || !j.at("loss_reg").is_null() ||
                   !j.at("loss_aux").is_null();
    } else {
      late_ret += !j.at("loss_ret").is_null();
    }
  }
  const double chance = 1.0 / double(rep.num_candidates);
  const auto& s2i = rep.speech_to_image;
  const bool ok = s2i.r1 >= 0.10 && s2i.r10 >= 0.40 && secs <= 1200 && early == 100 && bad_early == 0 && late_ret > 0;
  return {ok, "speech->image R@1 " + fmt_double(s2i.r1) + " (" + fmt_double(s2i.r1 / chance, 3) + "x chance), R@10 " +
                  fmt_double(s2i.r10) + ", " + std::to_string(rep.num_candidates) + " images; " +
                  std::to_string(early - bad_early) + "/" + std::to_string(early) +
                  " warm-up steps NFC-only; train " + fmt_double(secs, 4) + "s"};
}

Outcome ablations(const Dataset& d, const TrainConfig& cfg, const fs::path& dir) {
  const auto names = ablation_protocol_names();
  const auto results = run_ablation(d, cfg, names, dir);
  std::size_t reports = 0, expected = 0;
  std::string summary;
  for (const auto& n : names) expected += ablation_protocol(n).runs.size();
  for (const auto& r : results) {
    std::printf("%s\n", ablation_table(r).c_str());
    for (const auto& rep : r.reports) {
      reports += fs::exists(dir / r.protocol / (rep.label + ".json")) && fs::exists(dir / r.protocol / (rep.label + ".txt"));
      summary += " " + r.protocol + "/" + rep.label + "=" + fmt_double(rep.speech_to_image.r1, 3);
    }
  }
  return {results.size() == names.size() && reports == expected,
          std::to_string(results.size()) + " protocols, " + std::to_string(reports) + "/" + std::to_string(expected) +
              " reports; R@1" + summary};
}

Outcome twin(const Dataset& d, const TrainConfig& cfg, const fs::path& dir) {
  fs::remove_all(dir);
  const auto baseline = evaluate_semantic(make_twin_system(cfg, d.manifest.frame_dim), d);
  const auto r = fit_twin(d, cfg, dir);
  const auto sys = load_twin_system(r.last_checkpoint);
  const auto rep = evaluate_semantic(sys, d);
  const double chance = 1.0 / double(rep.num_candidates);
  const Mat<float> frames = d.utterance_frames(0);
  const auto right = extract_features(sys, frames, Branch::right);
  const auto dflt = extract_features(sys, frames);
  const auto concat = extract_features(sys, frames, Branch::concat);
  const bool dims = concat.cols() == sys.left_dim() + sys.right_dim() && right == dflt &&
                    concat.leftCols(sys.right_dim()) == right;
  return {rep.recall.r1 >= 10 * chance && dims,
          "semantic R@1 " + fmt_double(rep.recall.r1) + " (" + fmt_double(rep.recall.r1 / chance, 3) +
              "x chance, untrained " + fmt_double(baseline.recall.r1) + "), concat " + std::to_string(concat.cols()) +
              " = " + std::to_string(sys.left_dim()) + " + " + std::to_string(sys.right_dim()) +
              (right == dflt ? ", right is default" : ", default is not right")};
}

Outcome similarity(const Dataset& d, const E2E& e2e, const fs::path& dir) {
  const auto& sys = *e2e.system;
  const auto rep = eval_simi(
      d, [&](std::size_t u) { return utterance_representation(sys, d, u, Extraction::segment_mean); }, "segment_mean");
  emit_simi_report(rep, dir / "simi");
  const auto table = simi_table(rep);
  const auto j = nlohmann::json::parse(simi_json(rep));
  const bool schema = j.at("dev").contains("synthetic") && j.at("dev").contains("natural") &&
                      j.at("test").contains("synthetic") && j.at("test").contains("natural") &&
                      j.at("dev").at("natural").is_null() && j.at("test").at("natural").is_null() &&
                      table.find("natural") != std::string::npos && table.find(" - ") != std::string::npos;
  const bool ok = rep.dev_synthetic && rep.test_synthetic && *rep.dev_synthetic >= 30 && *rep.test_synthetic >= 30 && schema;
  return {ok, "rho x100 dev " + (rep.dev_synthetic ? fmt_double(*rep.dev_synthetic) : std::string("-")) + ", test " +
                  (rep.test_synthetic ? fmt_double(*rep.test_synthetic) : std::string("-")) +
                  (schema ? ", dev/test x synthetic/natural schema ok" : ", schema mismatch")};
}

Outcome determinism(const fs::path& dir) {
  GenConfig g;
  g.num_images = 120;
  g.num_train_images = 100;
  g.simi_pairs = 100;
  const auto d = gen_synthetic(g, 3);
  auto cfg = desk_config();
  cfg.epochs = 2;
  cfg.nfc_warmup_steps = 10;
  cfg.n_neg = 32;
  cfg.n_hard_max = 16;
  cfg.kmeans_k = 8;
  cfg.aux_weight = 0.1;
  std::vector<std::string> ckpts, reports;
  for (const char* run : {"a", "b"}) {
    fs::remove_all(dir / run);
    const auto r = fit(d, cfg, dir / run);
    ckpts.push_back(slurp(r.last_checkpoint));
    const auto sys = load_system(r.last_checkpoint, d);
    emit_report(evaluate_retrieval(sys, d), dir / run / "report");
    reports.push_back(slurp(dir / run / "report.json") + slurp(dir / run / "report.txt") + slurp(dir / run / "metrics.jsonl"));
  }
  const bool same = ckpts[0] == ckpts[1] && reports[0] == reports[1];
  return {same, std::string(ckpts[0] == ckpts[1] ? "checkpoints identical" : "checkpoints differ") + ", " +
                    (reports[0] == reports[1] ? "reports identical" : "reports differ") + " (" +
                    std::to_string(ckpts[0].size()) + " checkpoint bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string work = "acceptance_work";
  std::vector<std::string> only;
  app.add_option("--work-dir", work, "Scratch directory for training runs");
  app.add_option("--only", only, "Run only these criteria (gradients, st, pooling, metrics, boundaries, e2e, ablation, twin, simi, determinism)");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);
  const fs::path dir = work;
  fs::create_directories(dir);
  auto wanted = [&](const std::string& k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };

  if (wanted("gradients")) criterion("gradient suite", gradient_suite);
  if (wanted("st")) criterion("straight-through identity", st_identity);
  if (wanted("pooling")) criterion("pooling oracle", pooling_oracle);
  if (wanted("metrics")) criterion("metric oracles", metric_oracles);

  const bool needs_data = wanted("boundaries") || wanted("e2e") || wanted("ablation") || wanted("twin") || wanted("simi");
  if (needs_data) {
    const Dataset d = gen_synthetic(GenConfig{}, 0);
    const TrainConfig cfg = desk_config();
    if (wanted("boundaries")) criterion("boundary recovery", [&] { return boundary_recovery(d); });
    E2E e2e;
    const fs::path ablation_dir = dir / "ablation";
    // the end-to-end run doubles as the ablation baseline
    const fs::path run_dir = ablation_dir / "runs" / config_digest(cfg);
    if (wanted("e2e") || wanted("simi")) criterion("end-to-end learning", [&] { return end_to_end(d, cfg, run_dir, e2e); });
    if (wanted("ablation")) criterion("ablation harness", [&] { return ablations(d, cfg, ablation_dir); });
    if (wanted("twin")) criterion("twin branch", [&] { return twin(d, cfg, dir / "twin"); });
    if (wanted("simi")) {
      criterion("semantic similarity", [&]() -> Outcome {
        if (!e2e.system) return {false, "no trained system"};
        return similarity(d, e2e, dir);
      });
    }
  }
  if (wanted("determinism")) criterion("determinism", [&] { return determinism(dir / "determinism"); });

  std::printf("%d criteria failed\n", failures);
  return failures > 0 ? 1 : 0;
}
