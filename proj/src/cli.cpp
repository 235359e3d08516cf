#include "segalign/cli.hpp"

#include "segalign/ablation.hpp"
#include "segalign/config.hpp"
#include "segalign/corpus.hpp"
#include "segalign/eval.hpp"
#include "segalign/trainer.hpp"
#include "segalign/twin.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace segalign {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string log_level = "info";
};

struct TrainArgs {
  std::string config, data, out, resume;
  std::vector<std::string> sets;
};

struct EvalArgs {
  std::string data, checkpoint, out, point = "segment_mean", branch = "right", utterance;
  int max_images = 0;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

void setup_logging(const Globals& g) {
  auto logger = std::make_shared<spdlog::logger>("segalign", std::make_shared<spdlog::sinks::stderr_color_sink_st>());
  spdlog::set_default_logger(logger);
  std::string level = g.log_level;
  if (const char* env = std::getenv("SEGALIGN_LOG"); env && *env) level = env;
  const auto parsed = spdlog::level::from_str(level);
  if (parsed == spdlog::level::off && level != "off") throw CLI::ValidationError("--log-level", "unknown level '" + level + "'");
  spdlog::set_level(parsed);
}

TrainConfig resolve_config(const TrainArgs& a, const Globals& g) {
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& s : a.sets) overrides.push_back(parse_override(s));
  if (g.seed) overrides.emplace_back("seed", std::to_string(*g.seed));
  const auto cfg = a.config.empty() ? config_from_json("{}", overrides) : load_config(a.config, overrides);
  spdlog::info("resolved config {}: {}", config_digest(cfg), json::parse(config_to_json(cfg)).dump());
  return cfg;
}

int cmd_gen_synth(const std::string& out, const std::string& config, const Globals& g) {
  GenConfig gc = config.empty() ? GenConfig{} : gen_config_from_json(slurp(config));
  const std::uint64_t seed = g.seed.value_or(0);
  spdlog::info("generating synthetic corpus (seed {}): {}", seed, json::parse(gen_config_to_json(gc)).dump());
  const auto d = gen_synthetic(gc, seed);
  write_archive(d, out);
  write_file(fs::path(out) / "gen_config.json", gen_config_to_json(gc) + "\n");
  spdlog::info("wrote {} utterances, {} images to {}", d.utterances.size(), d.images.rows(), out);
  return kOk;
}

int cmd_validate(const std::string& data) {
  const auto d = read_archive(data);
  const auto warnings = validate(d);
  for (const auto& w : warnings) std::cout << "warning: " << w << "\n";
  std::cout << "ok: " << d.utterances.size() << " utterances, " << d.images.rows() << " images, " << warnings.size()
            << " warnings\n";
  return kOk;
}

int cmd_train(const TrainArgs& a, const Globals& g) {
  const auto cfg = resolve_config(a, g);
  const auto d = read_archive(a.data);
  FitOptions opt;
  if (!a.resume.empty()) opt.resume = a.resume;
  try {
    const auto r = fit(d, cfg, a.out, opt);
    spdlog::info("finished: {} steps, last checkpoint {}", r.steps, r.last_checkpoint.string());
  } catch (const TrainingDiverged& e) {
    spdlog::error("{}", e.what());
    return kRuntime;
  }
  return kOk;
}

int cmd_train_twin(const TrainArgs& a, const Globals& g) {
  const auto cfg = resolve_config(a, g);
  const auto d = read_archive(a.data);
  const auto r = fit_twin(d, cfg, a.out);
  spdlog::info("finished: last checkpoint {}", r.last_checkpoint.string());
  return kOk;
}

bool is_twin_checkpoint(const std::string& path) { return load_checkpoint(path).meta.value("kind", "") == "twin"; }

int cmd_eval_retrieval(const EvalArgs& a) {
  const auto d = read_archive(a.data);
  const auto sys = load_system(a.checkpoint, d);
  auto report = evaluate_retrieval(sys, d, a.max_images);
  report.label = fs::path(a.checkpoint).stem().string();
  emit_report(report, a.out);
  std::cout << report_table(report);
  return kOk;
}

int cmd_eval_simi(const EvalArgs& a) {
  const auto d = read_archive(a.data);
  SimiReport report;
  if (is_twin_checkpoint(a.checkpoint)) {
    const auto sys = load_twin_system(a.checkpoint);
    const auto branch = branch_from_string(a.branch);
    report = eval_simi(
        d, [&](std::size_t u) { return extract_features(sys, d.utterance_frames(u), branch); }, "branch:" + a.branch);
  } else {
    const auto sys = load_system(a.checkpoint, d);
    const auto point = extraction_from_string(a.point);
    report = eval_simi(d, [&](std::size_t u) { return utterance_representation(sys, d, u, point); }, a.point);
  }
  emit_simi_report(report, a.out);
  std::cout << simi_table(report);
  return kOk;
}

int cmd_eval_semantic(const EvalArgs& a) {
  const auto d = read_archive(a.data);
  const auto sys = load_twin_system(a.checkpoint);
  const auto r = evaluate_semantic(sys, d, branch_from_string(a.branch), a.max_images);
  emit_semantic_report(r, a.out);
  std::cout << semantic_json(r);
  return kOk;
}

std::vector<std::size_t> selected_utterances(const Dataset& d, const std::string& id) {
  if (id.empty()) {
    std::vector<std::size_t> all(d.utterances.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  const auto i = d.find_utterance(id);
  if (!i) throw std::invalid_argument("utterance '" + id + "' not in archive");
  return {*i};
}

int cmd_segment(const EvalArgs& a) {
  const auto d = read_archive(a.data);
  const auto sys = load_system(a.checkpoint, d);
  json out = json::array();
  std::vector<BoundaryScore> scores;
  for (auto i : selected_utterances(d, a.utterance)) {
    const auto starts = segment_utterance(sys, d, i);
    json row{{"id", d.utterances[i].id}, {"starts", starts}};
    if (d.utterances[i].boundaries_gt) {
      const std::vector<std::int64_t> pred(starts.begin(), starts.end());
      scores.push_back(boundary_f1(pred, *d.utterances[i].boundaries_gt));
      row["f1"] = scores.back().f1;
    }
    out.push_back(row);
  }
  write_file(a.out, out.dump(1) + "\n");
  if (!scores.empty()) std::cout << "boundary F1 (+-1 frame): " << combine(scores).f1 << "\n";
  return kOk;
}

int cmd_embed(const EvalArgs& a) {
  const auto d = read_archive(a.data);
  const auto utts = selected_utterances(d, a.utterance);
  Mat<float> emb;
  if (is_twin_checkpoint(a.checkpoint)) {
    const auto sys = load_twin_system(a.checkpoint);
    const auto branch = branch_from_string(a.branch);
    for (std::size_t k = 0; k < utts.size(); ++k) {
      const Mat<float> f = extract_features(sys, d.utterance_frames(utts[k]), branch);
      if (k == 0) emb.resize(std::int64_t(utts.size()), f.cols());
      emb.row(Eigen::Index(k)) = f;
    }
  } else {
    const auto sys = load_system(a.checkpoint, d);
    emb = embed_utterances(sys, d, utts);
  }
  write_f32(a.out + ".f32", emb);
  json ids = json::array();
  for (auto i : utts) ids.push_back(d.utterances[i].id);
  write_file(a.out + ".json", json{{"rows", emb.rows()}, {"cols", emb.cols()}, {"ids", ids}}.dump(1) + "\n");
  return kOk;
}

int cmd_ablate(const TrainArgs& a, const std::vector<std::string>& protocols, const Globals& g) {
  const auto cfg = resolve_config(a, g);
  const auto d = read_archive(a.data);
  const auto chosen = protocols.empty() ? ablation_protocol_names() : protocols;
  for (const auto& p : chosen) ablation_protocol(p);
  for (const auto& r : run_ablation(d, cfg, chosen, a.out)) std::cout << ablation_table(r) << "\n";
  return kOk;
}

}  // namespace

int parse_and_dispatch(int argc, const char* const* argv) {
  CLI::App app{"segmental speech-text alignment toolkit", "segalign"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Global seed (overrides the config)");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off (env SEGALIGN_LOG wins)");

  std::string gen_out, gen_config;
  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic corpus archive");
  gen->add_option("--out", gen_out, "Output archive directory")->required();
  gen->add_option("--config", gen_config, "Generator config JSON");

  std::string val_data;
  auto* val = app.add_subcommand("validate", "Check an archive");
  val->add_option("--data", val_data, "Archive directory")->required();

  TrainArgs train_args;
  std::vector<std::string> protocols;
  auto add_train_opts = [&](CLI::App* sub) {
    sub->add_option("--config", train_args.config, "Training config JSON");
    sub->add_option("--data", train_args.data, "Archive directory")->required();
    sub->add_option("--out", train_args.out, "Output directory")->required();
    sub->add_option("--set", train_args.sets, "Override key=value (repeatable)");
  };
  auto* train = app.add_subcommand("train", "Train the image-grounded model");
  add_train_opts(train);
  train->add_option("--resume", train_args.resume, "Checkpoint to resume from");
  auto* twin = app.add_subcommand("train-audio-only", "Train the twin-branch model on caption pairs");
  add_train_opts(twin);
  auto* ablate = app.add_subcommand("ablate", "Run paired ablation protocols");
  add_train_opts(ablate);
  ablate->add_option("--protocol", protocols, "hard-mining, lambda, vq, aux, boundaries (default: all)");

  EvalArgs ev;
  auto add_eval_opts = [&](CLI::App* sub, const std::string& out_help) {
    sub->add_option("--data", ev.data, "Archive directory")->required();
    sub->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
    sub->add_option("--out", ev.out, out_help)->required();
  };
  auto* eret = app.add_subcommand("eval-retrieval", "Held-out image/speech retrieval recall");
  add_eval_opts(eret, "Report path stem (.json and .txt are written)");
  eret->add_option("--max-images", ev.max_images, "Limit held-out images (0 = all)");
  auto* esimi = app.add_subcommand("eval-simi", "Spearman correlation on similarity pairs");
  add_eval_opts(esimi, "Report path stem");
  esimi->add_option("--point", ev.point, "frame_mean, segment_mean or sentence");
  esimi->add_option("--branch", ev.branch, "Branch for twin checkpoints");
  auto* esem = app.add_subcommand("eval-semantic", "Semantic audio retrieval for twin checkpoints");
  add_eval_opts(esem, "Report path stem");
  esem->add_option("--branch", ev.branch, "left, right or concat");
  esem->add_option("--max-images", ev.max_images, "Limit held-out images (0 = all)");
  auto* seg = app.add_subcommand("segment", "Detected segment starts per utterance");
  add_eval_opts(seg, "Output JSON file");
  seg->add_option("--utterance", ev.utterance, "Only this utterance id");
  auto* emb = app.add_subcommand("embed", "Utterance embeddings as float32 rows");
  add_eval_opts(emb, "Output stem (.f32 and .json)");
  emb->add_option("--branch", ev.branch, "left, right or concat for twin checkpoints");
  emb->add_option("--utterance", ev.utterance, "Only this utterance id");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e);
      return kOk;
    }
    std::cerr << "error: " << e.what() << "\n\n" << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kUsage;
  }

  try {
    setup_logging(g);
    if (*gen) return cmd_gen_synth(gen_out, gen_config, g);
    if (*val) return cmd_validate(val_data);
    if (*train) return cmd_train(train_args, g);
    if (*twin) return cmd_train_twin(train_args, g);
    if (*ablate) return cmd_ablate(train_args, protocols, g);
    if (*eret) return cmd_eval_retrieval(ev);
    if (*esimi) return cmd_eval_simi(ev);
    if (*esem) return cmd_eval_semantic(ev);
    if (*seg) return cmd_segment(ev);
    if (*emb) return cmd_embed(ev);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace segalign
