#include "segalign/ablation.hpp"

#include "segalign/trainer.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <map>
#include <sstream>

namespace segalign {

namespace fs = std::filesystem;

std::vector<std::string> ablation_protocol_names() { return {"hard-mining", "lambda", "vq", "aux", "boundaries"}; }

AblationProtocol ablation_protocol(const std::string& name) {
  if (name == "hard-mining")
    return {name, {{"hard-mining", {{"hard_mining", "true"}}}, {"random-only", {{"hard_mining", "false"}}}}};
  if (name == "lambda") {
    AblationProtocol p{name, {}};
    for (const char* l : {"0", "0.1", "0.5", "1.0"})
      p.runs.push_back({std::string("lambda=") + l, {{"head", "regularized"}, {"lambda", l}}});
    return p;
  }
  if (name == "vq") return {name, {{"no-vq", {{"head", "direct"}}}, {"vq", {{"head", "vq"}}}}};
  if (name == "aux")
    return {name, {{"no-aux", {{"aux_weight", "0"}}}, {"mlm-aux", {{"aux_weight", "0.1"}}}}};
  if (name == "boundaries")
    return {name,
            {{"detected", {{"external_boundaries", "none"}}},
             {"ground-truth", {{"external_boundaries", "ground_truth"}}}}};
  throw std::invalid_argument("unknown ablation protocol '" + name + "'");
}

std::string ablation_table(const AblationResult& r) {
  std::ostringstream os;
  os << "protocol: " << r.protocol << "\n";
  bool first = true;
  for (const auto& rep : r.reports) {
    std::istringstream lines(report_table(rep));
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
      if (n++ < 2 && !first) continue;
      os << line << "\n";
    }
    first = false;
  }
  return os.str();
}

std::vector<AblationResult> run_ablation(const Dataset& d, const TrainConfig& base,
                                         const std::vector<std::string>& protocols, const fs::path& out_dir) {
  std::map<std::string, RetrievalReport> done;
  std::vector<AblationResult> results;
  const std::string base_json = config_to_json(base);
  for (const auto& name : protocols) {
    const auto protocol = ablation_protocol(name);
    AblationResult result{name, {}};
    for (const auto& run : protocol.runs) {
      const auto cfg = config_from_json(base_json, run.overrides);
      const auto digest = config_digest(cfg);
      auto it = done.find(digest);
      if (it == done.end()) {
        const auto run_dir = out_dir / "runs" / digest;
        const auto finished = epoch_checkpoint_path(run_dir, cfg.epochs);
        fs::path ckpt;
        if (fs::exists(finished) && load_checkpoint(finished).meta.at("config") == nlohmann::json::parse(config_to_json(cfg))) {
          spdlog::info("ablation {} / {} found finished run {}", name, run.name, digest);
          ckpt = finished;
        } else {
          spdlog::info("ablation {} / {} (config {})", name, run.name, digest);
          ckpt = fit(d, cfg, run_dir).last_checkpoint;
        }
        const auto sys = load_system(ckpt, d);
        it = done.emplace(digest, evaluate_retrieval(sys, d)).first;
      } else {
        spdlog::info("ablation {} / {} reuses config {}", name, run.name, digest);
      }
      auto report = it->second;
      report.label = run.name;
      report.config_digest = digest;
      emit_report(report, out_dir / name / run.name);
      result.reports.push_back(report);
    }
    std::ofstream(out_dir / name / "summary.txt", std::ios::binary) << ablation_table(result);
    results.push_back(std::move(result));
  }
  return results;
}

}  // namespace segalign
