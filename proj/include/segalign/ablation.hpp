// Paired training runs that toggle one ingredient at a time, each scored with
// the same held-out retrieval report.
#pragma once

#include "segalign/config.hpp"
#include "segalign/corpus.hpp"
#include "segalign/eval.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace segalign {

struct AblationRun {
  std::string name;
  std::vector<std::pair<std::string, std::string>> overrides;
};

struct AblationProtocol {
  std::string name;
  std::vector<AblationRun> runs;
};

// hard-mining, lambda, vq, aux, boundaries
std::vector<std::string> ablation_protocol_names();
AblationProtocol ablation_protocol(const std::string& name);

struct AblationResult {
  std::string protocol;
  std::vector<RetrievalReport> reports;  // label = run name
};

// Runs share results when their resolved configurations coincide. Each run
// trains under <out_dir>/runs/<digest>/, reusing a finished run found there.
// Reports go to <out_dir>/<protocol>/<run>.{json,txt}, and
// <out_dir>/<protocol>/summary.txt stacks the rows.
std::vector<AblationResult> run_ablation(const Dataset& d, const TrainConfig& base,
                                         const std::vector<std::string>& protocols,
                                         const std::filesystem::path& out_dir);

std::string ablation_table(const AblationResult& r);

}  // namespace segalign
