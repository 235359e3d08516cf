// Retrieval recall, Spearman correlation, boundary F1 and report output.
#pragma once

#include "segalign/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace segalign {

class UndefinedCorrelation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct RecallRow {
  double r1 = 0, r5 = 0, r10 = 0;
};

struct RetrievalReport {
  RecallRow speech_to_image;
  RecallRow image_to_speech;
  RecallRow mean;
  std::int64_t num_queries = 0;     // captions
  std::int64_t num_candidates = 0;  // images
  std::string config_digest;
  std::string label;
};

RecallRow mean_of_directions(const RecallRow& a, const RecallRow& b);

// Rank of `gold` among candidates scored by `scores` (0 = best). Ties go to
// the lower candidate index.
std::int64_t rank_of(const std::vector<double>& scores, std::int64_t gold);

// audio: one row per caption; images: one row per candidate image;
// gold[i] = row of caption i's image. Cosine similarity.
RetrievalReport recall_at_k(const Mat<float>& audio, const Mat<float>& images, const std::vector<std::int64_t>& gold);

// Each query's hit if the retrieved candidate shares its group. Every query's
// group must own at least one candidate.
struct SemanticReport {
  RecallRow recall;
  std::int64_t num_queries = 0;
  std::int64_t num_candidates = 0;
  std::string branch;
};
SemanticReport semantic_audio_retrieval(const Mat<float>& queries, const Mat<float>& candidates,
                                        const std::vector<std::int64_t>& query_group,
                                        const std::vector<std::int64_t>& candidate_group);

// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& xs);
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct BoundaryScore {
  double precision = 0, recall = 0, f1 = 0;
  std::int64_t matched = 0, num_pred = 0, num_gold = 0;
};
// One-to-one matching of sorted start lists within +-tolerance frames.
BoundaryScore boundary_f1(const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& gold,
                          std::int64_t tolerance = 1);
// Pooled over many utterances (counts summed before the ratios).
BoundaryScore combine(const std::vector<BoundaryScore>& parts);

// Similarity results in the dev/test x synthetic/natural layout.
struct SimiReport {
  std::string extraction_point;
  std::optional<double> dev_synthetic, test_synthetic, dev_natural, test_natural;  // rho x 100
  std::int64_t num_pairs = 0;
};

std::string report_json(const RetrievalReport& r);
RetrievalReport report_from_json(const std::string& text);
std::string report_table(const RetrievalReport& r);
// Writes <stem>.json and <stem>.txt.
void emit_report(const RetrievalReport& r, const std::filesystem::path& stem);

std::string simi_json(const SimiReport& r);
std::string simi_table(const SimiReport& r);
void emit_simi_report(const SimiReport& r, const std::filesystem::path& stem);

std::string semantic_json(const SemanticReport& r);
void emit_semantic_report(const SemanticReport& r, const std::filesystem::path& stem);

}  // namespace segalign
