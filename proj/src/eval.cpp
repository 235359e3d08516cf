#include "segalign/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace segalign {

using nlohmann::json;

namespace {

Mat<double> normalized(const Mat<float>& m) {
  Mat<double> out = m.cast<double>();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

constexpr std::int64_t kKs[3] = {1, 5, 10};

void add_hit(RecallRow& row, std::int64_t rank) {
  if (rank < 1) row.r1 += 1;
  if (rank < 5) row.r5 += 1;
  if (rank < 10) row.r10 += 1;
}

void divide(RecallRow& row, double n) {
  row.r1 /= n;
  row.r5 /= n;
  row.r10 /= n;
}

json row_json(const RecallRow& r) { return json{{"r1", r.r1}, {"r5", r.r5}, {"r10", r.r10}}; }
RecallRow row_from(const json& j) { return {j.at("r1").get<double>(), j.at("r5").get<double>(), j.at("r10").get<double>()}; }

void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

std::string pct(double v) {
  char buf[32];
  // half-up on the decimal value, so 0.2835 prints as 28.4 despite binary representation
  std::snprintf(buf, sizeof(buf), "%.1f", std::round(1000.0 * v + 1e-7) / 10.0);
  return buf;
}

}  // namespace

RecallRow mean_of_directions(const RecallRow& a, const RecallRow& b) {
  return {(a.r1 + b.r1) / 2.0, (a.r5 + b.r5) / 2.0, (a.r10 + b.r10) / 2.0};
}

std::int64_t rank_of(const std::vector<double>& scores, std::int64_t gold) {
  const double s = scores.at(static_cast<std::size_t>(gold));
  std::int64_t rank = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    const auto jj = static_cast<std::int64_t>(j);
    if (scores[j] > s || (scores[j] == s && jj < gold)) ++rank;
  }
  return rank;
}

RetrievalReport recall_at_k(const Mat<float>& audio, const Mat<float>& images, const std::vector<std::int64_t>& gold) {
  if (images.rows() == 0) throw std::invalid_argument("recall_at_k: empty candidate set");
  if (audio.rows() == 0) throw std::invalid_argument("recall_at_k: no queries");
  if (static_cast<std::size_t>(audio.rows()) != gold.size())
    throw std::invalid_argument("recall_at_k: gold map has " + std::to_string(gold.size()) + " entries for " +
                                std::to_string(audio.rows()) + " captions");
  if (audio.cols() != images.cols())
    throw ShapeError("recall_at_k", Shape{audio.rows(), audio.cols()}, Shape{images.rows(), images.cols()});
  for (auto g : gold)
    if (g < 0 || g >= images.rows()) throw std::out_of_range("recall_at_k: gold image " + std::to_string(g));

  const Mat<double> sims = normalized(audio) * normalized(images).transpose();  // captions x images
  RetrievalReport r;
  r.num_queries = audio.rows();
  r.num_candidates = images.rows();

  std::vector<double> scores;
  for (Eigen::Index i = 0; i < sims.rows(); ++i) {
    scores.assign(sims.row(i).data(), sims.row(i).data() + sims.cols());
    add_hit(r.speech_to_image, rank_of(scores, gold[static_cast<std::size_t>(i)]));
  }
  divide(r.speech_to_image, double(sims.rows()));

  // image -> speech: best rank among the image's captions.
  std::vector<std::vector<std::int64_t>> captions_of(static_cast<std::size_t>(images.rows()));
  for (std::size_t i = 0; i < gold.size(); ++i) captions_of[static_cast<std::size_t>(gold[i])].push_back(std::int64_t(i));
  std::int64_t queried = 0;
  for (Eigen::Index j = 0; j < sims.cols(); ++j) {
    const auto& caps = captions_of[static_cast<std::size_t>(j)];
    if (caps.empty()) continue;
    ++queried;
    scores.resize(static_cast<std::size_t>(sims.rows()));
    for (Eigen::Index i = 0; i < sims.rows(); ++i) scores[static_cast<std::size_t>(i)] = sims(i, j);
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for (auto c : caps) best = std::min(best, rank_of(scores, c));
    add_hit(r.image_to_speech, best);
  }
  divide(r.image_to_speech, double(queried));
  r.mean = mean_of_directions(r.speech_to_image, r.image_to_speech);
  return r;
}

SemanticReport semantic_audio_retrieval(const Mat<float>& queries, const Mat<float>& candidates,
                                        const std::vector<std::int64_t>& query_group,
                                        const std::vector<std::int64_t>& candidate_group) {
  if (candidates.rows() == 0) throw std::invalid_argument("semantic_audio_retrieval: empty candidate set");
  if (static_cast<std::size_t>(queries.rows()) != query_group.size() ||
      static_cast<std::size_t>(candidates.rows()) != candidate_group.size())
    throw std::invalid_argument("semantic_audio_retrieval: group map size mismatch");
  if (queries.cols() != candidates.cols())
    throw ShapeError("semantic_audio_retrieval", Shape{queries.rows(), queries.cols()},
                     Shape{candidates.rows(), candidates.cols()});
  std::map<std::int64_t, std::vector<std::int64_t>> owned;
  for (std::size_t j = 0; j < candidate_group.size(); ++j) owned[candidate_group[j]].push_back(std::int64_t(j));
  for (std::size_t i = 0; i < query_group.size(); ++i)
    if (!owned.count(query_group[i]))
      throw std::invalid_argument("semantic_audio_retrieval: query " + std::to_string(i) + " (group " +
                                  std::to_string(query_group[i]) + ") has no candidate");

  const Mat<double> sims = normalized(queries) * normalized(candidates).transpose();
  SemanticReport r;
  r.num_queries = queries.rows();
  r.num_candidates = candidates.rows();
  std::vector<double> scores;
  for (Eigen::Index i = 0; i < sims.rows(); ++i) {
    scores.assign(sims.row(i).data(), sims.row(i).data() + sims.cols());
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for (auto c : owned[query_group[static_cast<std::size_t>(i)]]) best = std::min(best, rank_of(scores, c));
    add_hit(r.recall, best);
  }
  if (r.num_queries > 0) divide(r.recall, double(r.num_queries));
  return r;
}

std::vector<double> average_ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = (double(i) + double(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("pearson: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("pearson: need at least 2 values");
  const double n = double(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("correlation undefined: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size())
    throw std::invalid_argument("spearman: lengths " + std::to_string(xs.size()) + " and " + std::to_string(ys.size()));
  if (xs.size() < 2) throw std::invalid_argument("spearman: need at least 2 pairs");
  return pearson(average_ranks(xs), average_ranks(ys));
}

BoundaryScore boundary_f1(const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& gold,
                          std::int64_t tolerance) {
  BoundaryScore s;
  s.num_pred = std::int64_t(pred.size());
  s.num_gold = std::int64_t(gold.size());
  std::size_t i = 0, j = 0;
  while (i < pred.size() && j < gold.size()) {
    if (std::abs(pred[i] - gold[j]) <= tolerance) {
      ++s.matched;
      ++i;
      ++j;
    } else if (pred[i] < gold[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  s.precision = s.num_pred ? double(s.matched) / double(s.num_pred) : (s.num_gold ? 0.0 : 1.0);
  s.recall = s.num_gold ? double(s.matched) / double(s.num_gold) : (s.num_pred ? 0.0 : 1.0);
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

BoundaryScore combine(const std::vector<BoundaryScore>& parts) {
  BoundaryScore s;
  for (const auto& p : parts) {
    s.matched += p.matched;
    s.num_pred += p.num_pred;
    s.num_gold += p.num_gold;
  }
  s.precision = s.num_pred ? double(s.matched) / double(s.num_pred) : 0.0;
  s.recall = s.num_gold ? double(s.matched) / double(s.num_gold) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

std::string report_json(const RetrievalReport& r) {
  json j;
  j["report_version"] = 1;
  j["label"] = r.label;
  j["config_digest"] = r.config_digest;
  j["speech_to_image"] = row_json(r.speech_to_image);
  j["image_to_speech"] = row_json(r.image_to_speech);
  j["mean"] = row_json(r.mean);
  j["num_queries"] = r.num_queries;
  j["num_candidates"] = r.num_candidates;
  return j.dump(2) + "\n";
}

RetrievalReport report_from_json(const std::string& text) {
  const auto j = json::parse(text);
  if (j.at("report_version").get<int>() != 1) throw std::runtime_error("unsupported report_version");
  RetrievalReport r;
  r.label = j.at("label").get<std::string>();
  r.config_digest = j.at("config_digest").get<std::string>();
  r.speech_to_image = row_from(j.at("speech_to_image"));
  r.image_to_speech = row_from(j.at("image_to_speech"));
  r.mean = row_from(j.at("mean"));
  r.num_queries = j.at("num_queries").get<std::int64_t>();
  r.num_candidates = j.at("num_candidates").get<std::int64_t>();
  return r;
}

// Image (speech->image), Speech (image->speech) and Mean, each R@1/5/10.
std::string report_table(const RetrievalReport& r) {
  const RecallRow* rows[3] = {&r.speech_to_image, &r.image_to_speech, &r.mean};
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-16s", "");
  os << buf;
  for (const char* group : {"Image", "Speech", "Mean"}) {
    std::snprintf(buf, sizeof(buf), "%-21s", group);
    os << buf;
  }
  os << "\n";
  std::snprintf(buf, sizeof(buf), "%-16s", "Model");
  os << buf;
  for (int g = 0; g < 3; ++g)
    for (auto k : kKs) {
      std::snprintf(buf, sizeof(buf), "%-7s", ("R@" + std::to_string(k)).c_str());
      os << buf;
    }
  os << "\n";
  std::snprintf(buf, sizeof(buf), "%-16s", r.label.empty() ? "model" : r.label.c_str());
  os << buf;
  for (const auto* row : rows)
    for (double v : {row->r1, row->r5, row->r10}) {
      std::snprintf(buf, sizeof(buf), "%-7s", pct(v).c_str());
      os << buf;
    }
  os << "\n";
  return os.str();
}

void emit_report(const RetrievalReport& r, const std::filesystem::path& stem) {
  write_text(stem.string() + ".json", report_json(r));
  write_text(stem.string() + ".txt", report_table(r));
}

std::string simi_json(const SimiReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["report_version"] = 1;
  j["extraction_point"] = r.extraction_point;
  j["num_pairs"] = r.num_pairs;
  j["dev"] = {{"synthetic", opt(r.dev_synthetic)}, {"natural", opt(r.dev_natural)}};
  j["test"] = {{"synthetic", opt(r.test_synthetic)}, {"natural", opt(r.test_natural)}};
  return j.dump(2) + "\n";
}

std::string simi_table(const SimiReport& r) {
  auto cell = [](const std::optional<double>& v) {
    char buf[32];
    if (v)
      std::snprintf(buf, sizeof(buf), "%-11.2f", *v);
    else
      std::snprintf(buf, sizeof(buf), "%-11s", "-");
    return std::string(buf);
  };
  std::ostringstream os;
  os << "                dev                   test\n";
  os << "Model           synthetic  natural    synthetic  natural\n";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%-16s", r.extraction_point.c_str());
  os << buf << cell(r.dev_synthetic) << cell(r.dev_natural) << cell(r.test_synthetic) << cell(r.test_natural) << "\n";
  return os.str();
}

void emit_simi_report(const SimiReport& r, const std::filesystem::path& stem) {
  write_text(stem.string() + ".json", simi_json(r));
  write_text(stem.string() + ".txt", simi_table(r));
}

std::string semantic_json(const SemanticReport& r) {
  json j;
  j["report_version"] = 1;
  j["branch"] = r.branch;
  j["recall"] = row_json(r.recall);
  j["num_queries"] = r.num_queries;
  j["num_candidates"] = r.num_candidates;
  return j.dump(2) + "\n";
}

void emit_semantic_report(const SemanticReport& r, const std::filesystem::path& stem) {
  write_text(stem.string() + ".json", semantic_json(r));
}

}  // namespace segalign
