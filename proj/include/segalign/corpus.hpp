// Embedding archives and the synthetic corpus generator.
//
// Archive directory layout:
//   manifest.json     dims, counts, flags
//   images.f32        num_images x image_dim
//   frames.f32        total_frames x frame_dim
//   utterances.json   list of UtteranceRecord
//   vocab.f32         vocab_size x vocab_dim        (optional)
//   simi.json         list of SimiPair              (optional)
// .f32 files are raw little-endian float32, row-major, no header.
#pragma once

#include "segalign/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace segalign {

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised for manifest/record inconsistencies (as opposed to I/O failures).
class ValidationError : public ArchiveError {
 public:
  using ArchiveError::ArchiveError;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Manifest {
  int version = 1;
  std::int64_t frame_dim = 0;
  std::int64_t image_dim = 0;
  std::int64_t vocab_dim = 0;
  std::int64_t num_images = 0;
  std::int64_t num_utterances = 0;
  std::int64_t vocab_size = 0;
  std::int64_t frame_rate_hz = 50;
  std::int64_t total_frames = 0;
  // Images [0, num_train_images) form the training pool; the rest are held out.
  std::int64_t num_train_images = 0;
  // Whether rows of images.f32 are stored unit-norm already.
  bool images_normalized = false;
};

struct UtteranceRecord {
  std::string id;
  std::int64_t image_id = -1;  // -1: no paired image (e.g. similarity probes)
  std::int64_t offset_frames = 0;
  std::int64_t num_frames = 0;
  std::optional<std::vector<std::int64_t>> boundaries_gt;
  std::optional<std::string> speaker;
  friend bool operator==(const UtteranceRecord&, const UtteranceRecord&) = default;
};

struct SimiPair {
  std::string utt_a;
  std::string utt_b;
  double score = 0.0;
  std::string split = "dev";
  friend bool operator==(const SimiPair&, const SimiPair&) = default;
};

struct Dataset {
  Manifest manifest;
  Mat<float> images;
  Mat<float> frames;
  std::vector<UtteranceRecord> utterances;
  std::optional<Mat<float>> vocab;
  std::vector<SimiPair> simi;

  auto utterance_frames(std::size_t i) const {
    const auto& u = utterances.at(i);
    return frames.middleRows(u.offset_frames, u.num_frames);
  }
  std::int64_t num_train_images() const { return manifest.num_train_images; }
  bool is_train_image(std::int64_t image) const { return image >= 0 && image < manifest.num_train_images; }
  std::optional<std::size_t> find_utterance(const std::string& id) const;
  // Utterance indices whose image lies in the train / held-out range.
  std::vector<std::size_t> train_utterances() const;
  std::vector<std::size_t> test_utterances() const;
};

// Checks every cross-field invariant; returns warnings for soft issues.
std::vector<std::string> validate(const Dataset& d);

void write_archive(const Dataset& d, const std::filesystem::path& dir);
Dataset read_archive(const std::filesystem::path& dir);

// Raw float32 helpers (little-endian, row-major).
void write_f32(const std::filesystem::path& file, const Mat<float>& m);
Mat<float> read_f32(const std::filesystem::path& file, std::int64_t rows, std::int64_t cols);

struct GenConfig {
  std::int64_t num_concepts = 48;
  std::int64_t concept_dim = 8;
  std::int64_t frame_dim = 64;
  std::int64_t image_dim = 64;
  std::int64_t num_images = 1200;
  std::int64_t num_train_images = 1000;
  std::int64_t captions_per_image = 5;
  std::pair<std::int64_t, std::int64_t> concepts_per_caption{3, 8};
  std::pair<std::int64_t, std::int64_t> frames_per_concept{4, 9};
  double frame_noise = 0.05;
  // Weight of the semantic (latent) component in each concept's image vector.
  double semantic_weight = 0.6;
  std::int64_t simi_pairs = 300;
  std::int64_t vocab_size = 96;
  std::int64_t vocab_dim = 64;
  std::int64_t frame_rate_hz = 50;

  void validate() const;
};

GenConfig gen_config_from_json(const std::string& json_text);
std::string gen_config_to_json(const GenConfig& c);

// Deterministic in (config, seed).
Dataset gen_synthetic(const GenConfig& config, std::uint64_t seed);

// Frozen embedding table used as the negative pool.
struct EmbeddingPool {
  Mat<float> matrix;
  std::optional<std::vector<int>> cluster_of;
  bool normalized = false;

  std::int64_t size() const { return matrix.rows(); }
};

// Train-range image rows, optionally L2-normalized.
EmbeddingPool make_image_pool(const Dataset& d, bool normalize);

struct KMeansResult {
  Mat<double> centroids;
  std::vector<int> cluster_of;
  std::vector<double> inertia_history;  // one entry per assignment step
  int iterations = 0;
};

// Lloyd iterations from k-means++ seeding.
KMeansResult kmeans_fit(const Mat<float>& points, int k, int max_iter, std::uint64_t seed);

}  // namespace segalign
