#pragma once

#include "segalign/config.hpp"
#include "segalign/corpus.hpp"
#include "segalign/rng.hpp"
#include "segalign/tensor.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

namespace testing {

using segalign::Mat;

inline Mat<double> randn(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  segalign::Rng rng = segalign::stream_rng(seed, "test/randn", {std::uint64_t(r), std::uint64_t(c)});
  std::normal_distribution<double> n(0.0, scale);
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

// Entries bounded away from zero so kinks (relu, max ties) stay out of reach
// of finite differences.
inline Mat<double> randn_away(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double gap = 0.05) {
  Mat<double> m = randn(r, c, seed);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double& v = m.data()[i];
    if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
  }
  return m;
}

inline segalign::TrainConfig tiny_config() {
  segalign::TrainConfig c;
  c.fenc_hidden = 16;
  c.fenc_out = 12;
  c.senc_filters = 12;
  c.seg_dim = 8;
  c.right_dim = 12;
  c.twin_joint_dim = 8;
  c.batch_size = 4;
  c.n_neg = 8;
  c.n_hard_max = 4;
  c.kmeans_k = 3;
  c.lr = 1e-3;
  c.epochs = 2;
  c.nfc_warmup_steps = 3;
  c.nfc_negatives = 3;
  return c;
}

inline segalign::GenConfig tiny_corpus() {
  segalign::GenConfig g;
  g.num_concepts = 12;
  g.concept_dim = 4;
  g.frame_dim = 8;
  g.image_dim = 8;
  g.vocab_dim = 8;
  g.vocab_size = 16;
  g.num_images = 40;
  g.num_train_images = 32;
  g.captions_per_image = 2;
  g.simi_pairs = 20;
  return g;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("segalign_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
