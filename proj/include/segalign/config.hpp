// Training configuration. Defaults follow the published setup (Adam at 2e-5,
// batch 21, decay 0.95 every 3 epochs, 1024 negatives with up to 512 from the
// positive's cluster, 100 NFC warm-up steps); configs/desk.json scales the
// model down for CPU runs.
#pragma once

#include "segalign/alignment.hpp"
#include "segalign/corpus.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace segalign {

struct TrainConfig {
  // optimizer
  double lr = 2e-5;
  int batch_size = 21;
  double lr_decay = 0.95;
  int lr_decay_every = 3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 30;

  // retrieval loss and negatives
  double tau_ret = 0.07;
  bool train_temperature = false;
  int n_neg = 1024;
  int n_hard_max = 512;
  bool hard_mining = true;
  int kmeans_k = 64;
  int kmeans_max_iter = 50;
  bool recompute_clusters = false;
  bool normalize_images = true;

  // progressive schedule and next-frame classifier
  int nfc_warmup_steps = 100;
  int nfc_negatives = 10;

  // segmentation
  double boundary_threshold = 0.5;
  int max_segments = 64;
  std::string external_boundaries = "none";  // none | ground_truth

  // alignment head
  std::string head = "direct";  // direct | regularized | vq
  double lambda = 0.0;
  double tau_vq = 0.1;
  bool normalize_segments = false;

  // masked-segment auxiliary loss (aux_weight 0 disables it)
  double mask_prob = 0.15;
  double aux_weight = 0.0;

  // architecture
  int fenc_hidden = 1024;
  int fenc_out = 1024;
  int senc_filters = 1024;
  int seg_dim = 512;
  int text_heads = 4;
  std::uint64_t text_seed = 1234;

  // audio-only twin-branch model
  int right_dim = 768;
  std::string right_projection = "ffn";  // ffn | identity
  std::uint64_t right_text_seed = 4321;
  int twin_joint_dim = 512;
  bool twin_symmetric = false;

  // validation during training (0 = full held-out split)
  int val_subsample = 0;
  bool validate_each_epoch = true;

  std::uint64_t seed = 0;

  AlignmentHead alignment_head() const;
  void validate() const;
};

// Parses a JSON object on top of the defaults. Unknown keys and type
// mismatches raise ConfigError naming the key. Overrides are key=value pairs
// (value parsed as JSON, falling back to a plain string) applied last.
TrainConfig config_from_json(const std::string& json_text,
                             const std::vector<std::pair<std::string, std::string>>& overrides = {});
TrainConfig load_config(const std::filesystem::path& path,
                        const std::vector<std::pair<std::string, std::string>>& overrides = {});
std::string config_to_json(const TrainConfig& c);

// Splits "key=value"; throws ConfigError when '=' is missing.
std::pair<std::string, std::string> parse_override(const std::string& kv);

// Stable 64-bit digest of the resolved configuration, hex encoded.
std::string config_digest(const TrainConfig& c);

// Learning rate for a 1-based epoch: base * decay^floor((epoch-1)/every).
double lr_at_epoch(const TrainConfig& c, int epoch);

}  // namespace segalign
