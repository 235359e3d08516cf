// Training: negative sampling, the progressive loss schedule, the batch loss,
// checkpoints and the fit loop.
#pragma once

#include "segalign/config.hpp"
#include "segalign/corpus.hpp"
#include "segalign/eval.hpp"
#include "segalign/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace segalign {

struct LossSet {
  bool nfc = false;
  bool ret = false;
  friend bool operator==(const LossSet&, const LossSet&) = default;
};

// Epoch 1: NFC alone for the first warmup steps, then NFC + retrieval.
// Later epochs: retrieval only.
inline LossSet loss_schedule(std::int64_t step, int epoch, int warmup_steps = 100) {
  if (step < 0 || epoch < 1) throw std::invalid_argument("loss_schedule: step >= 0 and epoch >= 1 required");
  if (epoch == 1) return {true, step >= warmup_steps};
  return {false, true};
}

class PoolTooSmall : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Draws negatives from a frozen pool. With clusters, up to n_hard_max come
// from the positive's own cluster and the remainder uniformly from the rest.
class NegativeSampler {
 public:
  NegativeSampler(std::int64_t pool_size, std::optional<std::vector<int>> cluster_of = std::nullopt);

  std::vector<std::int64_t> sample(std::int64_t positive, int n_neg, int n_hard_max, bool hard, Rng& rng) const;
  std::int64_t pool_size() const { return pool_size_; }
  bool has_clusters() const { return cluster_of_.has_value(); }

 private:
  std::int64_t pool_size_;
  std::optional<std::vector<int>> cluster_of_;
  std::vector<std::vector<std::int64_t>> members_;
};

std::vector<std::int64_t> sample_negatives(const EmbeddingPool& pool, std::int64_t positive, int n_neg,
                                           int n_hard_max, Rng& rng, bool hard = true);

template <typename Scalar>
struct TrainItem {
  const Mat<Scalar>* frames = nullptr;
  const Starts* external = nullptr;
  Mat<Scalar> candidates;  // row 0 positive, then negatives; used when retrieval is active
  Rng nfc_rng;
  Rng mask_rng;
};

template <typename Scalar>
struct LossTerms {
  std::optional<Var<Scalar>> nfc, ret, reg, aux;
  std::optional<Var<Scalar>> total;
};

namespace detail {
template <typename Scalar>
Var<Scalar> mean_of(std::vector<Var<Scalar>>& parts) {
  auto acc = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  return scale(acc, static_cast<Scalar>(1.0 / double(parts.size())));
}
}  // namespace detail

// Batch mean of each active term; total = nfc + ret + lambda * reg + aux_weight * aux.
// Utterances shorter than the next-frame classifier needs are left out of the
// NFC mean; the masked loss skips utterances with fewer than two segments.
template <typename Scalar>
LossTerms<Scalar> batch_loss(Graph<Scalar>& g, const ModelVars<Scalar>& vars, const ModelRuntime<Scalar>& rt,
                             const TrainConfig& c, LossSet active, const std::vector<TrainItem<Scalar>>& items) {
  std::vector<Var<Scalar>> nfc, ret, reg, aux;
  std::optional<Var<Scalar>> inv_tau;
  if (vars.log_tau) inv_tau = exp(neg(*vars.log_tau));
  for (const auto& item : items) {
    auto frames = g.leaf_ref(*item.frames);
    if (active.nfc && !active.ret) {
      // Only the frame encoder is involved.
      auto encoded = encode_frames(vars.encoder, frames);
      if (encoded.rows() >= nfc_min_length(c.nfc_negatives)) {
        Rng rng = item.nfc_rng;
        nfc.push_back(nfc_loss(encoded, c.nfc_negatives, rng));
      }
      continue;
    }
    auto f = forward_utterance(vars.encoder, rt, frames, item.external);
    if (active.nfc && f.encoded.rows() >= nfc_min_length(c.nfc_negatives)) {
      Rng rng = item.nfc_rng;
      nfc.push_back(nfc_loss(f.encoded, c.nfc_negatives, rng));
    }
    ret.push_back(retrieval_loss(f.text.joint, g.leaf_ref(item.candidates), c.tau_ret, inv_tau));
    if (f.head.reg_loss) reg.push_back(*f.head.reg_loss);
    if (vars.mlm && c.aux_weight > 0.0 && f.segments.rows() >= 2) {
      Rng rng = item.mask_rng;
      aux.push_back(mlm_aux_loss(f.segments, c.mask_prob, *vars.mlm, rng));
    }
  }
  LossTerms<Scalar> t;
  if (!nfc.empty()) t.nfc = detail::mean_of(nfc);
  if (!ret.empty()) t.ret = detail::mean_of(ret);
  if (!reg.empty()) t.reg = detail::mean_of(reg);
  if (!aux.empty()) t.aux = detail::mean_of(aux);
  auto accumulate = [&](std::optional<Var<Scalar>> term, double w) {
    if (!term) return;
    auto v = w == 1.0 ? *term : scale(*term, static_cast<Scalar>(w));
    t.total = t.total ? add(*t.total, v) : v;
  };
  accumulate(t.nfc, 1.0);
  accumulate(t.ret, 1.0);
  accumulate(t.reg, c.lambda);
  accumulate(t.aux, c.aux_weight);
  return t;
}

// The model plus the frozen pieces it runs with.
struct SpeechSystem {
  TrainConfig config;
  SpeechModel<float> model;
  FrozenTextEncoder<float> text;
  std::optional<Vocabulary<float>> vocab;
  Eigen::Index frame_dim = 0;

  ModelRuntime<float> runtime() const;
};

FrozenEncoderSpec text_encoder_spec(const TrainConfig& c, Eigen::Index joint_dim);
SpeechSystem make_system(const TrainConfig& c, const Dataset& d);

// Checkpoint file: "SGCLIP01", u64 little-endian metadata length, metadata
// JSON, then float32 tensors in layout order (parameters, then optimizer
// moments when present).
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Mat<float>>> tensors;
  std::optional<AdamState<float>> adam;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& file, nlohmann::json meta, std::span<const ParamRef<float>> params,
                     const AdamState<float>* adam);
Checkpoint load_checkpoint(const std::filesystem::path& file);
// Copies tensors into params by name, checking shapes.
void restore_parameters(const Checkpoint& ck, std::span<const ParamRef<float>> params);

SpeechSystem load_system(const std::filesystem::path& checkpoint_file, const Dataset& d);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::string last_good)
      : std::runtime_error(what), last_good_checkpoint(std::move(last_good)) {}
  std::string last_good_checkpoint;
};

struct EpochSummary {
  int epoch = 0;
  std::int64_t steps = 0;
  double lr = 0;
  std::optional<double> loss_nfc, loss_ret, loss_reg, loss_aux;  // epoch means over steps where active
  std::optional<RetrievalReport> validation;
  std::string checkpoint;
};

struct FitOptions {
  std::optional<std::filesystem::path> resume;
  // Stop after this many epochs in this call (the schedule still follows the config).
  std::optional<int> stop_after_epoch;
  std::function<void(const EpochSummary&)> on_epoch;
};

struct FitResult {
  std::vector<EpochSummary> epochs;
  std::filesystem::path last_checkpoint;
  std::int64_t steps = 0;
};

// Writes config.json, metrics.jsonl, validation.jsonl and
// checkpoints/epoch_NNN.ckpt under out_dir.
FitResult fit(const Dataset& d, const TrainConfig& c, const std::filesystem::path& out_dir,
              const FitOptions& options = {});

std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& out_dir, int epoch);

// Inference.
enum class Extraction { frame_mean, segment_mean, sentence };
Extraction extraction_from_string(const std::string& s);
std::string to_string(Extraction e);

Starts gt_starts(const UtteranceRecord& u);

// Joint-space embeddings of the given utterances.
Mat<float> embed_utterances(const SpeechSystem& s, const Dataset& d, const std::vector<std::size_t>& utts);
Mat<float> utterance_representation(const SpeechSystem& s, const Dataset& d, std::size_t utt, Extraction e);
Starts segment_utterance(const SpeechSystem& s, const Dataset& d, std::size_t utt);

// Held-out retrieval: captions of images in [num_train_images, num_images),
// optionally the first `max_images` of them.
RetrievalReport evaluate_retrieval(const SpeechSystem& s, const Dataset& d, int max_images = 0);

// Cosine of representations per pair against the annotated scores, rho x 100.
SimiReport eval_simi(const Dataset& d, const std::function<Mat<float>(std::size_t)>& representation,
                     const std::string& extraction_point);

}  // namespace segalign
