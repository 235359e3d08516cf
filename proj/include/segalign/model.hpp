// The trainable speech model, its per-utterance forward pass, and the loss
// terms the trainer combines: retrieval contrastive loss against a frozen
// image pool and the masked-segment auxiliary loss.
#pragma once

#include "segalign/alignment.hpp"
#include "segalign/config.hpp"
#include "segalign/encoder.hpp"
#include "segalign/rng.hpp"
#include "segalign/tensor.hpp"

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace segalign {

template <typename Scalar>
struct ParamRef {
  std::string name;
  Mat<Scalar>* value = nullptr;
  bool frozen = false;
};

// Single-layer self-attention predictor over masked segment sequences.
template <typename Scalar>
struct MlmParams {
  Mat<Scalar> mask_vec, wq, wk, wv, wo;

  static MlmParams init(Eigen::Index dim, std::uint64_t seed) {
    Rng rng = stream_rng(seed, "init/mlm");
    MlmParams p;
    p.mask_vec = init_weight<Scalar>(1, dim, 1.0, rng);
    p.wq = init_weight<Scalar>(dim, dim, double(dim), rng);
    p.wk = init_weight<Scalar>(dim, dim, double(dim), rng);
    p.wv = init_weight<Scalar>(dim, dim, double(dim), rng);
    p.wo = init_weight<Scalar>(dim, dim, double(dim), rng);
    return p;
  }
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("mlm.mask", self.mask_vec);
    f("mlm.wq", self.wq);
    f("mlm.wk", self.wk);
    f("mlm.wv", self.wv);
    f("mlm.wo", self.wo);
  }
};

template <typename Scalar>
struct MlmVars {
  Var<Scalar> mask_vec, wq, wk, wv, wo;
};

template <typename Scalar>
struct SpeechModel {
  EncoderParams<Scalar> encoder;
  std::optional<MlmParams<Scalar>> mlm;
  std::optional<Mat<Scalar>> log_tau;  // trainable retrieval temperature

  static SpeechModel init(const TrainConfig& c, Eigen::Index frame_dim) {
    SpeechModel m;
    EncoderDims d;
    d.frame_dim = frame_dim;
    d.fenc_hidden = c.fenc_hidden;
    d.fenc_out = c.fenc_out;
    d.senc_filters = c.senc_filters;
    d.seg_dim = c.seg_dim;
    m.encoder = EncoderParams<Scalar>::init(d, c.seed);
    if (c.aux_weight > 0.0) m.mlm = MlmParams<Scalar>::init(c.seg_dim, c.seed);
    if (c.train_temperature) m.log_tau = Mat<Scalar>::Constant(1, 1, static_cast<Scalar>(std::log(c.tau_ret)));
    return m;
  }

  // Trainable tensors in checkpoint/optimizer order.
  std::vector<ParamRef<Scalar>> parameters() {
    std::vector<ParamRef<Scalar>> out;
    encoder.for_each([&](const std::string& n, Mat<Scalar>& m) { out.push_back({n, &m, false}); });
    if (mlm) MlmParams<Scalar>::visit(*mlm, [&](const std::string& n, Mat<Scalar>& m) { out.push_back({n, &m, false}); });
    if (log_tau) out.push_back({"log_tau", &*log_tau, false});
    return out;
  }
};

template <typename Scalar>
struct ModelVars {
  EncoderVars<Scalar> encoder;
  std::optional<MlmVars<Scalar>> mlm;
  std::optional<Var<Scalar>> log_tau;

  // Same order as SpeechModel::parameters().
  std::vector<Var<Scalar>> leaves() const {
    const auto& e = encoder;
    std::vector<Var<Scalar>> out{e.f_w1,  e.f_b1,  e.f_w2,    e.f_b2,  e.f_w3, e.f_b3, e.s_conv1,
                                 e.s_cb1, e.s_conv2, e.s_cb2, e.s_w1, e.s_b1, e.s_w2, e.s_b2};
    if (mlm) out.insert(out.end(), {mlm->mask_vec, mlm->wq, mlm->wk, mlm->wv, mlm->wo});
    if (log_tau) out.push_back(*log_tau);
    return out;
  }
};

template <typename Scalar>
ModelVars<Scalar> bind(Graph<Scalar>& g, const SpeechModel<Scalar>& m, bool trainable = true) {
  ModelVars<Scalar> v;
  v.encoder = bind(g, m.encoder, trainable);
  if (m.mlm) {
    v.mlm = MlmVars<Scalar>{g.leaf_ref(m.mlm->mask_vec, trainable), g.leaf_ref(m.mlm->wq, trainable),
                            g.leaf_ref(m.mlm->wk, trainable), g.leaf_ref(m.mlm->wv, trainable),
                            g.leaf_ref(m.mlm->wo, trainable)};
  }
  if (m.log_tau) v.log_tau = g.leaf_ref(*m.log_tau, trainable);
  return v;
}

// Everything the forward pass needs besides trainable parameters.
template <typename Scalar>
struct ModelRuntime {
  const FrozenTextEncoder<Scalar>* text = nullptr;
  const Vocabulary<Scalar>* vocab = nullptr;
  AlignmentHead head;
  double boundary_threshold = 0.5;
  int max_segments = 64;
  bool normalize_segments = false;
};

template <typename Scalar>
struct UtteranceForward {
  Var<Scalar> encoded;   // L x p
  Starts starts;
  Var<Scalar> pooled;    // M x p
  Var<Scalar> segments;  // M x seg_dim (S)
  HeadOutput<Scalar> head;
  typename FrozenTextEncoder<Scalar>::Output text;
};

// Frames -> encoded frames -> boundaries -> pooled segments -> S -> head ->
// frozen text encoder. Boundaries are constants for the backward pass.
template <typename Scalar>
UtteranceForward<Scalar> forward_utterance(const EncoderVars<Scalar>& enc, const ModelRuntime<Scalar>& rt,
                                           Var<Scalar> frames, const Starts* external = nullptr) {
  UtteranceForward<Scalar> f;
  f.encoded = encode_frames(enc, frames);
  f.starts = detect_boundaries(f.encoded.value(), rt.boundary_threshold, rt.max_segments);
  if (external) {
    const auto sims = adjacent_cosines(f.encoded.value());
    f.starts = merge_external_boundaries(f.starts, *external, frames.rows(), rt.max_segments, sims);
  }
  f.pooled = pool_segments(f.encoded, f.starts);
  f.segments = encode_segments(enc, f.pooled);
  auto s = rt.normalize_segments ? l2_normalize_rows(f.segments) : f.segments;
  f.head = apply_head(rt.head, s, rt.vocab);
  f.text = rt.text->encode(f.head.text_input);
  return f;
}

// -log( exp(a.pos/tau) / (exp(a.pos/tau) + sum_neg exp(a.neg/tau)) ).
// candidates row 0 is the positive. inv_tau may be a 1x1 Var (trainable
// temperature) or absent, in which case 1/tau is used.
template <typename Scalar>
Var<Scalar> retrieval_loss(Var<Scalar> audio, Var<Scalar> candidates, double tau,
                           std::optional<Var<Scalar>> inv_tau = std::nullopt) {
  if (audio.rows() != 1 || audio.cols() != candidates.cols())
    throw ShapeError("retrieval_loss", audio.shape(), candidates.shape());
  auto logits = matmul_nt(audio, candidates);
  logits = inv_tau ? scale_by(logits, *inv_tau) : scale(logits, static_cast<Scalar>(1.0 / tau));
  return neg(slice_cols(log_softmax_rows(logits), 0, 1));
}

template <typename Scalar>
Var<Scalar> retrieval_loss(Var<Scalar> audio, const Mat<Scalar>& positive, const Mat<Scalar>& negatives, double tau) {
  Mat<Scalar> cands(1 + negatives.rows(), positive.cols());
  cands.row(0) = positive.row(0);
  cands.bottomRows(negatives.rows()) = negatives;
  return retrieval_loss(audio, audio.graph().leaf(std::move(cands)), tau);
}

// Contrastive reconstruction: each predicted row must pick its own target row
// among all rows of the utterance, cosine logits at temperature 1.
template <typename Scalar>
Var<Scalar> masked_contrastive(Var<Scalar> predicted, Var<Scalar> targets, const std::vector<Eigen::Index>& masked) {
  if (predicted.rows() != static_cast<Eigen::Index>(masked.size()))
    throw ShapeError("masked_contrastive", predicted.shape(), Shape{static_cast<Eigen::Index>(masked.size()), predicted.cols()});
  std::vector<Eigen::Index> rows(masked.size());
  for (std::size_t i = 0; i < masked.size(); ++i) rows[i] = static_cast<Eigen::Index>(i);
  auto logp = log_softmax_rows(cosine_matrix(predicted, targets));
  auto picked = gather_elements(logp, std::move(rows), masked, static_cast<Eigen::Index>(masked.size()), 1);
  return neg(mean(picked));
}

inline std::vector<Eigen::Index> draw_mask(Eigen::Index m, double mask_prob, Rng& rng) {
  std::bernoulli_distribution coin(mask_prob);
  std::vector<Eigen::Index> masked;
  for (Eigen::Index j = 0; j < m; ++j)
    if (coin(rng)) masked.push_back(j);
  return masked;
}

// Masked positions are replaced by the learned mask vector; a one-layer
// self-attention predictor reconstructs them. Zero when nothing is masked.
template <typename Scalar>
Var<Scalar> mlm_aux_loss(Var<Scalar> segments, double mask_prob, const MlmVars<Scalar>& p, Rng& rng) {
  auto& g = segments.graph();
  const Eigen::Index m = segments.rows();
  if (m < 2) throw std::invalid_argument("mlm_aux_loss: needs at least 2 segments");
  const auto masked = draw_mask(m, mask_prob, rng);
  if (masked.empty()) return g.leaf(Mat<Scalar>::Zero(1, 1));
  std::vector<Var<Scalar>> rows;
  std::size_t next = 0;
  for (Eigen::Index j = 0; j < m; ++j) {
    if (next < masked.size() && masked[next] == j) {
      rows.push_back(p.mask_vec);
      ++next;
    } else {
      rows.push_back(slice_rows(segments, j, 1));
    }
  }
  auto x = concat_rows(std::span<const Var<Scalar>>(rows));
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(segments.cols()));
  auto attn = softmax_rows(scale(matmul_nt(matmul(x, p.wq), matmul(x, p.wk)), inv_sqrt));
  auto out = add(x, matmul(matmul(attn, matmul(x, p.wv)), p.wo));
  auto predicted = gather_rows(out, masked);
  return masked_contrastive(predicted, segments, masked);
}

// Standard bias-corrected Adam.
struct AdamSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  std::vector<Mat<Scalar>> m, v;
  std::int64_t t = 0;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
void adam_step(std::span<const ParamRef<Scalar>> params, std::span<const Mat<Scalar>> grads, AdamState<Scalar>& state,
               const AdamSettings& s) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params/grads count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].frozen) continue;
    if (grads[i].rows() != params[i].value->rows() || grads[i].cols() != params[i].value->cols())
      throw ShapeError("adam_step " + params[i].name + ": gradient shape " +
                       to_string(Shape{grads[i].rows(), grads[i].cols()}) + " vs parameter " +
                       to_string(Shape{params[i].value->rows(), params[i].value->cols()}));
    if (!grads[i].allFinite()) throw NonFiniteGradient("adam_step: non-finite gradient in " + params[i].name);
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Mat<Scalar>::Zero(p.value->rows(), p.value->cols()));
      state.v.push_back(Mat<Scalar>::Zero(p.value->rows(), p.value->cols()));
    }
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(s.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(s.beta2, double(state.t));
  const auto b1 = static_cast<Scalar>(s.beta1), b2 = static_cast<Scalar>(s.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].frozen) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    const auto m_hat = (m.array() / static_cast<Scalar>(c1));
    const auto v_hat = (v.array() / static_cast<Scalar>(c2));
    params[i].value->array() -= static_cast<Scalar>(s.lr) * m_hat / (v_hat.sqrt() + static_cast<Scalar>(s.eps));
  }
}

}  // namespace segalign
