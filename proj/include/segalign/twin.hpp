// Audio-only training: one shared segmental encoder feeds two frozen text
// encoders. The right branch runs through a trainable projection so the two
// encoders may have different input widths. Paired captions of the same
// image are aligned contrastively against in-batch negatives.
#pragma once

#include "segalign/config.hpp"
#include "segalign/corpus.hpp"
#include "segalign/eval.hpp"
#include "segalign/model.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace segalign {

template <typename Scalar>
struct TwinParams {
  EncoderParams<Scalar> encoder;
  // Two-layer feed-forward map seg_dim -> right_dim; absent for identity.
  std::optional<std::array<Mat<Scalar>, 4>> projection;

  static TwinParams init(const TrainConfig& c, Eigen::Index frame_dim) {
    TwinParams p;
    EncoderDims d;
    d.frame_dim = frame_dim;
    d.fenc_hidden = c.fenc_hidden;
    d.fenc_out = c.fenc_out;
    d.senc_filters = c.senc_filters;
    d.seg_dim = c.seg_dim;
    p.encoder = EncoderParams<Scalar>::init(d, c.seed);
    if (c.right_projection == "ffn") {
      Rng rng = stream_rng(c.seed, "init/projection");
      p.projection = std::array<Mat<Scalar>, 4>{
          init_weight<Scalar>(c.seg_dim, c.right_dim, double(c.seg_dim), rng), Mat<Scalar>::Zero(1, c.right_dim),
          init_weight<Scalar>(c.right_dim, c.right_dim, double(c.right_dim), rng), Mat<Scalar>::Zero(1, c.right_dim)};
    }
    return p;
  }

  std::vector<ParamRef<Scalar>> parameters() {
    std::vector<ParamRef<Scalar>> out;
    encoder.for_each([&](const std::string& n, Mat<Scalar>& m) { out.push_back({n, &m, false}); });
    if (projection) {
      const char* names[4] = {"proj.w1", "proj.b1", "proj.w2", "proj.b2"};
      for (int i = 0; i < 4; ++i) out.push_back({names[i], &(*projection)[std::size_t(i)], false});
    }
    return out;
  }
};

template <typename Scalar>
struct TwinVars {
  EncoderVars<Scalar> encoder;
  std::optional<std::array<Var<Scalar>, 4>> projection;

  std::vector<Var<Scalar>> leaves() const {
    const auto& e = encoder;
    std::vector<Var<Scalar>> out{e.f_w1,  e.f_b1,    e.f_w2,  e.f_b2, e.f_w3, e.f_b3, e.s_conv1,
                                 e.s_cb1, e.s_conv2, e.s_cb2, e.s_w1, e.s_b1, e.s_w2, e.s_b2};
    if (projection) out.insert(out.end(), projection->begin(), projection->end());
    return out;
  }
};

template <typename Scalar>
TwinVars<Scalar> bind(Graph<Scalar>& g, const TwinParams<Scalar>& p, bool trainable = true) {
  TwinVars<Scalar> v;
  v.encoder = bind(g, p.encoder, trainable);
  if (p.projection) {
    const auto& w = *p.projection;
    v.projection = std::array<Var<Scalar>, 4>{g.leaf_ref(w[0], trainable), g.leaf_ref(w[1], trainable),
                                               g.leaf_ref(w[2], trainable), g.leaf_ref(w[3], trainable)};
  }
  return v;
}

template <typename Scalar>
struct TwinRuntime {
  const FrozenTextEncoder<Scalar>* left = nullptr;
  const FrozenTextEncoder<Scalar>* right = nullptr;
  double boundary_threshold = 0.5;
  int max_segments = 64;
};

template <typename Scalar>
struct TwinBranches {
  Var<Scalar> encoded;
  Var<Scalar> segments;
  typename FrozenTextEncoder<Scalar>::Output left, right;
};

template <typename Scalar>
Var<Scalar> project_right(const TwinVars<Scalar>& v, Var<Scalar> segments) {
  if (!v.projection) return segments;
  const auto& p = *v.projection;
  auto h = relu(add_bias(matmul(segments, p[0]), p[1]));
  return add_bias(matmul(h, p[2]), p[3]);
}

// Both branches consume the same segment sequence from the shared encoder.
template <typename Scalar>
TwinBranches<Scalar> twin_branches(const TwinVars<Scalar>& v, const TwinRuntime<Scalar>& rt, Var<Scalar> frames) {
  const Eigen::Index right_in = v.projection ? (*v.projection)[0].cols() : v.encoder.s_w2.cols();
  if (rt.left->spec().in_dim != v.encoder.s_w2.cols() || rt.right->spec().in_dim != right_in ||
      rt.left->spec().joint_dim != rt.right->spec().joint_dim)
    throw std::invalid_argument("twin: branch dims mismatch (left in " + std::to_string(rt.left->spec().in_dim) +
                                ", right in " + std::to_string(rt.right->spec().in_dim) + ", joint " +
                                std::to_string(rt.left->spec().joint_dim) + "/" +
                                std::to_string(rt.right->spec().joint_dim) + ")");
  TwinBranches<Scalar> b;
  b.encoded = encode_frames(v.encoder, frames);
  const auto starts = detect_boundaries(b.encoded.value(), rt.boundary_threshold, rt.max_segments);
  b.segments = encode_segments(v.encoder, pool_segments(b.encoded, starts));
  b.left = rt.left->encode(b.segments);
  b.right = rt.right->encode(project_right(v, b.segments));
  return b;
}

template <typename Scalar>
struct TwinPairOutput {
  Var<Scalar> a_left;   // 1 x joint, unit norm
  Var<Scalar> b_right;  // 1 x joint, unit norm
};

template <typename Scalar>
TwinPairOutput<Scalar> twin_forward(const TwinVars<Scalar>& v, const TwinRuntime<Scalar>& rt, Var<Scalar> utt_a,
                                    Var<Scalar> utt_b) {
  return {twin_branches(v, rt, utt_a).left.joint, twin_branches(v, rt, utt_b).right.joint};
}

// Row i of `lefts` must pick row i of `rights` among all B rows.
template <typename Scalar>
Var<Scalar> twin_contrastive_loss(Var<Scalar> lefts, Var<Scalar> rights, double tau, bool symmetric = false) {
  const Eigen::Index b = lefts.rows();
  if (b < 2) throw std::invalid_argument("twin_contrastive_loss: batch size " + std::to_string(b) + " < 2");
  if (rights.rows() != b || rights.cols() != lefts.cols())
    throw ShapeError("twin_contrastive_loss", lefts.shape(), rights.shape());
  std::vector<Eigen::Index> diag(static_cast<std::size_t>(b));
  for (Eigen::Index i = 0; i < b; ++i) diag[std::size_t(i)] = i;
  auto logits = scale(matmul_nt(lefts, rights), static_cast<Scalar>(1.0 / tau));
  auto forward = neg(mean(gather_elements(log_softmax_rows(logits), diag, diag, b, 1)));
  if (!symmetric) return forward;
  auto backward = neg(mean(gather_elements(log_softmax_rows(transpose(logits)), diag, diag, b, 1)));
  return scale(add(forward, backward), Scalar(0.5));
}

enum class Branch { left, right, concat };
Branch branch_from_string(const std::string& s);
std::string to_string(Branch b);

struct TwinSystem {
  TrainConfig config;
  TwinParams<float> params;
  FrozenTextEncoder<float> left;
  FrozenTextEncoder<float> right;

  TwinRuntime<float> runtime() const { return {&left, &right, config.boundary_threshold, config.max_segments}; }
  Eigen::Index left_dim() const { return left.spec().in_dim; }
  Eigen::Index right_dim() const { return right.spec().in_dim; }
};

TwinSystem make_twin_system(const TrainConfig& c, Eigen::Index frame_dim);
TwinSystem load_twin_system(const std::filesystem::path& checkpoint_file);

// Pooled hidden state of the chosen frozen encoder; concat is (right, left).
Mat<float> extract_features(const TwinSystem& s, const Mat<float>& frames, Branch branch = Branch::right);

// Per epoch one caption pair per train image.
std::vector<std::pair<std::size_t, std::size_t>> caption_pairs(const Dataset& d, int epoch, std::uint64_t seed);

struct TwinEpochSummary {
  int epoch = 0;
  std::int64_t steps = 0;
  std::optional<double> loss_nfc, loss_twin;
  std::optional<SemanticReport> validation;
  std::string checkpoint;
};

struct TwinFitResult {
  std::vector<TwinEpochSummary> epochs;
  std::filesystem::path last_checkpoint;
};

TwinFitResult fit_twin(const Dataset& d, const TrainConfig& c, const std::filesystem::path& out_dir,
                       std::optional<int> stop_after_epoch = std::nullopt);

// Held-out images: the first caption of each image is the candidate, the other
// captions are queries.
SemanticReport evaluate_semantic(const TwinSystem& s, const Dataset& d, Branch branch = Branch::right,
                                 int max_images = 0);

}  // namespace segalign
