// Frozen text encoder, vocabulary table and the three ways segment
// embeddings reach the text encoder: directly, directly plus a vocabulary
// proximity penalty, or snapped to the nearest vocabulary row with a
// straight-through gradient.
#pragma once

#include "segalign/encoder.hpp"
#include "segalign/rng.hpp"
#include "segalign/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace segalign {

struct FrozenEncoderSpec {
  std::uint64_t seed = 0;
  Eigen::Index in_dim = 512;     // width of the segment sequence it consumes
  Eigen::Index joint_dim = 512;  // output (sentence embedding) width
  int heads = 4;
  Eigen::Index ffn_dim = 0;  // 0 -> 2 * in_dim
  int max_len = 64;
};

template <typename Derived>
std::uint64_t hash_matrix(const Eigen::MatrixBase<Derived>& m, std::uint64_t h = 0xcbf29ce484222325ULL) {
  using Scalar = typename Derived::Scalar;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      Scalar v = m(i, j);
      unsigned char bytes[sizeof(Scalar)];
      std::memcpy(bytes, &v, sizeof(Scalar));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

// Deterministic, seeded, never trained. One post-norm transformer layer with
// sinusoidal positions, mean pooling and a linear map to the joint space.
template <typename Scalar>
class FrozenTextEncoder {
 public:
  struct Output {
    Var<Scalar> pooled;  // 1 x in_dim
    Var<Scalar> joint;   // 1 x joint_dim, unit norm
  };

  explicit FrozenTextEncoder(FrozenEncoderSpec spec) : spec_(spec) {
    if (spec_.ffn_dim == 0) spec_.ffn_dim = 2 * spec_.in_dim;
    if (spec_.heads < 1 || spec_.in_dim % spec_.heads != 0)
      throw std::invalid_argument("frozen encoder: in_dim " + std::to_string(spec_.in_dim) +
                                  " not divisible by heads " + std::to_string(spec_.heads));
    if (spec_.max_len < 1) throw std::invalid_argument("frozen encoder: max_len must be >= 1");
    Rng rng = stream_rng(spec_.seed, "frozen-text-encoder");
    const auto d = spec_.in_dim;
    wq_ = init_weight<Scalar>(d, d, double(d), rng);
    wk_ = init_weight<Scalar>(d, d, double(d), rng);
    wv_ = init_weight<Scalar>(d, d, double(d), rng);
    wo_ = init_weight<Scalar>(d, d, double(d), rng);
    ff1_ = init_weight<Scalar>(d, spec_.ffn_dim, double(d), rng);
    ff2_ = init_weight<Scalar>(spec_.ffn_dim, d, double(spec_.ffn_dim), rng);
    out_ = init_weight<Scalar>(d, spec_.joint_dim, double(d), rng);
    positions_.resize(spec_.max_len, d);
    for (Eigen::Index pos = 0; pos < spec_.max_len; ++pos) {
      for (Eigen::Index i = 0; i < d; ++i) {
        const double rate = std::pow(10000.0, -double(2 * (i / 2)) / double(d));
        const double angle = double(pos) * rate;
        positions_(pos, i) = static_cast<Scalar>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
      }
    }
  }

  const FrozenEncoderSpec& spec() const { return spec_; }

  Output encode(Var<Scalar> segments) const {
    auto& g = segments.graph();
    const Eigen::Index m = segments.rows();
    if (m < 1 || m > spec_.max_len)
      throw std::out_of_range("frozen_text_encode: M=" + std::to_string(m) + " outside [1," +
                              std::to_string(spec_.max_len) + "]");
    if (segments.cols() != spec_.in_dim)
      throw ShapeError("frozen_text_encode", segments.shape(), Shape{m, spec_.in_dim});
    auto c = [&g](const Mat<Scalar>& w) { return g.leaf_ref(w, false); };
    auto x = add(segments, slice_rows(c(positions_), 0, m));
    auto q = matmul(x, c(wq_)), k = matmul(x, c(wk_)), v = matmul(x, c(wv_));
    const Eigen::Index dh = spec_.in_dim / spec_.heads;
    const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    std::vector<Var<Scalar>> heads;
    for (int h = 0; h < spec_.heads; ++h) {
      auto qh = slice_cols(q, h * dh, dh), kh = slice_cols(k, h * dh, dh), vh = slice_cols(v, h * dh, dh);
      auto attn = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
      heads.push_back(matmul(attn, vh));
    }
    auto mixed = matmul(concat_cols(std::span<const Var<Scalar>>(heads)), c(wo_));
    auto hidden = layer_norm_rows(add(x, mixed));
    hidden = add(hidden, matmul(relu(matmul(hidden, c(ff1_))), c(ff2_)));
    auto pooled = mean_rows(hidden);
    auto joint = l2_normalize_rows(matmul(pooled, c(out_)));
    return {pooled, joint};
  }

  Mat<Scalar> encode(const Mat<Scalar>& segments) const {
    Graph<Scalar> g;
    return encode(g.leaf_ref(segments)).joint.value();
  }

  std::uint64_t weight_hash() const {
    std::uint64_t h = hash_matrix(wq_);
    for (const auto* w : {&wk_, &wv_, &wo_, &ff1_, &ff2_, &out_, &positions_}) h = hash_matrix(*w, h);
    return h;
  }

 private:
  FrozenEncoderSpec spec_;
  Mat<Scalar> wq_, wk_, wv_, wo_, ff1_, ff2_, out_, positions_;
};

// Frozen subword embedding table e_1..e_V, rows unit-norm.
template <typename Scalar>
struct Vocabulary {
  Mat<Scalar> rows;

  static Vocabulary from(const Mat<float>& raw) {
    if (raw.rows() < 2) throw std::invalid_argument("vocabulary needs at least 2 rows");
    Vocabulary v;
    v.rows = raw.cast<Scalar>();
    for (Eigen::Index i = 0; i < v.rows.rows(); ++i) {
      const Scalar n = v.rows.row(i).norm();
      if (!(n > Scalar(0))) throw DomainError("vocabulary row " + std::to_string(i) + " has zero norm");
      v.rows.row(i) /= n;
    }
    return v;
  }
  Eigen::Index size() const { return rows.rows(); }
  Eigen::Index dim() const { return rows.cols(); }
};

// C[j][k] = cos(s_j, e_k).
template <typename Scalar>
Var<Scalar> cos_matrix(Var<Scalar> segments, const Vocabulary<Scalar>& vocab) {
  if (segments.cols() != vocab.dim()) throw ShapeError("cos_matrix", segments.shape(), Shape{vocab.size(), vocab.dim()});
  const auto& v = segments.value();
  for (Eigen::Index j = 0; j < v.rows(); ++j)
    if (!(v.row(j).norm() > Scalar(0)))
      throw DomainError("cos_matrix: segment " + std::to_string(j) + " has zero norm");
  auto& g = segments.graph();
  return matmul_nt(l2_normalize_rows(segments), g.leaf_ref(vocab.rows, false));
}

// -(1/M) sum_j log(max_k C[j][k])
template <typename Scalar>
Var<Scalar> reg_loss(Var<Scalar> cos) {
  auto best = max_rows(cos);
  for (Eigen::Index j = 0; j < best.rows(); ++j)
    if (!(best.value()(j, 0) > Scalar(0)))
      throw DomainError("reg_loss: segment " + std::to_string(j) + " has non-positive maximum cosine " +
                        std::to_string(double(best.value()(j, 0))));
  return neg(mean(log(best)));
}

// Row-wise softmax(C / tau) mixture of vocabulary rows.
template <typename Scalar>
Var<Scalar> vq_soft(Var<Scalar> cos, const Vocabulary<Scalar>& vocab, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("vq: temperature must be > 0");
  if (cos.cols() != vocab.size()) throw ShapeError("vq_soft", cos.shape(), Shape{cos.rows(), vocab.size()});
  auto weights = softmax_rows(scale(cos, static_cast<Scalar>(1.0 / tau)));
  return matmul(weights, cos.graph().leaf_ref(vocab.rows, false));
}

// argmax per row, ties -> lowest index.
template <typename Derived>
std::vector<Eigen::Index> nearest_vocab(const Eigen::MatrixBase<Derived>& cos) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(cos.rows()));
  for (Eigen::Index j = 0; j < cos.rows(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < cos.cols(); ++k)
      if (cos(j, k) > cos(j, best)) best = k;
    idx[static_cast<std::size_t>(j)] = best;
  }
  return idx;
}

// Forward: the nearest vocabulary row exactly. Backward: the vq_soft path.
template <typename Scalar>
Var<Scalar> vq_straight_through(Var<Scalar> cos, const Vocabulary<Scalar>& vocab, double tau) {
  auto soft = vq_soft(cos, vocab, tau);
  auto& g = cos.graph();
  auto hard = gather_rows(g.leaf_ref(vocab.rows, false), nearest_vocab(cos.value()));
  return straight_through(soft, hard);
}

enum class HeadKind { direct, regularized, vq };

inline std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::direct:
      return "direct";
    case HeadKind::regularized:
      return "regularized";
    case HeadKind::vq:
      return "vq";
  }
  return "direct";
}

inline HeadKind head_kind_from_string(const std::string& s) {
  if (s == "direct") return HeadKind::direct;
  if (s == "regularized" || s == "reg") return HeadKind::regularized;
  if (s == "vq") return HeadKind::vq;
  throw std::invalid_argument("unknown head kind '" + s + "'");
}

struct AlignmentHead {
  HeadKind kind = HeadKind::direct;
  double lambda = 0.0;
  double tau_vq = 0.1;
};

template <typename Scalar>
struct HeadOutput {
  Var<Scalar> text_input;               // what the frozen text encoder consumes
  std::optional<Var<Scalar>> reg_loss;  // regularized head only (unweighted)
};

template <typename Scalar>
HeadOutput<Scalar> apply_head(const AlignmentHead& head, Var<Scalar> segments, const Vocabulary<Scalar>* vocab) {
  switch (head.kind) {
    case HeadKind::direct:
      return {segments, std::nullopt};
    case HeadKind::regularized: {
      if (!vocab) throw std::invalid_argument("regularized head needs a vocabulary");
      return {segments, reg_loss(cos_matrix(segments, *vocab))};
    }
    case HeadKind::vq: {
      if (!vocab) throw std::invalid_argument("vq head needs a vocabulary");
      return {vq_straight_through(cos_matrix(segments, *vocab), *vocab, head.tau_vq), std::nullopt};
    }
  }
  return {segments, std::nullopt};
}

}  // namespace segalign
