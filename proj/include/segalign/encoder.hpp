// Segmental speech encoder: frame encoder trained with the next-frame
// classifier, cosine-threshold boundary detector, segment mean pooling and
// the convolutional segment encoder that produces the segment sequence.
#pragma once

#include "segalign/rng.hpp"
#include "segalign/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace segalign {

using Starts = std::vector<Eigen::Index>;

struct EncoderDims {
  Eigen::Index frame_dim = 64;
  Eigen::Index fenc_hidden = 1024;
  Eigen::Index fenc_out = 1024;  // p
  Eigen::Index senc_filters = 1024;
  Eigen::Index seg_dim = 512;  // width of S, the frozen text encoder's input
};

// Seeded Gaussian scaled by 1/sqrt(fan_in). Drawn in double so float and
// double instances share the same values up to rounding.
template <typename Scalar>
Mat<Scalar> init_weight(Eigen::Index rows, Eigen::Index cols, double fan_in, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  const double s = 1.0 / std::sqrt(fan_in);
  Mat<Scalar> w(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = static_cast<Scalar>(n01(rng) * s);
  return w;
}

template <typename Scalar>
struct EncoderParams {
  EncoderDims dims;
  // f_enc: frame_dim -> hidden -> hidden -> p
  Mat<Scalar> f_w1, f_b1, f_w2, f_b2, f_w3, f_b3;
  // s_enc: two kernel-3 convolutions, then a two-layer feed-forward net
  Mat<Scalar> s_conv1, s_cb1, s_conv2, s_cb2, s_w1, s_b1, s_w2, s_b2;

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("f_enc.w1", self.f_w1);
    f("f_enc.b1", self.f_b1);
    f("f_enc.w2", self.f_w2);
    f("f_enc.b2", self.f_b2);
    f("f_enc.w3", self.f_w3);
    f("f_enc.b3", self.f_b3);
    f("s_enc.conv1", self.s_conv1);
    f("s_enc.conv1_b", self.s_cb1);
    f("s_enc.conv2", self.s_conv2);
    f("s_enc.conv2_b", self.s_cb2);
    f("s_enc.w1", self.s_w1);
    f("s_enc.b1", self.s_b1);
    f("s_enc.w2", self.s_w2);
    f("s_enc.b2", self.s_b2);
  }
  template <typename F>
  void for_each(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, std::forward<F>(f));
  }

  static EncoderParams init(const EncoderDims& d, std::uint64_t seed) {
    EncoderParams p;
    p.dims = d;
    Rng rng = stream_rng(seed, "init/encoder");
    auto zeros = [](Eigen::Index n) { return Mat<Scalar>::Zero(1, n); };
    p.f_w1 = init_weight<Scalar>(d.frame_dim, d.fenc_hidden, double(d.frame_dim), rng);
    p.f_b1 = zeros(d.fenc_hidden);
    p.f_w2 = init_weight<Scalar>(d.fenc_hidden, d.fenc_hidden, double(d.fenc_hidden), rng);
    p.f_b2 = zeros(d.fenc_hidden);
    p.f_w3 = init_weight<Scalar>(d.fenc_hidden, d.fenc_out, double(d.fenc_hidden), rng);
    p.f_b3 = zeros(d.fenc_out);
    p.s_conv1 = init_weight<Scalar>(3 * d.fenc_out, d.senc_filters, 3.0 * double(d.fenc_out), rng);
    p.s_cb1 = zeros(d.senc_filters);
    p.s_conv2 = init_weight<Scalar>(3 * d.senc_filters, d.senc_filters, 3.0 * double(d.senc_filters), rng);
    p.s_cb2 = zeros(d.senc_filters);
    p.s_w1 = init_weight<Scalar>(d.senc_filters, d.seg_dim, double(d.senc_filters), rng);
    p.s_b1 = zeros(d.seg_dim);
    p.s_w2 = init_weight<Scalar>(d.seg_dim, d.seg_dim, double(d.seg_dim), rng);
    p.s_b2 = zeros(d.seg_dim);
    return p;
  }

  template <typename To>
  EncoderParams<To> cast() const {
    EncoderParams<To> out;
    out.dims = dims;
    std::vector<const Mat<Scalar>*> src;
    for_each([&](const std::string&, const Mat<Scalar>& m) { src.push_back(&m); });
    std::size_t i = 0;
    out.for_each([&](const std::string&, Mat<To>& m) { m = src[i++]->template cast<To>(); });
    return out;
  }
};

template <typename Scalar>
struct EncoderVars {
  Var<Scalar> f_w1, f_b1, f_w2, f_b2, f_w3, f_b3;
  Var<Scalar> s_conv1, s_cb1, s_conv2, s_cb2, s_w1, s_b1, s_w2, s_b2;
  Eigen::Index frame_dim = 0;
};

// Registers the parameters as (non-owning) leaves of g.
template <typename Scalar>
EncoderVars<Scalar> bind(Graph<Scalar>& g, const EncoderParams<Scalar>& p, bool trainable = true) {
  EncoderVars<Scalar> v;
  auto r = [&](const Mat<Scalar>& m) { return g.leaf_ref(m, trainable); };
  v.f_w1 = r(p.f_w1);
  v.f_b1 = r(p.f_b1);
  v.f_w2 = r(p.f_w2);
  v.f_b2 = r(p.f_b2);
  v.f_w3 = r(p.f_w3);
  v.f_b3 = r(p.f_b3);
  v.s_conv1 = r(p.s_conv1);
  v.s_cb1 = r(p.s_cb1);
  v.s_conv2 = r(p.s_conv2);
  v.s_cb2 = r(p.s_cb2);
  v.s_w1 = r(p.s_w1);
  v.s_b1 = r(p.s_b1);
  v.s_w2 = r(p.s_w2);
  v.s_b2 = r(p.s_b2);
  v.frame_dim = p.dims.frame_dim;
  return v;
}

// Position-wise: row t of the output depends only on row t of z.
template <typename Scalar>
Var<Scalar> encode_frames(const EncoderVars<Scalar>& p, Var<Scalar> z) {
  if (z.cols() != p.frame_dim) throw ShapeError("encode_frames", z.shape(), Shape{z.rows(), p.frame_dim});
  auto h = relu(add_bias(matmul(z, p.f_w1), p.f_b1));
  h = relu(add_bias(matmul(h, p.f_w2), p.f_b2));
  return add_bias(matmul(h, p.f_w3), p.f_b3);
}

template <typename Scalar>
Var<Scalar> encode_segments(const EncoderVars<Scalar>& p, Var<Scalar> pooled) {
  if (pooled.cols() * 3 != p.s_conv1.rows())
    throw ShapeError("encode_segments", pooled.shape(), Shape{pooled.rows(), p.s_conv1.rows() / 3});
  auto h = relu(add_bias(conv1d(pooled, p.s_conv1), p.s_cb1));
  h = relu(add_bias(conv1d(h, p.s_conv2), p.s_cb2));
  h = relu(add_bias(matmul(h, p.s_w1), p.s_b1));
  return add_bias(matmul(h, p.s_w2), p.s_b2);
}

template <typename Scalar>
Var<Scalar> pool_segments(Var<Scalar> encoded, const Starts& starts) {
  return segment_mean(encoded, starts);
}

class SequenceTooShort : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Indices of the K negatives for anchor t: uniform without replacement from
// the utterance, excluding the anchor itself and its true successor.
inline std::vector<Eigen::Index> nfc_negatives(Eigen::Index len, Eigen::Index t, int k, Rng& rng) {
  std::vector<Eigen::Index> pool;
  pool.reserve(static_cast<std::size_t>(len));
  for (Eigen::Index i = 0; i < len; ++i)
    if (i != t && i != t + 1) pool.push_back(i);
  return sample_without_replacement(pool, static_cast<std::size_t>(k), rng);
}

inline Eigen::Index nfc_min_length(int k) { return k + 2; }

// Next-frame classification: mean over t in [0, L-2] of the cross-entropy of
// picking frame t+1 among {t+1} plus K in-utterance negatives, using cosine
// similarity as the logit.
template <typename Scalar>
Var<Scalar> nfc_loss(Var<Scalar> encoded, int k, Rng& rng) {
  const Eigen::Index len = encoded.rows();
  if (k < 1) throw std::invalid_argument("nfc_loss: K must be >= 1");
  if (len < nfc_min_length(k))
    throw SequenceTooShort("nfc_loss: utterance has " + std::to_string(len) + " frames, needs at least " +
                           std::to_string(nfc_min_length(k)) + " for K=" + std::to_string(k));
  const Eigen::Index anchors = len - 1;
  std::vector<Eigen::Index> rows, cols;
  rows.reserve(static_cast<std::size_t>(anchors * (k + 1)));
  cols.reserve(rows.capacity());
  for (Eigen::Index t = 0; t < anchors; ++t) {
    rows.push_back(t);
    cols.push_back(t + 1);
    for (auto n : nfc_negatives(len, t, k, rng)) {
      rows.push_back(t);
      cols.push_back(n);
    }
  }
  auto sims = cosine_matrix(encoded, encoded);
  auto logits = gather_elements(sims, std::move(rows), std::move(cols), anchors, k + 1);
  auto logp = slice_cols(log_softmax_rows(logits), 0, 1);
  return neg(mean(logp));
}

// Cosine between consecutive rows: out[t] = cos(x_t, x_{t+1}), size L-1.
template <typename Derived>
std::vector<double> adjacent_cosines(const Eigen::MatrixBase<Derived>& x) {
  std::vector<double> out;
  if (x.rows() < 2) return out;
  out.reserve(static_cast<std::size_t>(x.rows() - 1));
  for (Eigen::Index t = 0; t + 1 < x.rows(); ++t) {
    const double a = x.row(t).template cast<double>().norm();
    const double b = x.row(t + 1).template cast<double>().norm();
    const double dot = x.row(t).template cast<double>().dot(x.row(t + 1).template cast<double>());
    out.push_back(a > 0.0 && b > 0.0 ? dot / (a * b) : 0.0);
  }
  return out;
}

// Keeps at most max_segments segments: the start at 0 plus the
// max_segments - 1 boundaries with lowest adjacent similarity (ties -> earlier
// index). Without similarities the earliest boundaries are kept.
inline Starts cap_segments(Starts starts, std::span<const double> sims, int max_segments) {
  if (max_segments < 1) throw std::invalid_argument("max_segments must be >= 1");
  if (static_cast<int>(starts.size()) <= max_segments) return starts;
  Starts interior(starts.begin() + 1, starts.end());
  auto sim_of = [&](Eigen::Index s) {
    return sims.empty() ? 0.0 : sims[static_cast<std::size_t>(s - 1)];
  };
  std::stable_sort(interior.begin(), interior.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return sim_of(a) < sim_of(b); });
  interior.resize(static_cast<std::size_t>(max_segments - 1));
  std::sort(interior.begin(), interior.end());
  Starts out{0};
  out.insert(out.end(), interior.begin(), interior.end());
  return out;
}

// Start at 0, and at t+1 whenever cos(x_t, x_{t+1}) < threshold.
template <typename Derived>
Starts detect_boundaries(const Eigen::MatrixBase<Derived>& encoded, double threshold, int max_segments = 64) {
  if (encoded.rows() < 1) throw ShapeError("detect_boundaries: empty sequence");
  const auto sims = adjacent_cosines(encoded);
  Starts starts{0};
  for (std::size_t t = 0; t < sims.size(); ++t)
    if (sims[t] < threshold) starts.push_back(static_cast<Eigen::Index>(t + 1));
  return cap_segments(std::move(starts), sims, max_segments);
}

// Sorted, deduplicated union with externally supplied starts; 0 is retained
// and the segment cap re-applied.
inline Starts merge_external_boundaries(const Starts& starts, const Starts& external, Eigen::Index num_frames,
                                        int max_segments = 64, std::span<const double> sims = {}) {
  for (auto s : external)
    if (s < 0 || s >= num_frames)
      throw std::out_of_range("merge_external_boundaries: index " + std::to_string(s) + " outside [0," +
                              std::to_string(num_frames) + ")");
  Starts out;
  out.reserve(starts.size() + external.size() + 1);
  out.push_back(0);
  out.insert(out.end(), starts.begin(), starts.end());
  out.insert(out.end(), external.begin(), external.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return cap_segments(std::move(out), sims, max_segments);
}

// Inference helpers.
template <typename Scalar>
Mat<Scalar> encode_frames(const EncoderParams<Scalar>& params, const Mat<Scalar>& z) {
  Graph<Scalar> g;
  auto p = bind(g, params, false);
  return encode_frames(p, g.leaf_ref(z)).value();
}

}  // namespace segalign
