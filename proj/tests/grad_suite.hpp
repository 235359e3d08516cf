// Finite-difference cases for every primitive op and composite loss, each a
// fresh (point, builder) pair for a given seed. stop_gradient and
// straight_through are left out: their backward deliberately differs from the
// derivative of their forward value, so they are checked by identity instead.
#pragma once

#include "common.hpp"

#include "segalign/alignment.hpp"
#include "segalign/encoder.hpp"
#include "segalign/grad_check.hpp"
#include "segalign/model.hpp"
#include "segalign/twin.hpp"

#include <memory>
#include <string>
#include <vector>

namespace testing {

using segalign::Graph;
using segalign::LossBuilder;
using segalign::Var;

struct GradCase {
  std::string name;
  Mat<double> point;
  LossBuilder f;
};

// Reduces any output to a scalar through a fixed random weighting, so every
// output element contributes a distinct coefficient.
inline Var<double> weighted(Var<double> out, std::uint64_t seed) {
  auto w = out.graph().leaf(randn(out.rows(), out.cols(), seed ^ 0x5eed));
  return segalign::sum(segalign::mul(out, w));
}

inline std::vector<GradCase> primitive_cases(std::uint64_t seed) {
  namespace sa = segalign;
  std::vector<GradCase> c;
  const std::uint64_t s = seed * 1000;
  auto other = [](Graph<double>& g, Eigen::Index r, Eigen::Index k, std::uint64_t sd) { return g.leaf(randn(r, k, sd)); };

  c.push_back({"add", randn(3, 4, s + 1), [=](Graph<double>& g, Var<double> x) {
                 return weighted(sa::add(x, other(g, 3, 4, s + 2)), s);
               }});
  c.push_back({"sub", randn(3, 4, s + 3), [=](Graph<double>& g, Var<double> x) {
                 return weighted(sa::sub(other(g, 3, 4, s + 4), x), s);
               }});
  c.push_back({"mul", randn(3, 4, s + 5), [=](Graph<double>&, Var<double> x) {
                 return weighted(sa::mul(x, sa::add_scalar(x, 0.3)), s);
               }});
  c.push_back({"scale", randn(2, 5, s + 6), [=](Graph<double>&, Var<double> x) {
                 return weighted(sa::scale(x, -1.7), s);
               }});
  c.push_back({"neg", randn(2, 5, s + 7), [=](Graph<double>&, Var<double> x) { return weighted(sa::neg(x), s); }});
  c.push_back({"scale_by", randn(1, 1, s + 8), [=](Graph<double>& g, Var<double> x) {
                 return weighted(sa::scale_by(other(g, 3, 3, s + 9), x), s);
               }});
  c.push_back({"add_bias", randn(1, 4, s + 10), [=](Graph<double>& g, Var<double> x) {
                 return weighted(sa::add_bias(other(g, 3, 4, s + 11), x), s);
               }});
  c.push_back({"matmul", randn(3, 4, s + 12), [=](Graph<double>& g, Var<double> x) {
                 return weighted(sa::add(sa::matmul(x, other(g, 4, 2, s + 13)), sa::matmul(other(g, 3, 3, s + 14), sa::slice_cols(x, 0, 2))), s);
               }});
  c.push_back({"matmul_nt", randn(3, 4, s + 15), [=](Graph<double>& g, Var<double> x) {
                 return weighted(sa::matmul_nt(x, other(g, 5, 4, s + 16)), s) + weighted(sa::matmul_nt(x, x), s + 1);
               }});
  c.push_back({"transpose", randn(3, 2, s + 18), [=](Graph<double>&, Var<double> x) { return weighted(sa::transpose(x), s); }});
  c.push_back({"conv1d/input", randn(6, 3, s + 19), [=](Graph<double>& g, Var<double> x) {
                 return weighted(sa::conv1d(x, other(g, 9, 4, s + 20)), s);
               }});
  c.push_back({"conv1d/weight", randn(9, 4, s + 21), [=](Graph<double>& g, Var<double> w) {
                 return weighted(sa::conv1d(other(g, 6, 3, s + 22), w), s);
               }});
  c.push_back({"relu", randn_away(4, 4, s + 23), [=](Graph<double>&, Var<double> x) { return weighted(sa::relu(x), s); }});
  c.push_back({"exp", randn(3, 3, s + 24), [=](Graph<double>&, Var<double> x) { return weighted(sa::exp(x), s); }});
  c.push_back({"log", randn(3, 3, s + 25).array().exp().matrix(),
               [=](Graph<double>&, Var<double> x) { return weighted(sa::log(x), s); }});
  c.push_back({"sum", randn(3, 3, s + 26), [=](Graph<double>&, Var<double> x) {
                 return sa::mul(sa::sum(x), sa::sum(x));
               }});
  c.push_back({"mean", randn(3, 3, s + 27), [=](Graph<double>&, Var<double> x) {
                 return sa::mul(sa::mean(x), sa::add_scalar(sa::mean(x), 1.0));
               }});
  c.push_back({"mean_rows", randn(4, 3, s + 28), [=](Graph<double>&, Var<double> x) { return weighted(sa::mean_rows(x), s); }});
  c.push_back({"max_rows", randn(4, 5, s + 29), [=](Graph<double>&, Var<double> x) { return weighted(sa::max_rows(x), s); }});
  c.push_back({"softmax_rows", randn(3, 4, s + 30), [=](Graph<double>&, Var<double> x) { return weighted(sa::softmax_rows(x), s); }});
  c.push_back({"log_softmax_rows", randn(3, 4, s + 31),
               [=](Graph<double>&, Var<double> x) { return weighted(sa::log_softmax_rows(sa::scale(x, 14.0)), s); }});
  c.push_back({"concat_rows", randn(2, 3, s + 32), [=](Graph<double>& g, Var<double> x) {
                 return weighted(sa::concat_rows({x, other(g, 1, 3, s + 33), x}), s);
               }});
  c.push_back({"concat_cols", randn(2, 3, s + 34), [=](Graph<double>& g, Var<double> x) {
                 return weighted(sa::concat_cols({other(g, 2, 2, s + 35), x}), s);
               }});
  c.push_back({"slice_rows", randn(5, 3, s + 36), [=](Graph<double>&, Var<double> x) { return weighted(sa::slice_rows(x, 1, 3), s); }});
  c.push_back({"slice_cols", randn(3, 5, s + 37), [=](Graph<double>&, Var<double> x) { return weighted(sa::slice_cols(x, 2, 2), s); }});
  c.push_back({"gather_rows", randn(4, 3, s + 38), [=](Graph<double>&, Var<double> x) {
                 return weighted(sa::gather_rows(x, {3, 0, 3, 1}), s);
               }});
  c.push_back({"gather_elements", randn(3, 4, s + 39), [=](Graph<double>&, Var<double> x) {
                 return weighted(sa::gather_elements(x, {0, 2, 2, 1}, {3, 0, 0, 1}, 2, 2), s);
               }});
  c.push_back({"l2_normalize_rows", randn(3, 4, s + 40),
               [=](Graph<double>&, Var<double> x) { return weighted(sa::l2_normalize_rows(x), s); }});
  c.push_back({"cosine_similarity", randn(1, 5, s + 41), [=](Graph<double>& g, Var<double> x) {
                 return sa::cosine_similarity(x, other(g, 1, 5, s + 42));
               }});
  c.push_back({"cosine_matrix", randn(3, 4, s + 43), [=](Graph<double>& g, Var<double> x) {
                 return weighted(sa::add(sa::cosine_matrix(x, other(g, 2, 4, s + 44)), sa::slice_cols(sa::cosine_matrix(x, x), 0, 2)), s);
               }});
  c.push_back({"layer_norm_rows", randn(3, 5, s + 45),
               [=](Graph<double>&, Var<double> x) { return weighted(sa::layer_norm_rows(x), s); }});
  c.push_back({"segment_mean", randn(7, 3, s + 46), [=](Graph<double>&, Var<double> x) {
                 return weighted(sa::segment_mean(x, {0, 2, 3, 6}), s);
               }});
  return c;
}

inline segalign::Vocabulary<double> random_vocab(Eigen::Index v, Eigen::Index d, std::uint64_t seed) {
  return segalign::Vocabulary<double>::from(randn(v, d, seed).cast<float>());
}

inline std::vector<GradCase> composite_cases(std::uint64_t seed) {
  namespace sa = segalign;
  std::vector<GradCase> c;
  const std::uint64_t s = seed * 1000 + 500;

  c.push_back({"nfc", randn(7, 5, s + 1), [=](Graph<double>&, Var<double> z) {
                 auto rng = sa::stream_rng(s, "test/nfc");
                 return sa::nfc_loss(z, 3, rng);
               }});
  c.push_back({"retrieval/audio", randn(1, 6, s + 2), [=](Graph<double>&, Var<double> a) {
                 return sa::retrieval_loss(a, randn(1, 6, s + 3), randn(5, 6, s + 4), 0.07);
               }});
  c.push_back({"retrieval/candidates", randn(6, 6, s + 5), [=](Graph<double>& g, Var<double> cands) {
                 return sa::retrieval_loss(sa::l2_normalize_rows(g.leaf(randn(1, 6, s + 6))), sa::l2_normalize_rows(cands), 0.07);
               }});
  c.push_back({"retrieval/temperature", Mat<double>::Constant(1, 1, 1.0 / 0.07), [=](Graph<double>& g, Var<double> inv_tau) {
                 return sa::retrieval_loss(sa::l2_normalize_rows(g.leaf(randn(1, 6, s + 7))),
                                           sa::l2_normalize_rows(g.leaf(randn(6, 6, s + 8))), 0.07, std::optional<Var<double>>(inv_tau));
               }});
  // Segments are drawn near vocabulary rows so every maximum cosine stays positive.
  auto vocab = std::make_shared<sa::Vocabulary<double>>(random_vocab(10, 6, s + 9));
  Mat<double> segs = vocab->rows.topRows(4) + 0.5 * randn(4, 6, s + 10);
  c.push_back({"regularization", segs, [=](Graph<double>&, Var<double> x) {
                 return sa::reg_loss(sa::cos_matrix(x, *vocab));
               }});
  c.push_back({"vq_soft", randn(4, 6, s + 11), [=](Graph<double>&, Var<double> x) {
                 return weighted(sa::vq_soft(sa::cos_matrix(x, *vocab), *vocab, 0.1), s);
               }});
  auto mlm = std::make_shared<sa::MlmParams<double>>(sa::MlmParams<double>::init(6, s + 12));
  c.push_back({"mlm_aux", randn(6, 6, s + 13), [=](Graph<double>& g, Var<double> x) {
                 sa::MlmVars<double> p{g.leaf_ref(mlm->mask_vec, true), g.leaf_ref(mlm->wq, true), g.leaf_ref(mlm->wk, true),
                                       g.leaf_ref(mlm->wv, true), g.leaf_ref(mlm->wo, true)};
                 auto rng = sa::stream_rng(s, "test/mask");
                 return sa::mlm_aux_loss(x, 0.4, p, rng);
               }});
  c.push_back({"mlm_aux/mask_vec", mlm->mask_vec, [=](Graph<double>& g, Var<double> mv) {
                 sa::MlmVars<double> p{mv, g.leaf_ref(mlm->wq, true), g.leaf_ref(mlm->wk, true), g.leaf_ref(mlm->wv, true),
                                       g.leaf_ref(mlm->wo, true)};
                 auto rng = sa::stream_rng(s, "test/mask");
                 return sa::mlm_aux_loss(g.leaf(randn(6, 6, s + 13)), 0.5, p, rng);
               }});
  c.push_back({"twin/left", randn(4, 5, s + 14), [=](Graph<double>& g, Var<double> x) {
                 return sa::twin_contrastive_loss(sa::l2_normalize_rows(x), sa::l2_normalize_rows(g.leaf(randn(4, 5, s + 15))), 0.07);
               }});
  c.push_back({"twin/symmetric", randn(4, 5, s + 16), [=](Graph<double>& g, Var<double> x) {
                 return sa::twin_contrastive_loss(sa::l2_normalize_rows(g.leaf(randn(4, 5, s + 17))), sa::l2_normalize_rows(x), 0.07, true);
               }});
  return c;
}

}  // namespace testing
