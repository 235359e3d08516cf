#include "common.hpp"

#include "segalign/alignment.hpp"
#include "segalign/grad_check.hpp"

#include <cmath>

using namespace segalign;
using testing::randn;

namespace {

FrozenTextEncoder<double> encoder(std::uint64_t seed = 7) {
  FrozenEncoderSpec s;
  s.seed = seed;
  s.in_dim = 8;
  s.joint_dim = 6;
  s.heads = 4;
  s.max_len = 16;
  return FrozenTextEncoder<double>(s);
}

Vocabulary<double> basis_vocab(Eigen::Index v, Eigen::Index d) {
  Mat<float> raw = Mat<float>::Zero(v, d);
  for (Eigen::Index i = 0; i < v; ++i) raw(i, i % d) = float(1 + i / d);
  return Vocabulary<double>::from(raw);
}

}  // namespace

TEST_CASE("frozen text encoder output") {
  auto enc = encoder();
  for (std::uint64_t s = 0; s < 20; ++s) {
    Mat<double> segs = randn(1 + Eigen::Index(s % 7), 8, s);
    Mat<double> a = enc.encode(segs);
    CHECK(a.rows() == 1);
    CHECK(a.cols() == 6);
    CHECK(std::abs(a.norm() - 1.0) <= 1e-5);
    CHECK(a == enc.encode(segs));
    CHECK(a == encoder().encode(segs));
  }
  Mat<double> segs = randn(3, 8, 1);
  Mat<double> perm(3, 8);
  perm << segs.row(2), segs.row(0), segs.row(1);
  CHECK((enc.encode(segs) - enc.encode(perm)).norm() > 1e-6);
  CHECK(encoder(8).encode(segs) != enc.encode(segs));
  CHECK(encoder(8).weight_hash() != enc.weight_hash());
  CHECK_THROWS_AS(enc.encode(randn(17, 8, 1)), std::out_of_range);
  Graph<double> g;
  CHECK_THROWS_AS(enc.encode(g.leaf(Mat<double>(0, 8))), std::out_of_range);
  CHECK_THROWS_AS(enc.encode(randn(3, 7, 1)), ShapeError);
}

TEST_CASE("frozen text encoder is differentiable with respect to its input") {
  auto enc = encoder();
  for (std::uint64_t s = 0; s < 5; ++s) {
    Mat<double> w = randn(1, 6, 50 + s);
    auto r = grad_check([&](Graph<double>& g, Var<double> x) { return sum(mul(enc.encode(x).joint, g.leaf(w))); },
                        randn(4, 8, s));
    CHECK_MESSAGE(r.passed, "seed ", s, " err ", r.max_rel_error);
  }
}

TEST_CASE("cosine matrix against the vocabulary") {
  auto vocab = Vocabulary<double>::from(randn(5, 4, 3).cast<float>());
  for (Eigen::Index i = 0; i < 5; ++i) CHECK(std::abs(vocab.rows.row(i).norm() - 1.0) <= 1e-12);
  Graph<double> g;
  Mat<double> s = randn(2, 4, 9);
  s.row(0) = 3.0 * vocab.rows.row(2);
  auto c = cos_matrix(g.leaf(s), vocab).value();
  CHECK(c(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((cos_matrix(g.leaf(Mat<double>(2.0 * s)), vocab).value() - c).cwiseAbs().maxCoeff() <= 1e-12);

  auto basis = basis_vocab(3, 4);
  Mat<double> ortho = Mat<double>::Zero(1, 4);
  ortho(0, 3) = 2.5;
  CHECK(cos_matrix(g.leaf(ortho), basis).value().isZero(0.0));

  CHECK_THROWS_AS(cos_matrix(g.leaf(Mat<double>::Zero(1, 4)), vocab), DomainError);
  CHECK_THROWS_AS(Vocabulary<double>::from(Mat<float>::Zero(3, 2)), DomainError);
  CHECK_THROWS(Vocabulary<double>::from(Mat<float>::Ones(1, 2)));
}

TEST_CASE("regularization loss") {
  auto vocab = Vocabulary<double>::from(randn(6, 4, 3).cast<float>());
  Graph<double> g;
  Mat<double> on_vocab(2, 4);
  on_vocab << 2.0 * vocab.rows.row(1), 0.5 * vocab.rows.row(4);
  CHECK(std::abs(reg_loss(cos_matrix(g.leaf(on_vocab), vocab)).item()) <= 1e-12);

  Mat<double> c(1, 3);
  c << 0.2, 0.5, -0.9;
  CHECK(reg_loss(g.leaf(c)).item() == doctest::Approx(0.6931472).epsilon(1e-7));

  Mat<double> bad(2, 2);
  bad << 0.3, 0.1, -0.2, 0.0;
  try {
    reg_loss(g.leaf(bad));
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("segment 1") != std::string::npos);
  }

  for (std::uint64_t s = 0; s < 20; ++s) {
    Mat<double> segs = vocab.rows.topRows(3) + 0.3 * randn(3, 4, s);
    CHECK(reg_loss(cos_matrix(g.leaf(segs), vocab)).item() >= 0.0);
  }
}

TEST_CASE("regularized objective is exactly additive") {
  auto vocab = Vocabulary<double>::from(randn(6, 4, 3).cast<float>());
  Mat<double> segs = vocab.rows.topRows(3) + 0.3 * randn(3, 4, 4);
  Mat<double> w = randn(3, 4, 5);
  for (double lambda : {0.0, 0.1, 0.5, 1.0}) {
    Graph<double> g;
    auto x = g.leaf(segs);
    auto main = sum(mul(exp(x), g.leaf(w)));
    auto reg = reg_loss(cos_matrix(x, vocab));
    const double fused = add(main, scale(reg, lambda)).item();
    CHECK(std::abs(fused - (main.item() + lambda * reg.item())) <= 1e-12);
    if (lambda == 0.0) CHECK(fused == main.item());
  }
}

TEST_CASE("soft quantization") {
  auto vocab = basis_vocab(2, 2);
  Graph<double> g;
  Mat<double> c(1, 2);
  c << 1, 0;
  auto h = vq_soft(g.leaf(c), vocab, 1.0).value();
  CHECK(h(0, 0) == doctest::Approx(0.7310586).epsilon(1e-7));
  CHECK(h(0, 1) == doctest::Approx(0.2689414).epsilon(1e-7));

  auto big = Vocabulary<double>::from(randn(7, 5, 2).cast<float>());
  Mat<double> row = randn(1, 7, 3, 0.3);
  Mat<double> col_mean = big.rows.colwise().mean();
  CHECK((vq_soft(g.leaf(row), big, 1e9).value() - col_mean).cwiseAbs().maxCoeff() <= 1e-6);
  Eigen::Index arg;
  row.row(0).maxCoeff(&arg);
  CHECK((vq_soft(g.leaf(row), big, 1e-9).value() - big.rows.row(arg)).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK_THROWS(vq_soft(g.leaf(row), big, 0.0));
}

TEST_CASE("straight-through quantization") {
  auto vocab = Vocabulary<double>::from(randn(8, 5, 1).cast<float>());
  for (std::uint64_t s = 0; s < 50; ++s) {
    Mat<double> segs = randn(3, 5, s);
    Mat<double> w = randn(3, 5, s + 1000);
    Graph<double> ga, gb;
    auto xa = ga.leaf(segs, true), xb = gb.leaf(segs, true);
    auto hard = vq_straight_through(cos_matrix(xa, vocab), vocab, 0.1);
    auto idx = nearest_vocab(cos_matrix(xa, vocab).value());
    for (Eigen::Index j = 0; j < 3; ++j) CHECK(hard.value().row(j) == vocab.rows.row(idx[std::size_t(j)]));
    ga.backward(sum(mul(hard, ga.leaf(w))));
    gb.backward(sum(mul(vq_soft(cos_matrix(xb, vocab), vocab, 0.1), gb.leaf(w))));
    CHECK((ga.grad(xa) - gb.grad(xb)).cwiseAbs().maxCoeff() <= 1e-10);
  }
  Mat<double> tie(1, 7);
  tie << 0.1, 0.2, 0.9, 0.3, -0.4, 0.9, 0.5;
  CHECK(nearest_vocab(tie) == std::vector<Eigen::Index>{2});
}

TEST_CASE("alignment heads") {
  auto vocab = Vocabulary<double>::from(randn(6, 4, 3).cast<float>());
  Graph<double> g;
  auto x = g.leaf(vocab.rows.topRows(2) + 0.1 * randn(2, 4, 1));
  auto direct = apply_head<double>({HeadKind::direct, 0.0, 0.1}, x, nullptr);
  CHECK(direct.text_input.id() == x.id());
  CHECK(!direct.reg_loss);
  auto reg = apply_head<double>({HeadKind::regularized, 0.5, 0.1}, x, &vocab);
  CHECK(reg.reg_loss);
  auto vq = apply_head<double>({HeadKind::vq, 0.0, 0.1}, x, &vocab);
  CHECK(vq.text_input.value().row(0) == vocab.rows.row(0));
  CHECK_THROWS(apply_head<double>({HeadKind::vq, 0.0, 0.1}, x, nullptr));
  CHECK(head_kind_from_string("regularized") == HeadKind::regularized);
  CHECK_THROWS(head_kind_from_string("bogus"));
}
