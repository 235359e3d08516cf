// Central-difference verification of analytic gradients (64-bit only).
#pragma once

#include "segalign/tensor.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

namespace segalign {

struct GradCheckReport {
  double max_rel_error = 0.0;
  Eigen::Index worst_row = 0;
  Eigen::Index worst_col = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool passed = false;
};

// Builds a scalar loss from the differentiated input inside the given graph.
using LossBuilder = std::function<Var<double>(Graph<double>&, Var<double>)>;

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-element error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
// The floor keeps tiny components (where the central difference is dominated
// by O(h^2) truncation) from reporting spurious relative errors.
inline GradCheckReport grad_check(const LossBuilder& f, const Mat<double>& point, double h = 1e-4,
                                  double tol = 1e-4, double floor = 1e-3) {
  auto evaluate = [&f](const Mat<double>& x) {
    Graph<double> g;
    auto v = g.leaf(x, true);
    return f(g, v).item();
  };

  Mat<double> analytic;
  {
    Graph<double> g;
    auto x = g.leaf(point, true);
    auto loss = f(g, x);
    if (!std::isfinite(loss.item())) throw NonFiniteError("grad_check: loss is not finite at the base point");
    g.backward(loss);
    analytic = g.grad(x);
  }

  GradCheckReport report;
  Mat<double> probe = point;
  for (Eigen::Index i = 0; i < point.rows(); ++i) {
    for (Eigen::Index j = 0; j < point.cols(); ++j) {
      const double orig = probe(i, j);
      probe(i, j) = orig + h;
      const double up = evaluate(probe);
      probe(i, j) = orig - h;
      const double down = evaluate(probe);
      probe(i, j) = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic(i, j);
      if (!std::isfinite(numeric) || !std::isfinite(a))
        throw NonFiniteError("grad_check: non-finite gradient at (" + std::to_string(i) + "," +
                             std::to_string(j) + ")");
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double err = std::abs(a - numeric) / denom;
      if (err > report.max_rel_error || (i == 0 && j == 0)) {
        report.max_rel_error = err;
        report.worst_row = i;
        report.worst_col = j;
        report.analytic_at_worst = a;
        report.numeric_at_worst = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace segalign
