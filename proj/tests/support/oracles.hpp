#pragma once

// Independent reference implementations used by the test suites. These stay
// deliberately naive (triple loops, dense formulas, exhaustive enumeration)
// and never call the code paths they check.

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <vector>

#include "mpgcn/sparse.hpp"
#include "mpgcn/tape.hpp"
#include "mpgcn/tensor.hpp"

namespace oracles {

// Element-wise triple-loop matrix product.
inline mpgcn::Tensor matmul_triple_loop(const mpgcn::Tensor& a, const mpgcn::Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  mpgcn::Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
      c.at(i, j) = acc;
    }
  return c;
}

// Loss evaluated as a plain function of parameter tensors.
using LossFn = std::function<double(const std::vector<mpgcn::Tensor>&)>;

// Central finite differences over every entry of every parameter.
inline std::vector<mpgcn::Tensor> finite_diff_grads(const LossFn& f,
                                                    std::vector<mpgcn::Tensor> params,
                                                    double h = 1e-5) {
  std::vector<mpgcn::Tensor> grads;
  grads.reserve(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) grads.emplace_back(params[p].shape());
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].numel(); ++i) {
      const double orig = params[p][i];
      params[p][i] = orig + h;
      const double up = f(params);
      params[p][i] = orig - h;
      const double down = f(params);
      params[p][i] = orig;
      grads[p][i] = (up - down) / (2.0 * h);
    }
  }
  return grads;
}

// Mixed absolute/relative gradient agreement: |a-f| <= tol * max(1, |a|, |f|).
inline bool grads_close(const std::vector<mpgcn::Tensor>& analytic,
                        const std::vector<mpgcn::Tensor>& fd, double tol,
                        double* worst = nullptr) {
  double w = 0.0;
  bool ok = true;
  for (std::size_t p = 0; p < analytic.size(); ++p) {
    for (std::size_t i = 0; i < analytic[p].numel(); ++i) {
      const double a = analytic[p][i];
      const double f = fd[p][i];
      const double err = std::abs(a - f) / std::max({1.0, std::abs(a), std::abs(f)});
      w = std::max(w, err);
      if (err > tol) ok = false;
    }
  }
  if (worst) *worst = w;
  return ok;
}

// Builds a loss graph from parameter nodes; returns the loss node.
using GraphBuilder =
    std::function<mpgcn::Tape::NodeId(mpgcn::Tape&, const std::vector<mpgcn::Tape::NodeId>&)>;

// Normalized mutual information between two labelings (sqrt normalization).
inline double nmi(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  for (std::size_t i = 0; i < n; ++i) {
    pa[a[i]] += 1.0;
    pb[b[i]] += 1.0;
    pab[{a[i], b[i]}] += 1.0;
  }
  double ha = 0.0, hb = 0.0, mi = 0.0;
  for (auto& [k, c] : pa) ha -= (c / n) * std::log(c / n);
  for (auto& [k, c] : pb) hb -= (c / n) * std::log(c / n);
  for (auto& [kk, c] : pab) {
    const double pxy = c / n;
    mi += pxy * std::log(pxy / ((pa[kk.first] / n) * (pb[kk.second] / n)));
  }
  if (ha <= 0.0 || hb <= 0.0) return ha == hb ? 1.0 : 0.0;
  return mi / std::sqrt(ha * hb);
}

// Runs the analytic tape gradient against central finite differences.
inline bool check_gradients(const GraphBuilder& build, const std::vector<mpgcn::Tensor>& params,
                            double tol = 1e-4, double* worst = nullptr) {
  mpgcn::Tape tape;
  std::vector<mpgcn::Tape::NodeId> ids;
  for (const auto& p : params) ids.push_back(tape.parameter(p));
  const auto loss = build(tape, ids);
  tape.backward(loss);
  std::vector<mpgcn::Tensor> analytic;
  for (auto id : ids) analytic.push_back(tape.grad(id));

  LossFn f = [&](const std::vector<mpgcn::Tensor>& ps) {
    mpgcn::Tape t;
    std::vector<mpgcn::Tape::NodeId> nids;
    for (const auto& p : ps) nids.push_back(t.parameter(p));
    return t.value(build(t, nids))[0];
  };
  const auto fd = finite_diff_grads(f, params);
  return grads_close(analytic, fd, tol, worst);
}

}  // namespace oracles
