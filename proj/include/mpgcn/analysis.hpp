#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mpgcn/errors.hpp"
#include "mpgcn/ingest.hpp"
#include "mpgcn/tensor.hpp"

namespace mpgcn {

// --- prediction metrics -----------------------------------------------------------

struct MetricReport {
  double mae = 0.0;
  double rmse = 0.0;
  double cc = 0.0;
  int step_minutes = 0;
  std::size_t n = 0;
};

inline double mae(const std::vector<double>& pred, const std::vector<double>& actual) {
  if (pred.empty() || pred.size() != actual.size())
    throw ContractError("mae: series must be non-empty and equal length");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - actual[i]);
  return s / static_cast<double>(pred.size());
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& actual) {
  if (pred.empty() || pred.size() != actual.size())
    throw ContractError("rmse: series must be non-empty and equal length");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    s += (pred[i] - actual[i]) * (pred[i] - actual[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

// Pearson correlation; undefined on constant series.
inline double cc(const std::vector<double>& pred, const std::vector<double>& actual) {
  if (pred.empty() || pred.size() != actual.size())
    throw ContractError("cc: series must be non-empty and equal length");
  const double n = static_cast<double>(pred.size());
  double mp = 0.0, ma = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i];
    ma += actual[i];
  }
  mp /= n;
  ma /= n;
  double cov = 0.0, vp = 0.0, va = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    cov += (pred[i] - mp) * (actual[i] - ma);
    vp += (pred[i] - mp) * (pred[i] - mp);
    va += (actual[i] - ma) * (actual[i] - ma);
  }
  if (vp <= 0.0 || va <= 0.0)
    throw UndefinedMetricError("cc needs non-constant series on both sides");
  return cov / std::sqrt(vp * va);
}

inline MetricReport metrics(const Tensor& pred, const Tensor& actual, int step_minutes) {
  if (!pred.same_shape(actual)) throw ShapeError("metrics: shapes differ");
  std::vector<double> p(pred.vec()), a(actual.vec());
  MetricReport r;
  r.mae = mae(p, a);
  r.rmse = rmse(p, a);
  r.cc = cc(p, a);
  r.step_minutes = step_minutes;
  r.n = p.size();
  return r;
}

// --- heavy-tailed distribution fitting ------------------------------------------------

enum class DistFamily { PowerLaw, Exponential, Lognormal, Weibull };

inline const char* family_name(DistFamily f) {
  switch (f) {
    case DistFamily::PowerLaw:
      return "power-law";
    case DistFamily::Exponential:
      return "exponential";
    case DistFamily::Lognormal:
      return "lognormal";
    case DistFamily::Weibull:
      return "weibull";
  }
  return "?";
}

struct DistributionFit {
  DistFamily family = DistFamily::Lognormal;
  std::map<std::string, double> params;
  double ssr = 0.0;  // sum of squared residuals against the empirical pdf
};

struct PdfPoint {
  double x = 0.0;
  double density = 0.0;
};

// Logarithmic binning of an integer-valued histogram into an empirical pdf,
// density-normalized over the observed support.
inline std::vector<PdfPoint> log_binned_pdf(const std::map<int, double>& histogram,
                                            int n_bins = 20) {
  if (histogram.empty()) throw ContractError("log_binned_pdf: empty histogram");
  double total = 0.0;
  int lo = histogram.begin()->first;
  int hi = histogram.rbegin()->first;
  for (const auto& [x, c] : histogram) {
    if (x < 1) throw ContractError("log_binned_pdf: support must be >= 1");
    total += c;
  }
  if (total <= 0.0) throw ContractError("log_binned_pdf: zero total count");
  const double llo = std::log(static_cast<double>(lo));
  const double lhi = std::log(static_cast<double>(hi) + 1.0);
  const int bins = std::max(1, std::min(n_bins, hi - lo + 1));
  std::vector<PdfPoint> out;
  for (int b = 0; b < bins; ++b) {
    const double e0 = std::exp(llo + (lhi - llo) * b / bins);
    const double e1 = std::exp(llo + (lhi - llo) * (b + 1) / bins);
    double mass = 0.0;
    for (auto it = histogram.lower_bound(static_cast<int>(std::ceil(e0 - 1e-9)));
         it != histogram.end() && it->first < e1; ++it)
      mass += it->second;
    if (mass <= 0.0) continue;
    PdfPoint p;
    p.x = std::sqrt(e0 * e1);
    p.density = mass / (total * (e1 - e0));
    out.push_back(p);
  }
  return out;
}

namespace detail {

using PdfFn = std::function<double(double x, const std::vector<double>& theta)>;

inline double ssr_of(const PdfFn& f, const std::vector<double>& theta,
                     const std::vector<PdfPoint>& pts) {
  double s = 0.0;
  for (const auto& p : pts) {
    const double r = f(p.x, theta) - p.density;
    if (!std::isfinite(r)) return std::numeric_limits<double>::infinity();
    s += r * r;
  }
  return s;
}

// Dense Gaussian elimination for the tiny LM normal equations.
inline bool solve_small(std::vector<std::vector<double>> a, std::vector<double>& b) {
  const std::size_t n = b.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t piv = i;
    for (std::size_t r = i + 1; r < n; ++r)
      if (std::abs(a[r][i]) > std::abs(a[piv][i])) piv = r;
    if (std::abs(a[piv][i]) < 1e-300) return false;
    std::swap(a[i], a[piv]);
    std::swap(b[i], b[piv]);
    for (std::size_t r = i + 1; r < n; ++r) {
      const double f = a[r][i] / a[i][i];
      for (std::size_t c = i; c < n; ++c) a[r][c] -= f * a[i][c];
      b[r] -= f * b[i];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t c = i + 1; c < n; ++c) b[i] -= a[i][c] * b[c];
    b[i] /= a[i][i];
  }
  return true;
}

// Levenberg-Marquardt with a forward-difference Jacobian.
inline std::pair<std::vector<double>, double> levenberg_marquardt(
    const PdfFn& f, std::vector<double> theta, const std::vector<PdfPoint>& pts,
    int max_iters = 200) {
  const std::size_t m = pts.size(), k = theta.size();
  double lambda = 1e-3;
  double best = ssr_of(f, theta, pts);
  for (int iter = 0; iter < max_iters; ++iter) {
    std::vector<std::vector<double>> jac(m, std::vector<double>(k, 0.0));
    std::vector<double> res(m);
    for (std::size_t i = 0; i < m; ++i) res[i] = f(pts[i].x, theta) - pts[i].density;
    for (std::size_t j = 0; j < k; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(theta[j]));
      auto th = theta;
      th[j] += h;
      for (std::size_t i = 0; i < m; ++i) jac[i][j] = (f(pts[i].x, th) - pts[i].density - res[i]) / h;
    }
    std::vector<std::vector<double>> jtj(k, std::vector<double>(k, 0.0));
    std::vector<double> jtr(k, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t a = 0; a < k; ++a) {
        jtr[a] += jac[i][a] * res[i];
        for (std::size_t b = 0; b < k; ++b) jtj[a][b] += jac[i][a] * jac[i][b];
      }
    bool improved = false;
    for (int tries = 0; tries < 8; ++tries) {
      auto lhs = jtj;
      for (std::size_t a = 0; a < k; ++a) lhs[a][a] += lambda * std::max(jtj[a][a], 1e-12);
      std::vector<double> step(jtr);
      if (solve_small(lhs, step)) {
        auto cand = theta;
        for (std::size_t a = 0; a < k; ++a) cand[a] -= step[a];
        const double s = ssr_of(f, cand, pts);
        if (s < best) {
          theta = cand;
          best = s;
          lambda = std::max(lambda * 0.4, 1e-12);
          improved = true;
          break;
        }
      }
      lambda *= 6.0;
    }
    if (!improved) break;
  }
  return {theta, best};
}

inline double weighted_mean_x(const std::vector<PdfPoint>& pts) {
  double wx = 0.0, w = 0.0;
  for (const auto& p : pts) {
    wx += p.x * p.density;
    w += p.density;
  }
  return w > 0.0 ? wx / w : 1.0;
}

}  // namespace detail

struct FitConfig {
  int bins = 20;
  int starts = 8;
  double weibull_location = 0.0;  // u, fixed unless overridden
};

// Nonlinear least squares of the family pdf against pre-binned (x, density)
// points. Multi-start; best residual wins.
inline DistributionFit fit_pdf(const std::vector<PdfPoint>& pts, DistFamily family,
                               const FitConfig& cfg = {}) {
  if (pts.size() < 2) throw FitError("fit_pdf: need at least two pdf points");
  DistributionFit fit;
  fit.family = family;

  if (family == DistFamily::PowerLaw) {
    // log-log linear regression, then residuals in linear space
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t n = 0;
    for (const auto& p : pts) {
      if (p.density <= 0.0) continue;
      const double lx = std::log(p.x), ly = std::log(p.density);
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
      ++n;
    }
    if (n < 2) throw FitError("power-law fit: fewer than two positive densities");
    const double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-300) throw FitError("power-law fit: degenerate support");
    const double b = (n * sxy - sx * sy) / denom;
    const double loga = (sy - b * sx) / n;
    fit.params["a"] = std::exp(loga);
    fit.params["b"] = b;
    detail::PdfFn f = [](double x, const std::vector<double>& th) {
      return th[0] * std::pow(x, th[1]);
    };
    fit.ssr = detail::ssr_of(f, {fit.params["a"], fit.params["b"]}, pts);
    return fit;
  }

  detail::PdfFn f;
  std::vector<std::vector<double>> seeds;
  const double mean_x = detail::weighted_mean_x(pts);
  double peak = 0.0;
  for (const auto& p : pts) peak = std::max(peak, p.density);

  switch (family) {
    case DistFamily::Exponential: {
      // theta = (log a, b)
      f = [](double x, const std::vector<double>& th) {
        return std::exp(th[0]) * std::exp(th[1] * x);
      };
      for (double rate : {0.5, 1.0, 2.0, 4.0}) {
        seeds.push_back({std::log(std::max(peak, 1e-12)), -rate / mean_x});
        seeds.push_back({std::log(std::max(peak * 2.0, 1e-12)), -rate / (2.0 * mean_x)});
      }
      break;
    }
    case DistFamily::Lognormal: {
      // theta = (log A, log c, log w)
      f = [](double x, const std::vector<double>& th) {
        const double A = std::exp(th[0]), c = std::exp(th[1]), w = std::exp(th[2]);
        const double lr = std::log(x / c);
        return A / (x * w * std::sqrt(2.0 * M_PI)) * std::exp(-(lr * lr) / (2.0 * w * w));
      };
      for (double c0 : {mean_x, mean_x * 0.6})
        for (double w0 : {0.3, 0.6, 1.0, 1.6})
          seeds.push_back({0.0, std::log(std::max(c0, 1e-9)), std::log(w0)});
      break;
    }
    case DistFamily::Weibull: {
      // theta = (log a, log r); location u is fixed
      const double u = cfg.weibull_location;
      f = [u](double x, const std::vector<double>& th) {
        const double a = std::exp(th[0]), r = std::exp(th[1]);
        const double z = (x - u) / a;
        if (z <= 0.0) return 0.0;
        return (r / a) * std::pow(z, r - 1.0) * std::exp(-std::pow(z, r));
      };
      for (double a0 : {mean_x, mean_x * 1.5})
        for (double r0 : {0.9, 1.4, 1.9, 2.6})
          seeds.push_back({std::log(std::max(a0, 1e-9)), std::log(r0)});
      break;
    }
    default:
      throw FitError("unhandled family");
  }
  while (static_cast<int>(seeds.size()) > cfg.starts) seeds.pop_back();

  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_theta;
  std::vector<double> residual_trace;
  for (const auto& seed : seeds) {
    auto [theta, ssr] = detail::levenberg_marquardt(f, seed, pts);
    residual_trace.push_back(ssr);
    if (ssr < best) {
      best = ssr;
      best_theta = theta;
    }
  }
  if (!std::isfinite(best)) {
    std::string trace;
    for (double r : residual_trace) trace += " " + std::to_string(r);
    throw FitError(std::string("all starts failed for ") + family_name(family) +
                   "; residuals:" + trace);
  }
  fit.ssr = best;
  switch (family) {
    case DistFamily::Exponential:
      fit.params["a"] = std::exp(best_theta[0]);
      fit.params["b"] = best_theta[1];
      break;
    case DistFamily::Lognormal:
      fit.params["A"] = std::exp(best_theta[0]);
      fit.params["c"] = std::exp(best_theta[1]);
      fit.params["w"] = std::exp(best_theta[2]);
      break;
    case DistFamily::Weibull:
      fit.params["a"] = std::exp(best_theta[0]);
      fit.params["r"] = std::exp(best_theta[1]);
      fit.params["u"] = cfg.weibull_location;
      break;
    default:
      break;
  }
  return fit;
}

inline DistributionFit fit_distribution(const std::map<int, double>& histogram, DistFamily family,
                                        const FitConfig& cfg = {}) {
  return fit_pdf(log_binned_pdf(histogram, cfg.bins), family, cfg);
}

inline double evaluate_pdf(const DistributionFit& fit, double x) {
  switch (fit.family) {
    case DistFamily::PowerLaw:
      return fit.params.at("a") * std::pow(x, fit.params.at("b"));
    case DistFamily::Exponential:
      return fit.params.at("a") * std::exp(fit.params.at("b") * x);
    case DistFamily::Lognormal: {
      const double A = fit.params.at("A"), c = fit.params.at("c"), w = fit.params.at("w");
      const double lr = std::log(x / c);
      return A / (x * w * std::sqrt(2.0 * M_PI)) * std::exp(-(lr * lr) / (2.0 * w * w));
    }
    case DistFamily::Weibull: {
      const double a = fit.params.at("a"), r = fit.params.at("r"), u = fit.params.at("u");
      const double z = (x - u) / a;
      if (z <= 0.0) return 0.0;
      return (r / a) * std::pow(z, r - 1.0) * std::exp(-std::pow(z, r));
    }
  }
  return 0.0;
}

// Smallest value whose cumulative share reaches q.
inline int quantile_stops(const std::map<int, double>& histogram, double q) {
  if (q <= 0.0 || q >= 1.0) throw ContractError("quantile_stops: q must be in (0,1)");
  if (histogram.empty()) throw ContractError("quantile_stops: empty histogram");
  double total = 0.0;
  for (const auto& [x, c] : histogram) total += c;
  double acc = 0.0;
  for (const auto& [x, c] : histogram) {
    acc += c;
    if (acc / total >= q) return x;
  }
  return histogram.rbegin()->first;
}

// --- pattern statistics ------------------------------------------------------------------

// Number of distinct stops each passenger passes, split by pattern.
inline std::vector<std::map<int, double>> ns_histograms(const PassengerStopProfile& profile,
                                                        const std::map<std::string, int>& labels,
                                                        int n_patterns) {
  std::vector<std::map<int, double>> hists(n_patterns);
  for (const auto& [card, boardings] : profile.passengers) {
    auto it = labels.find(card);
    if (it == labels.end() || it->second < 0 || it->second >= n_patterns)
      throw ContractError("ns_histograms: passenger '" + card + "' lacks a valid label");
    std::set<std::string> stops;
    for (const auto& b : boardings) stops.insert(b.stop_id);
    hists[it->second][static_cast<int>(stops.size())] += 1.0;
  }
  return hists;
}

struct RouteShares {
  std::vector<std::string> routes;  // ascending route id
  int n_patterns = 0;
  Tensor shares;                                      // pattern x route
  std::vector<std::vector<std::string>> preferences;  // share > 0.5, ordered by route id
  std::map<std::string, double> route_totals;
};

// share(p, r) = boardings by pattern-p passengers on route r / all boardings on r.
inline RouteShares route_contribution(const PassengerStopProfile& profile,
                                      const std::map<std::string, int>& labels, int n_patterns) {
  RouteShares rs;
  rs.n_patterns = n_patterns;
  std::map<std::string, std::vector<double>> counts;  // route -> per-pattern boardings
  for (const auto& [card, boardings] : profile.passengers) {
    auto it = labels.find(card);
    if (it == labels.end() || it->second < 0 || it->second >= n_patterns)
      throw ContractError("route_contribution: passenger '" + card + "' lacks a valid label");
    for (const auto& b : boardings) {
      auto& v = counts[b.route_id];
      if (v.empty()) v.assign(n_patterns, 0.0);
      v[it->second] += 1.0;
    }
  }
  for (const auto& [route, v] : counts) rs.routes.push_back(route);
  rs.shares = Tensor({static_cast<std::size_t>(n_patterns), rs.routes.size()});
  rs.preferences.assign(n_patterns, {});
  for (std::size_t r = 0; r < rs.routes.size(); ++r) {
    const auto& v = counts[rs.routes[r]];
    double total = 0.0;
    for (double c : v) total += c;
    rs.route_totals[rs.routes[r]] = total;
    for (int p = 0; p < n_patterns; ++p) {
      const double share = total > 0.0 ? v[p] / total : 0.0;
      rs.shares.at(p, r) = share;
      if (share > 0.5) rs.preferences[p].push_back(rs.routes[r]);
    }
  }
  return rs;
}

}  // namespace mpgcn
