#pragma once

#include <cmath>
#include <cstdint>
#include <future>
#include <string>
#include <vector>

#include "mpgcn/errors.hpp"
#include "mpgcn/graphs.hpp"
#include "mpgcn/ingest.hpp"
#include "mpgcn/modelutil.hpp"
#include "mpgcn/optim.hpp"
#include "mpgcn/tape.hpp"

namespace mpgcn {

// --- configuration ---------------------------------------------------------------

struct PredictorConfig {
  int kernel = 3;
  int channels = 32;
  int window = 12;  // input time steps; 5 TC blocks need window >= 5*(kernel-1)+1
  double learning_rate = 1e-3;
  int epochs = 100;
  int batch_size = 64;
  bool per_stop_bias = true;  // Eq. 9 bias shape; a shared-bias variant is selectable
  int val_days = 2;
  int test_days = 2;
  std::uint64_t seed = 1;

  int conv_shrink() const { return 5 * (kernel - 1); }
  int head_steps() const { return window - conv_shrink(); }

  void validate() const {
    if (kernel < 2) throw ConfigError("predictor: kernel must be >= 2");
    if (channels < 1) throw ConfigError("predictor: channels must be >= 1");
    if (head_steps() < 1)
      throw ConfigError("predictor: window " + std::to_string(window) +
                        " leaves no time steps after five kernel-" + std::to_string(kernel) +
                        " blocks (need >= " + std::to_string(conv_shrink() + 1) + ")");
    if (batch_size < 1) throw ConfigError("predictor: batch_size must be >= 1");
  }
};

// --- z-score normalization ----------------------------------------------------------

struct ZScoreStats {
  Tensor mean;  // per stop
  Tensor stddev;
};

// Per-stop statistics fitted on [fit_begin, fit_end) rows only, applied to the
// whole tensor; zero spread falls back to 1.
inline std::pair<FlowTensor, ZScoreStats> zscore_fit_apply(const FlowTensor& flow,
                                                           std::size_t fit_begin,
                                                           std::size_t fit_end) {
  if (fit_begin >= fit_end || fit_end > flow.values.extent(0))
    throw ContractError("zscore_fit_apply: empty or out-of-range fit slice");
  const std::size_t S = flow.values.extent(1);
  ZScoreStats st;
  st.mean = Tensor({S});
  st.stddev = Tensor({S});
  const std::size_t n = fit_end - fit_begin;
  for (std::size_t s = 0; s < S; ++s) {
    double m = 0.0;
    for (std::size_t t = fit_begin; t < fit_end; ++t) m += flow.values.at(t, s);
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t t = fit_begin; t < fit_end; ++t) {
      const double d = flow.values.at(t, s) - m;
      v += d * d;
    }
    v /= static_cast<double>(n);
    st.mean[s] = m;
    st.stddev[s] = v > 0.0 ? std::sqrt(v) : 1.0;
  }
  FlowTensor out = flow;
  for (std::size_t t = 0; t < out.values.extent(0); ++t)
    for (std::size_t s = 0; s < S; ++s)
      out.values.at(t, s) = (flow.values.at(t, s) - st.mean[s]) / st.stddev[s];
  return {std::move(out), std::move(st)};
}

inline double unnormalize_value(double v, const ZScoreStats& st, std::size_t stop) {
  return v * st.stddev[stop] + st.mean[stop];
}

// --- block parameters (operation-level API) -------------------------------------------

struct TcBlockParams {
  Tensor w0, w1, w2;  // [k, C_in, C_out]
  Tensor b0, b1, b2;  // [S, C_out] (per stop) or [C_out] (shared)
};

struct SgcBlockParams {
  Tensor w;  // [C_in, C_out]
};

namespace graphnodes {

using NodeId = Tape::NodeId;

// Eq. 9: gated temporal convolution with a residual third branch.
inline NodeId build_tc(Tape& t, NodeId x, NodeId w0, NodeId b0, NodeId w1, NodeId b1, NodeId w2,
                       NodeId b2) {
  NodeId left = t.bias_add(t.conv_time(x, w0), b0);
  NodeId gate = t.sigmoid(t.bias_add(t.conv_time(x, w1), b1));
  NodeId res = t.bias_add(t.conv_time(x, w2), b2);
  return t.relu(t.add(t.mul(left, gate), res));
}

// Eq. 10 with identity activation: per time step, propagate across stops and
// mix channels. The sandwich of Eq. 11 supplies the nonlinearity.
inline NodeId build_sgc(Tape& t, NodeId x, const SparseMatrix& prop, NodeId w) {
  const Shape& s = t.value(x).shape();
  const std::size_t T = s[0], S = s[1], C = s[2];
  const std::size_t out_c = t.value(w).cols();
  if (prop.rows() != S)
    throw ShapeError("sgc: propagation is " + std::to_string(prop.rows()) + "x" +
                     std::to_string(prop.cols()) + " for " + std::to_string(S) + " stops");
  std::vector<NodeId> steps;
  steps.reserve(T);
  for (std::size_t tau = 0; tau < T; ++tau) {
    NodeId slab = t.reshape(t.slice_lead(x, tau, tau + 1), {S, C});
    steps.push_back(t.matmul(t.spmm(prop, slab), w));
  }
  return t.reshape(t.concat_lead(steps), {T, S, out_c});
}

}  // namespace graphnodes

// --- model ------------------------------------------------------------------------------

// [TC, SGC, TC] x2, a final TC, and a weight-tied per-stop FC head.
struct Gcn2FlowModel {
  PredictorConfig cfg;
  std::size_t n_stops = 0;
  ParamSet params;
  ZScoreStats norm;

  static Gcn2FlowModel init(std::size_t n_stops, const PredictorConfig& cfg, Rng& rng) {
    cfg.validate();
    Gcn2FlowModel m;
    m.cfg = cfg;
    m.n_stops = n_stops;
    const std::size_t k = cfg.kernel, c = cfg.channels;
    auto conv_init = [&](std::size_t cin, std::size_t cout) {
      const double bound = std::sqrt(6.0 / static_cast<double>(k * cin + cout));
      return Tensor::random_uniform({k, cin, cout}, rng, -bound, bound);
    };
    auto bias_shape = [&](std::size_t cout) {
      return cfg.per_stop_bias ? Shape{n_stops, cout} : Shape{cout};
    };
    auto add_tc = [&](const std::string& name, std::size_t cin, std::size_t cout) {
      for (const char* b : {"w0", "w1", "w2"})
        m.params.add(name + "." + b, conv_init(cin, cout));
      for (const char* b : {"b0", "b1", "b2"})
        m.params.add(name + "." + b, Tensor(bias_shape(cout)));
    };
    auto add_sgc = [&](const std::string& name, std::size_t cin, std::size_t cout) {
      const double bound = std::sqrt(6.0 / static_cast<double>(cin + cout));
      m.params.add(name + ".w", Tensor::random_uniform({cin, cout}, rng, -bound, bound));
    };
    add_tc("tc1", 1, c);
    add_sgc("sgc1", c, c);
    add_tc("tc2", c, c);
    add_tc("tc3", c, c);
    add_sgc("sgc2", c, c);
    add_tc("tc4", c, c);
    add_tc("tc5", c, c);
    const std::size_t head_in = static_cast<std::size_t>(cfg.head_steps()) * c;
    const double bound = std::sqrt(6.0 / static_cast<double>(head_in + 1));
    m.params.add("fc.w", Tensor::random_uniform({head_in, 1}, rng, -bound, bound));
    m.params.add("fc.b", Tensor({n_stops}));
    return m;
  }
};

namespace graphnodes {

inline NodeId build_tc_named(Tape& t, const Gcn2FlowModel& m, const std::vector<NodeId>& p,
                             const std::string& name, NodeId x) {
  auto id = [&](const char* suffix) { return p[m.params.index_of(name + "." + suffix)]; };
  return build_tc(t, x, id("w0"), id("b0"), id("w1"), id("b1"), id("w2"), id("b2"));
}

// Conv stack over an arbitrary region [T, S, 1] -> [T - 5(k-1), S, C].
inline NodeId build_conv_stack(Tape& t, const Gcn2FlowModel& m, const std::vector<NodeId>& p,
                               NodeId x, const SparseMatrix& prop) {
  NodeId h = build_tc_named(t, m, p, "tc1", x);
  h = t.relu(build_sgc(t, h, prop, p[m.params.index_of("sgc1.w")]));
  h = build_tc_named(t, m, p, "tc2", h);
  h = build_tc_named(t, m, p, "tc3", h);
  h = t.relu(build_sgc(t, h, prop, p[m.params.index_of("sgc2.w")]));
  h = build_tc_named(t, m, p, "tc4", h);
  h = build_tc_named(t, m, p, "tc5", h);
  return h;
}

// Head over `count` consecutive window offsets starting at `first` within the
// conv-stack output: out[b, s] = sum_j conv[first+b+j, s, :] . w_j + bias_s.
inline NodeId build_head(Tape& t, const Gcn2FlowModel& m, const std::vector<NodeId>& p,
                         NodeId conv, std::size_t first, std::size_t count) {
  const std::size_t S = t.value(conv).extent(1);
  const std::size_t C = t.value(conv).extent(2);
  const std::size_t steps = static_cast<std::size_t>(m.cfg.head_steps());
  NodeId fc_w = p[m.params.index_of("fc.w")];
  NodeId acc = 0;
  for (std::size_t j = 0; j < steps; ++j) {
    NodeId slab = t.reshape(t.slice_lead(conv, first + j, first + j + count), {count * S, C});
    NodeId wj = t.slice_lead(fc_w, j * C, (j + 1) * C);
    NodeId term = t.matmul(slab, wj);
    acc = (j == 0) ? term : t.add(acc, term);
  }
  return t.bias_add(t.reshape(acc, {count, S}), p[m.params.index_of("fc.b")]);
}

}  // namespace graphnodes

// --- operation-level forwards -------------------------------------------------------

inline Tensor tc_forward(const TcBlockParams& params, const Tensor& x) {
  Tape t;
  auto n = graphnodes::build_tc(t, t.constant(x), t.constant(params.w0), t.constant(params.b0),
                                t.constant(params.w1), t.constant(params.b1),
                                t.constant(params.w2), t.constant(params.b2));
  return t.value(n);
}

inline Tensor sgc_forward(const SgcBlockParams& params, const NormalizedPropagation& prop,
                          const Tensor& x) {
  Tape t;
  return t.value(graphnodes::build_sgc(t, t.constant(x), prop.matrix, t.constant(params.w)));
}

// One window [t, S, 1] -> next-step flow [1, S] (normalized units).
inline Tensor gcn2flow_forward(const Gcn2FlowModel& m, const NormalizedPropagation& prop,
                               const Tensor& window) {
  if (window.rank() != 3 || window.extent(2) != 1 || window.extent(1) != m.n_stops)
    throw ShapeError("gcn2flow_forward: window shape " + shape_str(window.shape()));
  if (window.extent(0) != static_cast<std::size_t>(m.cfg.window))
    throw ShapeError("gcn2flow_forward: window has " + std::to_string(window.extent(0)) +
                     " steps, model expects " + std::to_string(m.cfg.window));
  Tape t;
  auto p = graphnodes::register_params(t, m.params);
  auto conv = graphnodes::build_conv_stack(t, m, p, t.constant(window), prop.matrix);
  return t.value(graphnodes::build_head(t, m, p, conv, 0, 1));
}

// --- training ----------------------------------------------------------------------------

struct DaySplit {
  int train_days = 0;
  int val_days = 0;
  int test_days = 0;

  static DaySplit from(const FlowTensor& flow, const PredictorConfig& cfg) {
    DaySplit s;
    s.val_days = cfg.val_days;
    s.test_days = cfg.test_days;
    s.train_days = flow.n_days - cfg.val_days - cfg.test_days;
    if (s.train_days < 1)
      throw ConfigError("predictor: " + std::to_string(flow.n_days) +
                        " days cannot host a " + std::to_string(cfg.val_days) + "+" +
                        std::to_string(cfg.test_days) + " validation/test split");
    return s;
  }
};

struct PredictorTrainReport {
  std::vector<double> epoch_mse;  // normalized units, training windows
  double train_mse_raw = 0.0;
  double train_variance_raw = 0.0;
};

struct PredictionSeries {
  std::vector<std::int64_t> times;  // prediction target timestamps
  Tensor predicted;                 // [n_windows, S], raw flow units
  Tensor actual;                    // [n_windows, S], raw flow units
};

namespace detail {

struct Chunk {
  std::size_t day_row0 = 0;  // first row of the source day
  std::size_t w0 = 0;        // first window offset within the day
  std::size_t count = 0;     // windows in this chunk
};

inline std::vector<Chunk> make_chunks(int n_days, int spd, const PredictorConfig& cfg) {
  std::vector<Chunk> chunks;
  const int wpd = spd - cfg.window;  // windows per day (target must exist)
  for (int d = 0; d < n_days; ++d)
    for (int w = 0; w < wpd; w += cfg.batch_size)
      chunks.push_back({static_cast<std::size_t>(d) * spd, static_cast<std::size_t>(w),
                        static_cast<std::size_t>(std::min(cfg.batch_size, wpd - w))});
  return chunks;
}

// Rows [r0, r0+len) of a [T, S] matrix as a [len, S, 1] window region.
inline Tensor region_of(const Tensor& values, std::size_t r0, std::size_t len) {
  const std::size_t S = values.extent(1);
  Tensor out({len, S, 1});
  std::copy(values.data() + r0 * S, values.data() + (r0 + len) * S, out.data());
  return out;
}

}  // namespace detail

// Windows are consecutive (stride 1) inside each day and never span the
// nightly service gap. A chunk of windows shares one conv-stack evaluation:
// valid convolution is translation-equivariant, so per-window conv outputs
// are slices of the chunk's output and the summed loss is identical.
inline std::pair<Gcn2FlowModel, PredictorTrainReport> train_gcn2flow(
    const FlowTensor& flow, const NormalizedPropagation& prop, const PredictorConfig& cfg) {
  cfg.validate();
  const int spd = flow.slots_per_day();
  if (spd <= cfg.window)
    throw ConfigError("predictor: day of " + std::to_string(spd) +
                      " slots cannot fit a window of " + std::to_string(cfg.window));
  auto split = DaySplit::from(flow, cfg);
  const std::size_t train_rows = static_cast<std::size_t>(split.train_days) * spd;
  if (train_rows == 0) throw ConfigError("predictor: no training rows");

  Rng rng(sub_seed(cfg.seed, "gcn2flow-init"));
  Gcn2FlowModel model = Gcn2FlowModel::init(flow.values.extent(1), cfg, rng);
  auto [norm_flow, stats] = zscore_fit_apply(flow, 0, train_rows);
  model.norm = stats;

  PredictorTrainReport report;
  auto chunks = detail::make_chunks(split.train_days, spd, cfg);
  Rng order_rng(sub_seed(cfg.seed, "gcn2flow-order"));
  const std::size_t S = flow.values.extent(1);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(chunks.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    double epoch_sse = 0.0;
    std::size_t epoch_n = 0;
    for (std::size_t ci : order) {
      const auto& ch = chunks[ci];
      const std::size_t region_len = ch.count + cfg.window - 1;
      Tape t;
      auto p = graphnodes::register_params(t, model.params);
      auto region =
          t.constant(detail::region_of(norm_flow.values, ch.day_row0 + ch.w0, region_len));
      auto conv = graphnodes::build_conv_stack(t, model, p, region, prop.matrix);
      auto pred = graphnodes::build_head(t, model, p, conv, 0, ch.count);
      Tensor targets({ch.count, S});
      for (std::size_t b = 0; b < ch.count; ++b)
        for (std::size_t s = 0; s < S; ++s)
          targets.at(b, s) = norm_flow.values.at(ch.day_row0 + ch.w0 + b + cfg.window, s);
      auto loss = t.mean(t.square(t.sub(pred, t.constant(targets))));
      const double lv = t.value(loss)[0];
      if (!std::isfinite(lv))
        throw TrainingError("gcn2flow loss non-finite at epoch " + std::to_string(epoch));
      epoch_sse += lv * static_cast<double>(ch.count * S);
      epoch_n += ch.count * S;
      t.backward(loss);
      std::vector<Tensor> grads;
      for (auto id : p) grads.push_back(t.grad(id));
      model.params.apply_adam(grads, cfg.learning_rate);
    }
    report.epoch_mse.push_back(epoch_sse / static_cast<double>(epoch_n));
  }

  // Raw-unit fit quality on the training span.
  {
    double sse = 0.0, sum = 0.0, sumsq = 0.0;
    std::size_t n = 0;
    for (int d = 0; d < split.train_days; ++d) {
      const std::size_t row0 = static_cast<std::size_t>(d) * spd;
      const int wpd = spd - cfg.window;
      Tape t;
      auto p = graphnodes::register_params(t, model.params);
      auto region = t.constant(detail::region_of(norm_flow.values, row0, spd));
      auto conv = graphnodes::build_conv_stack(t, model, p, region, prop.matrix);
      auto pred = graphnodes::build_head(t, model, p, conv, 0, static_cast<std::size_t>(wpd));
      const Tensor& pv = t.value(pred);
      for (int w = 0; w < wpd; ++w)
        for (std::size_t s = 0; s < S; ++s) {
          const double praw = unnormalize_value(pv.at(w, s), model.norm, s);
          const double araw = flow.values.at(row0 + w + cfg.window, s);
          sse += (praw - araw) * (praw - araw);
          sum += araw;
          sumsq += araw * araw;
          ++n;
        }
    }
    report.train_mse_raw = sse / static_cast<double>(n);
    const double mean = sum / static_cast<double>(n);
    report.train_variance_raw = sumsq / static_cast<double>(n) - mean * mean;
  }
  return {std::move(model), std::move(report)};
}

// Predictions for every window of days [day_begin, day_end), raw units.
inline PredictionSeries predict_range(const Gcn2FlowModel& model,
                                      const NormalizedPropagation& prop, const FlowTensor& flow,
                                      int day_begin, int day_end) {
  if (day_begin < 0 || day_end > flow.n_days || day_begin >= day_end)
    throw ContractError("predict_range: bad day range");
  const int spd = flow.slots_per_day();
  const int wpd = spd - model.cfg.window;
  const std::size_t S = flow.values.extent(1);

  FlowTensor norm_flow = flow;
  for (std::size_t t = 0; t < flow.values.extent(0); ++t)
    for (std::size_t s = 0; s < S; ++s)
      norm_flow.values.at(t, s) =
          (flow.values.at(t, s) - model.norm.mean[s]) / model.norm.stddev[s];

  PredictionSeries out;
  out.predicted = Tensor({static_cast<std::size_t>((day_end - day_begin) * wpd), S});
  out.actual = Tensor({static_cast<std::size_t>((day_end - day_begin) * wpd), S});
  std::size_t row = 0;
  for (int d = day_begin; d < day_end; ++d) {
    const std::size_t row0 = static_cast<std::size_t>(d) * spd;
    Tape t;
    auto p = graphnodes::register_params(t, model.params);
    auto region = t.constant(detail::region_of(norm_flow.values, row0, spd));
    auto conv = graphnodes::build_conv_stack(t, model, p, region, prop.matrix);
    auto pred = graphnodes::build_head(t, model, p, conv, 0, static_cast<std::size_t>(wpd));
    const Tensor& pv = t.value(pred);
    for (int w = 0; w < wpd; ++w, ++row) {
      out.times.push_back(flow.time_of_row(row0 + w + model.cfg.window));
      for (std::size_t s = 0; s < S; ++s) {
        out.predicted.at(row, s) = unnormalize_value(pv.at(w, s), model.norm, s);
        out.actual.at(row, s) = flow.values.at(row0 + w + model.cfg.window, s);
      }
    }
  }
  return out;
}

// --- multi-pattern fusion -------------------------------------------------------------------

struct MpgcnResult {
  std::vector<Gcn2FlowModel> models;           // one per pattern
  std::vector<PredictorTrainReport> reports;
  std::vector<PredictionSeries> per_pattern;   // test-range predictions
  PredictionSeries fused;                      // element-wise sum over patterns
};

// Alg. 2: one GCN2Flow per pattern, each trained on its own flow tensor, with
// unnormalized predictions summed into the total forecast.
inline MpgcnResult mpgcn_predict(const std::vector<FlowTensor>& per_pattern_flows,
                                 const NormalizedPropagation& prop, const PredictorConfig& cfg,
                                 int jobs = 1) {
  if (per_pattern_flows.empty()) throw ContractError("mpgcn_predict: no patterns");
  for (std::size_t j = 1; j < per_pattern_flows.size(); ++j) {
    if (!per_pattern_flows[j].values.same_shape(per_pattern_flows[0].values) ||
        per_pattern_flows[j].start_day != per_pattern_flows[0].start_day ||
        per_pattern_flows[j].step_minutes != per_pattern_flows[0].step_minutes)
      throw ContractError("mpgcn_predict: pattern flow tensors are misaligned");
  }
  const std::size_t m = per_pattern_flows.size();
  MpgcnResult res;
  res.models.resize(m);
  res.reports.resize(m);
  res.per_pattern.resize(m);

  auto split = DaySplit::from(per_pattern_flows[0], cfg);
  const int day_begin = split.train_days + split.val_days;
  const int day_end = per_pattern_flows[0].n_days;

  auto run_one = [&](std::size_t j) {
    PredictorConfig pc = cfg;
    pc.seed = sub_seed(cfg.seed, "pattern-" + std::to_string(j));
    auto [model, report] = train_gcn2flow(per_pattern_flows[j], prop, pc);
    res.per_pattern[j] = predict_range(model, prop, per_pattern_flows[j], day_begin, day_end);
    res.models[j] = std::move(model);
    res.reports[j] = std::move(report);
  };

  if (jobs <= 1) {
    for (std::size_t j = 0; j < m; ++j) run_one(j);
  } else {
    for (std::size_t j0 = 0; j0 < m; j0 += jobs) {
      std::vector<std::future<void>> wave;
      for (std::size_t j = j0; j < std::min(m, j0 + jobs); ++j)
        wave.push_back(std::async(std::launch::async, run_one, j));
      for (auto& f : wave) f.get();
    }
  }

  res.fused.times = res.per_pattern[0].times;
  res.fused.predicted = Tensor(res.per_pattern[0].predicted.shape());
  res.fused.actual = Tensor(res.per_pattern[0].actual.shape());
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 0; i < res.fused.predicted.numel(); ++i) {
      res.fused.predicted[i] += res.per_pattern[j].predicted[i];
      res.fused.actual[i] += res.per_pattern[j].actual[i];
    }
  return res;
}

}  // namespace mpgcn
