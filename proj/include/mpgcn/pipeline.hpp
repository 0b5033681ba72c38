#pragma once

#include <chrono>
#include <filesystem>
#include <future>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpgcn/analysis.hpp"
#include "mpgcn/checkpoint.hpp"
#include "mpgcn/clustering.hpp"
#include "mpgcn/config.hpp"
#include "mpgcn/graphs.hpp"
#include "mpgcn/ingest.hpp"
#include "mpgcn/optimizer.hpp"
#include "mpgcn/predictor.hpp"
#include "mpgcn/serialize.hpp"
#include "mpgcn/synth.hpp"

namespace mpgcn {

inline constexpr const char* kVersion = "0.1.0";

struct PipelineContext {
  RunConfig cfg;
  std::filesystem::path out;

  std::filesystem::path dir(const std::string& stage) const { return out / stage; }
};

namespace pipedetail {

class StageTimer {
 public:
  explicit StageTimer(const PipelineContext& ctx, std::string stage)
      : ctx_(ctx), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {
    std::filesystem::create_directories(ctx_.dir(stage_));
  }

  // Writes the run manifest; wall time lives only here, never in artifacts.
  void finish(nlohmann::json extra = nlohmann::json::object()) {
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start_)
                        .count();
    nlohmann::json m;
    m["stage"] = stage_;
    m["version"] = kVersion;
    m["config_hash"] = config_hash(ctx_.cfg);
    m["seed"] = ctx_.cfg.seed;
    m["wall_ms"] = ms;
    m["stats"] = std::move(extra);
    write_json_file(ctx_.dir(stage_) / (stage_ + "_manifest.json"), m);
  }

 private:
  const PipelineContext& ctx_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

inline void require_artifact(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p))
    throw IoError("missing upstream artifact: " + p.string());
}

}  // namespace pipedetail

// --- synth --------------------------------------------------------------------------

inline void stage_synth(const PipelineContext& ctx) {
  pipedetail::StageTimer timer(ctx, "synth");
  auto city = generate_city(ctx.cfg.city);
  const auto dir = ctx.dir("synth");
  write_rides_csv(city, (dir / "rides.csv").string());
  write_events_csv(city, (dir / "stop_events.csv").string());
  write_registry_csv(city.registry, (dir / "stops.csv").string());

  nlohmann::json truth;
  truth["format"] = "mpgcn-ground-truth/1";
  truth["labels"] = city.labels;
  truth["share_routes"] = city.share_routes;
  {
    std::vector<std::vector<double>> shares;
    for (std::size_t p = 0; p < city.planted_shares.rows(); ++p) {
      shares.emplace_back();
      for (std::size_t r = 0; r < city.planted_shares.cols(); ++r)
        shares.back().push_back(city.planted_shares.at(p, r));
    }
    truth["planted_shares"] = shares;
  }
  truth["ns_median"] = city.planted_ns_median;
  truth["ns_sigma"] = city.planted_ns_sigma;
  truth["matchable_rides"] = city.matchable_rides;
  truth["expected_unmatched"] = city.expected_unmatched;
  truth["dropped_bus"] = city.dropped_bus;
  truth["dropped_day"] = city.dropped_day;
  write_json_file(dir / "ground_truth.json", truth);

  timer.finish({{"rides", city.rides.size()},
                {"events", city.events.size()},
                {"stops", city.registry.stop_ids.size()},
                {"routes", city.registry.route_stops.size()}});
}

// --- ingest --------------------------------------------------------------------------

inline void stage_ingest(const PipelineContext& ctx) {
  pipedetail::StageTimer timer(ctx, "ingest");
  const auto synth = ctx.dir("synth");
  pipedetail::require_artifact(synth / "rides.csv");
  pipedetail::require_artifact(synth / "stop_events.csv");
  pipedetail::require_artifact(synth / "stops.csv");

  auto tables = parse_tables((synth / "rides.csv").string(),
                             (synth / "stop_events.csv").string());
  auto registry = parse_stop_registry((synth / "stops.csv").string());
  auto match = match_stops(tables.rides, tables.events, ctx.cfg.tau);
  auto profile =
      filter_passengers(match.profile, ctx.cfg.min_records, ctx.cfg.min_active_span_days);
  if (profile.passengers.empty())
    throw IngestError("all passengers filtered out; lower ingest.min_records");
  auto od = infer_od(profile, registry);

  const auto range = profile_day_range(match.profile);
  auto flow = aggregate_flow(profile, ctx.cfg.step_minutes, registry, range);
  auto mask = gap_mask_from_missing_bus_days(flow, tables.rides, tables.events, registry);
  double gap_cells = mask.sum();
  if (gap_cells > 0.0) flow = interpolate_gaps(flow, mask);

  const auto dir = ctx.dir("ingest");
  write_profile_json(profile, dir / "profile.json");
  write_od_json(od, dir / "od.json");
  write_flow_csv(flow, dir / "flow_total.csv");
  {
    FlowTensor mask_flow = flow;
    mask_flow.values = mask;
    write_flow_csv(mask_flow, dir / "gap_mask.csv");
  }

  timer.finish({{"ride_rows", tables.ride_stats.rows},
                {"ride_malformed", tables.ride_stats.malformed},
                {"event_rows", tables.event_stats.rows},
                {"event_malformed", tables.event_stats.malformed},
                {"stay_time_mismatches", tables.event_stats.stay_time_mismatches},
                {"matched", match.matched},
                {"unmatched", match.unmatched},
                {"passengers_matched", match.profile.passengers.size()},
                {"passengers_retained", profile.passengers.size()},
                {"gap_cells", gap_cells}});
}

// --- graphs --------------------------------------------------------------------------

inline void stage_build_graphs(const PipelineContext& ctx) {
  pipedetail::StageTimer timer(ctx, "graphs");
  pipedetail::require_artifact(ctx.dir("ingest") / "profile.json");
  pipedetail::require_artifact(ctx.dir("synth") / "stops.csv");
  auto profile = read_profile_json(ctx.dir("ingest") / "profile.json");
  auto registry = parse_stop_registry((ctx.dir("synth") / "stops.csv").string());

  auto sharing = build_sharing_stop(profile);
  auto network = build_stop_network(registry, ctx.cfg.bidirectional_routes);

  const auto dir = ctx.dir("graphs");
  write_graph_csv(sharing.adjacency, sharing.passenger_ids, dir / "sharing_stop_edges.csv",
                  dir / "sharing_stop_nodes.json");
  write_graph_csv(network.adjacency, network.stop_ids, dir / "stop_network_edges.csv",
                  dir / "stop_network_nodes.json");

  timer.finish({{"passenger_nodes", sharing.node_count()},
                {"sharing_edges", sharing.adjacency.nnz() / 2},
                {"stop_nodes", network.node_count()},
                {"stop_edges", network.adjacency.nnz()}});
}

// --- cluster -------------------------------------------------------------------------

inline void stage_cluster(const PipelineContext& ctx) {
  pipedetail::StageTimer timer(ctx, "cluster");
  const auto gdir = ctx.dir("graphs");
  pipedetail::require_artifact(gdir / "sharing_stop_edges.csv");
  auto [adj, nodes] =
      read_graph_csv(gdir / "sharing_stop_edges.csv", gdir / "sharing_stop_nodes.json");
  SharingStopGraph graph{std::move(nodes), std::move(adj)};

  Tensor x = features_from_graph(graph);
  auto res = train_clustering(graph, x, ctx.cfg.cluster);

  const auto dir = ctx.dir("cluster");
  write_labels_csv(graph.passenger_ids, res.assignment.labels, dir / "labels.csv");
  {
    ParamSet centers;
    centers.add("centers", res.centers_t);
    nlohmann::json meta;
    meta["widths"] = ctx.cfg.cluster.widths;
    meta["k"] = ctx.cfg.cluster.k;
    meta["alpha"] = ctx.cfg.cluster.alpha;
    meta["dof"] = ctx.cfg.cluster.dof;
    meta["theta"] = {ctx.cfg.cluster.theta1, ctx.cfg.cluster.theta2, ctx.cfg.cluster.theta3};
    meta["seed"] = ctx.cfg.cluster.seed;
    meta["input_width"] = x.cols();
    save_checkpoint(dir / "checkpoint", "clustering",
                    {&res.ae.params, &res.gcn.params, &centers}, {"ae.", "gcn.", ""}, meta);
  }

  std::vector<std::size_t> sizes(ctx.cfg.cluster.k, 0);
  for (int l : res.assignment.labels) ++sizes[l];
  timer.finish({{"pattern_sizes", sizes},
                {"pretrain_loss_final",
                 res.report.pretrain_loss.empty() ? 0.0 : res.report.pretrain_loss.back()},
                {"joint_loss_final",
                 res.report.joint_loss.empty() ? 0.0 : res.report.joint_loss.back()},
                {"max_rowsum_dev_q", res.report.max_rowsum_dev_q},
                {"max_rowsum_dev_p", res.report.max_rowsum_dev_p},
                {"max_rowsum_dev_h", res.report.max_rowsum_dev_h}});
}

// --- shared helpers for the flow stages -----------------------------------------------

namespace pipedetail {

struct FlowInputs {
  StopRegistry registry;
  StopNetwork network;
  NormalizedPropagation prop;
  FlowTensor total_flow;          // interpolated totals (alignment reference)
  Tensor gap_mask;
  PassengerStopProfile profile;
  std::map<std::string, int> labels;
  int n_patterns = 0;
};

inline FlowInputs load_flow_inputs(const PipelineContext& ctx) {
  FlowInputs in;
  pipedetail::require_artifact(ctx.dir("ingest") / "profile.json");
  pipedetail::require_artifact(ctx.dir("ingest") / "flow_total.csv");
  pipedetail::require_artifact(ctx.dir("cluster") / "labels.csv");
  pipedetail::require_artifact(ctx.dir("synth") / "stops.csv");
  in.registry = parse_stop_registry((ctx.dir("synth") / "stops.csv").string());
  auto [adj, stop_ids] = read_graph_csv(ctx.dir("graphs") / "stop_network_edges.csv",
                                        ctx.dir("graphs") / "stop_network_nodes.json");
  in.network = StopNetwork{std::move(stop_ids), std::move(adj)};
  in.prop = normalize(affinity_from_distances(in.network.adjacency, ctx.cfg.affinity_sigma),
                      true);
  in.total_flow = read_flow_csv(ctx.dir("ingest") / "flow_total.csv");
  in.gap_mask = read_flow_csv(ctx.dir("ingest") / "gap_mask.csv").values;
  in.profile = read_profile_json(ctx.dir("ingest") / "profile.json");
  in.labels = read_labels_csv(ctx.dir("cluster") / "labels.csv");
  for (const auto& [card, l] : in.labels) in.n_patterns = std::max(in.n_patterns, l + 1);
  return in;
}

inline FlowTensor pattern_flow(const FlowInputs& in, int step_minutes, int pattern) {
  std::set<std::string> subset;
  for (const auto& [card, l] : in.labels)
    if (l == pattern) subset.insert(card);
  DayRange range{in.total_flow.start_day, in.total_flow.n_days};
  auto flow = aggregate_flow(in.profile, step_minutes, in.registry, range, &subset);
  if (in.gap_mask.sum() > 0.0) flow = interpolate_gaps(flow, in.gap_mask);
  return flow;
}

}  // namespace pipedetail

// --- train ----------------------------------------------------------------------------

inline void stage_train(const PipelineContext& ctx) {
  pipedetail::StageTimer timer(ctx, "train");
  auto in = pipedetail::load_flow_inputs(ctx);
  const auto dir = ctx.dir("train");

  nlohmann::json stats;
  std::vector<FlowTensor> flows(in.n_patterns);
  for (int p = 0; p < in.n_patterns; ++p) {
    flows[p] = pipedetail::pattern_flow(in, ctx.cfg.step_minutes, p);
    write_flow_csv(flows[p], dir / ("flow_pattern_" + std::to_string(p) + ".csv"));
  }

  std::vector<PredictorTrainReport> reports(in.n_patterns);
  std::vector<Gcn2FlowModel> models(in.n_patterns);
  auto run_one = [&](int p) {
    PredictorConfig pc = ctx.cfg.predictor;
    pc.seed = sub_seed(ctx.cfg.predictor.seed, "pattern-" + std::to_string(p));
    auto [model, report] = train_gcn2flow(flows[p], in.prop, pc);
    models[p] = std::move(model);
    reports[p] = std::move(report);
  };
  if (ctx.cfg.jobs <= 1) {
    for (int p = 0; p < in.n_patterns; ++p) run_one(p);
  } else {
    for (int p0 = 0; p0 < in.n_patterns; p0 += ctx.cfg.jobs) {
      std::vector<std::future<void>> wave;
      for (int p = p0; p < std::min(in.n_patterns, p0 + ctx.cfg.jobs); ++p)
        wave.push_back(std::async(std::launch::async, run_one, p));
      for (auto& f : wave) f.get();
    }
  }

  for (int p = 0; p < in.n_patterns; ++p) {
    ParamSet norm;
    norm.add("norm.mean", models[p].norm.mean);
    norm.add("norm.std", models[p].norm.stddev);
    nlohmann::json meta;
    meta["kernel"] = models[p].cfg.kernel;
    meta["channels"] = models[p].cfg.channels;
    meta["window"] = models[p].cfg.window;
    meta["per_stop_bias"] = models[p].cfg.per_stop_bias;
    meta["n_stops"] = models[p].n_stops;
    meta["seed"] = models[p].cfg.seed;
    meta["pattern"] = p;
    save_checkpoint(dir / ("pattern_" + std::to_string(p)), "gcn2flow",
                    {&models[p].params, &norm}, {"", ""}, meta);
    stats["pattern_" + std::to_string(p)] = {
        {"train_mse_raw", reports[p].train_mse_raw},
        {"train_variance_raw", reports[p].train_variance_raw},
        {"final_epoch_mse", reports[p].epoch_mse.empty() ? 0.0 : reports[p].epoch_mse.back()}};
  }
  stats["patterns"] = in.n_patterns;
  timer.finish(stats);
}

// --- predict --------------------------------------------------------------------------

inline Gcn2FlowModel load_gcn2flow(const std::filesystem::path& dir, const RunConfig& cfg,
                                   std::size_t n_stops) {
  auto ck = load_checkpoint(dir);
  if (ck.kind != "gcn2flow") throw IoError(dir.string() + ": not a gcn2flow checkpoint");
  PredictorConfig pc = cfg.predictor;
  pc.kernel = ck.meta.value("kernel", pc.kernel);
  pc.channels = ck.meta.value("channels", pc.channels);
  pc.window = ck.meta.value("window", pc.window);
  pc.per_stop_bias = ck.meta.value("per_stop_bias", pc.per_stop_bias);
  Rng rng(1);  // layout init only; weights are restored below
  Gcn2FlowModel model = Gcn2FlowModel::init(n_stops, pc, rng);
  restore_params(model.params, ck, "");
  model.norm.mean = ck.find("norm.mean");
  model.norm.stddev = ck.find("norm.std");
  return model;
}

inline void stage_predict(const PipelineContext& ctx) {
  pipedetail::StageTimer timer(ctx, "predict");
  const auto tdir = ctx.dir("train");
  pipedetail::require_artifact(tdir / "flow_pattern_0.csv");
  auto [adj, stop_ids] = read_graph_csv(ctx.dir("graphs") / "stop_network_edges.csv",
                                        ctx.dir("graphs") / "stop_network_nodes.json");
  StopNetwork network{std::move(stop_ids), std::move(adj)};
  auto prop = normalize(affinity_from_distances(network.adjacency, ctx.cfg.affinity_sigma),
                        true);

  std::vector<FlowTensor> flows;
  for (int p = 0;; ++p) {
    const auto path = tdir / ("flow_pattern_" + std::to_string(p) + ".csv");
    if (!std::filesystem::exists(path)) break;
    flows.push_back(read_flow_csv(path));
  }
  if (flows.empty()) throw IoError("no per-pattern flows under " + tdir.string());

  auto split = DaySplit::from(flows[0], ctx.cfg.predictor);
  const int day_begin = split.train_days + split.val_days;
  const int day_end = flows[0].n_days;

  std::vector<PredictionRow> rows;
  Tensor fused_pred, fused_actual;
  std::vector<std::int64_t> times;
  for (std::size_t p = 0; p < flows.size(); ++p) {
    auto model = load_gcn2flow(tdir / ("pattern_" + std::to_string(p)), ctx.cfg,
                               flows[p].values.extent(1));
    auto series = predict_range(model, prop, flows[p], day_begin, day_end);
    if (p == 0) {
      fused_pred = Tensor(series.predicted.shape());
      fused_actual = Tensor(series.actual.shape());
      times = series.times;
    }
    for (std::size_t i = 0; i < series.predicted.numel(); ++i) {
      fused_pred[i] += series.predicted[i];
      fused_actual[i] += series.actual[i];
    }
    for (std::size_t w = 0; w < series.times.size(); ++w)
      for (std::size_t s = 0; s < flows[p].stops.size(); ++s)
        rows.push_back({series.times[w], flows[p].stops[s], std::to_string(p),
                        series.predicted.at(w, s), series.actual.at(w, s)});
  }
  // Fused forecast; negatives are clamped only here, at the reporting layer.
  for (std::size_t w = 0; w < times.size(); ++w)
    for (std::size_t s = 0; s < flows[0].stops.size(); ++s)
      rows.push_back({times[w], flows[0].stops[s], "total",
                      std::max(0.0, fused_pred.at(w, s)), fused_actual.at(w, s)});
  write_predictions_csv(rows, ctx.dir("predict") / "predictions.csv");
  timer.finish({{"patterns", flows.size()},
                {"windows", times.size()},
                {"rows", rows.size()},
                {"test_days", day_end - day_begin}});
}

// --- evaluate -------------------------------------------------------------------------

inline void stage_evaluate(const PipelineContext& ctx) {
  pipedetail::StageTimer timer(ctx, "evaluate");
  pipedetail::require_artifact(ctx.dir("predict") / "predictions.csv");
  auto rows = read_predictions_csv(ctx.dir("predict") / "predictions.csv");
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_pattern;
  for (const auto& r : rows) {
    by_pattern[r.pattern].first.push_back(r.predicted);
    by_pattern[r.pattern].second.push_back(r.actual);
  }
  nlohmann::json j;
  j["format"] = "mpgcn-metrics/1";
  j["step_minutes"] = ctx.cfg.step_minutes;
  for (const auto& [pattern, series] : by_pattern) {
    MetricReport rep;
    rep.mae = mae(series.first, series.second);
    rep.rmse = rmse(series.first, series.second);
    rep.cc = cc(series.first, series.second);
    j["metrics"][pattern] = {{"mae", rep.mae},
                             {"rmse", rep.rmse},
                             {"cc", rep.cc},
                             {"n", series.first.size()}};
  }
  write_json_file(ctx.dir("evaluate") / "metrics.json", j);
  timer.finish({{"series", by_pattern.size()}});
}

// --- fit-distributions ------------------------------------------------------------------

inline void stage_fit_distributions(const PipelineContext& ctx) {
  pipedetail::StageTimer timer(ctx, "analysis");
  pipedetail::require_artifact(ctx.dir("ingest") / "profile.json");
  pipedetail::require_artifact(ctx.dir("cluster") / "labels.csv");
  auto profile = read_profile_json(ctx.dir("ingest") / "profile.json");
  auto labels = read_labels_csv(ctx.dir("cluster") / "labels.csv");
  int n_patterns = 0;
  for (const auto& [card, l] : labels) n_patterns = std::max(n_patterns, l + 1);

  auto hists = ns_histograms(profile, labels, n_patterns);
  const auto dir = ctx.dir("analysis");
  {
    CsvWriter w((dir / "ns_histograms.csv").string());
    w.raw("pattern,n_s,count");
    for (int p = 0; p < n_patterns; ++p)
      for (const auto& [x, c] : hists[p])
        w.row({std::to_string(p), std::to_string(x), format_double(c)});
    w.close();
  }

  FitConfig fc;
  fc.bins = ctx.cfg.fit_bins;
  fc.starts = ctx.cfg.fit_starts;
  nlohmann::json j;
  j["format"] = "mpgcn-fits/1";
  CsvWriter curves((dir / "fitted_curves.csv").string());
  curves.raw("pattern,family,x,pdf");
  for (int p = 0; p < n_patterns; ++p) {
    nlohmann::json pj;
    if (hists[p].empty()) {
      j["patterns"][std::to_string(p)] = pj;
      continue;
    }
    auto pts = log_binned_pdf(hists[p], fc.bins);
    for (DistFamily fam : {DistFamily::PowerLaw, DistFamily::Exponential, DistFamily::Lognormal,
                           DistFamily::Weibull}) {
      auto fit = fit_pdf(pts, fam, fc);
      nlohmann::json fj;
      fj["ssr"] = fit.ssr;
      for (const auto& [k, v] : fit.params) fj["params"][k] = v;
      pj["fits"][family_name(fam)] = fj;
      for (const auto& pt : pts)
        curves.row({std::to_string(p), family_name(fam), format_double(pt.x),
                    format_double(evaluate_pdf(fit, pt.x))});
    }
    pj["quantile_80"] = quantile_stops(hists[p], 0.8);
    j["patterns"][std::to_string(p)] = pj;
  }
  curves.close();

  auto shares = route_contribution(profile, labels, n_patterns);
  {
    CsvWriter w((dir / "route_shares.csv").string());
    std::string header = "route,total_boardings";
    for (int p = 0; p < n_patterns; ++p) header += ",pattern_" + std::to_string(p);
    w.raw(header);
    for (std::size_t r = 0; r < shares.routes.size(); ++r) {
      std::string row = shares.routes[r] + "," +
                        format_double(shares.route_totals.at(shares.routes[r]));
      for (int p = 0; p < n_patterns; ++p) row += "," + format_double(shares.shares.at(p, r));
      w.raw(row);
    }
    w.close();
  }
  for (int p = 0; p < n_patterns; ++p)
    j["route_preferences"][std::to_string(p)] = shares.preferences[p];
  write_json_file(dir / "fits.json", j);
  timer.finish({{"patterns", n_patterns}, {"routes", shares.routes.size()}});
}

// --- optimize -------------------------------------------------------------------------

inline void stage_optimize(const PipelineContext& ctx) {
  pipedetail::StageTimer timer(ctx, "optimize");
  pipedetail::require_artifact(ctx.dir("ingest") / "profile.json");
  pipedetail::require_artifact(ctx.dir("predict") / "predictions.csv");
  auto profile = read_profile_json(ctx.dir("ingest") / "profile.json");
  auto registry = parse_stop_registry((ctx.dir("synth") / "stops.csv").string());
  auto [adj, stop_ids] = read_graph_csv(ctx.dir("graphs") / "stop_network_edges.csv",
                                        ctx.dir("graphs") / "stop_network_nodes.json");
  StopNetwork network{std::move(stop_ids), std::move(adj)};

  // The last day's trips, rerouted against the first fused forecast of that day.
  std::int64_t last_day = 0;
  for (const auto& [card, boardings] : profile.passengers)
    for (const auto& b : boardings) last_day = std::max(last_day, day_of(b.time));
  PassengerStopProfile last_day_profile;
  for (const auto& [card, boardings] : profile.passengers) {
    std::vector<Boarding> kept;
    for (const auto& b : boardings)
      if (day_of(b.time) == last_day) kept.push_back(b);
    if (!kept.empty()) last_day_profile.passengers[card] = std::move(kept);
  }
  auto od = infer_od(last_day_profile, registry);

  auto rows = read_predictions_csv(ctx.dir("predict") / "predictions.csv");
  std::int64_t first_time = 0;
  for (const auto& r : rows)
    if (r.pattern == "total" && day_of(r.time) == last_day &&
        (first_time == 0 || r.time < first_time))
      first_time = r.time;
  std::vector<double> base(network.node_count(), 0.0);
  if (first_time != 0) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < network.stop_ids.size(); ++i) index[network.stop_ids[i]] = i;
    for (const auto& r : rows)
      if (r.pattern == "total" && r.time == first_time && index.count(r.stop_id))
        base[index.at(r.stop_id)] = std::max(0.0, r.predicted);
  }

  auto set = generate_candidates(network, od, base, ctx.cfg.optimizer);
  auto st = optimize_assignment(set, base, ctx.cfg.optimizer);

  const auto dir = ctx.dir("optimize");
  nlohmann::json j;
  j["format"] = "mpgcn-optimization/1";
  j["objective_before"] = st.initial_objective;
  j["objective_after"] = st.objective;
  j["sweeps"] = st.sweeps;
  j["switches"] = st.switches;
  j["eps"] = ctx.cfg.optimizer.eps;
  j["trips"] = st.choices.size();
  j["candidate_cap_hit"] = set.cap_hit;
  {
    nlohmann::json trips = nlohmann::json::array();
    for (std::size_t t = 0; t < st.choices.size(); ++t) {
      const auto& pair = set.pairs[st.trip_pair[t]];
      nlohmann::json route = nlohmann::json::array();
      for (std::size_t s : pair.routes[st.choices[t]]) route.push_back(network.stop_ids[s]);
      trips.push_back({{"origin", network.stop_ids[pair.origin]},
                       {"dest", network.stop_ids[pair.dest]},
                       {"route", route}});
    }
    j["per_trip"] = std::move(trips);
  }
  write_json_file(dir / "report.json", j);

  {
    // Before = all trips on their shortest candidates.
    std::vector<std::size_t> shortest(st.choices.size(), 0);
    auto before = recount_flow(set, st.trip_pair, shortest, network.node_count());
    CsvWriter w((dir / "flow_before_after.csv").string());
    w.raw("stop_id,flow_before,flow_after,predicted_base");
    for (std::size_t s = 0; s < network.node_count(); ++s)
      w.row({network.stop_ids[s], format_double(before[s]), format_double(st.flow[s]),
             format_double(base[s])});
    w.close();
  }
  timer.finish({{"objective_before", st.initial_objective},
                {"objective_after", st.objective},
                {"trips", st.choices.size()}});
}

// --- pipeline -------------------------------------------------------------------------

inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> stages = {
      "synth",    "ingest",   "build-graphs",      "cluster",  "train",
      "predict",  "evaluate", "fit-distributions", "optimize"};
  return stages;
}

inline void run_stage(const PipelineContext& ctx, const std::string& stage) {
  if (stage == "synth") stage_synth(ctx);
  else if (stage == "ingest") stage_ingest(ctx);
  else if (stage == "build-graphs") stage_build_graphs(ctx);
  else if (stage == "cluster") stage_cluster(ctx);
  else if (stage == "train") stage_train(ctx);
  else if (stage == "predict") stage_predict(ctx);
  else if (stage == "evaluate") stage_evaluate(ctx);
  else if (stage == "fit-distributions") stage_fit_distributions(ctx);
  else if (stage == "optimize") stage_optimize(ctx);
  else throw ConfigError("unknown stage '" + stage + "'");
}

// Runs every stage in order, optionally starting midway (earlier artifacts
// must already exist under the output directory).
inline void run_pipeline(const PipelineContext& ctx, const std::string& from = "") {
  const auto& stages = pipeline_stages();
  std::size_t begin = 0;
  if (!from.empty()) {
    while (begin < stages.size() && stages[begin] != from) ++begin;
    if (begin == stages.size()) throw ConfigError("unknown stage '" + from + "' for --from");
  }
  for (std::size_t i = begin; i < stages.size(); ++i) run_stage(ctx, stages[i]);
}

}  // namespace mpgcn
