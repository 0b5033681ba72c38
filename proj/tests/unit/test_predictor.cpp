#include <catch2/catch_amalgamated.hpp>

#include "mpgcn/predictor.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace mpgcn;

namespace {

// Explicit sliding-window evaluation of the gated temporal convolution.
Tensor tc_oracle(const TcBlockParams& p, const Tensor& x) {
  const std::size_t t = x.extent(0), S = x.extent(1), ci = x.extent(2);
  const std::size_t k = p.w0.extent(0), co = p.w0.extent(2);
  auto conv = [&](const Tensor& w, const Tensor& b) {
    Tensor out({t - k + 1, S, co});
    for (std::size_t tau = 0; tau + k <= t; ++tau)
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t o = 0; o < co; ++o) {
          double acc = 0.0;
          for (std::size_t kk = 0; kk < k; ++kk)
            for (std::size_t i = 0; i < ci; ++i)
              acc += x[((tau + kk) * S + s) * ci + i] * w[(kk * ci + i) * co + o];
          acc += b.rank() == 2 ? b.at(s, o) : b[o];
          out[(tau * S + s) * co + o] = acc;
        }
    return out;
  };
  Tensor c0 = conv(p.w0, p.b0), c1 = conv(p.w1, p.b1), c2 = conv(p.w2, p.b2);
  Tensor out(c0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double gate = 1.0 / (1.0 + std::exp(-c1[i]));
    out[i] = std::max(0.0, c0[i] * gate + c2[i]);
  }
  return out;
}

TcBlockParams random_tc(std::size_t k, std::size_t s, std::size_t ci, std::size_t co, Rng& rng,
                        bool per_stop = true) {
  TcBlockParams p;
  p.w0 = Tensor::random_normal({k, ci, co}, rng, 0.0, 0.5);
  p.w1 = Tensor::random_normal({k, ci, co}, rng, 0.0, 0.5);
  p.w2 = Tensor::random_normal({k, ci, co}, rng, 0.0, 0.5);
  Shape bs = per_stop ? Shape{s, co} : Shape{co};
  p.b0 = Tensor::random_normal(bs, rng, 0.0, 0.3);
  p.b1 = Tensor::random_normal(bs, rng, 0.0, 0.3);
  p.b2 = Tensor::random_normal(bs, rng, 0.0, 0.3);
  return p;
}

}  // namespace

TEST_CASE("zscore handles constant and simple columns", "[predictor]") {
  FlowTensor flow;
  flow.step_minutes = 5;
  flow.n_days = 1;
  flow.stops = {"A", "B"};
  flow.values = Tensor({2, 2}, {5.0, 0.0, 5.0, 2.0});
  auto [norm, st] = zscore_fit_apply(flow, 0, 2);
  REQUIRE(st.mean[0] == 5.0);
  REQUIRE(st.stddev[0] == 1.0);  // zero-spread guard
  REQUIRE(norm.values.at(0, 0) == 0.0);
  REQUIRE(norm.values.at(1, 0) == 0.0);
  REQUIRE(st.mean[1] == 1.0);
  REQUIRE(st.stddev[1] == 1.0);
  REQUIRE(norm.values.at(0, 1) == -1.0);
  REQUIRE(norm.values.at(1, 1) == 1.0);
}

TEST_CASE("zscore round trip is exact", "[predictor]") {
  Rng rng(41);
  FlowTensor flow;
  flow.step_minutes = 5;
  flow.n_days = 1;
  flow.stops = {"A", "B", "C"};
  flow.values = Tensor::random_uniform({40, 3}, rng, 0.0, 50.0);
  auto [norm, st] = zscore_fit_apply(flow, 0, 30);
  for (std::size_t t = 0; t < 40; ++t)
    for (std::size_t s = 0; s < 3; ++s) {
      const double back = unnormalize_value(norm.values.at(t, s), st, s);
      REQUIRE(back == Catch::Approx(flow.values.at(t, s)).margin(1e-12));
    }
}

TEST_CASE("tc block matches the sliding-window oracle", "[predictor]") {
  Rng rng(42);
  for (bool per_stop : {true, false}) {
    auto p = random_tc(3, 2, 1, 2, rng, per_stop);
    Tensor x = Tensor::random_normal({6, 2, 1}, rng);
    Tensor got = tc_forward(p, x);
    REQUIRE(got.shape() == Shape{4, 2, 2});
    REQUIRE(mpgcn::max_abs_diff(got, tc_oracle(p, x)) < 1e-12);
  }
}

TEST_CASE("tc gate saturation reduces to relu of sum", "[predictor]") {
  Rng rng(43);
  auto p = random_tc(3, 2, 1, 2, rng);
  // Push branch 1 into sigmoid saturation: huge bias, zero weights.
  for (std::size_t i = 0; i < p.b1.numel(); ++i) p.b1[i] = 1e4;
  for (std::size_t i = 0; i < p.w1.numel(); ++i) p.w1[i] = 0.0;
  Tensor x = Tensor::random_normal({5, 2, 1}, rng);
  Tensor got = tc_forward(p, x);

  const std::size_t t = 5, S = 2, ci = 1, k = 3, co = 2;
  Tensor expect({t - k + 1, S, co});
  for (std::size_t tau = 0; tau + k <= t; ++tau)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t o = 0; o < co; ++o) {
        double a0 = 0.0, a2 = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk)
          for (std::size_t i = 0; i < ci; ++i) {
            a0 += x[((tau + kk) * S + s) * ci + i] * p.w0[(kk * ci + i) * co + o];
            a2 += x[((tau + kk) * S + s) * ci + i] * p.w2[(kk * ci + i) * co + o];
          }
        a0 += p.b0.at(s, o);
        a2 += p.b2.at(s, o);
        expect[(tau * S + s) * co + o] = std::max(0.0, a0 + a2);
      }
  REQUIRE(mpgcn::max_abs_diff(got, expect) < 1e-9);
}

TEST_CASE("tc with zero parameters gives a zero output of shrunken shape", "[predictor]") {
  TcBlockParams p;
  p.w0 = p.w1 = p.w2 = Tensor({3, 1, 2});
  p.b0 = p.b1 = p.b2 = Tensor({4, 2});
  Tensor x = Tensor({7, 4, 1}, 1.0);
  Tensor got = tc_forward(p, x);
  REQUIRE(got.shape() == Shape{5, 4, 2});
  for (std::size_t i = 0; i < got.numel(); ++i) REQUIRE(got[i] == 0.0);
}

TEST_CASE("tc below kernel length raises a shape error", "[predictor]") {
  Rng rng(44);
  auto p = random_tc(3, 2, 1, 1, rng);
  REQUIRE_THROWS_AS(tc_forward(p, Tensor({2, 2, 1})), ShapeError);
}

TEST_CASE("sgc block degenerate and oracle cases", "[predictor]") {
  Rng rng(45);

  SECTION("identity propagation is pure channel mixing") {
    auto prop = normalize(SparseMatrix::from_triplets(3, 3, {}));  // edgeless -> identity
    SgcBlockParams p{Tensor::random_normal({2, 4}, rng)};
    Tensor x = Tensor::random_normal({5, 3, 2}, rng);
    Tensor got = sgc_forward(p, {prop.matrix}, x);
    REQUIRE(got.shape() == Shape{5, 3, 4});
    for (std::size_t tau = 0; tau < 5; ++tau)
      for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t o = 0; o < 4; ++o) {
          double acc = 0.0;
          for (std::size_t i = 0; i < 2; ++i) acc += x[(tau * 3 + s) * 2 + i] * p.w.at(i, o);
          REQUIRE(got[(tau * 3 + s) * 4 + o] == Catch::Approx(acc).margin(1e-12));
        }
  }
  SECTION("identity weights are pure neighborhood smoothing") {
    auto prop = fixtures::line_propagation(4);
    SgcBlockParams p{Tensor({2, 2}, {1, 0, 0, 1})};
    Tensor x = Tensor::random_normal({3, 4, 2}, rng);
    Tensor got = sgc_forward(p, prop, x);
    Tensor pd = prop.matrix.densify();
    for (std::size_t tau = 0; tau < 3; ++tau)
      for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t c = 0; c < 2; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < 4; ++j) acc += pd.at(s, j) * x[(tau * 4 + j) * 2 + c];
          REQUIRE(got[(tau * 4 + s) * 2 + c] == Catch::Approx(acc).margin(1e-12));
        }
  }
  SECTION("random instance matches the dense per-step formula") {
    auto prop = fixtures::line_propagation(5);
    SgcBlockParams p{Tensor::random_normal({3, 2}, rng)};
    Tensor x = Tensor::random_normal({4, 5, 3}, rng);
    Tensor got = sgc_forward(p, prop, x);
    Tensor pd = prop.matrix.densify();
    for (std::size_t tau = 0; tau < 4; ++tau) {
      Tensor slab({5, 3});
      for (std::size_t s = 0; s < 5; ++s)
        for (std::size_t c = 0; c < 3; ++c) slab.at(s, c) = x[(tau * 5 + s) * 3 + c];
      Tensor expect = oracles::matmul_triple_loop(oracles::matmul_triple_loop(pd, slab), p.w);
      for (std::size_t s = 0; s < 5; ++s)
        for (std::size_t o = 0; o < 2; ++o)
          REQUIRE(got[(tau * 5 + s) * 2 + o] == Catch::Approx(expect.at(s, o)).margin(1e-12));
    }
  }
}

TEST_CASE("gcn2flow shape arithmetic and zero case", "[predictor]") {
  Rng rng(46);
  PredictorConfig cfg;
  cfg.channels = 3;
  cfg.window = 12;

  SECTION("t=12 leaves two head steps and one output row") {
    auto m = Gcn2FlowModel::init(4, cfg, rng);
    REQUIRE(cfg.head_steps() == 2);
    auto prop = fixtures::line_propagation(4);
    Tensor win = Tensor::random_normal({12, 4, 1}, rng);
    Tensor out = gcn2flow_forward(m, prop, win);
    REQUIRE(out.shape() == Shape{1, 4});
  }
  SECTION("window shorter than the stack needs raises") {
    PredictorConfig bad = cfg;
    bad.window = 10;
    REQUIRE_THROWS_AS(Gcn2FlowModel::init(4, bad, rng), ConfigError);
  }
  SECTION("all-zero window with fresh (zero-bias) model predicts zero") {
    auto m = Gcn2FlowModel::init(3, cfg, rng);
    auto prop = fixtures::line_propagation(3);
    Tensor out = gcn2flow_forward(m, prop, Tensor({12, 3, 1}));
    for (std::size_t i = 0; i < out.numel(); ++i) REQUIRE(out[i] == 0.0);
  }
}

TEST_CASE("gcn2flow forward equals block-by-block composition", "[predictor]") {
  Rng rng(47);
  PredictorConfig cfg;
  cfg.channels = 2;
  cfg.window = 12;
  auto m = Gcn2FlowModel::init(4, cfg, rng);
  for (std::size_t i = 0; i < m.params.size(); ++i)
    if (m.params.name(i).find(".b") != std::string::npos)
      m.params.tensor(i) = Tensor::random_normal(m.params.tensor(i).shape(), rng, 0.0, 0.2);
  auto prop = fixtures::line_propagation(4);
  Tensor win = Tensor::random_normal({12, 4, 1}, rng);

  auto tc_of = [&](const std::string& name) {
    TcBlockParams p;
    p.w0 = *m.params.find(name + ".w0");
    p.w1 = *m.params.find(name + ".w1");
    p.w2 = *m.params.find(name + ".w2");
    p.b0 = *m.params.find(name + ".b0");
    p.b1 = *m.params.find(name + ".b1");
    p.b2 = *m.params.find(name + ".b2");
    return p;
  };
  auto relu3 = [](Tensor v) {
    for (std::size_t i = 0; i < v.numel(); ++i) v[i] = std::max(0.0, v[i]);
    return v;
  };
  Tensor h = tc_oracle(tc_of("tc1"), win);
  h = relu3(sgc_forward({*m.params.find("sgc1.w")}, prop, h));
  h = tc_oracle(tc_of("tc2"), h);
  h = tc_oracle(tc_of("tc3"), h);
  h = relu3(sgc_forward({*m.params.find("sgc2.w")}, prop, h));
  h = tc_oracle(tc_of("tc4"), h);
  h = tc_oracle(tc_of("tc5"), h);
  const Tensor& fw = *m.params.find("fc.w");
  const Tensor& fb = *m.params.find("fc.b");
  Tensor expect({1, 4});
  for (std::size_t s = 0; s < 4; ++s) {
    double acc = fb[s];
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t c = 0; c < 2; ++c) acc += h[(j * 4 + s) * 2 + c] * fw[j * 2 + c];
    expect.at(0, s) = acc;
  }
  Tensor got = gcn2flow_forward(m, prop, win);
  REQUIRE(mpgcn::max_abs_diff(got, expect) < 1e-12);
}

TEST_CASE("gcn2flow full-model gradient matches finite differences", "[predictor]") {
  Rng rng(48);
  PredictorConfig cfg;
  cfg.channels = 2;
  cfg.window = 12;
  auto m = Gcn2FlowModel::init(3, cfg, rng);
  for (std::size_t i = 0; i < m.params.size(); ++i)
    if (m.params.name(i).find(".b") != std::string::npos)
      m.params.tensor(i) = Tensor::random_normal(m.params.tensor(i).shape(), rng, 0.0, 0.2);
  auto prop = fixtures::line_propagation(3);
  Tensor win = Tensor::random_normal({12, 3, 1}, rng);
  Tensor target = Tensor::random_normal({1, 3}, rng);

  std::vector<Tensor> params;
  for (std::size_t i = 0; i < m.params.size(); ++i) params.push_back(m.params.tensor(i));
  auto builder = [&](Tape& t, const std::vector<Tape::NodeId>& ids) {
    auto conv = graphnodes::build_conv_stack(t, m, ids, t.constant(win), prop.matrix);
    auto pred = graphnodes::build_head(t, m, ids, conv, 0, 1);
    return t.mean(t.square(t.sub(pred, t.constant(target))));
  };
  double worst = 0.0;
  bool ok = oracles::check_gradients(builder, params, 1e-4, &worst);
  INFO("worst rel err " << worst);
  REQUIRE(ok);
}

TEST_CASE("training fits constant flow immediately", "[predictor]") {
  FlowTensor flow;
  flow.step_minutes = 30;
  flow.start_day = 18200;
  flow.n_days = 4;
  flow.stops = {"L100", "L101"};
  const int spd = flow.slots_per_day();
  flow.values = Tensor({static_cast<std::size_t>(4 * spd), 2}, 7.0);
  auto prop = fixtures::line_propagation(2);
  PredictorConfig cfg;
  cfg.channels = 2;
  cfg.window = 12;
  cfg.epochs = 50;
  cfg.val_days = 1;
  cfg.test_days = 1;
  auto [model, report] = train_gcn2flow(flow, prop, cfg);
  REQUIRE(report.epoch_mse.back() < 1e-6);
  REQUIRE(report.train_mse_raw < 1e-6);
}

TEST_CASE("training learns a sinusoid trend (reduced fixture)", "[predictor]") {
  auto flow = fixtures::sinusoid_flow(4, 2, 30, 99);
  auto prop = fixtures::line_propagation(2);
  PredictorConfig cfg;
  cfg.channels = 8;
  cfg.window = 12;
  cfg.epochs = 150;
  cfg.val_days = 1;
  cfg.test_days = 1;
  auto [model, report] = train_gcn2flow(flow, prop, cfg);
  REQUIRE(report.train_mse_raw <= 0.10 * report.train_variance_raw);
}

TEST_CASE("training is bit-deterministic under a fixed seed", "[predictor]") {
  auto flow = fixtures::sinusoid_flow(3, 2, 30, 7);
  auto prop = fixtures::line_propagation(2);
  PredictorConfig cfg;
  cfg.channels = 3;
  cfg.window = 12;
  cfg.epochs = 5;
  cfg.val_days = 1;
  cfg.test_days = 1;
  cfg.seed = 31;
  auto [m1, r1] = train_gcn2flow(flow, prop, cfg);
  auto [m2, r2] = train_gcn2flow(flow, prop, cfg);
  for (std::size_t i = 0; i < m1.params.size(); ++i)
    REQUIRE(mpgcn::max_abs_diff(m1.params.tensor(i), m2.params.tensor(i)) == 0.0);
  REQUIRE(r1.epoch_mse == r2.epoch_mse);
}

TEST_CASE("fusion is the exact element-wise sum of per-pattern predictions", "[predictor]") {
  auto f1 = fixtures::sinusoid_flow(3, 2, 30, 11);
  auto f2 = fixtures::sinusoid_flow(3, 2, 30, 12);
  auto prop = fixtures::line_propagation(2);
  PredictorConfig cfg;
  cfg.channels = 3;
  cfg.window = 12;
  cfg.epochs = 4;
  cfg.val_days = 1;
  cfg.test_days = 1;
  auto res = mpgcn_predict({f1, f2}, prop, cfg);
  REQUIRE(res.per_pattern.size() == 2);
  for (std::size_t i = 0; i < res.fused.predicted.numel(); ++i) {
    REQUIRE(res.fused.predicted[i] ==
            res.per_pattern[0].predicted[i] + res.per_pattern[1].predicted[i]);
    REQUIRE(res.fused.actual[i] == res.per_pattern[0].actual[i] + res.per_pattern[1].actual[i]);
  }
}

TEST_CASE("single pattern fusion equals the plain model output", "[predictor]") {
  auto f = fixtures::sinusoid_flow(3, 2, 30, 13);
  auto prop = fixtures::line_propagation(2);
  PredictorConfig cfg;
  cfg.channels = 3;
  cfg.window = 12;
  cfg.epochs = 4;
  cfg.val_days = 1;
  cfg.test_days = 1;
  auto res = mpgcn_predict({f}, prop, cfg);
  REQUIRE(mpgcn::max_abs_diff(res.fused.predicted, res.per_pattern[0].predicted) == 0.0);

  PredictorConfig pc = cfg;
  pc.seed = sub_seed(cfg.seed, "pattern-0");
  auto [model, report] = train_gcn2flow(f, prop, pc);
  auto series = predict_range(model, prop, f, 2, 3);
  REQUIRE(mpgcn::max_abs_diff(series.predicted, res.fused.predicted) == 0.0);
}

TEST_CASE("misaligned pattern tensors raise a contract error", "[predictor]") {
  auto f1 = fixtures::sinusoid_flow(3, 2, 30, 14);
  auto f2 = fixtures::sinusoid_flow(3, 3, 30, 15);
  auto prop = fixtures::line_propagation(2);
  PredictorConfig cfg;
  cfg.window = 12;
  REQUIRE_THROWS_AS(mpgcn_predict({f1, f2}, prop, cfg), ContractError);
}
