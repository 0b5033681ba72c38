#include <catch2/catch_amalgamated.hpp>

#include "mpgcn/tape.hpp"
#include "support/oracles.hpp"

using mpgcn::Rng;
using mpgcn::SparseMatrix;
using mpgcn::Tape;
using mpgcn::Tensor;

TEST_CASE("matmul identity and hand case", "[autodiff]") {
  Tape t;
  auto eye = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  auto m = t.constant(Tensor({2, 2}, {3, 4, 5, 6}));
  REQUIRE(mpgcn::max_abs_diff(t.value(t.matmul(eye, m)), Tensor({2, 2}, {3, 4, 5, 6})) == 0.0);

  auto a = t.constant(Tensor({1, 2}, {1, 2}));
  auto b = t.constant(Tensor({2, 1}, {3, 4}));
  REQUIRE(t.value(t.matmul(a, b))[0] == 11.0);
}

TEST_CASE("matmul matches triple-loop oracle", "[autodiff]") {
  Rng rng(11);
  Tensor a = Tensor::random_normal({5, 4}, rng);
  Tensor b = Tensor::random_normal({4, 3}, rng);
  Tape t;
  auto out = t.matmul(t.constant(a), t.constant(b));
  REQUIRE(mpgcn::max_abs_diff(t.value(out), oracles::matmul_triple_loop(a, b)) < 1e-12);
}

TEST_CASE("matmul dimension mismatch raises", "[autodiff]") {
  Tape t;
  auto a = t.constant(Tensor({2, 3}));
  auto b = t.constant(Tensor({2, 3}));
  REQUIRE_THROWS_AS(t.matmul(a, b), mpgcn::ShapeError);
}

TEST_CASE("backward of sum is all-ones", "[autodiff]") {
  Tape t;
  auto w = t.parameter(Tensor({2, 2}, {1, -2, 3, 4}));
  t.backward(t.sum(w));
  REQUIRE(mpgcn::max_abs_diff(t.grad(w), Tensor::ones({2, 2})) == 0.0);
}

TEST_CASE("backward of half squared norm is the tensor itself", "[autodiff]") {
  Rng rng(12);
  Tensor w0 = Tensor::random_normal({3, 2}, rng);
  Tape t;
  auto w = t.parameter(w0);
  t.backward(t.scale(t.sum(t.square(w)), 0.5));
  REQUIRE(mpgcn::max_abs_diff(t.grad(w), w0) < 1e-12);
}

TEST_CASE("backward requires scalar loss", "[autodiff]") {
  Tape t;
  auto w = t.parameter(Tensor({2, 2}, 1.0));
  auto y = t.square(w);
  REQUIRE_THROWS_AS(t.backward(y), mpgcn::ContractError);
}

TEST_CASE("per-primitive gradients match finite differences", "[autodiff]") {
  Rng rng(13);
  double worst = 0.0;

  SECTION("matmul") {
    std::vector<Tensor> ps{Tensor::random_normal({3, 4}, rng), Tensor::random_normal({4, 2}, rng)};
    REQUIRE(oracles::check_gradients(
        [](Tape& t, const std::vector<Tape::NodeId>& p) { return t.sum(t.matmul(p[0], p[1])); },
        ps, 1e-4, &worst));
  }
  SECTION("spmm") {
    auto s = SparseMatrix::from_triplets(3, 3, {{0, 1, 2.0}, {1, 0, -1.5}, {2, 2, 0.7}});
    std::vector<Tensor> ps{Tensor::random_normal({3, 2}, rng)};
    REQUIRE(oracles::check_gradients(
        [&s](Tape& t, const std::vector<Tape::NodeId>& p) { return t.sum(t.spmm(s, p[0])); }, ps,
        1e-4, &worst));
  }
  SECTION("add sub mul scale add_scalar") {
    std::vector<Tensor> ps{Tensor::random_normal({2, 3}, rng), Tensor::random_normal({2, 3}, rng)};
    REQUIRE(oracles::check_gradients(
        [](Tape& t, const std::vector<Tape::NodeId>& p) {
          auto x = t.mul(t.add(p[0], p[1]), t.sub(p[0], p[1]));
          return t.sum(t.add_scalar(t.scale(x, 0.3), 0.7));
        },
        ps, 1e-4, &worst));
  }
  SECTION("bias_add trailing broadcast") {
    std::vector<Tensor> ps{Tensor::random_normal({4, 2, 3}, rng),
                           Tensor::random_normal({2, 3}, rng)};
    REQUIRE(oracles::check_gradients(
        [](Tape& t, const std::vector<Tape::NodeId>& p) {
          return t.sum(t.square(t.bias_add(p[0], p[1])));
        },
        ps, 1e-4, &worst));
  }
  SECTION("relu away from kink") {
    Tensor x = Tensor::random_normal({3, 3}, rng);
    for (std::size_t i = 0; i < x.numel(); ++i)
      if (std::abs(x[i]) < 1e-3) x[i] = 0.5;  // keep clear of the nondifferentiable point
    REQUIRE(oracles::check_gradients(
        [](Tape& t, const std::vector<Tape::NodeId>& p) { return t.sum(t.square(t.relu(p[0]))); },
        {x}, 1e-4, &worst));
  }
  SECTION("sigmoid log square") {
    std::vector<Tensor> ps{Tensor::random_normal({2, 4}, rng)};
    REQUIRE(oracles::check_gradients(
        [](Tape& t, const std::vector<Tape::NodeId>& p) {
          auto pos = t.add_scalar(t.square(p[0]), 1.0);  // strictly positive for log
          return t.sum(t.mul(t.log(pos), t.sigmoid(p[0])));
        },
        ps, 1e-4, &worst));
  }
  SECTION("softmax_rows") {
    std::vector<Tensor> ps{Tensor::random_normal({3, 4}, rng)};
    REQUIRE(oracles::check_gradients(
        [](Tape& t, const std::vector<Tape::NodeId>& p) {
          return t.sum(t.square(t.softmax_rows(p[0])));
        },
        ps, 1e-4, &worst));
  }
  SECTION("mean slice concat reshape") {
    std::vector<Tensor> ps{Tensor::random_normal({5, 3}, rng), Tensor::random_normal({2, 3}, rng)};
    REQUIRE(oracles::check_gradients(
        [](Tape& t, const std::vector<Tape::NodeId>& p) {
          auto head = t.slice_lead(p[0], 0, 2);
          auto cat = t.concat_lead({head, p[1], t.slice_lead(p[0], 3, 5)});
          return t.mean(t.square(t.reshape(cat, {3, 6})));
        },
        ps, 1e-4, &worst));
  }
  SECTION("conv_time") {
    std::vector<Tensor> ps{Tensor::random_normal({6, 2, 2}, rng),
                           Tensor::random_normal({3, 2, 3}, rng)};
    REQUIRE(oracles::check_gradients(
        [](Tape& t, const std::vector<Tape::NodeId>& p) {
          return t.sum(t.square(t.conv_time(p[0], p[1])));
        },
        ps, 1e-4, &worst));
  }
}

TEST_CASE("composite graphs of depth <= 6 match finite differences on 20 seeds", "[autodiff]") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    std::vector<Tensor> ps{Tensor::random_normal({4, 3}, rng), Tensor::random_normal({3, 3}, rng),
                           Tensor::random_normal({3}, rng)};
    double worst = 0.0;
    bool ok = oracles::check_gradients(
        [](Tape& t, const std::vector<Tape::NodeId>& p) {
          auto h1 = t.relu(t.add_scalar(t.bias_add(t.matmul(p[0], p[1]), p[2]), 0.05));
          auto h2 = t.softmax_rows(h1);
          auto h3 = t.log(t.add_scalar(h2, 0.1));
          auto h4 = t.mul(h3, t.sigmoid(h1));
          return t.mean(t.square(h4));
        },
        ps, 1e-4, &worst);
    INFO("seed " << seed << " worst rel err " << worst);
    REQUIRE(ok);
  }
}

TEST_CASE("clamp_min composition behaves like max", "[autodiff]") {
  Tape t;
  auto x = t.constant(Tensor({1, 3}, {-1.0, 1e-40, 0.5}));
  auto c = mpgcn::clamp_min(t, x, 1e-30);
  REQUIRE(t.value(c)[0] == 1e-30);
  REQUIRE(t.value(c)[1] == Catch::Approx(1e-30).margin(1e-31));
  REQUIRE(t.value(c)[2] == 0.5);
}

TEST_CASE("tape forward is deterministic and repeatable", "[autodiff]") {
  Rng r1(77), r2(77);
  Tensor a1 = Tensor::random_normal({6, 6}, r1);
  Tensor a2 = Tensor::random_normal({6, 6}, r2);
  Tape t1, t2;
  auto o1 = t1.softmax_rows(t1.matmul(t1.constant(a1), t1.constant(a1)));
  auto o2 = t2.softmax_rows(t2.matmul(t2.constant(a2), t2.constant(a2)));
  REQUIRE(mpgcn::max_abs_diff(t1.value(o1), t2.value(o2)) == 0.0);
}
