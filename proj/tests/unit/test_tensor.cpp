#include <catch2/catch_amalgamated.hpp>

#include "mpgcn/tensor.hpp"

using mpgcn::Rng;
using mpgcn::Shape;
using mpgcn::ShapeError;
using mpgcn::Tensor;

TEST_CASE("tensor shape and data length agree", "[tensor]") {
  Tensor t({2, 3});
  REQUIRE(t.numel() == 6);
  REQUIRE(t.rows() == 2);
  REQUIRE(t.cols() == 3);
  REQUIRE_THROWS_AS(Tensor({2, 3}, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("tensor reshape preserves elements", "[tensor]") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped({3, 2});
  REQUIRE(r.at(0, 0) == 1);
  REQUIRE(r.at(2, 1) == 6);
  REQUIRE_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("random tensors are deterministic under seed", "[tensor]") {
  Rng a(42), b(42);
  Tensor ta = Tensor::random_normal({4, 5}, a);
  Tensor tb = Tensor::random_normal({4, 5}, b);
  REQUIRE(mpgcn::max_abs_diff(ta, tb) == 0.0);
  REQUIRE(ta.all_finite());
}

TEST_CASE("scalar tensor", "[tensor]") {
  Tensor s = Tensor::scalar(2.5);
  REQUIRE(s.numel() == 1);
  REQUIRE(s[0] == 2.5);
}
