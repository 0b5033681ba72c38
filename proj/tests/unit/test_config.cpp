#include <catch2/catch_amalgamated.hpp>

#include "mpgcn/config.hpp"

using namespace mpgcn;

TEST_CASE("toml subset parses scalars, arrays, and sections", "[config]") {
  auto t = parse_toml(
      "top = 1\n"
      "[run]\n"
      "seed = 99   # comment\n"
      "jobs = 2\n"
      "[clustering]\n"
      "theta = [1.0, 0.5, 0.05]\n"
      "widths = [100, 100, 500, 16]\n"
      "name = \"desk run\"\n"
      "flag = true\n"
      "[synth]\n"
      "route_preference = [[0.8, 0.2], [0.2, 0.8]]\n");
  REQUIRE(t.get_int("top", 0) == 1);
  REQUIRE(t.get_int("run.seed", 0) == 99);
  REQUIRE(t.get_double_array("clustering.theta") == std::vector<double>{1.0, 0.5, 0.05});
  REQUIRE(t.get_int_array("clustering.widths") == std::vector<int>{100, 100, 500, 16});
  REQUIRE(t.get_string("clustering.name", "") == "desk run");
  REQUIRE(t.get_bool("clustering.flag", false));
  auto m = t.get_matrix("synth.route_preference");
  REQUIRE(m.size() == 2);
  REQUIRE(m[0] == std::vector<double>{0.8, 0.2});
  REQUIRE_THROWS_AS(parse_toml("no_equals_here\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_toml("x = [1, 2\n"), ConfigError);
}

TEST_CASE("defaults carry the stated hyperparameters", "[config]") {
  auto c = load_run_config("");
  REQUIRE(c.tau == 20);
  REQUIRE(c.cluster.alpha == 0.5);
  REQUIRE(c.cluster.theta1 == 1.0);
  REQUIRE(c.cluster.theta2 == 0.5);
  REQUIRE(c.cluster.theta3 == 0.05);
  REQUIRE(c.cluster.learning_rate == 0.001);
  REQUIRE(c.cluster.epochs == 100);
  REQUIRE(c.cluster.k == 4);
  REQUIRE(c.cluster.widths == std::vector<std::size_t>{100, 100, 500, 16});
  REQUIRE(c.predictor.learning_rate == 0.001);
  REQUIRE(c.predictor.epochs == 100);
  REQUIRE(c.predictor.batch_size == 64);
  REQUIRE(c.predictor.kernel == 3);
  REQUIRE(c.predictor.window == 12);
  REQUIRE(c.optimizer.eps == 5);
  REQUIRE(c.step_minutes == 5);
}

TEST_CASE("config validation reports violations", "[config]") {
  auto t = parse_toml("[ingest]\nstep_minutes = 7\n");
  REQUIRE_THROWS_AS(run_config_from_toml(t), ConfigError);
  auto t2 = parse_toml("[predictor]\nwindow = 8\n");
  REQUIRE_THROWS_AS(run_config_from_toml(t2), ConfigError);
  auto t3 = parse_toml("[clustering]\nalpha = 1.5\n");
  REQUIRE_THROWS_AS(run_config_from_toml(t3), ConfigError);
}

TEST_CASE("config hash is stable and sensitive", "[config]") {
  auto a = load_run_config("");
  auto b = load_run_config("");
  REQUIRE(config_hash(a) == config_hash(b));
  b.cluster.k = 5;
  REQUIRE(config_hash(a) != config_hash(b));
}

TEST_CASE("toml overrides land in the run config", "[config]") {
  auto t = parse_toml(
      "[run]\nseed = 7\n"
      "[clustering]\nk = 3\nwidths = [32, 16]\n"
      "[predictor]\nchannels = 16\nepochs = 40\n"
      "[synth]\nn_stops = 20\nn_passengers = 100\nn_patterns = 2\n");
  auto c = run_config_from_toml(t);
  REQUIRE(c.seed == 7);
  REQUIRE(c.cluster.k == 3);
  REQUIRE(c.cluster.widths == std::vector<std::size_t>{32, 16});
  REQUIRE(c.predictor.channels == 16);
  REQUIRE(c.city.n_stops == 20);
  // named sub-seeds flow from the root seed
  REQUIRE(c.cluster.seed == sub_seed(7, "clustering"));
  REQUIRE(c.predictor.seed == sub_seed(7, "predictor"));
}
