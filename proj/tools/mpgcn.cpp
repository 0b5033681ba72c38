// Command-line front end for the MPGCN pipeline: synthetic-city generation,
// ingest, graph construction, clustering, per-pattern flow prediction,
// evaluation, distribution fitting, and route optimization.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "mpgcn/pipeline.hpp"

namespace {

void apply_seed_override(mpgcn::RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.city.seed = mpgcn::sub_seed(seed, "synth");
  cfg.cluster.seed = mpgcn::sub_seed(seed, "clustering");
  cfg.predictor.seed = mpgcn::sub_seed(seed, "predictor");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MPGCN: multi-pattern bus passenger flow pipeline"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::string out_dir = "out";
  std::string from_stage;
  std::uint64_t seed = 0;
  int jobs = 0;

  app.add_option("--config", config_path, "TOML run configuration")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (default: out)");
  app.add_option("--jobs", jobs, "parallel per-pattern trainings");
  auto* seed_opt = app.add_option("--seed", seed, "root seed override");

  for (const auto& stage : mpgcn::pipeline_stages())
    app.add_subcommand(stage, "run the " + stage + " stage");
  auto* pipeline = app.add_subcommand("pipeline", "run every stage in order");
  pipeline->add_option("--from", from_stage,
                       "start from this stage, reusing earlier artifacts");

  CLI11_PARSE(app, argc, argv);

  try {
    mpgcn::PipelineContext ctx;
    ctx.cfg = mpgcn::load_run_config(config_path);
    if (seed_opt->count() > 0) apply_seed_override(ctx.cfg, seed);
    if (jobs > 0) ctx.cfg.jobs = jobs;
    ctx.cfg.validate();
    ctx.out = out_dir;

    const auto* sub = app.get_subcommands().front();
    if (sub->get_name() == "pipeline") {
      mpgcn::run_pipeline(ctx, from_stage);
    } else {
      mpgcn::run_stage(ctx, sub->get_name());
    }
    return 0;
  } catch (const mpgcn::ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  }
}
