#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "diffcal/errors.hpp"
#include "diffcal/pipeline.hpp"

namespace {

int run(const diffcal::PipelineConfig& config, const std::string& stage) {
  if (!stage.empty()) {
    diffcal::run_stage(config, stage);
    std::printf("stage %s complete (out: %s)\n", stage.c_str(),
                config.out_dir.c_str());
    return 0;
  }
  for (const auto& name : diffcal::pipeline_stage_names()) {
    diffcal::run_stage(config, name);
    std::printf("stage %s complete\n", name.c_str());
  }
  std::printf("pipeline complete (out: %s)\n", config.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Question-difficulty calibration and rewriting pipeline"};

  std::string config_path, stage, out_dir;
  std::uint64_t seed = 0;
  bool mock = false;

  app.add_option("--config", config_path, "pipeline config file (JSON)")
      ->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "global seed override");
  auto* stage_opt =
      app.add_option("--stage", stage,
                     "run a single stage: collect, matrix, augment, irt-fit, "
                     "embed, ranker-train, reward-score, gspo-toy, eval");
  app.add_flag("--mock", mock, "force mock backends (no network)");
  auto* out_opt = app.add_option("--out", out_dir, "output directory override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    diffcal::PipelineConfig config =
        config_path.empty() ? diffcal::default_pipeline_config()
                            : diffcal::load_pipeline_config(config_path);
    if (seed_opt->count() > 0) config.seed = seed;
    if (mock) config.mock = true;
    if (out_opt->count() > 0) config.out_dir = out_dir;
    config.validate();
    return run(config, stage_opt->count() > 0 ? stage : std::string());
  } catch (const diffcal::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const diffcal::DependencyError& e) {
    std::fprintf(stderr, "dependency error: %s\n", e.what());
    return 3;
  } catch (const diffcal::BackendError& e) {
    std::fprintf(stderr, "backend error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
