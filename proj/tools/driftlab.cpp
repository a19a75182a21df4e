#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "driftlab/config.hpp"
#include "driftlab/error.hpp"
#include "driftlab/experiment.hpp"
#include "driftlab/verify.hpp"

namespace {

using namespace driftlab;

int run_command(const std::string& experiment, const std::string& config_path, const std::string& seeds,
                std::optional<std::size_t> jobs, const std::string& data_dir, const std::string& out, bool assert_checks) {
  ConfigOverrides overrides;
  overrides.experiment = experiment;
  if (!seeds.empty()) overrides.seeds = parse_seed_list(seeds);
  overrides.jobs = jobs;
  if (!data_dir.empty()) overrides.data_dir = data_dir;
  if (!out.empty()) overrides.out = out;
  const ExperimentSpec spec =
      config_path.empty() ? resolve_config(RawConfig{}, overrides) : load_config(config_path, overrides);

  ExperimentOptions options;
  options.assert_checks = assert_checks;
  const ExperimentOutcome outcome = run_experiment(spec, options);

  std::cout << "wrote " << (spec.out / "report.json").string() << " and " << (spec.out / "metrics.csv").string() << "\n";
  for (const auto& f : outcome.report.at("failures")) {
    std::cout << "failed cell " << f.at("cell").get<std::string>() << ": " << f.at("failure").get<std::string>() << "\n";
  }
  for (const Check& c : outcome.checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
  }
  return outcome.any_failed || !outcome.all_checks_passed() ? 1 : 0;
}

int verify_command(std::size_t seeds) {
  bool ok = true;
  for (const Check& c : run_oracle_suite(seeds)) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
    ok = ok && c.passed;
  }
  return ok ? 0 : 1;
}

int export_command(const std::string& kind, std::size_t tasks, std::size_t task, std::uint64_t seed,
                   const std::string& data_dir, const std::string& split, const std::string& out) {
  StreamSpec stream;
  stream.kind = parse_stream_kind(kind);
  stream.tasks = tasks;
  stream.seed = seed;
  stream.data_dir = data_dir;
  if (stream.data_dir.empty()) {
    if (const char* env = std::getenv("DRIFTLAB_DATA")) stream.data_dir = env;
  }
  if (task >= tasks) throw ConfigError("--task must be below --tasks");
  const TaskStream s = make_stream(stream, load_base_dataset(stream));
  const Split which = split == "val" ? Split::val : Split::train;
  const Task& t = s.tasks[task];
  const Batch all = t.slice(which, 0, t.size(which));
  write_task_cache(out, LabeledSet{all.inputs, all.labels});
  std::cout << "wrote " << all.size() << " examples of task " << task << " to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"driftlab: training regimes, curvature and forgetting in continual learning"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a named experiment");
  std::string experiment, config_path, seeds, data_dir, out;
  std::optional<std::size_t> jobs;
  bool assert_checks = false;
  run->add_option("experiment", experiment,
                  "regime-analysis, compare, disentangle, stabilize-others or bound-correlation")
      ->required();
  run->add_option("--config", config_path, "Config file (key = value with [sections])");
  run->add_option("--seeds", seeds, "Comma-separated seeds, overriding the config");
  run->add_option("--jobs", jobs, "Worker processes for independent cells");
  run->add_option("--data-dir", data_dir, "Directory with the MNIST IDX files (default: $DRIFTLAB_DATA)");
  run->add_option("--out", out, "Output directory");
  run->add_flag("--assert", assert_checks, "Exit non-zero unless the experiment's expectations hold");

  auto* verify = app.add_subcommand("verify", "Run the gradient, HVP and dense-Hessian oracle checks");
  std::size_t verify_seeds = 20;
  verify->add_option("--seeds", verify_seeds, "Random seeds per layer shape")->capture_default_str();

  auto* exp = app.add_subcommand("export-task", "Write one transformed task split as a DLTK file");
  std::string kind = "permuted", split = "train", export_out;
  std::size_t tasks = 1, task = 0;
  std::uint64_t stream_seed = 1;
  exp->add_option("--kind", kind, "permuted, rotated or synthetic")->capture_default_str();
  exp->add_option("--tasks", tasks, "Tasks in the stream")->capture_default_str();
  exp->add_option("--task", task, "Task index (0-based)")->capture_default_str();
  exp->add_option("--stream-seed", stream_seed, "Stream seed")->capture_default_str();
  exp->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}))->capture_default_str();
  exp->add_option("--data-dir", data_dir, "Directory with the MNIST IDX files");
  exp->add_option("--out", export_out, "Output file")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return run_command(experiment, config_path, seeds, jobs, data_dir, out, assert_checks);
    if (*verify) return verify_command(verify_seeds);
    if (*exp) return export_command(kind, tasks, task, stream_seed, data_dir, split, export_out);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
