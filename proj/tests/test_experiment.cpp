#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "doctest.h"
#include "driftlab/config.hpp"
#include "driftlab/error.hpp"
#include "driftlab/experiment.hpp"

using namespace driftlab;
using nlohmann::json;

namespace {

ExperimentSpec tiny_compare(std::vector<std::string> methods, std::vector<std::uint64_t> seeds) {
  ExperimentSpec s = default_spec(ExperimentKind::compare);
  s.stream.kind = StreamKind::synthetic;
  s.stream.tasks = 3;
  s.stream.synthetic.samples_per_class = 30;
  s.hidden = {8};
  s.seeds = std::move(seeds);
  s.methods.clear();
  for (const std::string& m : methods) {
    s.methods.push_back(method_from_name(m));
    s.methods.back().fisher_samples = 64;
  }
  return s;
}

ExperimentOptions quiet(bool write_files) {
  ExperimentOptions o;
  o.write_files = write_files;
  o.verbose = false;
  return o;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Everything but the trailing wallclock column.
std::string without_wallclock(const std::string& line) { return line.substr(0, line.rfind(',')); }

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / (name + "-" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("csv quoting") {
  CHECK(csv_field("plain") == "plain");
  CHECK(csv_field("a,b") == "\"a,b\"");
  CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_field("two\nlines") == "\"two\nlines\"");
  CHECK(csv_field("") == "");
  CHECK(csv_line({"x", "y,z", ""}) == "x,\"y,z\",\n");
}

TEST_CASE("metrics csv with no rows is only the header") {
  CHECK(metrics_csv({}) == "experiment,method,seed,T,avg_accuracy,avg_forgetting,task1_final_acc,wallclock_s\n");
}

TEST_CASE("metrics csv summary row") {
  std::vector<MetricsRow> rows;
  const double acc[] = {0.800, 0.802, 0.801, 0.799, 0.803};
  for (std::size_t i = 0; i < 5; ++i) {
    rows.push_back({"compare", "stable", std::to_string(i), 20, acc[i], 0.09, 0.7, 1.0});
  }
  rows.push_back({"compare", "naive", "0", 20, 0.44, std::nullopt, 0.3, 2.0});
  const auto l = lines(metrics_csv(rows));
  REQUIRE(l.size() == 1 + 5 + 1 + 1);
  CHECK(l[1] == "compare,stable,0,20,80.0,0.090,70.0,1.0");
  CHECK(l[6] == "compare,stable,_summary,20,80.1 +/- 0.158,0.090 +/- 0.000,70.0 +/- 0.000,1.0 +/- 0.0");
  // A single seed has no summary; a missing metric is an empty field.
  CHECK(l[7] == "compare,naive,0,20,44.0,,30.0,2.0");
}

TEST_CASE("compare on a synthetic stream gives one row per method and seed") {
  const ExperimentOutcome out = run_experiment(tiny_compare({"naive", "stable"}, {0, 1}), quiet(false));
  CHECK_FALSE(out.any_failed);
  const auto rows = metrics_rows(out.report);
  REQUIRE(rows.size() == 4);
  for (const MetricsRow& r : rows) {
    CHECK(r.tasks == 3);
    REQUIRE(r.avg_accuracy.has_value());
    CHECK(*r.avg_accuracy >= 0.0);
    CHECK(*r.avg_accuracy <= 1.0);
    CHECK(r.avg_forgetting.has_value());
  }
  const auto l = lines(metrics_csv(rows));
  CHECK(l.size() == 1 + 4 + 2);
  CHECK(out.report.at("schema") == kReportSchema);
  CHECK(out.report.at("failures").empty());
}

TEST_CASE("an empty method list gives a header-only csv") {
  const ExperimentOutcome out = run_experiment(tiny_compare({}, {0}), quiet(false));
  CHECK(metrics_csv(metrics_rows(out.report)) ==
        "experiment,method,seed,T,avg_accuracy,avg_forgetting,task1_final_acc,wallclock_s\n");
}

TEST_CASE("five seeds add a summary row") {
  const ExperimentOutcome out = run_experiment(tiny_compare({"naive"}, {0, 1, 2, 3, 4}), quiet(false));
  const auto l = lines(metrics_csv(metrics_rows(out.report)));
  REQUIRE(l.size() == 7);
  CHECK(l[6].starts_with("compare,naive,_summary,3,"));
}

TEST_CASE("cells are deterministic") {
  const ExperimentSpec spec = tiny_compare({"naive", "ewc", "er"}, {4});
  const auto a = lines(metrics_csv(metrics_rows(run_experiment(spec, quiet(false)).report)));
  const auto b = lines(metrics_csv(metrics_rows(run_experiment(spec, quiet(false)).report)));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(without_wallclock(a[i]) == without_wallclock(b[i]));

  const auto other = lines(metrics_csv(metrics_rows(run_experiment(tiny_compare({"naive"}, {5}), quiet(false)).report)));
  CHECK(without_wallclock(other[1]) != without_wallclock(a[1]));
}

TEST_CASE("files, resume and the resolved config") {
  TempDir dir("driftlab-experiment-test");
  ExperimentSpec spec = tiny_compare({"naive", "stable"}, {0, 1});
  spec.out = dir.path;
  const ExperimentOutcome first = run_experiment(spec, quiet(true));
  for (const char* f : {"report.json", "resolved.cfg", "metrics.csv"}) CHECK(std::filesystem::exists(dir.path / f));
  const std::string csv = read_file(dir.path / "metrics.csv");
  CHECK(csv.find('\r') == std::string::npos);

  // Cached cells come back unchanged, wallclock included.
  const ExperimentOutcome second = run_experiment(spec, quiet(true));
  CHECK(read_file(dir.path / "metrics.csv") == csv);

  // A different setting for one method recomputes only that method's cells.
  ExperimentSpec changed = spec;
  changed.methods[1].regime.batch_size = 20;
  const ExperimentOutcome third = run_experiment(changed, quiet(true));
  const auto before = lines(csv);
  const auto after = lines(read_file(dir.path / "metrics.csv"));
  REQUIRE(after.size() == before.size());
  CHECK(after[1] == before[1]);
  CHECK(after[2] == before[2]);
  CHECK(without_wallclock(after[4]) != without_wallclock(before[4]));

  // The emitted config reproduces the run.
  ConfigOverrides o;
  o.out = dir.path / "again";
  const ExperimentSpec reloaded = load_config(dir.path / "resolved.cfg", o);
  const auto rerun = lines(metrics_csv(metrics_rows(run_experiment(reloaded, quiet(false)).report)));
  REQUIRE(rerun.size() == after.size());
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(without_wallclock(rerun[i]) == without_wallclock(after[i]));
}

TEST_CASE("parallel workers give the same metrics") {
  TempDir dir("driftlab-experiment-jobs");
  ExperimentSpec spec = tiny_compare({"naive", "agem"}, {0, 1});
  const auto serial = lines(metrics_csv(metrics_rows(run_experiment(spec, quiet(false)).report)));
  spec.jobs = 3;
  spec.out = dir.path;
  const auto parallel = lines(metrics_csv(metrics_rows(run_experiment(spec, quiet(true)).report)));
  REQUIRE(parallel.size() == serial.size());
  for (std::size_t i = 0; i < serial.size(); ++i) CHECK(without_wallclock(parallel[i]) == without_wallclock(serial[i]));
}

TEST_CASE("pre-flight rejects an unwritable output directory before training") {
  TempDir dir("driftlab-experiment-blocked");
  std::filesystem::create_directories(dir.path.parent_path());
  std::ofstream(dir.path) << "a file where the directory should go";
  ExperimentSpec spec = tiny_compare({"naive"}, {0});
  spec.out = dir.path / "out";
  CHECK_THROWS_AS(run_experiment(spec, quiet(true)), ConfigError);
  std::filesystem::remove(dir.path);
}

TEST_CASE("missing data is a configuration error") {
  ExperimentSpec spec = tiny_compare({"naive"}, {0});
  spec.stream.kind = StreamKind::permuted;
  spec.stream.data_dir = "/definitely/not/here";
  CHECK_THROWS_AS(run_experiment(spec, quiet(false)), ConfigError);
}

TEST_CASE("cache keys ignore seeds and output but not settings") {
  const ExperimentSpec a = tiny_compare({"naive", "stable"}, {0, 1});
  ExperimentSpec b = a;
  b.seeds = {9};
  b.out = "elsewhere";
  b.jobs = 4;
  CHECK(cell_cache_key(a, &a.methods[0]) == cell_cache_key(b, &b.methods[0]));
  CHECK(cell_cache_key(a, &a.methods[0]) != cell_cache_key(a, &a.methods[1]));
  ExperimentSpec c = a;
  c.hidden = {9};
  CHECK(cell_cache_key(a, &a.methods[0]) != cell_cache_key(c, &c.methods[0]));
  // Changing another method leaves this one's key alone.
  ExperimentSpec d = a;
  d.methods[1].regime.initial_lr = 0.3;
  CHECK(cell_cache_key(a, &a.methods[0]) == cell_cache_key(d, &d.methods[0]));
}

TEST_CASE("experiment checks on a synthetic comparison") {
  ExperimentSpec spec = tiny_compare({"naive", "multitask"}, {0, 1});
  ExperimentOptions o = quiet(false);
  o.assert_checks = true;
  const ExperimentOutcome out = run_experiment(spec, o);
  CHECK_FALSE(out.checks.empty());
  CHECK(out.report.contains("assertions"));
}
