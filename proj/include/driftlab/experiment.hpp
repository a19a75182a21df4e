#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "driftlab/config.hpp"
#include "driftlab/methods.hpp"
#include "driftlab/tasks.hpp"

namespace driftlab {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kReportSchema = "driftlab.report/1";

/// Base data of a stream spec (MNIST from data_dir, or null for synthetic).
std::shared_ptr<const Dataset> load_base_dataset(const StreamSpec& stream);
TaskStream make_stream(const StreamSpec& stream, std::shared_ptr<const Dataset> base);

/// One (method, seed)-sized unit of work; its result is a JSON object.
struct CellPlan {
  std::string id;
  std::string key;  // hash of every setting that influences this cell
  std::function<nlohmann::json()> run;
};

std::vector<CellPlan> plan_cells(const ExperimentSpec& spec, const TaskStream& stream);

struct CellRunOptions {
  std::filesystem::path cache_dir;  // empty: no caching; cached results under another key are recomputed
  std::size_t jobs = 1;
  bool verbose = true;
};

/// Runs the cells (in forked workers when jobs > 1), reusing cached results
/// whose key matches. A cell that throws yields {"failed": true, "failure": ...}.
std::vector<nlohmann::json> run_cells(const std::vector<CellPlan>& cells, const CellRunOptions& options);

/// Hash of the spec with seeds, output location and parallelism removed and
/// the method list narrowed to `method` (or emptied when null).
std::string cell_cache_key(const ExperimentSpec& spec, const MethodConfig* method = nullptr);

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ExperimentOutcome {
  nlohmann::json report;
  std::vector<nlohmann::json> cells;
  std::vector<Check> checks;  // filled when assertions were requested
  bool any_failed = false;

  bool all_checks_passed() const;
};

struct ExperimentOptions {
  bool write_files = true;
  bool assert_checks = false;
  bool verbose = true;
};

/// Pre-flight (config, data, output directory), all cells, then report.json,
/// resolved.cfg, metrics.csv and the experiment's extra CSVs under spec.out.
ExperimentOutcome run_experiment(const ExperimentSpec& spec, const ExperimentOptions& options = {});

/// Builds report.json from cell results.
nlohmann::json assemble_report(const ExperimentSpec& spec, const TaskStream& stream,
                               const std::vector<nlohmann::json>& cells);

/// The experiment's built-in expectations, evaluated on an assembled report.
std::vector<Check> experiment_checks(const ExperimentSpec& spec, const nlohmann::json& report);

// ---------------------------------------------------------------- CSV

struct MetricsRow {
  std::string experiment;
  std::string method;
  std::string seed;  // a number, or "_summary"
  std::size_t tasks = 0;
  std::optional<double> avg_accuracy;    // fraction in [0, 1]
  std::optional<double> avg_forgetting;  // fraction
  std::optional<double> task1_final_accuracy;
  double wallclock_s = 0.0;
};

/// RFC 4180 field quoting.
std::string csv_field(const std::string& value);
std::string csv_line(const std::vector<std::string>& fields);

/// Per-seed rows, and one `_summary` row per method ("mean +/- sd",
/// sample standard deviation) when a method has more than one seed.
/// Accuracies are written in percent.
std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> metrics_rows(const nlohmann::json& report);

}  // namespace driftlab
