#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "driftlab/methods.hpp"
#include "driftlab/optim.hpp"
#include "driftlab/tasks.hpp"

namespace driftlab {

enum class ExperimentKind { regime_analysis, compare, disentangle, stabilize_others, bound_correlation };

ExperimentKind parse_experiment_kind(std::string_view name);
std::string_view to_string(ExperimentKind kind);

struct StreamSpec {
  StreamKind kind = StreamKind::synthetic;
  std::size_t tasks = 0;
  std::uint64_t seed = 1;
  std::size_t train_per_task = 0;  // 0: the whole training split
  std::size_t val_per_task = 0;    // 0: the whole validation split
  std::filesystem::path data_dir;
  SyntheticOptions synthetic;
};

struct SpectralSpec {
  std::size_t k = 20;
  double tol = 1e-3;
  std::size_t max_iters = 200;
  std::size_t probe_size = 2048;
};

/// Regime grid of the bound-correlation experiment: every combination of
/// the listed values is one configuration.
struct BoundGrid {
  std::vector<double> lrs = {0.01, 0.05, 0.1};
  std::vector<std::size_t> batch_sizes = {16, 128};
  std::vector<double> dropouts = {0.0, 0.5};
  std::vector<double> lr_decays = {1.0};
  std::size_t epochs = 5;

  std::size_t size() const { return lrs.size() * batch_sizes.size() * dropouts.size() * lr_decays.size(); }
  RegimeConfig regime(std::size_t index) const;
};

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::compare;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::filesystem::path out;
  std::size_t jobs = 1;
  StreamSpec stream;
  std::vector<std::size_t> hidden;
  std::vector<MethodConfig> methods;  // compare, stabilize-others, regime-analysis
  RegimeConfig stable_regime;         // disentangle
  RegimeConfig plastic_regime;        // disentangle
  SpectralSpec spectral;
  BoundGrid bound;

  /// Throws ConfigError for inconsistent values (no line information).
  void validate() const;
};

/// One `key = value` line of a config file.
struct ConfigEntry {
  std::string value;
  std::size_t line = 0;
};

/// Parsed but uninterpreted config: section name → key → entry. Keys before
/// any section header live in section "".
struct RawConfig {
  std::map<std::string, std::map<std::string, ConfigEntry>> sections;
};

/// Grammar: one `key = value` per line, `[section]` or `[section.name]`
/// headers, `#` or `;` starts a comment, blank lines ignored. Duplicate keys
/// and malformed lines are errors naming the line.
RawConfig parse_config_text(std::string_view text);

struct ConfigOverrides {
  std::optional<std::string> experiment;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::size_t> jobs;
  std::optional<std::filesystem::path> data_dir;
  std::optional<std::filesystem::path> out;
};

/// Applies the experiment's defaults, then the file, then the overrides.
/// The data directory falls back to $DRIFTLAB_DATA. Unknown keys and
/// sections, malformed values and out-of-range values are ConfigErrors
/// naming the line.
ExperimentSpec resolve_config(const RawConfig& raw, const ConfigOverrides& overrides = {});
ExperimentSpec load_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

/// Defaults of an experiment before any file is read.
ExperimentSpec default_spec(ExperimentKind kind);

/// The fully expanded spec in the config grammar; resolving it again gives
/// the same spec.
std::string write_config(const ExperimentSpec& spec);

/// Shortest text that parses back to the same double.
std::string format_double(double value);

std::vector<std::uint64_t> parse_seed_list(std::string_view text);

}  // namespace driftlab
