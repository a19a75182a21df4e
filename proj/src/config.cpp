#include "driftlab/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "driftlab/error.hpp"

namespace driftlab {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.emplace_back(trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

[[noreturn]] void fail_at(const ConfigEntry& e, const std::string& key, const std::string& message) {
  throw ConfigError("line " + std::to_string(e.line) + ": " + key + ": " + message);
}

double to_double(const ConfigEntry& e, const std::string& key, std::string_view text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    fail_at(e, key, "expected a number, got '" + std::string(text) + "'");
  }
  return v;
}

std::uint64_t to_u64(const ConfigEntry& e, const std::string& key, std::string_view text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    fail_at(e, key, "expected a non-negative integer, got '" + std::string(text) + "'");
  }
  return v;
}

double get_double(const ConfigEntry& e, const std::string& key) { return to_double(e, key, e.value); }
std::size_t get_size(const ConfigEntry& e, const std::string& key) {
  return static_cast<std::size_t>(to_u64(e, key, e.value));
}

bool get_bool(const ConfigEntry& e, const std::string& key) {
  if (e.value == "true" || e.value == "yes" || e.value == "1") return true;
  if (e.value == "false" || e.value == "no" || e.value == "0") return false;
  fail_at(e, key, "expected true or false, got '" + e.value + "'");
}

template <typename T, typename Fn>
std::vector<T> get_list(const ConfigEntry& e, const std::string& key, Fn convert) {
  std::vector<T> out;
  for (const std::string& item : split_list(e.value)) {
    if (item.empty()) fail_at(e, key, "empty list item");
    out.push_back(convert(e, key, item));
  }
  return out;
}

std::vector<double> get_doubles(const ConfigEntry& e, const std::string& key) {
  return get_list<double>(e, key, to_double);
}
std::vector<std::size_t> get_sizes(const ConfigEntry& e, const std::string& key) {
  return get_list<std::size_t>(e, key, [](const ConfigEntry& en, const std::string& k, std::string_view t) {
    return static_cast<std::size_t>(to_u64(en, k, t));
  });
}

void require(bool ok, const ConfigEntry& e, const std::string& key, const std::string& message) {
  if (!ok) fail_at(e, key, message);
}

template <typename T>
std::string join(const std::vector<T>& values, const std::function<std::string(const T&)>& fmt) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ", ";
    out += fmt(values[i]);
  }
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  return join<std::size_t>(v, [](const std::size_t& x) { return std::to_string(x); });
}
std::string join_doubles(const std::vector<double>& v) {
  return join<double>(v, [](const double& x) { return format_double(x); });
}

// Sets the regime keys of one [regime.<name>] section; `preset` is applied
// before the individual knobs regardless of their order in the file.
void apply_regime(RegimeConfig& r, const std::map<std::string, ConfigEntry>& keys, const std::string& section) {
  if (auto it = keys.find("preset"); it != keys.end()) {
    try {
      r = preset_regime(it->second.value);
    } catch (const ConfigError& err) {
      fail_at(it->second, section + ".preset", err.what());
    }
  }
  for (const auto& [key, e] : keys) {
    const std::string name = section + "." + key;
    if (key == "preset") continue;
    if (key == "lr") {
      r.initial_lr = get_double(e, name);
      require(r.initial_lr > 0.0, e, name, "must be positive");
    } else if (key == "lr_decay") {
      r.lr_decay_per_task = get_double(e, name);
      require(r.lr_decay_per_task > 0.0 && r.lr_decay_per_task <= 1.0, e, name,
              "must lie in (0, 1], got " + e.value);
    } else if (key == "batch_size") {
      r.batch_size = get_size(e, name);
      require(r.batch_size >= 1, e, name, "must be at least 1");
    } else if (key == "dropout") {
      const double p = get_double(e, name);
      require(p >= 0.0 && p < 1.0, e, name, "dropout probability must lie in [0, 1), got " + e.value);
      r.dropout_keep = 1.0 - p;
    } else if (key == "weight_decay") {
      r.weight_decay = get_double(e, name);
      require(r.weight_decay >= 0.0, e, name, "must be non-negative");
    } else if (key == "epochs") {
      r.epochs_per_task = get_size(e, name);
    } else {
      fail_at(e, name, "unknown key");
    }
  }
}

MethodConfig default_method(ExperimentKind kind, const std::string& name) {
  MethodConfig m = method_from_name(name);
  if (kind == ExperimentKind::regime_analysis) {
    if (m.kind == MethodKind::naive) m.regime = preset_regime("plastic-exp1");
    if (m.kind == MethodKind::stable) m.regime = preset_regime("stable-exp1");
  }
  return m;
}

bool uses_methods(ExperimentKind kind) {
  return kind == ExperimentKind::compare || kind == ExperimentKind::stabilize_others ||
         kind == ExperimentKind::regime_analysis;
}

void write_regime(std::ostringstream& os, const std::string& name, const RegimeConfig& r) {
  os << "\n[regime." << name << "]\n"
     << "lr = " << format_double(r.initial_lr) << "\n"
     << "lr_decay = " << format_double(r.lr_decay_per_task) << "\n"
     << "batch_size = " << r.batch_size << "\n"
     << "dropout = " << format_double(1.0 - r.dropout_keep) << "\n"
     << "weight_decay = " << format_double(r.weight_decay) << "\n"
     << "epochs = " << r.epochs_per_task << "\n";
}

}  // namespace

ExperimentKind parse_experiment_kind(std::string_view name) {
  if (name == "regime-analysis") return ExperimentKind::regime_analysis;
  if (name == "compare") return ExperimentKind::compare;
  if (name == "disentangle") return ExperimentKind::disentangle;
  if (name == "stabilize-others") return ExperimentKind::stabilize_others;
  if (name == "bound-correlation") return ExperimentKind::bound_correlation;
  throw ConfigError("unknown experiment '" + std::string(name) +
                    "' (expected regime-analysis, compare, disentangle, stabilize-others or bound-correlation)");
}

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::regime_analysis: return "regime-analysis";
    case ExperimentKind::compare: return "compare";
    case ExperimentKind::disentangle: return "disentangle";
    case ExperimentKind::stabilize_others: return "stabilize-others";
    case ExperimentKind::bound_correlation: return "bound-correlation";
  }
  return "?";
}

RegimeConfig BoundGrid::regime(std::size_t index) const {
  if (index >= size()) throw ConfigError("bound grid index out of range");
  RegimeConfig r;
  r.epochs_per_task = epochs;
  r.lr_decay_per_task = lr_decays[index % lr_decays.size()];
  index /= lr_decays.size();
  r.dropout_keep = 1.0 - dropouts[index % dropouts.size()];
  index /= dropouts.size();
  r.batch_size = batch_sizes[index % batch_sizes.size()];
  index /= batch_sizes.size();
  r.initial_lr = lrs[index];
  return r;
}

void ExperimentSpec::validate() const {
  if (seeds.empty()) throw ConfigError("experiment.seeds must not be empty");
  if (jobs == 0) throw ConfigError("experiment.jobs must be at least 1");
  if (stream.tasks == 0) throw ConfigError("stream.tasks must be at least 1");
  if ((kind == ExperimentKind::disentangle || kind == ExperimentKind::bound_correlation) && stream.tasks != 2) {
    throw ConfigError(std::string(to_string(kind)) + " needs stream.tasks = 2");
  }
  if (stream.kind != StreamKind::synthetic && stream.data_dir.empty()) {
    throw ConfigError("stream.data_dir is required for " + std::string(to_string(stream.kind)) +
                      " streams (or pass --data-dir, or set DRIFTLAB_DATA)");
  }
  std::set<std::string> names;
  for (const MethodConfig& m : methods) {
    if (!names.insert(m.name).second) throw ConfigError("method '" + m.name + "' is listed twice");
    m.regime.validate();
  }
  stable_regime.validate();
  plastic_regime.validate();
  if (spectral.k == 0) throw ConfigError("spectral.k must be at least 1");
  if (!(spectral.tol > 0.0)) throw ConfigError("spectral.tol must be positive");
  if (spectral.probe_size == 0) throw ConfigError("spectral.probe_size must be at least 1");
  if (kind == ExperimentKind::bound_correlation) {
    if (bound.size() == 0) throw ConfigError("the bound grid is empty");
    for (std::size_t i = 0; i < bound.size(); ++i) bound.regime(i).validate();
  }
}

ExperimentSpec default_spec(ExperimentKind kind) {
  ExperimentSpec s;
  s.kind = kind;
  s.out = std::filesystem::path("out") / std::string(to_string(kind));
  std::vector<std::string> methods;
  switch (kind) {
    case ExperimentKind::compare:
      s.stream.tasks = 20;
      s.hidden = {256, 256};
      methods = {"naive", "stable", "ewc", "agem", "er", "multitask"};
      break;
    case ExperimentKind::stabilize_others:
      s.stream.tasks = 20;
      s.hidden = {256, 256};
      methods = {"ewc", "agem", "er", "stable-ewc", "stable-agem", "stable-er"};
      break;
    case ExperimentKind::regime_analysis:
      s.stream.tasks = 5;
      s.hidden = {100, 100};
      methods = {"naive", "stable"};
      break;
    case ExperimentKind::disentangle:
    case ExperimentKind::bound_correlation:
      s.stream.tasks = 2;
      s.hidden = {100, 100};
      break;
  }
  for (const std::string& m : methods) s.methods.push_back(default_method(kind, m));
  s.stable_regime = preset_regime("stable-table1");
  s.plastic_regime = preset_regime("plastic-table1");
  if (const char* env = std::getenv("DRIFTLAB_DATA"); env != nullptr && *env != '\0') s.stream.data_dir = env;
  return s;
}

RawConfig parse_config_text(std::string_view text) {
  RawConfig raw;
  std::string section;
  raw.sections[section];
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto c = line.find_first_of("#;"); c != std::string_view::npos) line = line.substr(0, c);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.empty()) throw ConfigError(where + "empty section name");
      if (std::count(section.begin(), section.end(), '.') > 1) {
        throw ConfigError(where + "sections nest at most one level ('" + section + "')");
      }
      raw.sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(where + "missing key before '='");
    auto& keys = raw.sections[section];
    if (keys.contains(key)) {
      throw ConfigError(where + "duplicate key '" + key + "' (first set on line " +
                        std::to_string(keys[key].line) + ")");
    }
    keys[key] = ConfigEntry{std::string(trim(line.substr(eq + 1))), line_no};
  }
  return raw;
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> out;
  for (const std::string& item : split_list(text)) {
    std::uint64_t v = 0;
    const auto* end = item.data() + item.size();
    const auto [ptr, ec] = std::from_chars(item.data(), end, v);
    if (item.empty() || ec != std::errc() || ptr != end) throw ConfigError("invalid seed '" + item + "'");
    out.push_back(v);
  }
  return out;
}

ExperimentSpec resolve_config(const RawConfig& raw, const ConfigOverrides& overrides) {
  const auto section = [&](const std::string& name) -> const std::map<std::string, ConfigEntry>* {
    const auto it = raw.sections.find(name);
    return it == raw.sections.end() ? nullptr : &it->second;
  };

  // The experiment name decides the defaults, so it is read first.
  std::string name = "compare";
  const auto* exp = section("experiment");
  if (exp != nullptr) {
    if (auto it = exp->find("name"); it != exp->end()) {
      name = it->second.value;
      try {
        parse_experiment_kind(name);
      } catch (const ConfigError& err) {
        fail_at(it->second, "experiment.name", err.what());
      }
    }
  }
  if (overrides.experiment) name = *overrides.experiment;
  ExperimentSpec s = default_spec(parse_experiment_kind(name));

  if (const auto* top = section(""); top != nullptr && !top->empty()) {
    const auto& [key, e] = *top->begin();
    fail_at(e, key, "keys must appear inside a [section]");
  }

  if (exp != nullptr) {
    for (const auto& [key, e] : *exp) {
      const std::string k = "experiment." + key;
      if (key == "name") continue;
      if (key == "seeds") {
        try {
          s.seeds = parse_seed_list(e.value);
        } catch (const ConfigError& err) {
          fail_at(e, k, err.what());
        }
        require(!s.seeds.empty(), e, k, "must list at least one seed");
      } else if (key == "out") {
        s.out = e.value;
      } else if (key == "jobs") {
        s.jobs = get_size(e, k);
        require(s.jobs >= 1, e, k, "must be at least 1");
      } else {
        fail_at(e, k, "unknown key");
      }
    }
  }

  if (const auto* st = section("stream"); st != nullptr) {
    for (const auto& [key, e] : *st) {
      const std::string k = "stream." + key;
      if (key == "kind") {
        try {
          s.stream.kind = parse_stream_kind(e.value);
        } catch (const ConfigError& err) {
          fail_at(e, k, err.what());
        }
      } else if (key == "tasks") {
        s.stream.tasks = get_size(e, k);
        require(s.stream.tasks >= 1, e, k, "must be at least 1");
      } else if (key == "seed") {
        s.stream.seed = to_u64(e, k, e.value);
      } else if (key == "train_per_task") {
        s.stream.train_per_task = get_size(e, k);
      } else if (key == "val_per_task") {
        s.stream.val_per_task = get_size(e, k);
      } else if (key == "data_dir") {
        s.stream.data_dir = e.value;
      } else if (key == "synthetic_classes") {
        s.stream.synthetic.classes = get_size(e, k);
        require(s.stream.synthetic.classes >= 2, e, k, "must be at least 2");
      } else if (key == "synthetic_samples_per_class") {
        s.stream.synthetic.samples_per_class = get_size(e, k);
        require(s.stream.synthetic.samples_per_class >= 5, e, k, "must be at least 5");
      } else if (key == "synthetic_radius") {
        s.stream.synthetic.radius = get_double(e, k);
      } else if (key == "synthetic_noise") {
        s.stream.synthetic.noise = get_double(e, k);
        require(s.stream.synthetic.noise >= 0.0, e, k, "must be non-negative");
      } else if (key == "synthetic_rotation_step") {
        s.stream.synthetic.rotation_step_deg = get_double(e, k);
      } else {
        fail_at(e, k, "unknown key");
      }
    }
  }

  if (const auto* model = section("model"); model != nullptr) {
    for (const auto& [key, e] : *model) {
      const std::string k = "model." + key;
      if (key == "hidden") {
        s.hidden = get_sizes(e, k);
        require(std::all_of(s.hidden.begin(), s.hidden.end(), [](std::size_t h) { return h > 0; }), e, k,
                "hidden layer sizes must be positive");
      } else {
        fail_at(e, k, "unknown key");
      }
    }
  }

  if (const auto* ms = section("methods"); ms != nullptr) {
    if (!uses_methods(s.kind) && !ms->empty()) {
      const auto& [key, e] = *ms->begin();
      fail_at(e, "methods." + key, std::string(to_string(s.kind)) + " does not use a method list");
    }
    if (auto it = ms->find("list"); it != ms->end()) {
      s.methods.clear();
      for (const std::string& m : split_list(it->second.value)) {
        try {
          s.methods.push_back(default_method(s.kind, m));
        } catch (const ConfigError& err) {
          fail_at(it->second, "methods.list", err.what());
        }
      }
    }
    for (const auto& [key, e] : *ms) {
      const std::string k = "methods." + key;
      if (key == "list") continue;
      for (MethodConfig& m : s.methods) {
        if (key == "ewc_lambda") {
          m.ewc_lambda = get_double(e, k);
          require(m.ewc_lambda >= 0.0, e, k, "must be non-negative");
        } else if (key == "fisher_samples") {
          m.fisher_samples = get_size(e, k);
        } else if (key == "fisher_empirical") {
          m.fisher_empirical = get_bool(e, k);
        } else if (key == "memory") {
          if (e.value == "auto") {
            m.memory_capacity.reset();
          } else {
            m.memory_capacity = get_size(e, k);
          }
        } else if (key == "replay_batch") {
          m.replay_batch = get_size(e, k);
        } else if (key == "agem_ref_batch") {
          m.agem_ref_batch = get_size(e, k);
        } else {
          fail_at(e, k, "unknown key");
        }
      }
      if (s.methods.empty() && key != "ewc_lambda" && key != "fisher_samples" && key != "fisher_empirical" &&
          key != "memory" && key != "replay_batch" && key != "agem_ref_batch") {
        fail_at(e, k, "unknown key");
      }
    }
  }

  for (const auto& [sec, keys] : raw.sections) {
    if (!sec.starts_with("regime.")) continue;
    const std::string target = sec.substr(7);
    if (keys.empty()) continue;
    const ConfigEntry& first = keys.begin()->second;
    if (s.kind == ExperimentKind::disentangle) {
      if (target == "stable") {
        apply_regime(s.stable_regime, keys, sec);
      } else if (target == "plastic") {
        apply_regime(s.plastic_regime, keys, sec);
      } else {
        throw ConfigError("line " + std::to_string(first.line) + ": [" + sec +
                          "]: disentangle regimes are 'stable' and 'plastic'");
      }
      continue;
    }
    auto it = std::find_if(s.methods.begin(), s.methods.end(), [&](const MethodConfig& m) { return m.name == target; });
    if (it == s.methods.end()) {
      throw ConfigError("line " + std::to_string(first.line) + ": [" + sec + "]: '" + target +
                        "' is not in the method list");
    }
    apply_regime(it->regime, keys, sec);
  }

  if (const auto* sp = section("spectral"); sp != nullptr) {
    for (const auto& [key, e] : *sp) {
      const std::string k = "spectral." + key;
      if (key == "k") {
        s.spectral.k = get_size(e, k);
        require(s.spectral.k >= 1, e, k, "must be at least 1");
      } else if (key == "tol") {
        s.spectral.tol = get_double(e, k);
        require(s.spectral.tol > 0.0, e, k, "must be positive");
      } else if (key == "max_iters") {
        s.spectral.max_iters = get_size(e, k);
      } else if (key == "probe_size") {
        s.spectral.probe_size = get_size(e, k);
        require(s.spectral.probe_size >= 1, e, k, "must be at least 1");
      } else {
        fail_at(e, k, "unknown key");
      }
    }
  }

  if (const auto* b = section("bound"); b != nullptr) {
    if (s.kind != ExperimentKind::bound_correlation && !b->empty()) {
      const auto& [key, e] = *b->begin();
      fail_at(e, "bound." + key, "only bound-correlation uses the [bound] grid");
    }
    for (const auto& [key, e] : *b) {
      const std::string k = "bound." + key;
      if (key == "lrs") {
        s.bound.lrs = get_doubles(e, k);
        for (double v : s.bound.lrs) require(v > 0.0, e, k, "learning rates must be positive");
      } else if (key == "batch_sizes") {
        s.bound.batch_sizes = get_sizes(e, k);
        for (std::size_t v : s.bound.batch_sizes) require(v >= 1, e, k, "batch sizes must be at least 1");
      } else if (key == "dropouts") {
        s.bound.dropouts = get_doubles(e, k);
        for (double v : s.bound.dropouts) require(v >= 0.0 && v < 1.0, e, k, "dropout must lie in [0, 1)");
      } else if (key == "lr_decays") {
        s.bound.lr_decays = get_doubles(e, k);
        for (double v : s.bound.lr_decays) require(v > 0.0 && v <= 1.0, e, k, "lr_decay must lie in (0, 1]");
      } else if (key == "epochs") {
        s.bound.epochs = get_size(e, k);
      } else {
        fail_at(e, k, "unknown key");
      }
    }
  }

  for (const auto& [sec, keys] : raw.sections) {
    static const std::set<std::string> known = {"", "experiment", "stream", "model", "methods", "spectral", "bound"};
    if (known.contains(sec) || sec.starts_with("regime.")) continue;
    const std::size_t line = keys.empty() ? 0 : keys.begin()->second.line;
    throw ConfigError("line " + std::to_string(line) + ": unknown section [" + sec + "]");
  }

  if (overrides.seeds) s.seeds = *overrides.seeds;
  if (overrides.jobs) s.jobs = *overrides.jobs;
  if (overrides.data_dir) s.stream.data_dir = *overrides.data_dir;
  if (overrides.out) s.out = *overrides.out;
  s.validate();
  return s;
}

ExperimentSpec load_config(const std::filesystem::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return resolve_config(parse_config_text(buf.str()), overrides);
  } catch (const ConfigError& err) {
    throw ConfigError(path.string() + ": " + err.what());
  }
}

std::string write_config(const ExperimentSpec& s) {
  std::ostringstream os;
  os << "[experiment]\n"
     << "name = " << to_string(s.kind) << "\n"
     << "seeds = " << join<std::uint64_t>(s.seeds, [](const std::uint64_t& v) { return std::to_string(v); }) << "\n"
     << "out = " << s.out.string() << "\n"
     << "jobs = " << s.jobs << "\n";
  os << "\n[stream]\n"
     << "kind = " << to_string(s.stream.kind) << "\n"
     << "tasks = " << s.stream.tasks << "\n"
     << "seed = " << s.stream.seed << "\n"
     << "train_per_task = " << s.stream.train_per_task << "\n"
     << "val_per_task = " << s.stream.val_per_task << "\n";
  if (!s.stream.data_dir.empty()) os << "data_dir = " << s.stream.data_dir.string() << "\n";
  if (s.stream.kind == StreamKind::synthetic) {
    os << "synthetic_classes = " << s.stream.synthetic.classes << "\n"
       << "synthetic_samples_per_class = " << s.stream.synthetic.samples_per_class << "\n"
       << "synthetic_radius = " << format_double(s.stream.synthetic.radius) << "\n"
       << "synthetic_noise = " << format_double(s.stream.synthetic.noise) << "\n"
       << "synthetic_rotation_step = " << format_double(s.stream.synthetic.rotation_step_deg) << "\n";
  }
  os << "\n[model]\nhidden = " << join_sizes(s.hidden) << "\n";
  if (uses_methods(s.kind)) {
    os << "\n[methods]\nlist = "
       << join<MethodConfig>(s.methods, [](const MethodConfig& m) { return m.name; }) << "\n";
    if (!s.methods.empty()) {
      const MethodConfig& m = s.methods.front();
      os << "ewc_lambda = " << format_double(m.ewc_lambda) << "\n"
         << "fisher_samples = " << m.fisher_samples << "\n"
         << "fisher_empirical = " << (m.fisher_empirical ? "true" : "false") << "\n"
         << "memory = " << (m.memory_capacity ? std::to_string(*m.memory_capacity) : std::string("auto")) << "\n"
         << "replay_batch = " << m.replay_batch << "\n"
         << "agem_ref_batch = " << m.agem_ref_batch << "\n";
    }
    for (const MethodConfig& m : s.methods) write_regime(os, m.name, m.regime);
  }
  if (s.kind == ExperimentKind::disentangle) {
    write_regime(os, "stable", s.stable_regime);
    write_regime(os, "plastic", s.plastic_regime);
  }
  os << "\n[spectral]\n"
     << "k = " << s.spectral.k << "\n"
     << "tol = " << format_double(s.spectral.tol) << "\n"
     << "max_iters = " << s.spectral.max_iters << "\n"
     << "probe_size = " << s.spectral.probe_size << "\n";
  if (s.kind == ExperimentKind::bound_correlation) {
    os << "\n[bound]\n"
       << "lrs = " << join_doubles(s.bound.lrs) << "\n"
       << "batch_sizes = " << join_sizes(s.bound.batch_sizes) << "\n"
       << "dropouts = " << join_doubles(s.bound.dropouts) << "\n"
       << "lr_decays = " << join_doubles(s.bound.lr_decays) << "\n"
       << "epochs = " << s.bound.epochs << "\n";
  }
  return os.str();
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw ConfigError("cannot format number");
  return std::string(buf, ptr);
}

}  // namespace driftlab
