#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "driftlab/config.hpp"
#include "driftlab/error.hpp"

using namespace driftlab;

namespace {

ExperimentSpec resolve(std::string_view text, const ConfigOverrides& o = {}) {
  return resolve_config(parse_config_text(text), o);
}

// The message of the ConfigError thrown by resolving `text`.
std::string config_error(std::string_view text) {
  try {
    resolve(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& s, std::string_view part) { return s.find(part) != std::string::npos; }

// Keeps DRIFTLAB_DATA from the environment out of these tests.
struct DataEnvGuard {
  std::string saved;
  bool had = false;
  DataEnvGuard() {
    if (const char* v = std::getenv("DRIFTLAB_DATA")) {
      had = true;
      saved = v;
    }
    unsetenv("DRIFTLAB_DATA");
  }
  ~DataEnvGuard() {
    if (had) setenv("DRIFTLAB_DATA", saved.c_str(), 1);
  }
};

}  // namespace

TEST_CASE("empty config gives a valid synthetic experiment") {
  DataEnvGuard env;
  const ExperimentSpec s = resolve("");
  CHECK(s.kind == ExperimentKind::compare);
  CHECK(s.stream.kind == StreamKind::synthetic);
  CHECK(s.seeds.size() == 5);
  CHECK_FALSE(s.methods.empty());
  CHECK_NOTHROW(s.validate());

  const ExperimentSpec comments = resolve("# nothing here\n\n   ; still nothing\n");
  CHECK(write_config(comments) == write_config(s));
}

TEST_CASE("grammar errors name the line") {
  CHECK_THROWS_AS(parse_config_text("[stream\nkind = synthetic\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[]\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[a.b.c]\n"), ConfigError);
  CHECK(contains(config_error("[stream]\nkind synthetic\n"), "line 2"));
  CHECK(contains(config_error("[stream]\n = 3\n"), "line 2"));
  const std::string dup = config_error("[stream]\ntasks = 3\n\ntasks = 4\n");
  CHECK(contains(dup, "line 4"));
  CHECK(contains(dup, "line 2"));
  CHECK(contains(config_error("tasks = 3\n"), "line 1"));
}

TEST_CASE("comments and whitespace") {
  DataEnvGuard env;
  const ExperimentSpec s = resolve("  [stream]  \n tasks=3   # three tasks\nseed = 9 ; trailing\n");
  CHECK(s.stream.tasks == 3);
  CHECK(s.stream.seed == 9);
}

TEST_CASE("unknown keys, sections and methods are errors") {
  const std::string key = config_error("[experiment]\nname = compare\n[stream]\ntaks = 3\n");
  CHECK(contains(key, "line 4"));
  CHECK(contains(key, "stream.taks"));
  CHECK(contains(config_error("[streams]\ntasks = 3\n"), "unknown section"));
  CHECK(contains(config_error("[methods]\nlist = naive, sgd\n"), "line 2"));
  CHECK(contains(config_error("[methods]\nlist = naive\n[regime.stable]\nlr = 0.1\n"), "line 4"));
  CHECK(contains(config_error("[experiment]\nname = everything\n"), "line 2"));
  CHECK(contains(config_error("[regime.naive]\nlearning_rate = 0.1\n"), "regime.naive.learning_rate"));
  CHECK(contains(config_error("[experiment]\nname = disentangle\n[methods]\nlist = naive\n"), "line 4"));
  CHECK(contains(config_error("[bound]\nepochs = 2\n"), "line 2"));
}

TEST_CASE("type and range errors") {
  const std::string decay = config_error("[regime.stable]\nlr_decay = 1.4\n");
  CHECK(contains(decay, "line 2"));
  CHECK(contains(decay, "(0, 1]"));
  CHECK(contains(config_error("[regime.stable]\nlr_decay = 0\n"), "line 2"));
  CHECK(contains(config_error("[regime.stable]\ndropout = 1\n"), "line 2"));
  CHECK(contains(config_error("[regime.stable]\nbatch_size = 0\n"), "line 2"));
  CHECK(contains(config_error("[stream]\ntasks = three\n"), "line 2"));
  CHECK(contains(config_error("[stream]\ntasks = -2\n"), "line 2"));
  CHECK(contains(config_error("[stream]\ntasks = 2.5\n"), "line 2"));
  CHECK(contains(config_error("[experiment]\nseeds = 1,x\n"), "line 2"));
  CHECK(contains(config_error("[methods]\nfisher_empirical = maybe\n"), "line 2"));
  CHECK(contains(config_error("[spectral]\ntol = 0\n"), "line 2"));
  CHECK_THROWS_AS(resolve("[methods]\nlist = naive, naive\n"), ConfigError);
  CHECK_THROWS_AS(resolve("[experiment]\nname = disentangle\n[stream]\ntasks = 3\n"), ConfigError);
}

TEST_CASE("non-synthetic streams need a data directory") {
  DataEnvGuard env;
  CHECK_THROWS_AS(resolve("[stream]\nkind = permuted\n"), ConfigError);
  CHECK(resolve("[stream]\nkind = permuted\ndata_dir = /nowhere\n").stream.data_dir == "/nowhere");

  ConfigOverrides o;
  o.data_dir = "/from/flag";
  CHECK(resolve("[stream]\nkind = rotated\ndata_dir = /nowhere\n", o).stream.data_dir == "/from/flag");

  setenv("DRIFTLAB_DATA", "/from/env", 1);
  CHECK(resolve("[stream]\nkind = rotated\n").stream.data_dir == "/from/env");
  CHECK(resolve("[stream]\nkind = rotated\ndata_dir = /nowhere\n").stream.data_dir == "/nowhere");
}

TEST_CASE("regime presets expand") {
  const ExperimentSpec s = resolve("[methods]\nlist = naive\n[regime.naive]\npreset = stable-exp2\n");
  REQUIRE(s.methods.size() == 1);
  const RegimeConfig& r = s.methods[0].regime;
  CHECK(r.initial_lr == 0.1);
  CHECK(r.lr_decay_per_task == 0.8);
  CHECK(r.batch_size == 10);
  CHECK(r.dropout_keep == 0.5);

  // Individual keys win over the preset wherever they appear.
  const ExperimentSpec t = resolve("[methods]\nlist = naive\n[regime.naive]\nbatch_size = 32\npreset = stable-exp2\n");
  CHECK(t.methods[0].regime.batch_size == 32);
  CHECK(t.methods[0].regime.lr_decay_per_task == 0.8);

  CHECK(contains(config_error("[methods]\nlist = naive\n[regime.naive]\npreset = calm\n"), "line 4"));
}

TEST_CASE("experiment defaults") {
  DataEnvGuard env;
  const ExperimentSpec d = resolve("[experiment]\nname = disentangle\n");
  CHECK(d.stream.tasks == 2);
  CHECK(d.methods.empty());
  const ExperimentSpec custom = resolve("[experiment]\nname = disentangle\n[regime.plastic]\nlr = 0.05\n");
  CHECK(custom.plastic_regime.initial_lr == 0.05);
  CHECK(custom.stable_regime == d.stable_regime);
  CHECK_THROWS_AS(resolve("[experiment]\nname = disentangle\n[regime.medium]\nlr = 0.05\n"), ConfigError);

  const ExperimentSpec b = resolve("[experiment]\nname = bound-correlation\n");
  CHECK(b.bound.size() >= 12);

  const ExperimentSpec r = resolve("[experiment]\nname = regime-analysis\n");
  REQUIRE(r.methods.size() == 2);
  CHECK(r.methods[0].regime.batch_size == 64);
  CHECK(r.methods[1].regime.lr_decay_per_task == 0.4);
}

TEST_CASE("method options apply to every listed method") {
  const ExperimentSpec s = resolve("[methods]\nlist = ewc, er\newc_lambda = 50\nmemory = 40\nreplay_batch = 5\n");
  REQUIRE(s.methods.size() == 2);
  for (const MethodConfig& m : s.methods) {
    CHECK(m.ewc_lambda == 50.0);
    CHECK(m.memory_capacity == std::optional<std::size_t>(40));
    CHECK(m.replay_batch == 5);
  }
  CHECK_FALSE(resolve("[methods]\nlist = er\nmemory = auto\n").methods[0].memory_capacity.has_value());

  const ExperimentSpec empty = resolve("[methods]\nlist =\n");
  CHECK(empty.methods.empty());
}

TEST_CASE("overrides beat the file") {
  ConfigOverrides o;
  o.seeds = std::vector<std::uint64_t>{7, 8};
  o.jobs = 3;
  o.out = "elsewhere";
  o.experiment = "disentangle";
  const ExperimentSpec s = resolve("[experiment]\nname = compare\nseeds = 1\njobs = 1\nout = here\n", o);
  CHECK(s.kind == ExperimentKind::disentangle);
  CHECK(s.seeds == std::vector<std::uint64_t>{7, 8});
  CHECK(s.jobs == 3);
  CHECK(s.out == "elsewhere");
}

TEST_CASE("seed lists") {
  CHECK(parse_seed_list("0, 1,2") == std::vector<std::uint64_t>{0, 1, 2});
  CHECK(parse_seed_list("18446744073709551615") == std::vector<std::uint64_t>{18446744073709551615ull});
  CHECK_THROWS_AS(parse_seed_list("1,,2"), ConfigError);
  CHECK_THROWS_AS(parse_seed_list("-1"), ConfigError);
}

TEST_CASE("written configs resolve to the same spec") {
  DataEnvGuard env;
  const char* texts[] = {
      "",
      "[experiment]\nname = disentangle\nseeds = 3\n[regime.stable]\nlr = 0.07\n",
      "[experiment]\nname = bound-correlation\n[bound]\nlrs = 0.01, 0.3\nepochs = 2\n",
      "[experiment]\nname = stabilize-others\n[stream]\nkind = rotated\ndata_dir = /d\ntrain_per_task = 500\n",
      "[experiment]\nname = regime-analysis\n[methods]\nlist = naive, stable, ewc\nfisher_empirical = true\n",
      "[stream]\nsynthetic_noise = 0.123456789012345\nsynthetic_rotation_step = 1e-3\n",
  };
  for (const char* text : texts) {
    const ExperimentSpec a = resolve(text);
    const std::string written = write_config(a);
    const ExperimentSpec b = resolve(written);
    CHECK(write_config(b) == written);
    CHECK(b.kind == a.kind);
    CHECK(b.seeds == a.seeds);
    CHECK(b.stream.synthetic.noise == a.stream.synthetic.noise);
    CHECK(b.stream.data_dir == a.stream.data_dir);
    REQUIRE(b.methods.size() == a.methods.size());
    for (std::size_t i = 0; i < a.methods.size(); ++i) {
      CHECK(b.methods[i].name == a.methods[i].name);
      CHECK(b.methods[i].regime == a.methods[i].regime);
      CHECK(b.methods[i].fisher_empirical == a.methods[i].fisher_empirical);
    }
    CHECK(b.stable_regime == a.stable_regime);
    CHECK(b.plastic_regime == a.plastic_regime);
    CHECK(b.bound.lrs == a.bound.lrs);
  }
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, -0.0, 5e-324}) {
    CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
  }
  CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("load_config reads files and prefixes errors with the path") {
  const auto dir = std::filesystem::temp_directory_path() / "driftlab-config-test";
  std::filesystem::create_directories(dir);
  const auto good = dir / "good.cfg";
  std::ofstream(good) << "[stream]\ntasks = 4\n";
  CHECK(load_config(good).stream.tasks == 4);

  const auto bad = dir / "bad.cfg";
  std::ofstream(bad) << "[stream]\ntaks = 4\n";
  try {
    load_config(bad);
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(contains(e.what(), "bad.cfg"));
    CHECK(contains(e.what(), "line 2"));
  }
  CHECK_THROWS_AS(load_config(dir / "missing.cfg"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("shipped configs resolve") {
  ConfigOverrides o;
  o.data_dir = "/data";
  std::size_t count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(DRIFTLAB_CONFIG_DIR)) {
    if (entry.path().extension() != ".cfg") continue;
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(load_config(entry.path(), o));
    ++count;
  }
  CHECK(count >= 7);
}
