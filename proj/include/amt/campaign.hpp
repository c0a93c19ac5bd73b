#pragma once

// Campaign orchestration: draw a source, describe it, pick a relation,
// transform, execute, judge, learn, log. Also the random-selection,
// exhaustive-baseline and robustness-boundary modes.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "amt/bandit.hpp"
#include "amt/csv.hpp"
#include "amt/error.hpp"
#include "amt/features.hpp"
#include "amt/hierarchy.hpp"
#include "amt/image.hpp"
#include "amt/relations.hpp"
#include "amt/rng.hpp"
#include "amt/suts.hpp"
#include "amt/verdicts.hpp"
#include "json.hpp"

namespace amt {

namespace fs = std::filesystem;

enum class Mode { amt, random, baseline, boundary };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::amt: return "amt";
    case Mode::random: return "random";
    case Mode::baseline: return "baseline";
    case Mode::boundary: return "boundary";
  }
  return "?";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "amt") return Mode::amt;
  if (s == "random") return Mode::random;
  if (s == "baseline") return Mode::baseline;
  if (s == "boundary") return Mode::boundary;
  throw ConfigError("unknown campaign mode: " + std::string(s));
}

enum class SourceOrder { uniform, sequential };

// ---------------------------------------------------------------------------
// Test suite manifest.

struct SourceCase {
  std::string id;
  fs::path image_path;
  int label = 0;                      // classification
  std::vector<GroundTruth> truths;    // detection
};

/// CSV with header "id,image,target". `target` is an integer class for
/// classification suites, or a path to a JSON annotation array
/// ([{"box": [...], "class_id": c}, ...]) for detection suites. Relative
/// paths resolve against the manifest's directory.
inline std::vector<SourceCase> load_manifest(const fs::path& path, Task task) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("manifest is empty");
  const auto header = csv::split(line);
  if (header != std::vector<std::string>{"id", "image", "target"}) {
    throw ConfigError("manifest header must be 'id,image,target'");
  }
  std::vector<SourceCase> out;
  std::unordered_map<std::string, bool> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split(line);
    const std::string where = "manifest line " + std::to_string(line_no) + ": ";
    if (f.size() != 3) throw ConfigError(where + "expected 3 fields");
    if (f[0].empty()) throw ConfigError(where + "empty id");
    if (!seen.emplace(f[0], true).second) throw ConfigError(where + "duplicate id '" + f[0] + "'");
    SourceCase c;
    c.id = f[0];
    c.image_path = base / f[1];
    try {
      if (task == Task::classification) {
        c.label = static_cast<int>(csv::parse_int(f[2]));
        if (c.label < 0) throw ConfigError(where + "negative class label");
      } else {
        std::ifstream ann(base / f[2]);
        if (!ann) throw ConfigError(where + "cannot open annotation file " + (base / f[2]).string());
        c.truths = truths_from_json(nlohmann::json::parse(ann));
      }
    } catch (const LoadError& e) {
      throw ConfigError(where + e.what());
    } catch (const InvalidInput& e) {
      throw ConfigError(where + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + e.what());
    }
    out.push_back(std::move(c));
  }
  if (out.empty()) throw ConfigError("manifest lists no test cases");
  return out;
}

inline int source_class_of(const SourceCase& c, Task task) {
  if (task == Task::classification) return c.label;
  return c.truths.empty() ? 0 : c.truths.front().class_id;
}

// ---------------------------------------------------------------------------
// Configuration.

struct SutConfig {
  enum class Kind { oracle, external } kind = Kind::oracle;
  fs::path oracle_spec;
  ExternalSutConfig external;
};

struct FeatureSpec {
  enum class Source { builtin, sidecar } source = Source::builtin;
  fs::path sidecar;
};

/// Campaign configuration (one JSON document):
///   {"mode": "amt", "boundary_mr": "Rotation", "iterations": 10000, "seed": 7,
///    "task": "classification", "manifest": "suite.csv",
///    "sut": {"kind": "oracle", "spec": "oracle.json"}
///         | {"kind": "external", "command": [...], "timeout_s": 30},
///    "features": {"source": "builtin"} | {"source": "sidecar", "path": "f.csv"},
///    "exploration": {"strategy": "epsilon-greedy", "epsilon": 0.1, "cover_size": 3},
///    "scorer": {"kind": "linear", "learning_rate": 0.001, "hidden_units": 16},
///    "source_order": "uniform" | "sequential",
///    "snapshot_in": "...", "out_dir": "out", "log": "log.jsonl",
///    "snapshot_out": "snapshot.json", "table": "baseline.csv"}
/// Inputs resolve against the config file's directory; `out_dir` too, and
/// the three outputs resolve against `out_dir`.
struct CampaignConfig {
  Mode mode = Mode::amt;
  std::optional<std::string> boundary_mr;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
  Task task = Task::classification;
  fs::path manifest;
  SutConfig sut;
  FeatureSpec features;
  ExplorationConfig exploration;
  ScorerConfig scorer;
  SourceOrder source_order = SourceOrder::uniform;
  std::optional<fs::path> snapshot_in;
  fs::path out_dir = ".";
  fs::path log = "log.jsonl";
  fs::path snapshot_out = "snapshot.json";
  fs::path table = "baseline.csv";

  fs::path log_path() const { return out_dir / log; }
  fs::path snapshot_out_path() const { return out_dir / snapshot_out; }
  fs::path table_path() const { return out_dir / table; }

  /// Throws ConfigError on inconsistent settings.
  Relation validate() const {
    if (iterations < 1 && mode != Mode::baseline) throw ConfigError("iterations must be >= 1");
    try {
      exploration.validate();
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
    if (!(scorer.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (mode == Mode::boundary) {
      if (!boundary_mr) throw ConfigError("boundary mode needs 'boundary_mr'");
      Relation r;
      try {
        r = parse_relation(*boundary_mr);
      } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
      }
      if (!is_parameterized(r)) {
        throw ConfigError("boundary mode needs a parameterized relation, got " + *boundary_mr);
      }
      return r;
    }
    return Relation::blur;
  }

  static CampaignConfig from_json(const nlohmann::json& j, const fs::path& base_dir) {
    static const std::vector<std::string> known = {
        "mode", "boundary_mr", "iterations", "seed", "task", "manifest", "sut", "features", "exploration",
        "scorer", "source_order", "snapshot_in", "out_dir", "log", "snapshot_out", "table"};
    try {
      if (!j.is_object()) throw ConfigError("campaign config must be a JSON object");
      for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
          throw ConfigError("unknown config key '" + key + "'");
        }
      }
      CampaignConfig c;
      if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
      if (j.contains("boundary_mr")) c.boundary_mr = j.at("boundary_mr").get<std::string>();
      if (j.contains("iterations")) {
        const auto it = j.at("iterations").get<long long>();
        if (it < 0) throw ConfigError("iterations must be >= 1");
        c.iterations = static_cast<std::size_t>(it);
      }
      c.seed = j.value("seed", std::uint64_t{0});
      if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
      c.manifest = base_dir / j.at("manifest").get<std::string>();

      const auto& sut = j.at("sut");
      const auto kind = sut.at("kind").get<std::string>();
      if (kind == "oracle") {
        c.sut.kind = SutConfig::Kind::oracle;
        c.sut.oracle_spec = base_dir / sut.at("spec").get<std::string>();
      } else if (kind == "external") {
        c.sut.kind = SutConfig::Kind::external;
        c.sut.external.command = sut.at("command").get<std::vector<std::string>>();
        c.sut.external.timeout_s = sut.value("timeout_s", 30.0);
      } else {
        throw ConfigError("sut.kind must be 'oracle' or 'external'");
      }

      if (j.contains("features")) {
        const auto& f = j.at("features");
        const auto src = f.at("source").get<std::string>();
        if (src == "builtin") {
          c.features.source = FeatureSpec::Source::builtin;
        } else if (src == "sidecar") {
          c.features.source = FeatureSpec::Source::sidecar;
          c.features.sidecar = base_dir / f.at("path").get<std::string>();
        } else {
          throw ConfigError("features.source must be 'builtin' or 'sidecar'");
        }
      }
      if (j.contains("exploration")) {
        const auto& e = j.at("exploration");
        if (e.contains("strategy")) c.exploration.strategy = parse_strategy(e.at("strategy").get<std::string>());
        c.exploration.epsilon = e.value("epsilon", c.exploration.epsilon);
        c.exploration.cover_size = e.value("cover_size", c.exploration.cover_size);
      }
      if (j.contains("scorer")) {
        const auto& s = j.at("scorer");
        if (s.contains("kind")) c.scorer.kind = parse_scorer_kind(s.at("kind").get<std::string>());
        c.scorer.learning_rate = s.value("learning_rate", c.scorer.learning_rate);
        c.scorer.hidden_units = s.value("hidden_units", c.scorer.hidden_units);
      }
      if (j.contains("source_order")) {
        const auto o = j.at("source_order").get<std::string>();
        if (o == "uniform") {
          c.source_order = SourceOrder::uniform;
        } else if (o == "sequential") {
          c.source_order = SourceOrder::sequential;
        } else {
          throw ConfigError("source_order must be 'uniform' or 'sequential'");
        }
      }
      if (j.contains("snapshot_in") && !j.at("snapshot_in").is_null()) {
        c.snapshot_in = base_dir / j.at("snapshot_in").get<std::string>();
      }
      c.out_dir = base_dir / j.value("out_dir", std::string("."));
      c.log = j.value("log", std::string("log.jsonl"));
      c.snapshot_out = j.value("snapshot_out", std::string("snapshot.json"));
      c.table = j.value("table", std::string("baseline.csv"));
      return c;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed campaign config: ") + e.what());
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
  }

  static CampaignConfig load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j, path.parent_path());
  }
};

// ---------------------------------------------------------------------------
// Log records.

/// One campaign iteration. Outputs are the SUT's label (classification) or
/// mAP against the (transformed) annotations (detection).
struct LogRecord {
  std::uint64_t iteration = 0;
  Mode mode = Mode::amt;
  std::string source_id;
  int source_class = 0;
  std::optional<double> source_output;
  std::optional<double> followup_output;
  Relation mr = Relation::blur;
  std::optional<int> param;
  double main_propensity = 1.0;
  std::optional<double> param_propensity;
  std::optional<Verdict> verdict;  // empty when the SUT failed
  std::string error;
  std::optional<double> main_reward;
  std::optional<double> param_reward;
  double cumulative_violation_rate = 0.0;
  nlohmann::json rng;  // stream positions after this iteration
  std::string registry;

  bool failed() const noexcept { return !verdict.has_value(); }

  nlohmann::ordered_json to_json() const {
    const auto opt = [](const auto& v) -> nlohmann::ordered_json {
      if (v) return *v;
      return nullptr;
    };
    nlohmann::ordered_json j;
    j["iteration"] = iteration;
    j["mode"] = to_string(mode);
    j["source_id"] = source_id;
    j["source_class"] = source_class;
    j["source_output"] = opt(source_output);
    j["followup_output"] = opt(followup_output);
    j["mr"] = to_string(mr);
    j["param"] = opt(param);
    j["main_propensity"] = main_propensity;
    j["param_propensity"] = opt(param_propensity);
    j["verdict"] = verdict ? nlohmann::ordered_json(to_string(*verdict)) : nlohmann::ordered_json(nullptr);
    j["failed"] = failed();
    if (failed()) j["error"] = error;
    j["main_reward"] = opt(main_reward);
    j["param_reward"] = opt(param_reward);
    j["cumulative_violation_rate"] = cumulative_violation_rate;
    j["rng"] = rng;
    j["registry"] = registry;
    return j;
  }

  std::string to_line() const { return to_json().dump(); }

  static LogRecord from_json(const nlohmann::json& j) {
    const auto opt_d = [&](const char* k) -> std::optional<double> {
      if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
      return j.at(k).get<double>();
    };
    LogRecord r;
    r.iteration = j.at("iteration").get<std::uint64_t>();
    r.mode = parse_mode(j.at("mode").get<std::string>());
    r.source_id = j.at("source_id").get<std::string>();
    r.source_class = j.at("source_class").get<int>();
    r.source_output = opt_d("source_output");
    r.followup_output = opt_d("followup_output");
    r.mr = parse_relation(j.at("mr").get<std::string>());
    if (!j.at("param").is_null()) r.param = j.at("param").get<int>();
    r.main_propensity = j.at("main_propensity").get<double>();
    r.param_propensity = opt_d("param_propensity");
    if (!j.at("verdict").is_null()) r.verdict = parse_verdict(j.at("verdict").get<std::string>());
    r.error = j.value("error", std::string());
    r.main_reward = opt_d("main_reward");
    r.param_reward = opt_d("param_reward");
    r.cumulative_violation_rate = j.at("cumulative_violation_rate").get<double>();
    r.rng = j.at("rng");
    r.registry = j.at("registry").get<std::string>();
    return r;
  }
};

/// Reads a JSON-lines campaign log. Throws LoadError on malformed lines.
inline std::vector<LogRecord> read_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open log " + path.string());
  std::vector<LogRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(LogRecord::from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw LoadError(path.string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Baseline violation tables.

/// Violation rates with rows = (relation, parameter) and columns = classes
/// plus a pooled "all" column. NaN marks a class with no sources.
struct RateTable {
  std::vector<std::string> classes;
  struct Row {
    Relation mr = Relation::blur;
    std::optional<int> param;
    std::vector<double> rates;  // classes.size() + 1 entries, last is "all"

    bool operator==(const Row& o) const {
      if (mr != o.mr || param != o.param || rates.size() != o.rates.size()) return false;
      for (std::size_t i = 0; i < rates.size(); ++i) {
        if (!(rates[i] == o.rates[i] || (std::isnan(rates[i]) && std::isnan(o.rates[i])))) return false;
      }
      return true;
    }
  };
  std::vector<Row> rows;

  bool operator==(const RateTable&) const = default;

  std::string to_csv() const {
    std::vector<std::string> header{"mr", "param"};
    header.insert(header.end(), classes.begin(), classes.end());
    header.push_back("all");
    std::string out = csv::join(header) + "\n";
    for (const auto& row : rows) {
      std::vector<std::string> f{std::string(to_string(row.mr)), row.param ? std::to_string(*row.param) : ""};
      for (double r : row.rates) f.push_back(csv::format_double(r));
      out += csv::join(f) + "\n";
    }
    return out;
  }

  static RateTable from_csv(std::string_view text) {
    RateTable t;
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line)) throw LoadError("empty rate table");
    auto header = csv::split(line);
    if (header.size() < 3 || header[0] != "mr" || header[1] != "param" || header.back() != "all") {
      throw LoadError("rate table header must be 'mr,param,<classes...>,all'");
    }
    t.classes.assign(header.begin() + 2, header.end() - 1);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = csv::split(line);
      if (f.size() != header.size()) throw LoadError("rate table row has wrong width");
      Row row;
      try {
        row.mr = parse_relation(f[0]);
      } catch (const InvalidInput& e) {
        throw LoadError(e.what());
      }
      if (!f[1].empty()) row.param = static_cast<int>(csv::parse_int(f[1]));
      for (std::size_t i = 2; i < f.size(); ++i) row.rates.push_back(csv::parse_double(f[i]));
      t.rows.push_back(std::move(row));
    }
    return t;
  }

  static RateTable load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open rate table " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_csv(ss.str());
  }

  const Row* find(Relation mr, std::optional<int> param) const {
    for (const auto& r : rows) {
      if (r.mr == mr && r.param == param) return &r;
    }
    return nullptr;
  }
};

/// Execution and violation counts for the exhaustive baseline.
class ViolationTable {
 public:
  ViolationTable() = default;
  explicit ViolationTable(std::vector<std::string> classes) : classes_(std::move(classes)) {
    for (Relation r : kRelations) {
      if (!is_parameterized(r)) {
        keys_.push_back({r, std::nullopt});
      } else {
        for (int v : grid_for(r).values()) keys_.push_back({r, v});
      }
    }
    executions_.assign(keys_.size(), std::vector<std::uint64_t>(classes_.size(), 0));
    violations_ = executions_;
  }

  void add(Relation mr, std::optional<int> param, int cls, bool violated) {
    const std::size_t row = row_of(mr, param);
    const auto c = static_cast<std::size_t>(cls);
    if (c >= classes_.size()) throw InvalidInput("violation table: class out of range");
    ++executions_[row][c];
    if (violated) ++violations_[row][c];
  }

  std::uint64_t executions(Relation mr, std::optional<int> param, int cls) const {
    return executions_[row_of(mr, param)].at(static_cast<std::size_t>(cls));
  }
  std::uint64_t violations(Relation mr, std::optional<int> param, int cls) const {
    return violations_[row_of(mr, param)].at(static_cast<std::size_t>(cls));
  }

  RateTable rates() const {
    RateTable t;
    t.classes = classes_;
    for (std::size_t row = 0; row < keys_.size(); ++row) {
      RateTable::Row r{keys_[row].first, keys_[row].second, {}};
      std::uint64_t ex = 0, vi = 0;
      for (std::size_t c = 0; c < classes_.size(); ++c) {
        ex += executions_[row][c];
        vi += violations_[row][c];
        r.rates.push_back(executions_[row][c] ? static_cast<double>(violations_[row][c]) /
                                                    static_cast<double>(executions_[row][c])
                                              : std::nan(""));
      }
      r.rates.push_back(ex ? static_cast<double>(vi) / static_cast<double>(ex) : std::nan(""));
      t.rows.push_back(std::move(r));
    }
    return t;
  }

  bool operator==(const ViolationTable&) const = default;

 private:
  std::size_t row_of(Relation mr, std::optional<int> param) const {
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      if (keys_[i].first == mr && keys_[i].second == param) return i;
    }
    throw InvalidInput("violation table: unknown (relation, parameter)");
  }

  std::vector<std::string> classes_;
  std::vector<std::pair<Relation, std::optional<int>>> keys_;
  std::vector<std::vector<std::uint64_t>> executions_;
  std::vector<std::vector<std::uint64_t>> violations_;
};

// ---------------------------------------------------------------------------
// Campaign.

inline constexpr std::string_view kCampaignSnapshotSchema = "amt-campaign";
inline constexpr int kCampaignSnapshotVersion = 1;

struct CampaignResult {
  std::vector<LogRecord> log;
  std::optional<Hierarchy> state;
  std::optional<ViolationTable> table;
  double seconds = 0.0;
  std::uint64_t violations = 0;
  std::uint64_t evaluated = 0;

  double violation_rate() const {
    return evaluated ? static_cast<double>(violations) / static_cast<double>(evaluated) : 0.0;
  }
};

/// Runs one campaign. Construction validates everything (config, manifest,
/// oracle spec, feature sidecar, snapshot, SUT start-up) before any
/// artifact is written.
class Campaign {
 public:
  explicit Campaign(CampaignConfig config) : config_(std::move(config)) {
    boundary_mr_ = config_.validate();
    sources_ = load_manifest(config_.manifest, config_.task);

    if (config_.features.source == FeatureSpec::Source::sidecar) {
      sidecar_ = SidecarFeatures::load(config_.features.sidecar);
      for (const auto& s : sources_) {
        if (!sidecar_->contains(s.id)) throw ConfigError("feature sidecar has no row for '" + s.id + "'");
      }
      dimension_ = sidecar_->dimension();
    } else {
      dimension_ = kBuiltinFeatureDimension;
    }

    source_draws_ = RngStream(derive_seed(config_.seed, 1));
    explore_draws_ = RngStream(derive_seed(config_.seed, 2));

    if (config_.sut.kind == SutConfig::Kind::oracle) {
      auto spec = OracleSpec::load(config_.sut.oracle_spec);
      class_names_ = spec.class_names;
      if (class_names_.empty()) {
        for (std::size_t c = 0; c < spec.class_count; ++c) class_names_.push_back("class_" + std::to_string(c));
      }
      auto oracle = std::make_unique<OracleSut>(spec, derive_seed(config_.seed ^ spec.seed, 3));
      for (const auto& s : sources_) {
        const int cls = source_class_of(s, config_.task);
        if (static_cast<std::size_t>(cls) >= spec.class_count) {
          throw ConfigError("source '" + s.id + "' has class " + std::to_string(cls) + " outside the oracle's " +
                            std::to_string(spec.class_count) + " classes");
        }
        if (config_.task == Task::classification) oracle->set_label(s.id, s.label);
      }
      oracle_ = oracle.get();
      sut_ = std::move(oracle);
    } else {
      int max_class = 0;
      for (const auto& s : sources_) max_class = std::max(max_class, source_class_of(s, config_.task));
      for (int c = 0; c <= max_class; ++c) class_names_.push_back("class_" + std::to_string(c));
      auto ext = std::make_unique<ExternalSut>(config_.sut.external);
      try {
        ext->start();
      } catch (const SutError& e) {
        throw ConfigError(e.what());
      }
      sut_ = std::move(ext);
    }

    HierarchyConfig hcfg{dimension_, config_.exploration, config_.scorer, derive_seed(config_.seed, 2)};
    hierarchy_ = Hierarchy(hcfg);
    if (config_.snapshot_in && (config_.mode == Mode::amt || config_.mode == Mode::boundary)) {
      restore(*config_.snapshot_in);
    }
  }

  const CampaignConfig& config() const noexcept { return config_; }
  const Hierarchy& hierarchy() const noexcept { return hierarchy_; }
  std::size_t dimension() const noexcept { return dimension_; }
  const std::vector<SourceCase>& sources() const noexcept { return sources_; }

  CampaignResult run() {
    fs::create_directories(config_.out_dir);
    std::ofstream log(config_.log_path(), std::ios::trunc);
    if (!log) throw ConfigError("cannot write log " + config_.log_path().string());
    log_ = &log;

    CampaignResult result;
    const auto start = std::chrono::steady_clock::now();
    if (config_.mode == Mode::baseline) {
      result.table = run_baseline_loop(result);
      std::ofstream table(config_.table_path(), std::ios::trunc);
      if (!table) throw ConfigError("cannot write table " + config_.table_path().string());
      table << result.table->rates().to_csv();
    } else {
      for (std::size_t i = 0; i < config_.iterations; ++i) iterate(result);
      if (config_.mode != Mode::random) {
        result.state = hierarchy_;
        std::ofstream snap(config_.snapshot_out_path(), std::ios::trunc);
        if (!snap) throw ConfigError("cannot write snapshot " + config_.snapshot_out_path().string());
        snap << snapshot();
      }
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.violations = violations_;
    result.evaluated = evaluated_;
    log_ = nullptr;
    return result;
  }

  /// Campaign snapshot: the bandit hierarchy plus the loop's counters and
  /// stream positions, so a resumed run continues the same sequence.
  std::string snapshot() const {
    nlohmann::json j{
        {"schema", kCampaignSnapshotSchema},
        {"version", kCampaignSnapshotVersion},
        {"hierarchy", hierarchy_.to_json()},
        {"campaign",
         {{"next_iteration", next_iteration_},
          {"violations", violations_},
          {"evaluated", evaluated_},
          {"source_stream", {{"seed", source_draws_.seed()}, {"position", source_draws_.position()}}},
          {"oracle_stream",
           oracle_ ? nlohmann::json{{"seed", oracle_->draws().seed()}, {"position", oracle_->draws().position()}}
                   : nlohmann::json(nullptr)}}}};
    return j.dump();
  }

 private:
  void restore(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open snapshot " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("snapshot " + path.string() + " is not valid JSON: " + e.what());
    }
    try {
      const auto schema = j.at("schema").get<std::string>();
      if (schema == "amt-hierarchy") {
        hierarchy_ = Hierarchy::from_json(j);
      } else if (schema == kCampaignSnapshotSchema) {
        if (j.at("version").get<int>() != kCampaignSnapshotVersion) {
          throw LoadError("unsupported campaign snapshot version");
        }
        hierarchy_ = Hierarchy::from_json(j.at("hierarchy"));
        const auto& c = j.at("campaign");
        next_iteration_ = c.at("next_iteration").get<std::uint64_t>();
        violations_ = c.at("violations").get<std::uint64_t>();
        evaluated_ = c.at("evaluated").get<std::uint64_t>();
        source_draws_ = RngStream(c.at("source_stream").at("seed").get<std::uint64_t>(),
                                  c.at("source_stream").at("position").get<std::uint64_t>());
        if (oracle_ && !c.at("oracle_stream").is_null()) {
          oracle_->set_draws(RngStream(c.at("oracle_stream").at("seed").get<std::uint64_t>(),
                                       c.at("oracle_stream").at("position").get<std::uint64_t>()));
        }
      } else {
        throw LoadError("unknown snapshot schema '" + schema + "'");
      }
    } catch (const LoadError& e) {
      throw ConfigError(path.string() + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ": corrupt snapshot: " + e.what());
    }
    if (hierarchy_.dimension() != dimension_) {
      throw ConfigError("snapshot context dimension " + std::to_string(hierarchy_.dimension()) +
                        " does not match the feature dimension " + std::to_string(dimension_));
    }
  }

  const RasterImage& image_of(std::size_t idx) {
    const auto it = images_.find(idx);
    if (it != images_.end()) return it->second;
    RasterImage img = read_ppm(sources_[idx].image_path);
    const std::size_t bytes = img.pixels().size();
    if (image_bytes_ + bytes > kImageCacheBytes) {
      scratch_ = std::move(img);
      return scratch_;
    }
    image_bytes_ += bytes;
    return images_.emplace(idx, std::move(img)).first->second;
  }

  const ContextVector& context_of(std::size_t idx) {
    const auto it = contexts_.find(idx);
    if (it != contexts_.end()) return it->second;
    ContextVector c = sidecar_ ? sidecar_->get(sources_[idx].id) : extract_builtin(image_of(idx));
    return contexts_.emplace(idx, std::move(c)).first->second;
  }

  SutRequest source_request(std::size_t idx) {
    const auto& s = sources_[idx];
    SutRequest r;
    r.source_id = s.id;
    r.task = config_.task;
    if (sut_->needs_image_files()) {
      r.image_path = s.image_path;
    } else {
      r.image = &image_of(idx);
    }
    if (config_.task == Task::detection) r.annotations = s.truths;
    return r;
  }

  const SutOutput& source_output(std::size_t idx) {
    const auto it = source_outputs_.find(idx);
    if (it != source_outputs_.end()) return it->second;
    SutOutput out = sut_->execute(source_request(idx));
    check_output(out);
    return source_outputs_.emplace(idx, std::move(out)).first->second;
  }

  void check_output(const SutOutput& out) const {
    if (out.task() != config_.task) throw SutError("SUT answered with the wrong output kind");
  }

  struct Outcome {
    Verdict verdict;
    double source_value;
    double followup_value;
  };

  /// Transform, execute, judge. Throws SutError on execution failure.
  Outcome execute_followup(std::size_t idx, Relation mr, std::optional<int> param) {
    const auto& s = sources_[idx];
    const SutOutput& src_out = source_output(idx);
    const RasterImage& img = image_of(idx);
    const RasterImage followup = apply_mr(mr, param, img);

    SutRequest r;
    r.source_id = s.id;
    r.task = config_.task;
    r.relation = AppliedRelation{mr, param};
    std::vector<GroundTruth> truths;
    if (config_.task == Task::detection) {
      // transform_boxes drops vanished boxes, so map them one at a time to keep classes aligned.
      for (const auto& t : s.truths) {
        const auto moved = transform_boxes(mr, param, std::span(&t.box, 1), img.width(), img.height());
        if (!moved.empty()) truths.push_back({moved.front(), t.class_id});
      }
      r.annotations = truths;
    }
    if (sut_->needs_image_files()) {
      const fs::path p = config_.out_dir / "followup.ppm";
      write_ppm(p, followup);
      r.image_path = p;
    } else {
      r.image = &followup;
    }
    const SutOutput out = sut_->execute(r);
    check_output(out);

    if (config_.task == Task::classification) {
      return {classification_verdict(src_out.label(), out.label()), static_cast<double>(src_out.label()),
              static_cast<double>(out.label())};
    }
    const double src_map = map_score(src_out.detections(), s.truths, map_config_);
    const double fol_map = map_score(out.detections(), truths, map_config_);
    return {detection_verdict(src_map, fol_map, map_config_), src_map, fol_map};
  }

  std::size_t draw_source() {
    if (config_.source_order == SourceOrder::sequential) return next_iteration_ % sources_.size();
    return source_draws_.below(sources_.size());
  }

  nlohmann::json rng_checkpoint() const {
    nlohmann::json explore = nlohmann::json::array();
    if (config_.mode == Mode::random) {
      explore.push_back(explore_draws_.position());
    } else if (config_.mode != Mode::baseline) {
      explore.push_back(hierarchy_.main().rng().position());
      for (Relation r : kRelations) {
        if (is_parameterized(r)) explore.push_back(hierarchy_.param_bandit(r).rng().position());
      }
    }
    return {{"source", source_draws_.position()},
            {"explore", explore},
            {"oracle", oracle_ ? nlohmann::json(oracle_->draws().position()) : nlohmann::json(nullptr)}};
  }

  void emit(LogRecord& rec, CampaignResult& result) {
    rec.cumulative_violation_rate =
        evaluated_ ? static_cast<double>(violations_) / static_cast<double>(evaluated_) : 0.0;
    rec.rng = rng_checkpoint();
    rec.registry = registry_;
    (*log_) << rec.to_line() << '\n';
    log_->flush();
    result.log.push_back(std::move(rec));
    ++next_iteration_;
  }

  void iterate(CampaignResult& result) {
    const std::size_t idx = draw_source();
    const auto& s = sources_[idx];

    RelationChoice choice;
    std::optional<ContextVector> context;
    switch (config_.mode) {
      case Mode::amt:
        context = context_of(idx);
        choice = hierarchy_.select_relation(*context);
        break;
      case Mode::boundary:
        context = context_of(idx);
        choice = hierarchy_.select_parameter(boundary_mr_, *context);
        break;
      case Mode::random: {
        choice.mr = kRelations[explore_draws_.below(kRelationCount)];
        choice.main_propensity = 1.0 / static_cast<double>(kRelationCount);
        if (is_parameterized(choice.mr)) {
          const auto& grid = grid_for(choice.mr);
          choice.param = grid[explore_draws_.below(grid.size())];
          choice.param_propensity = 1.0 / static_cast<double>(grid.size());
        }
        break;
      }
      case Mode::baseline: break;
    }

    LogRecord rec;
    rec.iteration = next_iteration_;
    rec.mode = config_.mode;
    rec.source_id = s.id;
    rec.source_class = source_class_of(s, config_.task);
    rec.mr = choice.mr;
    rec.param = choice.param;
    rec.main_propensity = choice.main_propensity;
    rec.param_propensity = choice.param_propensity;
    try {
      const Outcome o = execute_followup(idx, choice.mr, choice.param);
      rec.verdict = o.verdict;
      rec.source_output = o.source_value;
      rec.followup_output = o.followup_value;
    } catch (const SutError& e) {
      rec.error = e.what();
    } catch (const LoadError& e) {
      rec.error = e.what();
    }

    if (rec.verdict) {
      ++evaluated_;
      if (*rec.verdict == Verdict::violated) ++violations_;
      rec.main_reward = main_reward(*rec.verdict);
      if (choice.param) rec.param_reward = param_reward(*choice.param, *rec.verdict);
      if (config_.mode == Mode::amt) {
        hierarchy_.update(*context, choice, *rec.verdict);
      } else if (config_.mode == Mode::boundary) {
        hierarchy_.update_parameter(*context, choice, *rec.verdict);
      }
    }
    emit(rec, result);
  }

  ViolationTable run_baseline_loop(CampaignResult& result) {
    ViolationTable table(class_names_);
    for (std::size_t idx = 0; idx < sources_.size(); ++idx) {
      const auto& s = sources_[idx];
      const int cls = source_class_of(s, config_.task);
      for (Relation mr : kRelations) {
        std::vector<std::optional<int>> params;
        if (is_parameterized(mr)) {
          for (int v : grid_for(mr).values()) params.emplace_back(v);
        } else {
          params.emplace_back(std::nullopt);
        }
        for (const auto& param : params) {
          LogRecord rec;
          rec.iteration = next_iteration_;
          rec.mode = Mode::baseline;
          rec.source_id = s.id;
          rec.source_class = cls;
          rec.mr = mr;
          rec.param = param;
          rec.main_propensity = 1.0;
          if (param) rec.param_propensity = 1.0;
          try {
            const Outcome o = execute_followup(idx, mr, param);
            rec.verdict = o.verdict;
            rec.source_output = o.source_value;
            rec.followup_output = o.followup_value;
          } catch (const SutError& e) {
            rec.error = e.what();
          } catch (const LoadError& e) {
            rec.error = e.what();
          }
          if (rec.verdict) {
            ++evaluated_;
            const bool violated = *rec.verdict == Verdict::violated;
            if (violated) ++violations_;
            rec.main_reward = main_reward(*rec.verdict);
            if (param) rec.param_reward = param_reward(*param, *rec.verdict);
            table.add(mr, param, cls, violated);
          }
          emit(rec, result);
        }
      }
    }
    return table;
  }

  static constexpr std::size_t kImageCacheBytes = 64u << 20;

  CampaignConfig config_;
  Relation boundary_mr_ = Relation::rotation;
  std::vector<SourceCase> sources_;
  std::optional<SidecarFeatures> sidecar_;
  std::size_t dimension_ = 0;
  std::vector<std::string> class_names_;
  std::unique_ptr<Sut> sut_;
  OracleSut* oracle_ = nullptr;
  Hierarchy hierarchy_;
  RngStream source_draws_;
  RngStream explore_draws_;
  MapConfig map_config_;
  std::string registry_ = registry_digest();

  std::uint64_t next_iteration_ = 0;
  std::uint64_t violations_ = 0;
  std::uint64_t evaluated_ = 0;

  std::unordered_map<std::size_t, RasterImage> images_;
  std::size_t image_bytes_ = 0;
  RasterImage scratch_;
  std::unordered_map<std::size_t, ContextVector> contexts_;
  std::unordered_map<std::size_t, SutOutput> source_outputs_;
  std::ofstream* log_ = nullptr;
};

inline CampaignResult run_campaign(CampaignConfig config) { return Campaign(std::move(config)).run(); }

inline CampaignResult run_amt(CampaignConfig config) {
  config.mode = Mode::amt;
  return run_campaign(std::move(config));
}
inline CampaignResult run_random(CampaignConfig config) {
  config.mode = Mode::random;
  return run_campaign(std::move(config));
}
inline CampaignResult run_baseline(CampaignConfig config) {
  config.mode = Mode::baseline;
  return run_campaign(std::move(config));
}
inline CampaignResult run_boundary(CampaignConfig config) {
  config.mode = Mode::boundary;
  return run_campaign(std::move(config));
}

}  // namespace amt
