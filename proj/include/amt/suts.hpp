#pragma once

// System-under-test boundary: the execution contract, a synthetic oracle
// with known violation probabilities, and an adapter that talks to a child
// process over line-delimited JSON.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "amt/error.hpp"
#include "amt/image.hpp"
#include "amt/relations.hpp"
#include "amt/rng.hpp"
#include "amt/verdicts.hpp"
#include "json.hpp"

namespace amt {

enum class Task { classification, detection };

inline std::string_view to_string(Task t) { return t == Task::classification ? "classification" : "detection"; }

inline Task parse_task(std::string_view s) {
  if (s == "classification") return Task::classification;
  if (s == "detection") return Task::detection;
  throw ConfigError("unknown task: " + std::string(s));
}

/// Provenance of a follow-up test case. Only synthetic SUTs look at it; it
/// is never sent to external processes.
struct AppliedRelation {
  Relation mr = Relation::blur;
  std::optional<int> param;
};

struct SutRequest {
  std::string source_id;
  Task task = Task::classification;
  const RasterImage* image = nullptr;  // non-owning; may be null for file-based SUTs
  std::optional<std::filesystem::path> image_path;
  std::optional<std::vector<GroundTruth>> annotations;  // present iff task == detection
  std::optional<AppliedRelation> relation;              // empty for the source test case
};

class SutOutput {
 public:
  SutOutput() : value_(0) {}
  static SutOutput label(int l) { return SutOutput(l); }
  static SutOutput detections(std::vector<Detection> d) { return SutOutput(std::move(d)); }

  Task task() const noexcept { return std::holds_alternative<int>(value_) ? Task::classification : Task::detection; }
  int label() const {
    if (const int* l = std::get_if<int>(&value_)) return *l;
    throw SutError("SUT output is not a classification label");
  }
  const std::vector<Detection>& detections() const {
    if (const auto* d = std::get_if<std::vector<Detection>>(&value_)) return *d;
    throw SutError("SUT output is not a detection list");
  }

  bool operator==(const SutOutput&) const = default;

 private:
  explicit SutOutput(int l) : value_(l) {}
  explicit SutOutput(std::vector<Detection> d) : value_(std::move(d)) {}
  std::variant<int, std::vector<Detection>> value_;
};

class Sut {
 public:
  virtual ~Sut() = default;
  virtual SutOutput execute(const SutRequest& request) = 0;
  /// True when requests must carry an image file path.
  virtual bool needs_image_files() const { return false; }
};

// ---------------------------------------------------------------------------
// JSON encodings shared by the wire protocol and annotation files.

inline nlohmann::json box_to_json(const BoundingBox& b) {
  return nlohmann::json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

inline BoundingBox box_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw InvalidInput("box must be [x_min, y_min, x_max, y_max]");
  BoundingBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!std::isfinite(b.x_min) || !std::isfinite(b.y_min) || !std::isfinite(b.x_max) ||
      !std::isfinite(b.y_max) || !b.valid()) {
    throw InvalidInput("box coordinates must be finite with min < max");
  }
  return b;
}

inline nlohmann::json detections_to_json(const std::vector<Detection>& dets) {
  auto out = nlohmann::json::array();
  for (const auto& d : dets) {
    out.push_back({{"box", box_to_json(d.box)}, {"class_id", d.class_id}, {"score", d.score}});
  }
  return out;
}

inline std::vector<Detection> detections_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw InvalidInput("detections must be a JSON array");
  std::vector<Detection> out;
  for (const auto& e : j) {
    Detection d{box_from_json(e.at("box")), e.at("class_id").get<int>(), e.at("score").get<double>()};
    if (!std::isfinite(d.score)) throw InvalidInput("detection score must be finite");
    out.push_back(d);
  }
  return out;
}

inline nlohmann::json truths_to_json(const std::vector<GroundTruth>& truths) {
  auto out = nlohmann::json::array();
  for (const auto& t : truths) out.push_back({{"box", box_to_json(t.box)}, {"class_id", t.class_id}});
  return out;
}

inline std::vector<GroundTruth> truths_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw InvalidInput("annotations must be a JSON array");
  std::vector<GroundTruth> out;
  for (const auto& e : j) out.push_back({box_from_json(e.at("box")), e.at("class_id").get<int>()});
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic oracle.

enum class OracleMode { deterministic_hash, bernoulli };

/// p(|phi|) = min(p_max, p0 + slope * |phi|).
struct ProbabilityRamp {
  double p0 = 0.0;
  double slope = 0.0;
  double p_max = 1.0;

  double at(int magnitude) const { return std::min(p_max, p0 + slope * magnitude); }
};

/// Violation probabilities by (source class, relation, parameter bucket).
///
/// JSON form:
///   {"class_count": 10, "mode": "bernoulli" | "deterministic-hash", "seed": 1,
///    "class_names": [...],                      (optional)
///    "table": {"Blur": 0.1, "FlipUD": [p per class],
///              "Rotation": {"by_step": [18 values for |phi| = 5..90]},
///              "Shear": {"ramp": {"p0": .., "slope": .., "p_max": ..}}},
///    "ramp": {"p0": .., "slope": .., "p_max": ..}}  (default for Rotation/Shear)
/// Every relation must resolve to a probability.
class OracleSpec {
 public:
  struct Entry {
    std::vector<double> per_class;  // size 1 (all classes) or class_count
    std::vector<double> by_step;    // per |phi| step
    std::optional<ProbabilityRamp> ramp;
  };

  std::size_t class_count = 1;
  OracleMode mode = OracleMode::bernoulli;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;
  std::array<std::optional<Entry>, kRelationCount> table;

  static OracleSpec from_json(const nlohmann::json& j) {
    try {
      OracleSpec spec;
      const auto count = j.at("class_count").get<long long>();
      if (count < 1) throw ConfigError("oracle class_count must be >= 1");
      spec.class_count = static_cast<std::size_t>(count);
      const auto mode = j.at("mode").get<std::string>();
      if (mode == "deterministic-hash") {
        spec.mode = OracleMode::deterministic_hash;
      } else if (mode == "bernoulli") {
        spec.mode = OracleMode::bernoulli;
      } else {
        throw ConfigError("oracle mode must be 'deterministic-hash' or 'bernoulli'");
      }
      spec.seed = j.value("seed", std::uint64_t{0});
      if (j.contains("class_names")) {
        spec.class_names = j.at("class_names").get<std::vector<std::string>>();
        if (spec.class_names.size() != spec.class_count) throw ConfigError("class_names length != class_count");
      }
      if (!j.contains("table") && !j.contains("ramp")) throw ConfigError("oracle spec needs 'table' or 'ramp'");
      if (j.contains("table")) {
        for (const auto& [name, value] : j.at("table").items()) {
          Relation r;
          try {
            r = parse_relation(name);
          } catch (const InvalidInput& e) {
            throw ConfigError(e.what());
          }
          spec.table[index_of(r)] = parse_entry(spec, r, value);
        }
      }
      if (j.contains("ramp")) {
        const auto ramp = parse_ramp(j.at("ramp"));
        for (Relation r : kRelations) {
          if (is_parameterized(r) && !spec.table[index_of(r)]) spec.table[index_of(r)] = Entry{{}, {}, ramp};
        }
      }
      for (Relation r : kRelations) {
        if (!spec.table[index_of(r)]) {
          throw ConfigError("oracle spec has no entry for " + std::string(to_string(r)));
        }
      }
      return spec;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed oracle spec: ") + e.what());
    }
  }

  static OracleSpec load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open oracle spec " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("oracle spec " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
  }

  /// Parameters are bucketed to the nearest 5-degree step of the grid.
  double probability(int source_class, Relation mr, std::optional<int> param) const {
    if (source_class < 0 || static_cast<std::size_t>(source_class) >= class_count) {
      throw InvalidInput("oracle: source class " + std::to_string(source_class) + " out of range");
    }
    const auto& entry = table[index_of(mr)];
    if (!entry) throw ConfigError("oracle spec has no entry for " + std::string(to_string(mr)));
    if (!entry->per_class.empty()) {
      return entry->per_class.size() == 1 ? entry->per_class[0]
                                          : entry->per_class[static_cast<std::size_t>(source_class)];
    }
    if (!param) throw InvalidInput(std::string(to_string(mr)) + " requires a parameter");
    const int max_mag = grid_for(mr).values().back();
    int mag = static_cast<int>(std::lround(std::abs(*param) / 5.0)) * 5;
    mag = std::clamp(mag, 5, max_mag);
    if (!entry->by_step.empty()) return entry->by_step[static_cast<std::size_t>(mag / 5 - 1)];
    return entry->ramp->at(mag);
  }

 private:
  static void check_p(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("oracle probabilities must lie in [0, 1]");
  }

  static ProbabilityRamp parse_ramp(const nlohmann::json& j) {
    ProbabilityRamp r{j.at("p0").get<double>(), j.at("slope").get<double>(), j.value("p_max", 1.0)};
    check_p(r.p0);
    check_p(r.p_max);
    for (int mag = 5; mag <= 90; mag += 5) check_p(r.at(mag));
    return r;
  }

  static Entry parse_entry(const OracleSpec& spec, Relation r, const nlohmann::json& v) {
    Entry e;
    if (v.is_number()) {
      e.per_class = {v.get<double>()};
    } else if (v.is_array()) {
      e.per_class = v.get<std::vector<double>>();
      if (e.per_class.size() != spec.class_count) {
        throw ConfigError(std::string(to_string(r)) + ": per-class array length != class_count");
      }
    } else if (v.is_object() && is_parameterized(r) && v.contains("by_step")) {
      e.by_step = v.at("by_step").get<std::vector<double>>();
      if (e.by_step.size() != grid_for(r).size() / 2) {
        throw ConfigError(std::string(to_string(r)) + ": by_step needs " +
                          std::to_string(grid_for(r).size() / 2) + " values");
      }
    } else if (v.is_object() && is_parameterized(r) && v.contains("ramp")) {
      e.ramp = parse_ramp(v.at("ramp"));
    } else {
      throw ConfigError(std::string(to_string(r)) + ": unsupported table entry");
    }
    for (double p : e.per_class) check_p(p);
    for (double p : e.by_step) check_p(p);
    return e;
  }
};

/// Seeded 64-bit hash of (seed, source id, relation, parameter) in [0, 1).
inline double oracle_hash_unit(std::uint64_t seed, std::string_view source_id, Relation mr,
                               std::optional<int> param) {
  std::uint64_t h = splitmix64(seed ^ fnv1a(source_id));
  h = splitmix64(h ^ (index_of(mr) + 1));
  h = splitmix64(h ^ static_cast<std::uint64_t>(param.value_or(0) + 1000));
  return to_unit_interval(h);
}

/// Deterministic-hash mode: violated iff the hash unit is below p. Bernoulli
/// mode: one fresh draw from `draws` per call.
inline bool oracle_violates(const OracleSpec& spec, std::string_view source_id, int source_class, Relation mr,
                            std::optional<int> param, RngStream& draws) {
  const double p = spec.probability(source_class, mr, param);
  if (spec.mode == OracleMode::deterministic_hash) return oracle_hash_unit(spec.seed, source_id, mr, param) < p;
  return draws.uniform() < p;
}

/// Synthetic SUT. Sources are answered with their assigned label (or their
/// own annotations); follow-ups are answered the same unless the oracle
/// decides a violation, in which case the label becomes (label + 1) mod C
/// and detections vanish.
class OracleSut : public Sut {
 public:
  OracleSut(OracleSpec spec, std::uint64_t stream_seed) : spec_(std::move(spec)), draws_(stream_seed) {}

  const OracleSpec& spec() const noexcept { return spec_; }
  const RngStream& draws() const noexcept { return draws_; }
  void set_draws(RngStream s) { draws_ = s; }

  void set_label(const std::string& source_id, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= spec_.class_count) {
      throw ConfigError("label " + std::to_string(label) + " of '" + source_id + "' is outside the oracle's classes");
    }
    labels_[source_id] = label;
  }

  int source_class(const SutRequest& r) const {
    if (r.task == Task::classification) {
      const auto it = labels_.find(r.source_id);
      if (it == labels_.end()) throw SutError("oracle has no label for source '" + r.source_id + "'");
      return it->second;
    }
    if (!r.annotations || r.annotations->empty()) return 0;
    return r.annotations->front().class_id;
  }

  SutOutput execute(const SutRequest& r) override {
    const int cls = source_class(r);
    const bool violated =
        r.relation && oracle_violates(spec_, r.source_id, cls, r.relation->mr, r.relation->param, draws_);
    if (r.task == Task::classification) {
      return SutOutput::label(violated ? static_cast<int>((static_cast<std::size_t>(cls) + 1) % spec_.class_count)
                                       : cls);
    }
    std::vector<Detection> dets;
    if (!violated && r.annotations) {
      for (const auto& t : *r.annotations) dets.push_back({t.box, t.class_id, 1.0});
    }
    return SutOutput::detections(std::move(dets));
  }

 private:
  OracleSpec spec_;
  RngStream draws_;
  std::unordered_map<std::string, int> labels_;
};

// ---------------------------------------------------------------------------
// External process adapter.

struct ExternalSutConfig {
  std::vector<std::string> command;
  double timeout_s = 30.0;
};

/// Child process speaking one JSON object per line on stdin/stdout.
/// Request:  {"id", "task", "image_path", "annotations"?}
/// Response: {"label": int} or {"detections": [{box, class_id, score}]}
/// A timeout, EOF, or malformed line kills the child; the next request
/// starts a fresh one.
class ExternalSut : public Sut {
 public:
  explicit ExternalSut(ExternalSutConfig config) : config_(std::move(config)) {
    if (config_.command.empty()) throw ConfigError("external SUT command is empty");
    if (!(config_.timeout_s > 0.0)) throw ConfigError("external SUT timeout must be positive");
  }
  ExternalSut(const ExternalSut&) = delete;
  ExternalSut& operator=(const ExternalSut&) = delete;
  ~ExternalSut() override { stop(); }

  bool needs_image_files() const override { return true; }

  /// Starts the child now so spawn failures surface before a campaign.
  void start() {
    if (pid_ > 0) return;
    std::signal(SIGPIPE, SIG_IGN);
    int in_pipe[2], out_pipe[2], err_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0 || ::pipe2(out_pipe, O_CLOEXEC) != 0 ||
        ::pipe2(err_pipe, O_CLOEXEC) != 0) {
      throw SutError(std::string("pipe: ") + std::strerror(errno));
    }
    std::vector<char*> argv;
    for (auto& a : config_.command) argv.push_back(a.data());
    argv.push_back(nullptr);

    const pid_t pid = ::fork();
    if (pid < 0) throw SutError(std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
      ::dup2(in_pipe[0], STDIN_FILENO);
      ::dup2(out_pipe[1], STDOUT_FILENO);
      ::execvp(argv[0], argv.data());
      const int err = errno;
      [[maybe_unused]] auto n = ::write(err_pipe[1], &err, sizeof err);
      ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    int child_errno = 0;
    const auto n = ::read(err_pipe[0], &child_errno, sizeof child_errno);
    ::close(err_pipe[0]);
    if (n > 0) {
      ::close(in_pipe[1]);
      ::close(out_pipe[0]);
      ::waitpid(pid, nullptr, 0);
      throw SutError("cannot start external SUT '" + config_.command.front() + "': " + std::strerror(child_errno));
    }
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    buffer_.clear();
  }

  void stop() {
    if (pid_ <= 0) return;
    ::close(to_child_);
    ::close(from_child_);
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
    pid_ = -1;
    to_child_ = from_child_ = -1;
    buffer_.clear();
  }

  SutOutput execute(const SutRequest& r) override {
    if (!r.image_path) throw SutError("external SUT requests need an image path");
    start();
    nlohmann::json req{{"id", r.source_id}, {"task", to_string(r.task)}, {"image_path", r.image_path->string()}};
    if (r.annotations) req["annotations"] = truths_to_json(*r.annotations);
    try {
      write_line(req.dump());
      const std::string line = read_line();
      return parse_response(line, r.task);
    } catch (const SutError&) {
      stop();
      throw;
    }
  }

  static SutOutput parse_response(const std::string& line, Task task) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw SutError("protocol error: response is not JSON: " + line.substr(0, 200));
    }
    if (!j.is_object()) throw SutError("protocol error: response is not a JSON object");
    try {
      if (task == Task::classification) {
        if (!j.contains("label") || !j.at("label").is_number_integer()) {
          throw SutError("protocol error: classification response needs an integer 'label'");
        }
        return SutOutput::label(j.at("label").get<int>());
      }
      if (!j.contains("detections")) throw SutError("protocol error: detection response needs 'detections'");
      return SutOutput::detections(detections_from_json(j.at("detections")));
    } catch (const nlohmann::json::exception& e) {
      throw SutError(std::string("protocol error: ") + e.what());
    } catch (const InvalidInput& e) {
      throw SutError(std::string("protocol error: ") + e.what());
    }
  }

 private:
  void write_line(const std::string& s) {
    std::string data = s + "\n";
    std::size_t off = 0;
    while (off < data.size()) {
      const auto n = ::write(to_child_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw SutError(std::string("write to external SUT failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + std::chrono::duration_cast<clock::duration>(
                                             std::chrono::duration<double>(config_.timeout_s));
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now()).count();
      if (left <= 0) throw SutError("external SUT timed out");
      pollfd pfd{from_child_, POLLIN, 0};
      const int rc = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left, 1 << 30)));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw SutError(std::string("poll failed: ") + std::strerror(errno));
      }
      if (rc == 0) throw SutError("external SUT timed out");
      char chunk[4096];
      const auto n = ::read(from_child_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw SutError(std::string("read from external SUT failed: ") + std::strerror(errno));
      }
      if (n == 0) throw SutError("external SUT closed its output");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  ExternalSutConfig config_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

}  // namespace amt
