#pragma once

// Reports are pure folds over campaign logs: per-relation rates, per-parameter
// histograms and summary scalars, written as CSV/JSON data files.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "amt/campaign.hpp"
#include "amt/csv.hpp"
#include "amt/error.hpp"
#include "amt/relations.hpp"
#include "json.hpp"

namespace amt {

struct LogTally {
  std::uint64_t selections = 0;  // all records, failed included
  std::uint64_t evaluated = 0;
  std::uint64_t violations = 0;

  void add(const LogRecord& r) {
    ++selections;
    if (r.failed()) return;
    ++evaluated;
    if (*r.verdict == Verdict::violated) ++violations;
  }
  double rate() const {
    return evaluated ? static_cast<double>(violations) / static_cast<double>(evaluated) : std::nan("");
  }
  bool operator==(const LogTally&) const = default;
};

/// One row of the per-relation table.
struct MrRow {
  std::string label;
  Relation mr = Relation::blur;
  LogTally tally;
  double frequency = 0.0;          // selections / records in that log
  std::optional<double> baseline;  // pooled baseline rate for the relation

  bool operator==(const MrRow& o) const {
    const auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
    return label == o.label && mr == o.mr && tally == o.tally && same(frequency, o.frequency) &&
           baseline.has_value() == o.baseline.has_value() && (!baseline || same(*baseline, *o.baseline));
  }
};

/// One bucket of a parameter histogram.
struct ParamRow {
  std::string label;
  Relation mr = Relation::rotation;
  int param = 0;
  LogTally tally;
  double frequency = 0.0;  // selections / selections of the relation
  std::optional<double> baseline;

  bool operator==(const ParamRow& o) const {
    const auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
    return label == o.label && mr == o.mr && param == o.param && tally == o.tally &&
           same(frequency, o.frequency) && baseline.has_value() == o.baseline.has_value() &&
           (!baseline || same(*baseline, *o.baseline));
  }
};

struct LogSummary {
  std::string label;
  std::string mode;
  std::uint64_t records = 0;
  std::uint64_t failed = 0;
  LogTally tally;
  std::optional<double> seconds_per_iteration;
};

struct Report {
  std::string registry;
  std::vector<MrRow> mr_rows;
  std::vector<ParamRow> param_rows;
  std::vector<LogSummary> summaries;

  static std::string mr_csv(const std::vector<MrRow>& rows) {
    std::string out = "label,mr,selections,evaluated,violations,rate,frequency,baseline\n";
    for (const auto& r : rows) {
      out += csv::join({r.label, std::string(to_string(r.mr)), std::to_string(r.tally.selections),
                        std::to_string(r.tally.evaluated), std::to_string(r.tally.violations),
                        csv::format_double(r.tally.rate()), csv::format_double(r.frequency),
                        r.baseline ? csv::format_double(*r.baseline) : ""}) +
             "\n";
    }
    return out;
  }

  static std::vector<MrRow> parse_mr_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != "label,mr,selections,evaluated,violations,rate,frequency,baseline") {
      throw LoadError("unexpected per-relation report header");
    }
    std::vector<MrRow> rows;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = csv::split(line);
      if (f.size() != 8) throw LoadError("per-relation report row has wrong width");
      MrRow r;
      r.label = f[0];
      r.mr = parse_relation(f[1]);
      r.tally = {static_cast<std::uint64_t>(csv::parse_int(f[2])), static_cast<std::uint64_t>(csv::parse_int(f[3])),
                 static_cast<std::uint64_t>(csv::parse_int(f[4]))};
      r.frequency = csv::parse_double(f[6]);
      if (!f[7].empty()) r.baseline = csv::parse_double(f[7]);
      rows.push_back(std::move(r));
    }
    return rows;
  }

  static std::string param_csv(const std::vector<ParamRow>& rows) {
    std::string out = "label,mr,param,selections,evaluated,violations,rate,frequency,baseline\n";
    for (const auto& r : rows) {
      out += csv::join({r.label, std::string(to_string(r.mr)), std::to_string(r.param),
                        std::to_string(r.tally.selections), std::to_string(r.tally.evaluated),
                        std::to_string(r.tally.violations), csv::format_double(r.tally.rate()),
                        csv::format_double(r.frequency), r.baseline ? csv::format_double(*r.baseline) : ""}) +
             "\n";
    }
    return out;
  }

  static std::vector<ParamRow> parse_param_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) ||
        line != "label,mr,param,selections,evaluated,violations,rate,frequency,baseline") {
      throw LoadError("unexpected parameter report header");
    }
    std::vector<ParamRow> rows;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = csv::split(line);
      if (f.size() != 9) throw LoadError("parameter report row has wrong width");
      ParamRow r;
      r.label = f[0];
      r.mr = parse_relation(f[1]);
      r.param = static_cast<int>(csv::parse_int(f[2]));
      r.tally = {static_cast<std::uint64_t>(csv::parse_int(f[3])), static_cast<std::uint64_t>(csv::parse_int(f[4])),
                 static_cast<std::uint64_t>(csv::parse_int(f[5]))};
      r.frequency = csv::parse_double(f[7]);
      if (!f[8].empty()) r.baseline = csv::parse_double(f[8]);
      rows.push_back(std::move(r));
    }
    return rows;
  }

  nlohmann::ordered_json summary_json() const {
    nlohmann::ordered_json logs = nlohmann::ordered_json::array();
    for (const auto& s : summaries) {
      nlohmann::ordered_json j;
      j["label"] = s.label;
      j["mode"] = s.mode;
      j["records"] = s.records;
      j["failed"] = s.failed;
      j["evaluated"] = s.tally.evaluated;
      j["violations"] = s.tally.violations;
      j["violation_rate"] = s.tally.evaluated ? nlohmann::ordered_json(s.tally.rate()) : nullptr;
      j["seconds_per_iteration"] =
          s.seconds_per_iteration ? nlohmann::ordered_json(*s.seconds_per_iteration) : nullptr;
      logs.push_back(std::move(j));
    }
    nlohmann::ordered_json out;
    out["registry"] = registry;
    out["logs"] = std::move(logs);
    return out;
  }

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "mr_rates.csv", std::ios::trunc) << mr_csv(mr_rows);
    std::ofstream(dir / "param_histogram.csv", std::ios::trunc) << param_csv(param_rows);
    std::ofstream(dir / "summary.json", std::ios::trunc) << summary_json().dump(2) << '\n';
  }
};

struct LabeledLog {
  std::string label;
  std::vector<LogRecord> records;
  std::optional<double> seconds = std::nullopt;  // campaign wall time, if known
};

inline void check_logs(const std::vector<LabeledLog>& logs) {
  if (logs.empty()) throw LoadError("no logs given");
  std::optional<std::string> registry;
  for (const auto& log : logs) {
    if (log.records.empty()) throw LoadError("log '" + log.label + "' is empty");
    for (const auto& r : log.records) {
      if (!registry) registry = r.registry;
      if (r.registry != *registry) {
        throw LoadError("log '" + log.label + "' was produced under a different relation registry");
      }
    }
  }
}

/// Folds logs (and optionally a baseline table) into a report.
inline Report build_report(const std::vector<LabeledLog>& logs, const RateTable* baseline = nullptr) {
  check_logs(logs);
  Report rep;
  rep.registry = logs.front().records.front().registry;

  const auto baseline_mr = [&](Relation mr) -> std::optional<double> {
    if (!baseline) return std::nullopt;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& row : baseline->rows) {
      if (row.mr != mr || row.rates.empty() || std::isnan(row.rates.back())) continue;
      sum += row.rates.back();
      ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };
  const auto baseline_param = [&](Relation mr, int param) -> std::optional<double> {
    if (!baseline) return std::nullopt;
    const auto* row = baseline->find(mr, param);
    if (!row || row->rates.empty() || std::isnan(row->rates.back())) return std::nullopt;
    return row->rates.back();
  };

  for (const auto& log : logs) {
    std::map<Relation, LogTally> per_mr;
    std::map<std::pair<Relation, int>, LogTally> per_param;
    LogSummary s;
    s.label = log.label;
    s.mode = std::string(to_string(log.records.front().mode));
    for (const auto& r : log.records) {
      ++s.records;
      if (r.failed()) ++s.failed;
      s.tally.add(r);
      per_mr[r.mr].add(r);
      if (r.param) per_param[{r.mr, *r.param}].add(r);
    }
    if (log.seconds) s.seconds_per_iteration = *log.seconds / static_cast<double>(s.records);
    rep.summaries.push_back(s);

    for (Relation mr : kRelations) {
      MrRow row;
      row.label = log.label;
      row.mr = mr;
      if (const auto it = per_mr.find(mr); it != per_mr.end()) row.tally = it->second;
      row.frequency = static_cast<double>(row.tally.selections) / static_cast<double>(s.records);
      row.baseline = baseline_mr(mr);
      rep.mr_rows.push_back(row);
      if (!is_parameterized(mr)) continue;
      const std::uint64_t mr_total = row.tally.selections;
      for (int v : grid_for(mr).values()) {
        ParamRow p;
        p.label = log.label;
        p.mr = mr;
        p.param = v;
        if (const auto it = per_param.find({mr, v}); it != per_param.end()) p.tally = it->second;
        p.frequency = mr_total ? static_cast<double>(p.tally.selections) / static_cast<double>(mr_total) : 0.0;
        p.baseline = baseline_param(mr, v);
        rep.param_rows.push_back(p);
      }
    }
  }
  return rep;
}

struct Comparison {
  double amt_rate = 0.0;
  double random_rate = 0.0;
  double difference = 0.0;
  bool amt_exceeds_random = false;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["amt_rate"] = amt_rate;
    j["random_rate"] = random_rate;
    j["difference"] = difference;
    j["amt_exceeds_random"] = amt_exceeds_random;
    return j;
  }
};

inline Comparison compare_logs(const std::vector<LogRecord>& amt_log, const std::vector<LogRecord>& random_log) {
  check_logs({{"amt", amt_log}, {"random", random_log}});
  LogTally a, r;
  for (const auto& rec : amt_log) a.add(rec);
  for (const auto& rec : random_log) r.add(rec);
  if (a.evaluated == 0 || r.evaluated == 0) throw LoadError("a log has no evaluated records");
  Comparison c;
  c.amt_rate = a.rate();
  c.random_rate = r.rate();
  c.difference = c.amt_rate - c.random_rate;
  c.amt_exceeds_random = c.difference > 0.0;
  return c;
}

/// Reads the wall time recorded next to a log by `amt run`, if present.
inline std::optional<double> read_timing(const std::filesystem::path& log_path) {
  const auto p = log_path.parent_path() / "timing.json";
  std::ifstream in(p);
  if (!in) return std::nullopt;
  try {
    return nlohmann::json::parse(in).at("seconds").get<double>();
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

}  // namespace amt
