#pragma once

// The `amt` command line: run, report, compare, replay, make-suite.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "amt/campaign.hpp"
#include "amt/report.hpp"
#include "amt/suite.hpp"
#include "json.hpp"

namespace amt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iterations;
  std::optional<std::string> snapshot_in;
  std::optional<std::string> snapshot_out;
  std::optional<std::string> out_dir;
};

inline void apply(CampaignConfig& c, const RunOverrides& o) {
  namespace fs = std::filesystem;
  if (o.seed) c.seed = *o.seed;
  if (o.iterations) c.iterations = *o.iterations;
  if (o.snapshot_in) c.snapshot_in = fs::absolute(*o.snapshot_in);
  if (o.out_dir) c.out_dir = fs::absolute(*o.out_dir);
  if (o.snapshot_out) c.snapshot_out = fs::absolute(*o.snapshot_out);
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw LoadError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline int cmd_run(Mode mode, const std::string& config_path, const RunOverrides& o, std::ostream& out) {
  auto config = CampaignConfig::load(config_path);
  config.mode = mode;
  apply(config, o);
  Campaign campaign(config);
  const auto result = campaign.run();
  const auto& cfg = campaign.config();
  nlohmann::ordered_json timing;
  timing["seconds"] = result.seconds;
  timing["records"] = result.log.size();
  std::ofstream(cfg.out_dir / "timing.json", std::ios::trunc) << timing.dump() << '\n';

  out << to_string(mode) << ": " << result.log.size() << " records, " << result.violations << " violations / "
      << result.evaluated << " evaluated, rate " << csv::format_double(result.violation_rate()) << ", log "
      << cfg.log_path().string() << '\n';
  return kExitOk;
}

inline int cmd_report(const std::vector<std::string>& logs, const std::optional<std::string>& baseline,
                      const std::string& out_dir, std::ostream& out) {
  std::vector<LabeledLog> inputs;
  for (const auto& p : logs) inputs.push_back({p, read_log(p), read_timing(p)});
  std::optional<RateTable> table;
  if (baseline) table = RateTable::load(*baseline);
  const Report rep = build_report(inputs, table ? &*table : nullptr);
  rep.write(out_dir);
  out << "report written to " << out_dir << '\n';
  return kExitOk;
}

inline int cmd_compare(const std::string& amt_log, const std::string& random_log,
                       const std::optional<std::string>& out_path, std::ostream& out) {
  const Comparison c = compare_logs(read_log(amt_log), read_log(random_log));
  const std::string text = c.to_json().dump(2);
  if (out_path) std::ofstream(*out_path, std::ios::trunc) << text << '\n';
  out << text << '\n';
  return kExitOk;
}

/// Re-runs a campaign into a scratch directory and compares the new log
/// byte-for-byte against `log_path`. Mode and iteration count come from
/// the log unless overridden.
inline int cmd_replay(const std::string& config_path, const std::string& log_path, RunOverrides o,
                      std::optional<std::string> mode_name, std::ostream& out) {
  namespace fs = std::filesystem;
  const std::string expected = read_file(log_path);
  const auto records = read_log(log_path);
  if (records.empty()) throw LoadError("log '" + log_path + "' is empty");

  auto config = CampaignConfig::load(config_path);
  config.mode = mode_name ? parse_mode(*mode_name) : records.front().mode;
  if (!o.iterations && config.mode != Mode::baseline) o.iterations = records.size();

  std::string tmpl = (fs::temp_directory_path() / "amt-replay-XXXXXX").string();
  if (::mkdtemp(tmpl.data()) == nullptr) throw LoadError("cannot create a scratch directory");
  const fs::path scratch = tmpl;
  o.out_dir = scratch.string();
  apply(config, o);
  config.snapshot_out = scratch / "snapshot.json";
  config.table = scratch / "baseline.csv";
  config.log = scratch / "log.jsonl";

  int status = kExitOk;
  try {
    Campaign(config).run();
    const std::string actual = read_file(config.log_path());
    if (actual == expected) {
      out << "replay identical: " << records.size() << " records\n";
    } else {
      std::size_t line = 1, i = 0;
      while (i < actual.size() && i < expected.size() && actual[i] == expected[i]) {
        if (actual[i] == '\n') ++line;
        ++i;
      }
      out << "replay differs at line " << line << '\n';
      status = kExitFailure;
    }
  } catch (...) {
    fs::remove_all(scratch);
    throw;
  }
  fs::remove_all(scratch);
  return status;
}

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Adaptive metamorphic testing with contextual bandits"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run a campaign");
  std::string run_mode, run_config;
  RunOverrides run_o;
  run->add_option("mode", run_mode, "amt | random | baseline | boundary")
      ->required()
      ->check(CLI::IsMember({"amt", "random", "baseline", "boundary"}));
  run->add_option("--config", run_config, "Campaign config (JSON)")->required();
  run->add_option("--seed", run_o.seed, "Override the config seed");
  run->add_option("--iterations", run_o.iterations, "Override the iteration count");
  run->add_option("--snapshot-in", run_o.snapshot_in, "Resume from a snapshot");
  run->add_option("--snapshot-out", run_o.snapshot_out, "Where to write the final snapshot");
  run->add_option("--out-dir", run_o.out_dir, "Artifact directory");

  // report
  auto* report = app.add_subcommand("report", "Fold campaign logs into CSV/JSON reports");
  std::vector<std::string> report_logs;
  std::optional<std::string> report_baseline;
  std::string report_out = "report";
  report->add_option("logs", report_logs, "Campaign logs (JSON lines)")->required();
  report->add_option("--baseline", report_baseline, "Baseline table from `run baseline`");
  report->add_option("--out-dir", report_out, "Report directory");

  // compare
  auto* compare = app.add_subcommand("compare", "Compare an amt log with a random log");
  std::string cmp_amt, cmp_random;
  std::optional<std::string> cmp_out;
  compare->add_option("--amt", cmp_amt, "amt-mode log")->required();
  compare->add_option("--random", cmp_random, "random-mode log")->required();
  compare->add_option("--out", cmp_out, "Write the comparison JSON here");

  // replay
  auto* replay = app.add_subcommand("replay", "Re-run a campaign and diff its log");
  std::string replay_config, replay_log;
  std::optional<std::string> replay_mode;
  RunOverrides replay_o;
  replay->add_option("--config", replay_config, "Campaign config (JSON)")->required();
  replay->add_option("--log", replay_log, "Log to reproduce")->required();
  replay->add_option("--mode", replay_mode, "Override the mode recorded in the log")
      ->check(CLI::IsMember({"amt", "random", "baseline", "boundary"}));
  replay->add_option("--seed", replay_o.seed, "Override the config seed");
  replay->add_option("--iterations", replay_o.iterations, "Override the iteration count");
  replay->add_option("--snapshot-in", replay_o.snapshot_in, "Snapshot the original run resumed from");

  // make-suite
  auto* make_suite = app.add_subcommand("make-suite", "Write a synthetic image suite and manifest");
  std::string suite_dir;
  SuiteSpec suite;
  std::string suite_task = "classification";
  make_suite->add_option("dir", suite_dir, "Output directory")->required();
  make_suite->add_option("--count", suite.count, "Number of sources");
  make_suite->add_option("--classes", suite.classes, "Number of classes");
  make_suite->add_option("--width", suite.width, "Image width");
  make_suite->add_option("--height", suite.height, "Image height");
  make_suite->add_option("--task", suite_task)->check(CLI::IsMember({"classification", "detection"}));
  make_suite->add_option("--seed", suite.seed, "Image seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "amt: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*run) return cmd_run(parse_mode(run_mode), run_config, run_o, out);
    if (*report) return cmd_report(report_logs, report_baseline, report_out, out);
    if (*compare) return cmd_compare(cmp_amt, cmp_random, cmp_out, out);
    if (*replay) return cmd_replay(replay_config, replay_log, replay_o, replay_mode, out);
    if (*make_suite) {
      suite.task = parse_task(suite_task);
      out << write_synthetic_suite(suite_dir, suite).string() << '\n';
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "amt: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "amt: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace amt::cli
