#pragma once

/// Experiment configuration, subcommand runners, the end-to-end pipeline and
/// report emission. Configuration is a flat `key = value` file with a fixed
/// schema; `#` starts a comment. Unknown keys and out-of-range values are
/// rejected with ValidationError naming the key.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "branchlab/frequency.hpp"

namespace branchlab {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Every accepted key with its default, in a stable order.
const std::vector<ConfigKey>& config_schema();

class ExperimentConfig {
 public:
  ExperimentConfig();  // all defaults

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::string& path);

  /// Throws ValidationError for unknown keys; the value is checked by validate().
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  double number(const std::string& key) const;
  int integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> numbers(const std::string& key) const;  // comma separated

  /// Type and range checks on every key.
  void validate() const;
  /// Canonical `key = value` text in schema order.
  std::string to_text() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct StageStatus {
  std::string name;
  std::string status;  // ok, failed, skipped
  std::string message;
  double seconds = 0.0;
};

struct ManifestEntry {
  std::string path;  // relative to the output directory
  std::string stage;
  std::uint64_t bytes = 0;
  std::uint64_t hash = 0;  // FNV-1a 64 of the contents
  std::vector<std::string> inputs;  // manifest paths this artifact was computed from
};

struct PipelineReport {
  std::string output_dir;
  std::vector<StageStatus> stages;
  std::vector<ManifestEntry> manifest;
  /// Headline numbers; NaN when the stage did not produce them.
  std::map<std::string, double> headline;
  bool success() const;
  /// FNV-1a 64 over the manifest paths and hashes, in order.
  std::uint64_t manifest_hash() const;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::uint64_t file_hash(const std::string& path);

/// Runs solve -> extension and flow -> hodograph -> thin obstacle -> frequency
/// -> Whitney -> blow-up. Each stage reads its inputs back from artifacts
/// listed in the manifest. A failing stage is recorded with its name and later
/// stages are skipped; earlier artifacts stay on disk.
PipelineReport run_pipeline(const ExperimentConfig& config);

/// `json` writes report.json; `csv` writes stages.csv and headline.csv.
/// Returns the written paths. Keys appear in a fixed order.
std::vector<std::string> emit_report(const PipelineReport& report, const std::string& format);
nlohmann::json report_to_json(const PipelineReport& report);

/// One row per radius with the columns of FrequencyReport.
void write_frequency_csv(const std::string& path, const std::vector<FrequencyReport>& rows);
std::vector<FrequencyReport> read_frequency_csv(const std::string& path);

/// Runs one subcommand and returns the process exit code: 0 on success, 2 on
/// ValidationError, 3 on NumericalError. Messages go to `log`.
int run_subcommand(const std::string& name, const ExperimentConfig& config, std::ostream& log);

/// Subcommand names in the order they are listed by the CLI.
const std::vector<std::string>& subcommands();

}  // namespace branchlab
