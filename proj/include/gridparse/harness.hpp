#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gridparse/nca.hpp"
#include "gridparse/tensor.hpp"

namespace gridparse {

inline constexpr int kReportFormatVersion = 1;

struct KeySpec {
  std::string key;
  std::string default_value;
  std::string help;
};

// Parameter schema of one CLI command. Keys double as --flags.
struct CommandSchema {
  std::string name;
  std::string help;
  std::vector<KeySpec> keys;
};

const std::vector<CommandSchema>& command_schemas();
const CommandSchema& command_schema(std::string_view name);  // throws InvalidConfig

// Resolved key/value configuration. Files use one "key = value" per line,
// '#' starts a comment; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig() = default;
  explicit RunConfig(const CommandSchema& schema);  // filled with defaults

  static RunConfig parse(const CommandSchema& schema, std::string_view text);
  static RunConfig load(const CommandSchema& schema, const std::string& path);

  void set(const std::string& key, const std::string& value);  // throws InvalidConfig on unknown key
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& str(const std::string& key) const;
  long long integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  // "1,2,5", "0..9" or a mix such as "0..3,10".
  std::vector<int> int_list(const std::string& key) const;

  std::string command() const { return command_; }
  const std::map<std::string, std::string>& values() const { return values_; }
  // Canonical "key=value" lines in key order. The output directory is left
  // out, so moving a run does not change its hash.
  std::string canonical() const;
  std::string hash() const;  // FNV-1a 64 of canonical(), 16 hex digits

 private:
  std::string command_;
  std::map<std::string, std::string> values_;
};

std::vector<int> parse_int_list(std::string_view text);

// JSON envelope {format_version, command, config, config_hash, result}.
nlohmann::json report_envelope(const RunConfig& cfg, nlohmann::json result);
// CSV with a leading "# format_version=1 command=... config_hash=..." line.
std::string csv_with_header(const RunConfig& cfg, const std::string& body);
void write_text(const std::string& path, const std::string& text);
void write_report(const std::string& dir, const std::string& stem, const RunConfig& cfg, const nlohmann::json& result,
                  const std::string& csv_body);

// 8-bit binary PGM; values clamped to [0, 1] and mapped linearly to 0..255.
// Negative entries (masked) render mid-grey.
std::string encode_pgm(const Eigen::MatrixXd& m, const std::string& comment = {});
std::string matrix_csv(const Eigen::MatrixXd& m);
// Channel c of a grid tensor as an L x L matrix.
Eigen::MatrixXd grid_channel(const Mat<float>& state, const GridShape& g, int channel);

// Self-test. Each suite reports pass/fail with a detail line.
struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

SuiteResult selftest_oracle(int random_per_cfg = 1000);
SuiteResult selftest_gradcheck(int d = 4);
SuiteResult selftest_param_count();
SuiteResult selftest_determinism();
std::vector<SuiteResult> run_self_test();

// Gradient check of the full unrolled rollout at 64-bit. Returns the worst
// per-tensor relative error ||analytic - numeric|| / max(||analytic||, ||numeric||).
double rollout_gradcheck(int d, int length, int iters, std::uint64_t seed, double step = 1e-6);

// Runs one CLI command; returns the process exit code. Errors are written as
// a machine-readable record to stderr and <out>/error.json.
int run_command(const RunConfig& cfg);

}  // namespace gridparse
