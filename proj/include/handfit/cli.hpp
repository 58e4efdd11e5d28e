#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "handfit/config.hpp"

namespace handfit {

/// Model configuration plus the paths a command works on.
struct RunConfig {
  ModelConfig model;
  std::string data;
  std::string out;
  std::string checkpoint;
  std::string init;
  std::string report;

  nlohmann::json to_json() const;
};

/// Path keys are split off; everything else must be a ModelConfig key.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies "key=value" overrides, parsing each value as JSON (bare words
/// fall back to strings).
void apply_overrides(RunConfig& rc, const std::vector<std::string>& sets);

struct AblationRow {
  std::string variant;
  double w_hand = 0;
  long param_count = 0;
  std::map<std::string, double> metrics;
};

inline const std::vector<std::string> kAblationMetrics = {"ssim", "mpjpe", "fid", "kid", "fid_h", "kid_h"};
inline const std::vector<double> kDefaultWHandGrid = {0.2, 0.5, 1.0, 1.5, 2.0};

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
std::vector<AblationRow> read_ablation_csv(const std::filesystem::path& path);

/// Entry point of the `handfit` executable. Returns 0 on success, 1 on
/// validation errors and 2 on runtime failures.
int run_cli(int argc, const char* const* argv);

}  // namespace handfit
