#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "popgrad/harness.hpp"
#include "popgrad/landscape.hpp"

namespace popgrad {

// Strict parsing throughout: unknown keys are rejected by name, defaults are
// filled (epochs = 100, SGD with momentum 0.9 and weight decay 1e-5).
nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json load_json_file(const std::filesystem::path& path);

struct TuneConfig {
  TrainConfig base;
  SearchGrid grid;
  std::size_t draws = 20;
  std::uint64_t search_seed = 0;
};

struct CompareConfig {
  TrainConfig base;
  std::vector<Method> methods;
  MetaGrids grids;
};

struct CombineConfig {
  TrainConfig base;
  std::optional<Method> partner;
  PopulationGradSpec pg;
  MetaGrids grids;
};

struct LongConfig {
  TrainConfig base;
  std::size_t window = 20;
};

struct WidthsConfig {
  TrainConfig base;
  std::vector<double> multipliers{1.0, 1.5, 2.0, 2.5, 3.0, 3.5};
  WidthSweepGrid grid;
};

struct GradQualConfig {
  TrainConfig base;
  std::size_t subset_size = 1;
  std::size_t repeats = 10;
};

struct LandscapeConfig {
  TrainConfig base;
  SliceSpec slice;
  std::size_t batch_count = 32;  // samples drawn from the training set
};

TuneConfig tune_config_from_json(const nlohmann::json& j);
CompareConfig compare_config_from_json(const nlohmann::json& j);
CombineConfig combine_config_from_json(const nlohmann::json& j);
LongConfig long_config_from_json(const nlohmann::json& j);
WidthsConfig widths_config_from_json(const nlohmann::json& j);
GradQualConfig gradqual_config_from_json(const nlohmann::json& j);
LandscapeConfig landscape_config_from_json(const nlohmann::json& j);

// --- result files -----------------------------------------------------------

/// runs/<run-id>.jsonl: one {run_id, epoch, train_loss, test_f1, ms} line
/// per epoch.
void write_run_jsonl(const std::filesystem::path& dir, const RunRecord& record);

/// runs/<run-id>.summary.json: summary stats plus the exact config snapshot.
void write_run_summary(const std::filesystem::path& dir, const RunRecord& record);

/// CSV with columns method,meta1,meta2,mean_f1,sd_f1,improvement.
void write_comparison_csv(const std::filesystem::path& path, const ComparisonTable& table);

void write_bins_csv(const std::filesystem::path& path, const std::vector<F1Bin>& bins);

void write_width_csv(const std::filesystem::path& path,
                     const std::vector<WidthSweepCell>& cells);

}  // namespace popgrad
