#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popgrad/data.hpp"
#include "popgrad/metrics.hpp"
#include "popgrad/model.hpp"
#include "popgrad/optim.hpp"
#include "popgrad/popgrad.hpp"

namespace popgrad {

struct DatasetConfig {
  enum class Kind { Synth, FashionMnist, Cifar10 };
  Kind kind = Kind::Synth;

  // synth
  int classes = 4;
  int per_class = 150;
  int per_class_test = 50;
  int dim = 16;
  double spread = 0.08;
  std::uint64_t seed = 7;

  // file-backed subsets (prefix truncation)
  std::optional<std::size_t> train_count;
  std::optional<std::size_t> test_count;

  bool operator==(const DatasetConfig&) const = default;
};

struct DataBundle {
  Dataset train;
  Dataset test;
};

/// Resolves the dataset named by the config, reading file-backed sets from
/// `data_root`.
DataBundle load_data(const DatasetConfig& config, const std::filesystem::path& data_root);

struct LrEraSpec {
  int n_eras = 5;
  double era_decay = 0.5;
  bool operator==(const LrEraSpec&) const = default;
};

struct TrainConfig {
  ModelSpec model;
  DatasetConfig dataset;
  OptimizerConfig optimizer;
  AugmentConfig augment;
  int batch_size = 64;
  int epochs = 100;
  std::uint64_t seed = 1;

  std::optional<PopulationGradSpec> pg;
  std::optional<LrEraSpec> lr_era;
  std::optional<std::pair<double, double>> dropout;  // first/last probability
  std::optional<std::pair<double, double>> l1;       // first/last factor
  std::optional<std::pair<double, double>> l2;

  void validate() const;
};

struct EpochEntry {
  int epoch = 0;
  double train_loss = 0.0;
  double test_f1 = 0.0;
  double ms = 0.0;
};

struct FailureInfo {
  int epoch = -1;
  int batch = -1;
  int member = -1;
  std::string what;
};

struct RunRecord {
  std::string run_id;
  TrainConfig config;
  std::vector<EpochEntry> entries;
  std::optional<Summary> summary;  // last-10 test F1, present once 10 epochs completed
  std::optional<FailureInfo> failure;

  std::vector<double> f1_series() const;
};

/// Full training run: per epoch, seeded mini-batch partition, gradient step
/// (population gradient when a PG block is present), test macro-F1.
/// Deterministic for a given (config, seed) and any worker count.
RunRecord run_training(const TrainConfig& config, const DataBundle& data, int workers = 1,
                       const std::string& run_id = "train");

// --- random hyper-parameter search -------------------------------------------

struct SearchGrid {
  std::vector<double> lr{0.002, 0.005, 0.01, 0.02, 0.05};
  std::vector<int> batch_size{64, 128, 256, 512};
  std::vector<int> pads_length{0, 1, 2, 4, 8};
  std::vector<PadType> pads_type{PadType::Zeros, PadType::Border, PadType::Reflection};
  std::vector<bool> hflip{false, true};
  std::vector<std::optional<double>> norm_mean{0.1, 0.2, 0.4, 0.8, std::nullopt};
  std::vector<std::optional<double>> norm_sd{0.1, 0.2, 0.4, 0.8, std::nullopt};

  void validate() const;
  std::size_t cardinality() const;
  /// Mixed-radix decode of a combination index onto the base config.
  TrainConfig apply(const TrainConfig& base, std::size_t index) const;
};

struct SearchResult {
  std::size_t best_draw = 0;
  TrainConfig best_config;
  std::vector<std::size_t> draw_indices;  // grid combination index per draw
  std::vector<RunRecord> records;         // one per draw, in draw order
};

/// Evaluates n distinct grid combinations drawn uniformly without
/// replacement. Best = highest last-10 mean F1; ties go to the earliest draw.
SearchResult random_search(const SearchGrid& grid, std::size_t n_draws, const TrainConfig& base,
                           std::uint64_t search_seed, const DataBundle& data, int workers = 1);

// --- method comparison ---------------------------------------------------------

enum class Method { Pg, LrDecay, Dropout, L1, L2, Nesterov, RmsProp, AdamW, Adam, AmsGrad, Adamax };

std::string method_name(Method m);
Method method_from_name(const std::string& name);
std::vector<Method> all_methods();

/// Per-method meta-parameter grids (two axes each).
struct MetaGrids {
  std::vector<int> pg_sizes{5, 10};
  std::vector<double> pg_ranges{0.05, 0.1, 0.2, 0.4};
  std::vector<int> eras{2, 5, 10, 20};
  std::vector<double> era_decays{0.9, 0.7, 0.5, 0.2};
  std::vector<double> dropout_first{0.0, 0.1, 0.2, 0.4};
  std::vector<double> dropout_last{0.0, 0.1, 0.2, 0.4};
  std::vector<double> reg_first{1e-5, 1e-4, 1e-3, 1e-2, 0.1};
  std::vector<double> reg_last{1e-5, 1e-4, 1e-3, 1e-2, 0.1};
  std::vector<double> opt_meta1{0.1, 0.5, 0.9, 0.99};        // momentum / beta1
  std::vector<double> opt_meta2{0.991, 0.995, 0.999, 0.9999};  // dampening / alpha / beta2
};

/// One meta-parameter combination applied to a base config.
TrainConfig apply_method(const TrainConfig& base, Method method, double meta1, double meta2);

struct ComparisonRow {
  Method method;
  double meta1 = 0.0;
  double meta2 = 0.0;
  double mean_f1 = 0.0;
  double sd_f1 = 0.0;
  double improvement = 0.0;  // mean_f1 minus the baseline's last-10 mean
  std::string run_id;
};

struct ComparisonTable {
  RunRecord baseline;
  std::vector<ComparisonRow> rows;        // every combination, in grid order
  std::vector<RunRecord> runs;            // matching rows
  std::vector<ComparisonRow> best_rows;   // one per method
};

/// Runs every meta combination of every listed method against the baseline
/// (same seed, no method block).
ComparisonTable compare_methods(std::span<const Method> methods, const MetaGrids& grids,
                                const TrainConfig& base, const DataBundle& data, int workers = 1);

/// Re-tunes only the partner method's meta-parameters with a fixed PG spec
/// active. No partner reproduces the PG-only run.
ComparisonTable combine_with_pg(std::optional<Method> partner, const MetaGrids& grids,
                                const PopulationGradSpec& pg_fixed, const TrainConfig& base,
                                const DataBundle& data, int workers = 1);

// --- width scaling sweep --------------------------------------------------------

struct WidthSweepCell {
  double multiplier = 1.0;
  std::optional<std::pair<int, double>> pg;  // (size, range); empty for baseline
  std::size_t param_count = 0;
  RunRecord record;
};

struct WidthSweepGrid {
  std::vector<int> pg_sizes{5, 7, 9};
  std::vector<double> pg_ranges{0.05, 0.1, 0.2, 0.4, 0.6};
};

std::vector<WidthSweepCell> width_sweep(std::span<const double> multipliers,
                                        const WidthSweepGrid& grid, const TrainConfig& base,
                                        const DataBundle& data, int workers = 1);

}  // namespace popgrad
