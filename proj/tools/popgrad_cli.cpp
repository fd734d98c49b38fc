// Command-line entry point: binds config files, datasets, runners, and
// result files.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "popgrad/config.hpp"
#include "popgrad/errors.hpp"
#include "popgrad/harness.hpp"
#include "popgrad/landscape.hpp"
#include "popgrad/popgrad.hpp"
#include "popgrad/regsched.hpp"

namespace fs = std::filesystem;
using namespace popgrad;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;
constexpr int kExitInternal = 5;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string data_dir;
};

fs::path resolve_data_dir(const CommonArgs& args) {
  if (!args.data_dir.empty()) return args.data_dir;
  if (const char* env = std::getenv("POPGRAD_DATA")) return env;
  return "data";
}

void apply_overrides(TrainConfig& cfg, const CommonArgs& args) {
  if (args.seed) cfg.seed = *args.seed;
}

void write_record(const fs::path& dir, const RunRecord& record) {
  write_run_jsonl(dir, record);
  write_run_summary(dir, record);
}

int cmd_train(const CommonArgs& args) {
  TrainConfig cfg = train_config_from_json(load_json_file(args.config_path));
  apply_overrides(cfg, args);
  DataBundle data = load_data(cfg.dataset, resolve_data_dir(args));
  RunRecord record = run_training(cfg, data, args.workers, "train");
  write_record(fs::path(args.out_dir) / "runs", record);
  if (record.failure) {
    std::cerr << "run diverged at epoch " << record.failure->epoch << " batch "
              << record.failure->batch << ": " << record.failure->what << '\n';
    return kExitDivergence;
  }
  if (record.summary) {
    std::cout << "last-10 mean F1 " << record.summary->mean << " (sd " << record.summary->sd
              << ")\n";
  }
  return kExitOk;
}

int cmd_tune(const CommonArgs& args) {
  TuneConfig cfg = tune_config_from_json(load_json_file(args.config_path));
  apply_overrides(cfg.base, args);
  DataBundle data = load_data(cfg.base.dataset, resolve_data_dir(args));
  SearchResult result =
      random_search(cfg.grid, cfg.draws, cfg.base, cfg.search_seed, data, args.workers);

  const fs::path out(args.out_dir);
  for (const RunRecord& record : result.records) write_record(out / "runs", record);
  nlohmann::json best{{"best_draw", result.best_draw},
                      {"config", train_config_to_json(result.best_config)}};
  fs::create_directories(out);
  std::ofstream bf(out / "best_config.json");
  bf << best.dump(2) << '\n';
  std::cout << "best draw " << result.best_draw << " mean F1 "
            << result.records[result.best_draw].summary->mean << '\n';
  return kExitOk;
}

int cmd_compare(const CommonArgs& args) {
  CompareConfig cfg = compare_config_from_json(load_json_file(args.config_path));
  apply_overrides(cfg.base, args);
  DataBundle data = load_data(cfg.base.dataset, resolve_data_dir(args));
  ComparisonTable table = compare_methods(cfg.methods, cfg.grids, cfg.base, data, args.workers);

  const fs::path out(args.out_dir);
  write_record(out, table.baseline);
  for (const RunRecord& record : table.runs) write_record(out / "runs", record);
  write_comparison_csv(out / "comparison.csv", table);
  for (const ComparisonRow& row : table.best_rows) {
    std::cout << method_name(row.method) << " best improvement " << row.improvement << '\n';
  }
  return kExitOk;
}

int cmd_combine(const CommonArgs& args) {
  CombineConfig cfg = combine_config_from_json(load_json_file(args.config_path));
  apply_overrides(cfg.base, args);
  DataBundle data = load_data(cfg.base.dataset, resolve_data_dir(args));
  ComparisonTable table =
      combine_with_pg(cfg.partner, cfg.grids, cfg.pg, cfg.base, data, args.workers);

  const fs::path out(args.out_dir);
  write_record(out, table.baseline);
  for (const RunRecord& record : table.runs) write_record(out / "runs", record);
  write_comparison_csv(out / "combination.csv", table);
  return kExitOk;
}

int cmd_long(const CommonArgs& args) {
  LongConfig cfg = long_config_from_json(load_json_file(args.config_path));
  apply_overrides(cfg.base, args);
  DataBundle data = load_data(cfg.base.dataset, resolve_data_dir(args));
  RunRecord record = run_training(cfg.base, data, args.workers, "long");

  const fs::path out(args.out_dir);
  write_record(out / "runs", record);
  const auto series = record.f1_series();
  write_bins_csv(out / "bins.csv", bin_f1(series, cfg.window));
  if (record.failure) return kExitDivergence;
  return kExitOk;
}

int cmd_widths(const CommonArgs& args) {
  WidthsConfig cfg = widths_config_from_json(load_json_file(args.config_path));
  apply_overrides(cfg.base, args);
  DataBundle data = load_data(cfg.base.dataset, resolve_data_dir(args));
  auto cells = width_sweep(cfg.multipliers, cfg.grid, cfg.base, data, args.workers);

  const fs::path out(args.out_dir);
  for (const WidthSweepCell& cell : cells) write_record(out / "runs", cell.record);
  write_width_csv(out / "widths.csv", cells);
  return kExitOk;
}

int cmd_gradqual(const CommonArgs& args) {
  GradQualConfig cfg = gradqual_config_from_json(load_json_file(args.config_path));
  apply_overrides(cfg.base, args);
  DataBundle data = load_data(cfg.base.dataset, resolve_data_dir(args));

  RngStream rng(cfg.base.seed);
  BuildResult built = build(cfg.base.model, rng.derive(stream_label::kInit));
  GradQualityReport report =
      gradient_quality(built.graph, built.params, data.train, cfg.subset_size, cfg.repeats,
                       rng.derive(stream_label::kStep));

  fs::create_directories(args.out_dir);
  std::ofstream out(fs::path(args.out_dir) / "gradqual.json");
  out << grad_quality_to_json(report).dump(2) << '\n';
  std::cout << "distance mean " << report.distance_mean << " var " << report.distance_var << '\n';
  return kExitOk;
}

int cmd_landscape(const CommonArgs& args) {
  LandscapeConfig cfg = landscape_config_from_json(load_json_file(args.config_path));
  apply_overrides(cfg.base, args);
  DataBundle data = load_data(cfg.base.dataset, resolve_data_dir(args));

  RngStream rng(cfg.base.seed);
  BuildResult built = build(cfg.base.model, rng.derive(stream_label::kInit));

  const std::size_t n = std::min(cfg.batch_count, data.train.size());
  std::vector<int> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  Batch batch = gather(data.train, idx);

  auto [d1, d2] = random_directions(built.params.size(), cfg.slice.seed);
  LossGrid grid = loss_slice(built.graph, built.params, batch, cfg.slice, d1, d2, args.workers);

  const fs::path out(args.out_dir);
  fs::create_directories(out);
  write_grid_csv(out / "slice.csv", grid);
  write_heatmap_ppm(out / "slice.ppm", grid);
  if (cfg.slice.arrow_count > 0) {
    ArrowField field = gradient_arrows(built.graph, built.params, batch, d1, d2,
                                       cfg.slice.arrow_x, cfg.slice.arrow_y,
                                       cfg.slice.arrow_radius, cfg.slice.arrow_count,
                                       cfg.slice.seed + 1);
    write_arrows_json(out / "arrows.json", field);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"popgrad: population-gradient training laboratory"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&args](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "JSON config file")->required();
    sub->add_option("--out", args.out_dir, "output directory (default: out)");
    sub->add_option("--seed", args.seed, "override the config seed");
    sub->add_option("--workers", args.workers, "worker threads (default: 1)");
    sub->add_option("--data", args.data_dir, "dataset root (default: $POPGRAD_DATA or ./data)");
  };

  CLI::App* train = app.add_subcommand("train", "single training run");
  CLI::App* tune = app.add_subcommand("tune", "random hyper-parameter search");
  CLI::App* compare = app.add_subcommand("compare", "method comparison over meta grids");
  CLI::App* combine = app.add_subcommand("combine", "partner method re-tuned with PG fixed");
  CLI::App* lng = app.add_subcommand("long", "long run with windowed F1 bins");
  CLI::App* widths = app.add_subcommand("widths", "width-multiplier sweep");
  CLI::App* gradqual = app.add_subcommand("gradqual", "gradient-quality report");
  CLI::App* landscape = app.add_subcommand("landscape", "random 2D loss slice");
  for (CLI::App* sub : {train, tune, compare, combine, lng, widths, gradqual, landscape}) {
    add_common(sub);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(args);
    if (tune->parsed()) return cmd_tune(args);
    if (compare->parsed()) return cmd_compare(args);
    if (combine->parsed()) return cmd_combine(args);
    if (lng->parsed()) return cmd_long(args);
    if (widths->parsed()) return cmd_widths(args);
    if (gradqual->parsed()) return cmd_gradqual(args);
    if (landscape->parsed()) return cmd_landscape(args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericDivergence& e) {
    std::cerr << "numeric divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}
