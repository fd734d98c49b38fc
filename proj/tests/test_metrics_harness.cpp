#include <doctest.h>

#include <cmath>
#include <set>

#include "popgrad/errors.hpp"
#include "popgrad/harness.hpp"
#include "popgrad/metrics.hpp"

using namespace popgrad;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.model.kind = ModelKind::Mlp;
  cfg.model.layer_sizes = {8, 10, 3};
  cfg.model.class_count = 3;
  cfg.dataset.kind = DatasetConfig::Kind::Synth;
  cfg.dataset.classes = 3;
  cfg.dataset.per_class = 40;
  cfg.dataset.per_class_test = 15;
  cfg.dataset.dim = 8;
  cfg.dataset.spread = 0.05;
  cfg.dataset.seed = 7;
  cfg.optimizer.kind = OptKind::Sgd;
  cfg.optimizer.lr = 0.1;
  cfg.optimizer.momentum = 0.9;
  cfg.optimizer.weight_decay = 1e-5;
  cfg.batch_size = 16;
  cfg.epochs = 12;
  cfg.seed = 3;
  return cfg;
}

bool same_metrics(const RunRecord& a, const RunRecord& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    if (a.entries[i].epoch != b.entries[i].epoch) return false;
    if (a.entries[i].train_loss != b.entries[i].train_loss) return false;
    if (a.entries[i].test_f1 != b.entries[i].test_f1) return false;
    // ms is wall clock and excluded
  }
  return true;
}

}  // namespace

TEST_CASE("macro f1 worked examples") {
  std::vector<int> perfect{0, 1, 2, 1, 0};
  CHECK(f1_macro(perfect, perfect, 3) == 1.0);

  std::vector<int> truth{0, 0, 1, 1};
  std::vector<int> pred{0, 0, 0, 0};
  CHECK(f1_macro(pred, truth, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  // classes absent from both truth and prediction contribute zero
  std::vector<int> small_truth{0, 0};
  std::vector<int> small_pred{0, 0};
  CHECK(f1_macro(small_pred, small_truth, 3) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  CHECK_THROWS_AS(f1_macro({}, {}, 2), UsageError);
}

TEST_CASE("macro f1 is invariant under consistent relabeling") {
  std::vector<int> truth{0, 1, 2, 2, 1, 0, 2};
  std::vector<int> pred{0, 2, 2, 1, 1, 0, 2};
  const double base = f1_macro(pred, truth, 3);

  const int perm[3] = {2, 0, 1};
  std::vector<int> truth2, pred2;
  for (int t : truth) truth2.push_back(perm[t]);
  for (int p : pred) pred2.push_back(perm[p]);
  CHECK(f1_macro(pred2, truth2, 3) == doctest::Approx(base).epsilon(1e-15));
}

TEST_CASE("last-10 summary") {
  std::vector<double> constant(15, 0.42);
  Summary s = summarize_last10(constant);
  CHECK(s.mean == doctest::Approx(0.42).epsilon(1e-15));
  CHECK(s.sd == 0.0);

  std::vector<double> ramp;
  for (int e = 1; e <= 100; ++e) ramp.push_back(e / 100.0);
  Summary r = summarize_last10(ramp);
  CHECK(r.mean == doctest::Approx(0.955).epsilon(1e-12));
  CHECK(r.sd == doctest::Approx(std::sqrt(0.00825 / 9.0)).epsilon(1e-9));

  std::vector<double> nine(9, 0.5);
  CHECK_THROWS_AS(summarize_last10(nine), UsageError);
}

TEST_CASE("f1 binning") {
  std::vector<double> thousand(1000, 0.5);
  auto bins = bin_f1(thousand, 20);
  CHECK(bins.size() == 50);
  for (const auto& b : bins) {
    CHECK(b.end - b.begin == 20);
    CHECK(b.mean == 0.5);
    CHECK(b.sd == 0.0);
  }

  auto one = bin_f1(thousand, 1000);
  CHECK(one.size() == 1);

  // windows tile the range exactly once, trailing partial kept
  std::vector<double> series(47, 1.0);
  auto tiled = bin_f1(series, 10);
  CHECK(tiled.size() == 5);
  CHECK(tiled.back().end - tiled.back().begin == 7);
  std::size_t covered = 0;
  for (const auto& b : tiled) {
    CHECK(b.begin == covered);
    covered = b.end;
  }
  CHECK(covered == series.size());

  CHECK_THROWS_AS(bin_f1(series, 0), UsageError);
}

TEST_CASE("separable blobs reach perfect f1 with a linear model") {
  TrainConfig cfg = tiny_config();
  cfg.model.layer_sizes = {8, 3};  // no hidden layer
  cfg.dataset.spread = 0.0;
  cfg.epochs = 30;
  DataBundle data = load_data(cfg.dataset, "unused");
  RunRecord record = run_training(cfg, data);
  REQUIRE(!record.entries.empty());
  CHECK(record.entries.back().test_f1 == 1.0);
  CHECK(record.summary.has_value());
}

TEST_CASE("training is deterministic given config and seed") {
  TrainConfig cfg = tiny_config();
  DataBundle data = load_data(cfg.dataset, "unused");
  RunRecord a = run_training(cfg, data, 1);
  RunRecord b = run_training(cfg, data, 1);
  CHECK(same_metrics(a, b));
}

TEST_CASE("pg with zero range reproduces the baseline run end to end") {
  TrainConfig base = tiny_config();
  DataBundle data = load_data(base.dataset, "unused");
  RunRecord plain = run_training(base, data);

  TrainConfig with_pg = base;
  with_pg.pg = PopulationGradSpec{5, 0.0, true};
  RunRecord pg = run_training(with_pg, data);
  CHECK(same_metrics(plain, pg));
}

TEST_CASE("divergence is recorded, not thrown") {
  TrainConfig cfg = tiny_config();
  cfg.optimizer.lr = 1e18;  // escalates to non-finite parameters quickly
  cfg.optimizer.momentum = 0.99;
  DataBundle data = load_data(cfg.dataset, "unused");
  RunRecord record = run_training(cfg, data);
  REQUIRE(record.failure.has_value());
  CHECK(record.failure->epoch >= 0);
  CHECK(record.entries.size() < static_cast<std::size_t>(cfg.epochs));
}

TEST_CASE("random search draws distinct combinations and keeps ties stable") {
  TrainConfig base = tiny_config();
  base.epochs = 10;
  DataBundle data = load_data(base.dataset, "unused");

  SearchGrid grid;
  grid.lr = {0.05, 0.1};
  grid.batch_size = {16};
  grid.pads_length = {0};
  grid.pads_type = {PadType::Zeros};
  grid.hflip = {false};
  grid.norm_mean = {std::nullopt};
  grid.norm_sd = {std::nullopt};
  REQUIRE(grid.cardinality() == 2);

  SearchResult full = random_search(grid, 2, base, 9, data);
  std::set<std::size_t> combos(full.draw_indices.begin(), full.draw_indices.end());
  CHECK(combos.size() == 2);  // exhaustive, each combination once

  SearchResult again = random_search(grid, 2, base, 9, data);
  CHECK(full.draw_indices == again.draw_indices);

  // duplicated axis values create a genuine tie; the earlier draw must win
  SearchGrid tie = grid;
  tie.lr = {0.1, 0.1};
  SearchResult tied = random_search(tie, 2, base, 9, data);
  CHECK(tied.best_draw == 0);

  CHECK_THROWS_AS(random_search(grid, 3, base, 9, data), UsageError);
}

TEST_CASE("compare_methods run accounting matches the grids") {
  TrainConfig base = tiny_config();
  base.epochs = 10;
  DataBundle data = load_data(base.dataset, "unused");
  MetaGrids grids;  // paper defaults

  SUBCASE("pg grid is 2x4") {
    const Method methods[] = {Method::Pg};
    ComparisonTable table = compare_methods(methods, grids, base, data, 2);
    CHECK(table.runs.size() == 8);
    CHECK(table.rows.size() == 8);
    CHECK(table.best_rows.size() == 1);
  }
  SUBCASE("each optimizer grid is 4x4") {
    const Method methods[] = {Method::Adamax};
    ComparisonTable table = compare_methods(methods, grids, base, data, 2);
    CHECK(table.runs.size() == 16);
  }
  SUBCASE("null method improves by exactly zero") {
    MetaGrids null_grid;
    null_grid.eras = {3};
    null_grid.era_decays = {1.0};  // forced no-op decay
    const Method methods[] = {Method::LrDecay};
    ComparisonTable table = compare_methods(methods, null_grid, base, data);
    REQUIRE(table.rows.size() == 1);
    CHECK(table.rows[0].improvement == 0.0);
  }
}

TEST_CASE("combine_with_pg") {
  TrainConfig base = tiny_config();
  base.epochs = 10;
  DataBundle data = load_data(base.dataset, "unused");
  PopulationGradSpec pg{5, 0.1, true};

  SUBCASE("no partner reproduces the pg-only run") {
    ComparisonTable table = combine_with_pg(std::nullopt, MetaGrids{}, pg, base, data);
    TrainConfig direct_cfg = base;
    direct_cfg.pg = pg;
    RunRecord direct = run_training(direct_cfg, data);
    REQUIRE(table.runs.size() == 1);
    CHECK(same_metrics(table.runs[0], direct));
  }
  SUBCASE("partner grid of k combinations runs k times, with pg active everywhere") {
    MetaGrids grids;
    grids.eras = {2, 5};
    grids.era_decays = {0.5};
    ComparisonTable table = combine_with_pg(Method::LrDecay, grids, pg, base, data, 2);
    CHECK(table.runs.size() == 2);
    for (const RunRecord& run : table.runs) {
      REQUIRE(run.config.pg.has_value());
      CHECK(run.config.pg->population_size == 5);
      CHECK(run.config.lr_era.has_value());
    }
    // baseline carries no method block
    CHECK(!table.baseline.config.pg.has_value());
  }
}

TEST_CASE("width sweep accounting and baseline equivalence") {
  TrainConfig base = tiny_config();
  base.epochs = 10;
  DataBundle data = load_data(base.dataset, "unused");

  WidthSweepGrid grid;
  grid.pg_sizes = {5};
  grid.pg_ranges = {0.1, 0.2};
  const double multipliers[] = {1.0, 1.5};
  auto cells = width_sweep(multipliers, grid, base, data, 2);
  CHECK(cells.size() == 2 * (1 + 2));  // per multiplier: baseline + 1x2 grid

  // multiplier 1.0 baseline equals a plain run at the same seed
  RunRecord plain = run_training(base, data);
  REQUIRE(!cells.empty());
  CHECK(!cells[0].pg.has_value());
  CHECK(same_metrics(cells[0].record, plain));

  // parameter counts strictly increase along the multiplier list
  CHECK(cells[3].param_count > cells[0].param_count);
}
