#include "popgrad/harness.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "popgrad/errors.hpp"
#include "popgrad/parallel.hpp"
#include "popgrad/regsched.hpp"

namespace popgrad {

namespace {

std::string trim_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

// --- data loading ---------------------------------------------------------------

DataBundle load_data(const DatasetConfig& config, const std::filesystem::path& data_root) {
  DataBundle bundle;
  switch (config.kind) {
    case DatasetConfig::Kind::Synth: {
      Dataset full = synth_blobs(config.classes, config.per_class + config.per_class_test,
                                 config.dim, config.spread, config.seed);
      // per-class prefix goes to train, remainder to test; blobs are laid out
      // class-major so the split is exact
      const std::size_t pc = static_cast<std::size_t>(config.per_class + config.per_class_test);
      std::vector<int> train_idx, test_idx;
      for (std::size_t i = 0; i < full.size(); ++i) {
        if (i % pc < static_cast<std::size_t>(config.per_class))
          train_idx.push_back(static_cast<int>(i));
        else
          test_idx.push_back(static_cast<int>(i));
      }
      Batch tr = gather(full, train_idx);
      Batch te = gather(full, test_idx);
      bundle.train = Dataset{std::move(tr.images), std::move(tr.labels), full.class_count,
                             Split::Train};
      bundle.test = Dataset{std::move(te.images), std::move(te.labels), full.class_count,
                            Split::Test};
      return bundle;
    }
    case DatasetConfig::Kind::FashionMnist: {
      const auto dir = data_root / "fashion-mnist";
      bundle.train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
      bundle.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
      bundle.train.class_count = bundle.test.class_count = 10;
      break;
    }
    case DatasetConfig::Kind::Cifar10: {
      const auto dir = data_root / "cifar-10-batches-bin";
      std::vector<std::filesystem::path> train_files;
      for (int i = 1; i <= 5; ++i) {
        train_files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
      }
      bundle.train = load_cifar_bin(train_files);
      bundle.test = load_cifar_bin({dir / "test_batch.bin"});
      break;
    }
  }
  bundle.train.split = Split::Train;
  bundle.test.split = Split::Test;

  auto truncate = [](Dataset& ds, std::size_t count) {
    if (count == 0 || count >= ds.size()) return;
    std::vector<int> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = static_cast<int>(i);
    Batch b = gather(ds, idx);
    ds.images = std::move(b.images);
    ds.labels = std::move(b.labels);
  };
  if (config.train_count) truncate(bundle.train, *config.train_count);
  if (config.test_count) truncate(bundle.test, *config.test_count);
  return bundle;
}

// --- config validation ------------------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  optimizer.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (pg) pg->validate();
  if (lr_era) {
    if (lr_era->n_eras < 1 || lr_era->n_eras > epochs)
      throw ConfigError("n_eras must lie in [1, epochs]");
    if (lr_era->era_decay <= 0.0 || lr_era->era_decay > 1.0)
      throw ConfigError("era_decay must lie in (0,1]");
  }
  if (dropout) {
    if (dropout->first < 0.0 || dropout->first >= 1.0 || dropout->second < 0.0 ||
        dropout->second >= 1.0)
      throw ConfigError("dropout probabilities must lie in [0,1)");
  }
  for (const auto& block : {l1, l2}) {
    if (block && (block->first < 0.0 || block->second < 0.0))
      throw ConfigError("regularisation factors must be non-negative");
  }
  if (augment.pads_length < 0) throw ConfigError("pads_length must be non-negative");
  if (augment.norm_sd && *augment.norm_sd <= 0.0) throw ConfigError("norm_sd must be positive");
}

std::vector<double> RunRecord::f1_series() const {
  std::vector<double> out;
  out.reserve(entries.size());
  for (const EpochEntry& e : entries) out.push_back(e.test_f1);
  return out;
}

// --- training loop -----------------------------------------------------------------

namespace {

std::vector<int> predict(const Model& model, const ParamVector& params, const Dataset& test) {
  std::vector<int> preds(test.size());
  const std::size_t eval_batch = 512;
  std::vector<int> idx;
  for (std::size_t start = 0; start < test.size(); start += eval_batch) {
    const std::size_t end = std::min(test.size(), start + eval_batch);
    idx.clear();
    for (std::size_t i = start; i < end; ++i) idx.push_back(static_cast<int>(i));
    Batch batch = gather(test, idx);
    ForwardPass pass = run_forward(model, params, batch, Mode::Eval, RngStream(0));
    const Tensor& logits = pass.tape.value(pass.build.logits);
    const std::size_t k = logits.extent(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* row = logits.data.data() + i * k;
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j) {
        if (row[j] > row[best]) best = j;
      }
      preds[start + i] = static_cast<int>(best);
    }
  }
  return preds;
}

}  // namespace

RunRecord run_training(const TrainConfig& config, const DataBundle& data, int workers,
                       const std::string& run_id) {
  config.validate();
  if (data.train.size() == 0 || data.test.size() == 0)
    throw DataError("training requires non-empty train and test sets");

  RunRecord record;
  record.run_id = run_id;
  record.config = config;

  // Normalization statistics come from the raw training images; augmentation
  // operates in normalized space afterwards.
  DataBundle local;
  local.train = data.train;
  local.test = data.test;
  const NormStats stats = channel_stats(local.train.images);
  normalize_with(local.train.images, stats, config.augment.norm_mean, config.augment.norm_sd);
  normalize_with(local.test.images, stats, config.augment.norm_mean, config.augment.norm_sd);

  RngStream run_rng(config.seed);
  BuildResult built = build(config.model, run_rng.derive(stream_label::kInit));
  if (config.dropout) {
    built.graph = configure_dropout(std::move(built.graph), config.dropout->first,
                                    config.dropout->second);
  }

  const std::size_t site_count = built.graph.dropout_sites().size();
  std::vector<double> l1_factors, l2_factors;
  if (config.l1 && site_count > 0)
    l1_factors = interpolate(config.l1->first, config.l1->second, site_count);
  if (config.l2 && site_count > 0)
    l2_factors = interpolate(config.l2->first, config.l2->second, site_count);
  PenalizedModel penalized(built.graph, l1_factors, l2_factors);
  const Model& model = (l1_factors.empty() && l2_factors.empty())
                           ? static_cast<const Model&>(built.graph)
                           : static_cast<const Model&>(penalized);

  ParamVector params = std::move(built.params);
  OptimizerState state = OptimizerState::for_params(params.size(), config.optimizer.kind);
  const bool augmenting = config.augment.pads_length > 0 || config.augment.hflip;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr_now =
        config.lr_era ? lr_schedule(epoch, config.epochs, config.lr_era->n_eras,
                                    config.lr_era->era_decay, config.optimizer.lr)
                      : config.optimizer.lr;

    const auto batches =
        minibatches(local.train.size(), static_cast<std::size_t>(config.batch_size),
                    run_rng.derive(stream_label::kShuffle, static_cast<std::uint64_t>(epoch)));

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    try {
      for (const auto& batch_idx : batches) {
        Batch batch = gather(local.train, batch_idx);
        if (augmenting) {
          RngStream aug_rng = run_rng.derive(stream_label::kAugment,
                                             static_cast<std::uint64_t>(epoch), batch_index);
          const std::size_t img_len = batch.images.size() / batch.size();
          for (std::size_t i = 0; i < batch.size(); ++i) {
            Tensor img = image_at(batch.images, i);
            Tensor out = augment(img, config.augment, aug_rng);
            std::copy(out.data.begin(), out.data.end(),
                      batch.images.data.begin() + i * img_len);
          }
        }

        RngStream step_rng = run_rng.derive(stream_label::kStep,
                                            static_cast<std::uint64_t>(epoch), batch_index);
        double loss;
        ParamVector grad;
        if (config.pg) {
          PopGradResult res =
              population_gradient(model, params, batch, *config.pg, step_rng, Mode::Train,
                                  workers);
          loss = res.mean_loss;
          grad = std::move(res.gradient);
        } else {
          ForwardPass pass = run_forward(model, params, batch, Mode::Train,
                                         step_rng.derive(stream_label::kDropoutMask));
          loss = pass.loss;
          grad = run_backward(pass);
        }
        epoch_loss += (loss - epoch_loss) / static_cast<double>(batch_index + 1);
        apply_update(state, params.values, grad.values, config.optimizer, lr_now);
        ++batch_index;
      }

      const std::vector<int> preds = predict(model, params, local.test);
      const double f1 = f1_macro(preds, local.test.labels, local.test.class_count);
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
              .count();
      record.entries.push_back({epoch, epoch_loss, f1, ms});
    } catch (const NumericDivergence& e) {
      record.failure = FailureInfo{epoch, static_cast<int>(batch_index), e.member, e.what()};
      break;
    }
  }

  if (record.entries.size() >= 10) {
    record.summary = summarize_last10(record.f1_series());
  }
  return record;
}

// --- random search --------------------------------------------------------------------

void SearchGrid::validate() const {
  if (lr.empty() || batch_size.empty() || pads_length.empty() || pads_type.empty() ||
      hflip.empty() || norm_mean.empty() || norm_sd.empty())
    throw ConfigError("every search grid axis must be non-empty");
}

std::size_t SearchGrid::cardinality() const {
  return lr.size() * batch_size.size() * pads_length.size() * pads_type.size() * hflip.size() *
         norm_mean.size() * norm_sd.size();
}

TrainConfig SearchGrid::apply(const TrainConfig& base, std::size_t index) const {
  TrainConfig out = base;
  auto pick = [&index](const auto& axis) {
    const std::size_t i = index % axis.size();
    index /= axis.size();
    return axis[i];
  };
  out.optimizer.lr = pick(lr);
  out.batch_size = pick(batch_size);
  out.augment.pads_length = pick(pads_length);
  out.augment.pads_type = pick(pads_type);
  out.augment.hflip = pick(hflip);
  out.augment.norm_mean = pick(norm_mean);
  out.augment.norm_sd = pick(norm_sd);
  return out;
}

SearchResult random_search(const SearchGrid& grid, std::size_t n_draws, const TrainConfig& base,
                           std::uint64_t search_seed, const DataBundle& data, int workers) {
  grid.validate();
  const std::size_t card = grid.cardinality();
  if (n_draws == 0 || n_draws > card)
    throw UsageError("draw count must lie in [1, grid cardinality]");

  SearchResult result;
  RngStream rng = RngStream(search_seed).derive(stream_label::kShuffle);
  if (card <= (std::size_t{1} << 22)) {
    std::vector<std::size_t> pool(card);
    for (std::size_t i = 0; i < card; ++i) pool[i] = i;
    for (std::size_t i = 0; i < n_draws; ++i) {
      const std::size_t j = i + rng.uniform_index(card - i);
      std::swap(pool[i], pool[j]);
      result.draw_indices.push_back(pool[i]);
    }
  } else {
    std::unordered_set<std::size_t> seen;
    while (result.draw_indices.size() < n_draws) {
      const std::size_t candidate = rng.next_u64() % card;
      if (seen.insert(candidate).second) result.draw_indices.push_back(candidate);
    }
  }

  result.records.resize(n_draws);
  parallel_for(n_draws, workers, [&](std::size_t i) {
    char id[32];
    std::snprintf(id, sizeof(id), "draw%04zu", i);
    TrainConfig cfg = grid.apply(base, result.draw_indices[i]);
    result.records[i] = run_training(cfg, data, 1, id);
  });

  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n_draws; ++i) {
    if (!result.records[i].summary) continue;
    if (result.records[i].summary->mean > best) {
      best = result.records[i].summary->mean;
      result.best_draw = i;
    }
  }
  if (best == -std::numeric_limits<double>::infinity())
    throw UsageError("no search run completed enough epochs to be summarized");
  result.best_config = result.records[result.best_draw].config;
  return result;
}

// --- method comparison ---------------------------------------------------------------

std::string method_name(Method m) {
  switch (m) {
    case Method::Pg: return "pg";
    case Method::LrDecay: return "lr_decay";
    case Method::Dropout: return "dropout";
    case Method::L1: return "l1";
    case Method::L2: return "l2";
    case Method::Nesterov: return "nesterov";
    case Method::RmsProp: return "rmsprop";
    case Method::AdamW: return "adamw";
    case Method::Adam: return "adam";
    case Method::AmsGrad: return "amsgrad";
    case Method::Adamax: return "adamax";
  }
  throw UsageError("unreachable method");
}

Method method_from_name(const std::string& name) {
  for (Method m : all_methods()) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown method \"" + name + "\"");
}

std::vector<Method> all_methods() {
  return {Method::Pg,   Method::LrDecay, Method::Dropout, Method::L1,      Method::L2,
          Method::Nesterov, Method::RmsProp, Method::AdamW,   Method::Adam,
          Method::AmsGrad,  Method::Adamax};
}

namespace {

struct MethodCombo {
  double meta1;
  double meta2;
};

std::vector<MethodCombo> method_combos(Method method, const MetaGrids& g) {
  std::vector<MethodCombo> combos;
  auto cross = [&combos](const auto& a, const auto& b) {
    for (const auto& x : a) {
      for (const auto& y : b) {
        combos.push_back({static_cast<double>(x), static_cast<double>(y)});
      }
    }
  };
  switch (method) {
    case Method::Pg: cross(g.pg_sizes, g.pg_ranges); break;
    case Method::LrDecay: cross(g.eras, g.era_decays); break;
    case Method::Dropout: cross(g.dropout_first, g.dropout_last); break;
    case Method::L1:
    case Method::L2: cross(g.reg_first, g.reg_last); break;
    default: cross(g.opt_meta1, g.opt_meta2); break;
  }
  return combos;
}

}  // namespace

TrainConfig apply_method(const TrainConfig& base, Method method, double meta1, double meta2) {
  TrainConfig out = base;
  switch (method) {
    case Method::Pg:
      out.pg = PopulationGradSpec{static_cast<int>(meta1), meta2, true};
      break;
    case Method::LrDecay:
      out.lr_era = LrEraSpec{static_cast<int>(meta1), meta2};
      break;
    case Method::Dropout:
      out.dropout = std::make_pair(meta1, meta2);
      break;
    case Method::L1:
      out.l1 = std::make_pair(meta1, meta2);
      break;
    case Method::L2:
      out.l2 = std::make_pair(meta1, meta2);
      break;
    case Method::Nesterov:
      out.optimizer.kind = OptKind::Nesterov;
      out.optimizer.momentum = meta1;
      out.optimizer.dampening = meta2;
      break;
    case Method::RmsProp:
      out.optimizer.kind = OptKind::RmsProp;
      out.optimizer.momentum = meta1;
      out.optimizer.alpha = meta2;
      break;
    case Method::AdamW:
    case Method::Adam:
    case Method::AmsGrad:
    case Method::Adamax: {
      switch (method) {
        case Method::AdamW: out.optimizer.kind = OptKind::AdamW; break;
        case Method::Adam: out.optimizer.kind = OptKind::Adam; break;
        case Method::AmsGrad: out.optimizer.kind = OptKind::AmsGrad; break;
        default: out.optimizer.kind = OptKind::Adamax; break;
      }
      out.optimizer.beta1 = meta1;
      out.optimizer.beta2 = meta2;
      break;
    }
  }
  return out;
}

namespace {

ComparisonTable run_comparison(const std::vector<std::pair<Method, MethodCombo>>& cells,
                               const TrainConfig& base_with_blocks, const TrainConfig& baseline_cfg,
                               const DataBundle& data, int workers) {
  ComparisonTable table;
  table.baseline = run_training(baseline_cfg, data, workers, "baseline");
  const double baseline_mean =
      table.baseline.summary ? table.baseline.summary->mean
                             : std::numeric_limits<double>::quiet_NaN();

  table.runs.resize(cells.size());
  parallel_for(cells.size(), workers, [&](std::size_t i) {
    const auto& [method, combo] = cells[i];
    TrainConfig cfg = apply_method(base_with_blocks, method, combo.meta1, combo.meta2);
    const std::string id =
        method_name(method) + "_" + trim_double(combo.meta1) + "_" + trim_double(combo.meta2);
    table.runs[i] = run_training(cfg, data, 1, id);
  });

  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& [method, combo] = cells[i];
    ComparisonRow row;
    row.method = method;
    row.meta1 = combo.meta1;
    row.meta2 = combo.meta2;
    row.run_id = table.runs[i].run_id;
    if (table.runs[i].summary) {
      row.mean_f1 = table.runs[i].summary->mean;
      row.sd_f1 = table.runs[i].summary->sd;
      row.improvement = row.mean_f1 - baseline_mean;
    } else {
      row.mean_f1 = row.sd_f1 = row.improvement = std::numeric_limits<double>::quiet_NaN();
    }
    table.rows.push_back(row);
  }

  // best row per method, ties to the earliest combination
  Method current{};
  bool have_current = false;
  ComparisonRow best{};
  auto flush = [&] {
    if (have_current) table.best_rows.push_back(best);
  };
  for (const ComparisonRow& row : table.rows) {
    if (!have_current || row.method != current) {
      flush();
      current = row.method;
      best = row;
      have_current = true;
    } else if (!std::isnan(row.mean_f1) && (std::isnan(best.mean_f1) || row.mean_f1 > best.mean_f1)) {
      best = row;
    }
  }
  flush();
  return table;
}

}  // namespace

ComparisonTable compare_methods(std::span<const Method> methods, const MetaGrids& grids,
                                const TrainConfig& base, const DataBundle& data, int workers) {
  std::vector<std::pair<Method, MethodCombo>> cells;
  for (Method m : methods) {
    for (const MethodCombo& combo : method_combos(m, grids)) cells.emplace_back(m, combo);
  }
  return run_comparison(cells, base, base, data, workers);
}

ComparisonTable combine_with_pg(std::optional<Method> partner, const MetaGrids& grids,
                                const PopulationGradSpec& pg_fixed, const TrainConfig& base,
                                const DataBundle& data, int workers) {
  TrainConfig with_pg = base;
  with_pg.pg = pg_fixed;
  if (!partner) {
    // degenerate combination: the PG-only run against the plain baseline
    ComparisonTable table;
    table.baseline = run_training(base, data, workers, "baseline");
    table.runs.push_back(run_training(with_pg, data, workers, "pg_only"));
    ComparisonRow row;
    row.method = Method::Pg;
    row.meta1 = pg_fixed.population_size;
    row.meta2 = pg_fixed.population_range;
    row.run_id = table.runs[0].run_id;
    if (table.runs[0].summary && table.baseline.summary) {
      row.mean_f1 = table.runs[0].summary->mean;
      row.sd_f1 = table.runs[0].summary->sd;
      row.improvement = row.mean_f1 - table.baseline.summary->mean;
    }
    table.rows.push_back(row);
    table.best_rows.push_back(row);
    return table;
  }

  std::vector<std::pair<Method, MethodCombo>> cells;
  for (const MethodCombo& combo : method_combos(*partner, grids)) {
    cells.emplace_back(*partner, combo);
  }
  return run_comparison(cells, with_pg, base, data, workers);
}

// --- width sweep ------------------------------------------------------------------------

std::vector<WidthSweepCell> width_sweep(std::span<const double> multipliers,
                                        const WidthSweepGrid& grid, const TrainConfig& base,
                                        const DataBundle& data, int workers) {
  struct Job {
    double multiplier;
    std::optional<std::pair<int, double>> pg;
  };
  std::vector<Job> jobs;
  for (double m : multipliers) {
    jobs.push_back({m, std::nullopt});
    for (int s : grid.pg_sizes) {
      for (double r : grid.pg_ranges) jobs.push_back({m, std::make_pair(s, r)});
    }
  }

  std::vector<WidthSweepCell> cells(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t i) {
    const Job& job = jobs[i];
    TrainConfig cfg = base;
    cfg.model.width_multiplier = job.multiplier;
    std::string id = "width" + trim_double(job.multiplier);
    if (job.pg) {
      cfg.pg = PopulationGradSpec{job.pg->first, job.pg->second, true};
      id += "_pg_s" + trim_double(job.pg->first) + "_r" + trim_double(job.pg->second);
    } else {
      id += "_baseline";
    }
    WidthSweepCell cell;
    cell.multiplier = job.multiplier;
    cell.pg = job.pg;
    cell.record = run_training(cfg, data, 1, id);
    cell.param_count = build(cfg.model, RngStream(0)).graph.layout().total;
    cells[i] = std::move(cell);
  });
  return cells;
}

}  // namespace popgrad
