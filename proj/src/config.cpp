#include "popgrad/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "popgrad/errors.hpp"

namespace popgrad {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  std::string offenders;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      if (!offenders.empty()) offenders += ", ";
      offenders += "\"" + it.key() + "\"";
    }
  }
  if (!offenders.empty())
    throw ConfigError("unknown key(s) in " + where + ": " + offenders);
}

std::optional<double> optional_number(const json& j, const std::string& key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  const json& v = j.at(key);
  if (v.is_string()) {
    if (v.get<std::string>() == "none") return std::nullopt;
    throw ConfigError("key \"" + key + "\" must be a number, null, or \"none\"");
  }
  return v.get<double>();
}

PadType pad_type_from_name(const std::string& name) {
  if (name == "zeros") return PadType::Zeros;
  if (name == "border") return PadType::Border;
  if (name == "reflection") return PadType::Reflection;
  throw ConfigError("unknown pads_type \"" + name + "\"");
}

std::string pad_type_name(PadType pad) {
  switch (pad) {
    case PadType::Zeros: return "zeros";
    case PadType::Border: return "border";
    case PadType::Reflection: return "reflection";
  }
  throw UsageError("unreachable pad type");
}

DatasetConfig dataset_from_json(const json& j) {
  DatasetConfig ds;
  if (j.is_string()) {  // shorthand: "synth" / "fashion_mnist" / "cifar10"
    const std::string kind = j.get<std::string>();
    if (kind == "synth") ds.kind = DatasetConfig::Kind::Synth;
    else if (kind == "fashion_mnist") ds.kind = DatasetConfig::Kind::FashionMnist;
    else if (kind == "cifar10") ds.kind = DatasetConfig::Kind::Cifar10;
    else throw ConfigError("unknown dataset \"" + kind + "\"");
    return ds;
  }
  if (!j.is_object() || !j.contains("kind"))
    throw ConfigError("dataset must be a name or an object with \"kind\"");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "synth") {
    check_keys(j, {"kind", "classes", "per_class", "per_class_test", "dim", "spread", "seed"},
               "dataset");
    ds.kind = DatasetConfig::Kind::Synth;
    ds.classes = j.value("classes", ds.classes);
    ds.per_class = j.value("per_class", ds.per_class);
    ds.per_class_test = j.value("per_class_test", ds.per_class_test);
    ds.dim = j.value("dim", ds.dim);
    ds.spread = j.value("spread", ds.spread);
    ds.seed = j.value("seed", ds.seed);
    if (ds.classes < 2) throw ConfigError("synth dataset needs at least 2 classes");
    if (ds.per_class < 1 || ds.per_class_test < 1 || ds.dim < 1)
      throw ConfigError("synth dataset sizes must be positive");
  } else if (kind == "fashion_mnist" || kind == "cifar10") {
    check_keys(j, {"kind", "train_count", "test_count"}, "dataset");
    ds.kind = kind == "fashion_mnist" ? DatasetConfig::Kind::FashionMnist
                                      : DatasetConfig::Kind::Cifar10;
    if (j.contains("train_count")) ds.train_count = j.at("train_count").get<std::size_t>();
    if (j.contains("test_count")) ds.test_count = j.at("test_count").get<std::size_t>();
  } else {
    throw ConfigError("unknown dataset kind \"" + kind + "\"");
  }
  return ds;
}

json dataset_to_json(const DatasetConfig& ds) {
  json j;
  switch (ds.kind) {
    case DatasetConfig::Kind::Synth:
      j["kind"] = "synth";
      j["classes"] = ds.classes;
      j["per_class"] = ds.per_class;
      j["per_class_test"] = ds.per_class_test;
      j["dim"] = ds.dim;
      j["spread"] = ds.spread;
      j["seed"] = ds.seed;
      break;
    case DatasetConfig::Kind::FashionMnist:
      j["kind"] = "fashion_mnist";
      break;
    case DatasetConfig::Kind::Cifar10:
      j["kind"] = "cifar10";
      break;
  }
  if (ds.train_count) j["train_count"] = *ds.train_count;
  if (ds.test_count) j["test_count"] = *ds.test_count;
  return j;
}

OptimizerConfig optimizer_from_json(const json& j) {
  OptimizerConfig opt;
  if (j.is_null()) return opt;
  check_keys(j,
             {"kind", "lr", "momentum", "dampening", "alpha", "beta1", "beta2", "weight_decay",
              "epsilon"},
             "optimizer");
  opt.kind = opt_kind_from_name(j.value("kind", std::string("sgd")));
  opt.lr = j.value("lr", opt.lr);
  opt.momentum = j.value("momentum", opt.momentum);
  opt.dampening = j.value("dampening", opt.dampening);
  opt.alpha = j.value("alpha", opt.alpha);
  opt.beta1 = j.value("beta1", opt.beta1);
  opt.beta2 = j.value("beta2", opt.beta2);
  opt.weight_decay = j.value("weight_decay", opt.weight_decay);
  opt.epsilon = j.value("epsilon", opt.epsilon);
  opt.validate();
  return opt;
}

json optimizer_to_json(const OptimizerConfig& opt) {
  return json{{"kind", opt_kind_name(opt.kind)},
              {"lr", opt.lr},
              {"momentum", opt.momentum},
              {"dampening", opt.dampening},
              {"alpha", opt.alpha},
              {"beta1", opt.beta1},
              {"beta2", opt.beta2},
              {"weight_decay", opt.weight_decay},
              {"epsilon", opt.epsilon}};
}

AugmentConfig augment_from_json(const json& j) {
  AugmentConfig aug;
  if (j.is_null()) return aug;
  check_keys(j, {"pads_length", "pads_type", "hflip", "norm_mean", "norm_sd"}, "augment");
  aug.pads_length = j.value("pads_length", 0);
  aug.pads_type = pad_type_from_name(j.value("pads_type", std::string("zeros")));
  aug.hflip = j.value("hflip", false);
  aug.norm_mean = optional_number(j, "norm_mean");
  aug.norm_sd = optional_number(j, "norm_sd");
  return aug;
}

json augment_to_json(const AugmentConfig& aug) {
  json j{{"pads_length", aug.pads_length},
         {"pads_type", pad_type_name(aug.pads_type)},
         {"hflip", aug.hflip}};
  j["norm_mean"] = aug.norm_mean ? json(*aug.norm_mean) : json();
  j["norm_sd"] = aug.norm_sd ? json(*aug.norm_sd) : json();
  return j;
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  check_keys(j,
             {"model", "dataset", "optimizer", "augment", "batch_size", "epochs", "seed",
              "population_size", "population_range", "perturb_biases", "n_eras", "era_decay",
              "dropout_first", "dropout_last", "l1_first", "l1_last", "l2_first", "l2_last"},
             "config");
  if (!j.contains("model")) throw ConfigError("config needs a \"model\" block");
  if (!j.contains("dataset")) throw ConfigError("config needs a \"dataset\" block");

  TrainConfig cfg;
  cfg.model = model_spec_from_json(j.at("model"));
  cfg.dataset = dataset_from_json(j.at("dataset"));
  cfg.optimizer = optimizer_from_json(j.contains("optimizer") ? j.at("optimizer") : json());
  cfg.augment = augment_from_json(j.contains("augment") ? j.at("augment") : json());
  cfg.batch_size = j.value("batch_size", 64);
  cfg.epochs = j.value("epochs", 100);
  cfg.seed = j.value("seed", std::uint64_t{1});

  auto need_pair = [&](const char* a, const char* b) {
    if (j.contains(a) != j.contains(b))
      throw ConfigError(std::string("keys \"") + a + "\" and \"" + b +
                        "\" must be given together");
    return j.contains(a);
  };
  if (need_pair("population_size", "population_range")) {
    PopulationGradSpec pg;
    pg.population_size = j.at("population_size").get<int>();
    pg.population_range = j.at("population_range").get<double>();
    pg.perturb_biases = j.value("perturb_biases", true);
    cfg.pg = pg;
  } else if (j.contains("perturb_biases")) {
    throw ConfigError("\"perturb_biases\" requires a population-gradient block");
  }
  if (need_pair("n_eras", "era_decay")) {
    cfg.lr_era = LrEraSpec{j.at("n_eras").get<int>(), j.at("era_decay").get<double>()};
  }
  if (need_pair("dropout_first", "dropout_last")) {
    cfg.dropout = std::make_pair(j.at("dropout_first").get<double>(),
                                 j.at("dropout_last").get<double>());
  }
  if (need_pair("l1_first", "l1_last")) {
    cfg.l1 = std::make_pair(j.at("l1_first").get<double>(), j.at("l1_last").get<double>());
  }
  if (need_pair("l2_first", "l2_last")) {
    cfg.l2 = std::make_pair(j.at("l2_first").get<double>(), j.at("l2_last").get<double>());
  }
  cfg.validate();
  return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["model"] = model_spec_to_json(cfg.model);
  j["dataset"] = dataset_to_json(cfg.dataset);
  j["optimizer"] = optimizer_to_json(cfg.optimizer);
  j["augment"] = augment_to_json(cfg.augment);
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["seed"] = cfg.seed;
  if (cfg.pg) {
    j["population_size"] = cfg.pg->population_size;
    j["population_range"] = cfg.pg->population_range;
    j["perturb_biases"] = cfg.pg->perturb_biases;
  }
  if (cfg.lr_era) {
    j["n_eras"] = cfg.lr_era->n_eras;
    j["era_decay"] = cfg.lr_era->era_decay;
  }
  if (cfg.dropout) {
    j["dropout_first"] = cfg.dropout->first;
    j["dropout_last"] = cfg.dropout->second;
  }
  if (cfg.l1) {
    j["l1_first"] = cfg.l1->first;
    j["l1_last"] = cfg.l1->second;
  }
  if (cfg.l2) {
    j["l2_first"] = cfg.l2->first;
    j["l2_last"] = cfg.l2->second;
  }
  return j;
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("malformed JSON in " + path.string());
  return j;
}

// --- sub-command configs -------------------------------------------------------

namespace {

TrainConfig base_of(const json& j, const char* where) {
  if (!j.contains("base")) throw ConfigError(std::string(where) + " config needs \"base\"");
  return train_config_from_json(j.at("base"));
}

template <typename T>
void fill_axis(const json& j, const char* key, std::vector<T>& axis) {
  if (!j.contains(key)) return;
  axis = j.at(key).get<std::vector<T>>();
  if (axis.empty()) throw ConfigError(std::string("axis \"") + key + "\" must be non-empty");
}

MetaGrids meta_grids_from_json(const json& j) {
  MetaGrids g;
  if (j.is_null()) return g;
  check_keys(j,
             {"pg_sizes", "pg_ranges", "eras", "era_decays", "dropout_first", "dropout_last",
              "reg_first", "reg_last", "opt_meta1", "opt_meta2"},
             "grids");
  fill_axis(j, "pg_sizes", g.pg_sizes);
  fill_axis(j, "pg_ranges", g.pg_ranges);
  fill_axis(j, "eras", g.eras);
  fill_axis(j, "era_decays", g.era_decays);
  fill_axis(j, "dropout_first", g.dropout_first);
  fill_axis(j, "dropout_last", g.dropout_last);
  fill_axis(j, "reg_first", g.reg_first);
  fill_axis(j, "reg_last", g.reg_last);
  fill_axis(j, "opt_meta1", g.opt_meta1);
  fill_axis(j, "opt_meta2", g.opt_meta2);
  return g;
}

}  // namespace

TuneConfig tune_config_from_json(const json& j) {
  check_keys(j, {"base", "grid", "draws", "search_seed"}, "tune config");
  TuneConfig cfg;
  cfg.base = base_of(j, "tune");
  cfg.draws = j.value("draws", std::size_t{20});
  cfg.search_seed = j.value("search_seed", std::uint64_t{0});
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    check_keys(g,
               {"lr", "batch_size", "pads_length", "pads_type", "hflip", "norm_mean", "norm_sd"},
               "grid");
    fill_axis(g, "lr", cfg.grid.lr);
    fill_axis(g, "batch_size", cfg.grid.batch_size);
    fill_axis(g, "pads_length", cfg.grid.pads_length);
    if (g.contains("pads_type")) {
      cfg.grid.pads_type.clear();
      for (const auto& name : g.at("pads_type"))
        cfg.grid.pads_type.push_back(pad_type_from_name(name.get<std::string>()));
      if (cfg.grid.pads_type.empty()) throw ConfigError("axis \"pads_type\" must be non-empty");
    }
    fill_axis(g, "hflip", cfg.grid.hflip);
    if (g.contains("norm_mean")) {
      cfg.grid.norm_mean.clear();
      for (const auto& v : g.at("norm_mean"))
        cfg.grid.norm_mean.push_back(v.is_null() ? std::nullopt
                                                 : std::optional<double>(v.get<double>()));
    }
    if (g.contains("norm_sd")) {
      cfg.grid.norm_sd.clear();
      for (const auto& v : g.at("norm_sd"))
        cfg.grid.norm_sd.push_back(v.is_null() ? std::nullopt
                                               : std::optional<double>(v.get<double>()));
    }
  }
  cfg.grid.validate();
  return cfg;
}

CompareConfig compare_config_from_json(const json& j) {
  check_keys(j, {"base", "methods", "grids"}, "compare config");
  CompareConfig cfg;
  cfg.base = base_of(j, "compare");
  if (j.contains("methods")) {
    for (const auto& name : j.at("methods"))
      cfg.methods.push_back(method_from_name(name.get<std::string>()));
  } else {
    cfg.methods = all_methods();
  }
  cfg.grids = meta_grids_from_json(j.contains("grids") ? j.at("grids") : json());
  return cfg;
}

CombineConfig combine_config_from_json(const json& j) {
  check_keys(j, {"base", "partner", "population_size", "population_range", "grids"},
             "combine config");
  CombineConfig cfg;
  cfg.base = base_of(j, "combine");
  if (!j.contains("population_size") || !j.contains("population_range"))
    throw ConfigError("combine config needs the fixed PG block");
  cfg.pg.population_size = j.at("population_size").get<int>();
  cfg.pg.population_range = j.at("population_range").get<double>();
  if (j.contains("partner") && !j.at("partner").is_null()) {
    cfg.partner = method_from_name(j.at("partner").get<std::string>());
  }
  cfg.grids = meta_grids_from_json(j.contains("grids") ? j.at("grids") : json());
  return cfg;
}

LongConfig long_config_from_json(const json& j) {
  check_keys(j, {"base", "window"}, "long config");
  LongConfig cfg;
  cfg.base = base_of(j, "long");
  cfg.window = j.value("window", std::size_t{20});
  if (cfg.window < 1) throw ConfigError("window must be positive");
  return cfg;
}

WidthsConfig widths_config_from_json(const json& j) {
  check_keys(j, {"base", "multipliers", "pg_sizes", "pg_ranges"}, "widths config");
  WidthsConfig cfg;
  cfg.base = base_of(j, "widths");
  fill_axis(j, "multipliers", cfg.multipliers);
  fill_axis(j, "pg_sizes", cfg.grid.pg_sizes);
  fill_axis(j, "pg_ranges", cfg.grid.pg_ranges);
  return cfg;
}

GradQualConfig gradqual_config_from_json(const json& j) {
  check_keys(j, {"base", "subset_size", "repeats"}, "gradqual config");
  GradQualConfig cfg;
  cfg.base = base_of(j, "gradqual");
  cfg.subset_size = j.value("subset_size", std::size_t{1});
  cfg.repeats = j.value("repeats", std::size_t{10});
  return cfg;
}

LandscapeConfig landscape_config_from_json(const json& j) {
  check_keys(j, {"base", "slice", "batch_count"}, "landscape config");
  LandscapeConfig cfg;
  cfg.base = base_of(j, "landscape");
  cfg.batch_count = j.value("batch_count", std::size_t{32});
  if (j.contains("slice")) {
    const json& s = j.at("slice");
    check_keys(s,
               {"x_min", "x_max", "y_min", "y_max", "resolution", "arrow_count", "arrow_radius",
                "arrow_x", "arrow_y", "seed"},
               "slice");
    cfg.slice.x_min = s.value("x_min", cfg.slice.x_min);
    cfg.slice.x_max = s.value("x_max", cfg.slice.x_max);
    cfg.slice.y_min = s.value("y_min", cfg.slice.y_min);
    cfg.slice.y_max = s.value("y_max", cfg.slice.y_max);
    cfg.slice.resolution = s.value("resolution", cfg.slice.resolution);
    cfg.slice.arrow_count = s.value("arrow_count", cfg.slice.arrow_count);
    cfg.slice.arrow_radius = s.value("arrow_radius", cfg.slice.arrow_radius);
    cfg.slice.arrow_x = s.value("arrow_x", cfg.slice.arrow_x);
    cfg.slice.arrow_y = s.value("arrow_y", cfg.slice.arrow_y);
    cfg.slice.seed = s.value("seed", cfg.slice.seed);
  }
  cfg.slice.validate();
  return cfg;
}

// --- result files ------------------------------------------------------------

void write_run_jsonl(const std::filesystem::path& dir, const RunRecord& record) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / (record.run_id + ".jsonl"));
  if (!out) throw DataError("cannot write run file for " + record.run_id);
  for (const EpochEntry& e : record.entries) {
    json line{{"run_id", record.run_id},
              {"epoch", e.epoch},
              {"train_loss", e.train_loss},
              {"test_f1", e.test_f1},
              {"ms", e.ms}};
    out << line.dump() << '\n';
  }
}

void write_run_summary(const std::filesystem::path& dir, const RunRecord& record) {
  std::filesystem::create_directories(dir);
  json j;
  j["run_id"] = record.run_id;
  j["config"] = train_config_to_json(record.config);
  j["epochs_completed"] = record.entries.size();
  if (record.summary) {
    j["summary"] = {{"mean_f1", record.summary->mean}, {"sd_f1", record.summary->sd}};
  } else {
    j["summary"] = nullptr;
  }
  if (record.failure) {
    j["failure"] = {{"epoch", record.failure->epoch},
                    {"batch", record.failure->batch},
                    {"member", record.failure->member},
                    {"what", record.failure->what}};
  } else {
    j["failure"] = nullptr;
  }
  std::ofstream out(dir / (record.run_id + ".summary.json"));
  if (!out) throw DataError("cannot write summary for " + record.run_id);
  out << j.dump(2) << '\n';
}

void write_comparison_csv(const std::filesystem::path& path, const ComparisonTable& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "method,meta1,meta2,mean_f1,sd_f1,improvement\n";
  for (const ComparisonRow& row : table.rows) {
    out << method_name(row.method) << ',' << row.meta1 << ',' << row.meta2 << ',' << row.mean_f1
        << ',' << row.sd_f1 << ',' << row.improvement << '\n';
  }
}

void write_bins_csv(const std::filesystem::path& path, const std::vector<F1Bin>& bins) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "epoch_begin,epoch_end,mean_f1,sd_f1\n";
  for (const F1Bin& b : bins) {
    out << b.begin << ',' << b.end << ',' << b.mean << ',' << b.sd << '\n';
  }
}

void write_width_csv(const std::filesystem::path& path,
                     const std::vector<WidthSweepCell>& cells) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "multiplier,population_size,population_range,param_count,mean_f1,sd_f1\n";
  for (const WidthSweepCell& c : cells) {
    out << c.multiplier << ',';
    if (c.pg)
      out << c.pg->first << ',' << c.pg->second << ',';
    else
      out << ",,";
    out << c.param_count << ',';
    if (c.record.summary)
      out << c.record.summary->mean << ',' << c.record.summary->sd;
    else
      out << "nan,nan";
    out << '\n';
  }
}

}  // namespace popgrad
