#include "popgrad/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "popgrad/errors.hpp"

namespace popgrad {

using nlohmann::json;

// --- flatten / unflatten -----------------------------------------------------

std::map<std::string, Tensor> unflatten(const ParamVector& params) {
  if (!params.layout) throw UsageError("unflatten requires a layout");
  std::map<std::string, Tensor> out;
  for (const ParamSlice& s : params.layout->slices) {
    std::vector<double> data(params.values.begin() + s.offset,
                             params.values.begin() + s.offset + s.count);
    out.emplace(s.name, Tensor(s.shape, std::move(data)));
  }
  return out;
}

ParamVector flatten(const std::map<std::string, Tensor>& tensors,
                    std::shared_ptr<const ParamLayout> layout) {
  if (!layout) throw UsageError("flatten requires a layout");
  ParamVector out;
  out.layout = layout;
  out.values.assign(layout->total, 0.0);
  for (const ParamSlice& s : layout->slices) {
    auto it = tensors.find(s.name);
    if (it == tensors.end()) throw UsageError("flatten: missing slice " + s.name);
    if (it->second.size() != s.count) throw UsageError("flatten: size mismatch for " + s.name);
    std::copy(it->second.data.begin(), it->second.data.end(), out.values.begin() + s.offset);
  }
  return out;
}

// --- spec --------------------------------------------------------------------

void ModelSpec::validate() const {
  if (width_multiplier <= 0.0) throw ConfigError("width_multiplier must be positive");
  if (class_count < 2) throw ConfigError("class_count must be at least 2");
  if (kind == ModelKind::Mlp) {
    if (layer_sizes.size() < 2) throw ConfigError("mlp needs at least input and output sizes");
    for (std::size_t s : layer_sizes) {
      if (s == 0) throw ConfigError("mlp layer sizes must be positive");
    }
    if (layer_sizes.back() != class_count)
      throw ConfigError("mlp output size must equal class_count");
  } else {
    if (base_channels.empty()) throw ConfigError("miniconv needs at least one conv stage");
    for (std::size_t c : base_channels) {
      if (c == 0) throw ConfigError("conv channel counts must be positive");
    }
    std::size_t h = input_shape[1], w = input_shape[2];
    for (std::size_t i = 0; i < base_channels.size(); ++i) {
      h /= 2;
      w /= 2;
    }
    if (h == 0 || w == 0) throw ConfigError("input too small for the pooling stages");
  }
}

std::size_t scale_dim(std::size_t base, double multiplier) {
  const double scaled = std::floor(static_cast<double>(base) * multiplier + 0.5);
  return scaled < 1.0 ? 1 : static_cast<std::size_t>(scaled);
}

ModelSpec scale_width(const ModelSpec& spec, double multiplier) {
  if (multiplier <= 0.0) throw ConfigError("width multiplier must be positive");
  ModelSpec out = spec;
  out.width_multiplier = 1.0;
  if (spec.kind == ModelKind::Mlp) {
    for (std::size_t i = 1; i + 1 < out.layer_sizes.size(); ++i) {
      out.layer_sizes[i] = scale_dim(spec.layer_sizes[i], multiplier);
    }
  } else {
    for (std::size_t i = 0; i < out.base_channels.size(); ++i) {
      out.base_channels[i] = scale_dim(spec.base_channels[i], multiplier);
    }
    out.hidden_units = scale_dim(spec.hidden_units, multiplier);
  }
  return out;
}

// --- graph building ----------------------------------------------------------

struct ModelBuilder {
  ParamLayout layout;
  std::vector<ModelGraph::Layer> layers;

  int add_slice(const std::string& name, std::vector<std::size_t> shape, bool is_bias) {
    ParamSlice s;
    s.name = name;
    s.shape = std::move(shape);
    s.count = shape_product(s.shape);
    s.offset = layout.total;
    s.is_bias = is_bias;
    layout.total += s.count;
    layout.slices.push_back(std::move(s));
    return static_cast<int>(layout.slices.size() - 1);
  }

  void affine(const std::string& name, std::size_t in, std::size_t out) {
    ModelGraph::Layer l;
    l.kind = ModelGraph::LayerKind::Affine;
    l.w_slice = add_slice(name + ".w", {in, out}, false);
    l.b_slice = add_slice(name + ".b", {out}, true);
    layers.push_back(l);
  }

  void conv(const std::string& name, std::size_t in_ch, std::size_t out_ch) {
    ModelGraph::Layer l;
    l.kind = ModelGraph::LayerKind::Conv3x3;
    l.w_slice = add_slice(name + ".w", {out_ch, in_ch, 3, 3}, false);
    l.b_slice = add_slice(name + ".b", {out_ch}, true);
    layers.push_back(l);
  }

  void simple(ModelGraph::LayerKind kind) { layers.push_back({kind, -1, -1, 0.0}); }
};

BuildResult build(const ModelSpec& spec, RngStream init_rng) {
  spec.validate();
  const ModelSpec eff = scale_width(spec, spec.width_multiplier);

  ModelBuilder b;
  if (eff.kind == ModelKind::Mlp) {
    b.simple(ModelGraph::LayerKind::Flatten);
    const auto& sz = eff.layer_sizes;
    for (std::size_t i = 1; i < sz.size(); ++i) {
      b.affine("fc" + std::to_string(i), sz[i - 1], sz[i]);
      if (i + 1 < sz.size()) {
        b.simple(ModelGraph::LayerKind::Dropout);
        b.simple(ModelGraph::LayerKind::Relu);
      }
    }
  } else {
    std::size_t prev = eff.input_shape[0];
    std::size_t h = eff.input_shape[1], w = eff.input_shape[2];
    for (std::size_t i = 0; i < eff.base_channels.size(); ++i) {
      b.conv("conv" + std::to_string(i + 1), prev, eff.base_channels[i]);
      b.simple(ModelGraph::LayerKind::Dropout);
      b.simple(ModelGraph::LayerKind::Relu);
      b.simple(ModelGraph::LayerKind::MaxPool2x2);
      prev = eff.base_channels[i];
      h /= 2;
      w /= 2;
    }
    b.simple(ModelGraph::LayerKind::Flatten);
    b.affine("fc1", prev * h * w, eff.hidden_units);
    b.simple(ModelGraph::LayerKind::Dropout);
    b.simple(ModelGraph::LayerKind::Relu);
    b.affine("fc2", eff.hidden_units, eff.class_count);
  }

  BuildResult result;
  result.graph.spec_ = spec;
  result.graph.layers_ = std::move(b.layers);
  result.graph.layout_ = std::make_shared<const ParamLayout>(std::move(b.layout));

  const ParamLayout& layout = *result.graph.layout_;
  result.params.layout = result.graph.layout_;
  result.params.values.assign(layout.total, 0.0);
  for (const ParamSlice& s : layout.slices) {
    if (s.is_bias) continue;  // biases start at zero
    double fan_in, fan_out;
    if (s.shape.size() == 2) {
      fan_in = static_cast<double>(s.shape[0]);
      fan_out = static_cast<double>(s.shape[1]);
    } else {
      fan_in = static_cast<double>(s.shape[1] * s.shape[2] * s.shape[3]);
      fan_out = static_cast<double>(s.shape[0] * s.shape[2] * s.shape[3]);
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < s.count; ++i) {
      result.params.values[s.offset + i] = limit * (2.0 * init_rng.uniform() - 1.0);
    }
  }
  return result;
}

// --- forward -----------------------------------------------------------------

std::vector<std::size_t> ModelGraph::dropout_sites() const {
  std::vector<std::size_t> sites;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].kind == LayerKind::Dropout) sites.push_back(i);
  }
  return sites;
}

void ModelGraph::set_dropout_probs(const std::vector<double>& probs) {
  const auto sites = dropout_sites();
  if (probs.size() != sites.size())
    throw UsageError("dropout prob count does not match site count");
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (probs[i] < 0.0 || probs[i] >= 1.0)
      throw ConfigError("dropout probability must lie in [0,1)");
    layers_[sites[i]].dropout_p = probs[i];
  }
}

std::vector<double> ModelGraph::dropout_probs() const {
  std::vector<double> out;
  for (std::size_t site : dropout_sites()) out.push_back(layers_[site].dropout_p);
  return out;
}

LossBuild ModelGraph::build_loss(Tape& tape, const ParamVector& params, const Batch& batch,
                                 Mode mode, RngStream mask_rng) const {
  if (params.size() != layout_->total)
    throw ConfigError("parameter vector length does not match model");
  const Tensor& images = batch.images;
  if (images.rank() != 4) throw ConfigError("batch images must be [N,C,H,W]");
  if (spec_.kind == ModelKind::Mlp) {
    const std::size_t flat = images.extent(1) * images.extent(2) * images.extent(3);
    // effective input size is layer_sizes[0], which scale_width never touches
    if (flat != spec_.layer_sizes.front())
      throw ConfigError("batch image size does not match mlp input width");
  } else {
    if (images.extent(1) != spec_.input_shape[0] || images.extent(2) != spec_.input_shape[1] ||
        images.extent(3) != spec_.input_shape[2])
      throw ConfigError("batch image shape does not match miniconv input");
  }

  LossBuild out;
  auto param_node = [&](int slice_idx) {
    const ParamSlice& s = layout_->slices[static_cast<std::size_t>(slice_idx)];
    std::vector<double> data(params.values.begin() + s.offset,
                             params.values.begin() + s.offset + s.count);
    ValueId id = tape.input(Tensor(s.shape, std::move(data)), true);
    out.param_nodes.emplace_back(static_cast<std::size_t>(slice_idx), id);
    return id;
  };

  ValueId x = tape.input(images, false);
  for (const Layer& layer : layers_) {
    switch (layer.kind) {
      case LayerKind::Flatten:
        x = tape.flatten2(x);
        break;
      case LayerKind::Affine:
        x = tape.affine(x, param_node(layer.w_slice), param_node(layer.b_slice));
        break;
      case LayerKind::Conv3x3:
        x = tape.conv2d_3x3(x, param_node(layer.w_slice), param_node(layer.b_slice));
        break;
      case LayerKind::Relu:
        out.preactivations.push_back(x);
        x = tape.relu(x);
        out.activations.push_back(x);
        break;
      case LayerKind::MaxPool2x2:
        x = tape.maxpool2x2(x);
        break;
      case LayerKind::Dropout: {
        if (mode != Mode::Train || layer.dropout_p <= 0.0) break;
        const double keep = 1.0 - layer.dropout_p;
        Tensor mask = Tensor::zeros(tape.value(x).shape);
        for (double& m : mask.data) {
          m = (mask_rng.uniform() >= layer.dropout_p) ? 1.0 / keep : 0.0;
        }
        x = tape.dropout_mask(x, std::move(mask));
        break;
      }
    }
  }
  out.logits = x;
  out.loss = tape.softmax_cross_entropy(x, batch.labels);
  return out;
}

ForwardPass run_forward(const Model& model, const ParamVector& params, const Batch& batch,
                        Mode mode, RngStream mask_rng) {
  ForwardPass pass;
  pass.layout = model.layout_ptr();
  pass.build = model.build_loss(pass.tape, params, batch, mode, mask_rng);
  pass.loss = pass.tape.scalar(pass.build.loss);
  if (!std::isfinite(pass.loss)) {
    throw NumericDivergence("non-finite loss in forward pass", -1, -1);
  }
  return pass;
}

ParamVector run_backward(ForwardPass& pass) {
  pass.tape.backward(pass.build.loss);
  ParamVector grad;
  grad.layout = pass.layout;
  grad.values.assign(pass.layout->total, 0.0);
  for (const auto& [slice_idx, node] : pass.build.param_nodes) {
    const ParamSlice& s = pass.layout->slices[slice_idx];
    if (pass.tape.has_grad(node)) {
      const Tensor& g = pass.tape.grad(node);
      std::copy(g.data.begin(), g.data.end(), grad.values.begin() + s.offset);
    }
  }
  return grad;
}

// --- spec json ----------------------------------------------------------------

namespace {

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
    }
  }
}

}  // namespace

nlohmann::json model_spec_to_json(const ModelSpec& spec) {
  json j;
  if (spec.kind == ModelKind::Mlp) {
    j["kind"] = "mlp";
    j["layer_sizes"] = spec.layer_sizes;
  } else {
    j["kind"] = "miniconv";
    j["base_channels"] = spec.base_channels;
    j["input_shape"] = spec.input_shape;
    j["classes"] = spec.class_count;
    j["hidden_units"] = spec.hidden_units;
  }
  if (spec.width_multiplier != 1.0) j["width_multiplier"] = spec.width_multiplier;
  return j;
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind"))
    throw ConfigError("model spec must be an object with a \"kind\" key");
  ModelSpec spec;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "mlp") {
    reject_unknown_keys(j, {"kind", "layer_sizes", "width_multiplier"}, "model");
    if (!j.contains("layer_sizes")) throw ConfigError("mlp model needs \"layer_sizes\"");
    spec.kind = ModelKind::Mlp;
    spec.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    if (spec.layer_sizes.size() < 2) throw ConfigError("mlp needs at least two layer sizes");
    spec.class_count = spec.layer_sizes.back();
  } else if (kind == "miniconv") {
    reject_unknown_keys(
        j, {"kind", "base_channels", "input_shape", "classes", "hidden_units", "width_multiplier"},
        "model");
    spec.kind = ModelKind::MiniConv;
    spec.base_channels = j.value("base_channels", std::vector<std::size_t>{8, 16});
    if (j.contains("input_shape")) {
      auto v = j.at("input_shape").get<std::vector<std::size_t>>();
      if (v.size() != 3) throw ConfigError("input_shape must be [C,H,W]");
      spec.input_shape = {v[0], v[1], v[2]};
    }
    spec.class_count = j.value("classes", std::size_t{10});
    spec.hidden_units = j.value("hidden_units", std::size_t{64});
  } else {
    throw ConfigError("unknown model kind \"" + kind + "\"");
  }
  spec.width_multiplier = j.value("width_multiplier", 1.0);
  spec.validate();
  return spec;
}

// --- checkpoint io -------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'G', 'C', 'K', 'P', 'T', '0', '1'};

json layout_to_json(const ParamLayout& layout) {
  json slices = json::array();
  for (const ParamSlice& s : layout.slices) {
    slices.push_back({{"name", s.name},
                      {"offset", s.offset},
                      {"count", s.count},
                      {"shape", s.shape},
                      {"is_bias", s.is_bias}});
  }
  return json{{"slices", std::move(slices)}, {"total", layout.total}};
}

ParamLayout layout_from_json(const json& j) {
  ParamLayout layout;
  layout.total = j.at("total").get<std::size_t>();
  for (const json& sj : j.at("slices")) {
    ParamSlice s;
    s.name = sj.at("name").get<std::string>();
    s.offset = sj.at("offset").get<std::size_t>();
    s.count = sj.at("count").get<std::size_t>();
    s.shape = sj.at("shape").get<std::vector<std::size_t>>();
    s.is_bias = sj.at("is_bias").get<bool>();
    layout.slices.push_back(std::move(s));
  }
  return layout;
}

void write_doubles_le(std::ostream& out, const std::vector<double>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      char buf[8];
      for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
      out.write(buf, 8);
    }
  }
}

void read_doubles_le(std::istream& in, std::vector<double>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double& v : values) {
      unsigned char buf[8];
      in.read(reinterpret_cast<char*>(buf), 8);
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
      std::memcpy(&v, &bits, 8);
    }
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec,
                     const ParamVector& params, std::uint64_t seed) {
  if (!params.layout) throw UsageError("checkpoint requires params with a layout");
  json header{{"version", 1},
              {"seed", seed},
              {"spec", model_spec_to_json(spec)},
              {"layout", layout_to_json(*params.layout)}};
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path.string());
  out.write(kCheckpointMagic, 8);
  const std::uint32_t len = static_cast<std::uint32_t>(header_str.size());
  char lenbuf[4] = {static_cast<char>(len & 0xff), static_cast<char>((len >> 8) & 0xff),
                    static_cast<char>((len >> 16) & 0xff), static_cast<char>((len >> 24) & 0xff)};
  out.write(lenbuf, 4);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  write_doubles_le(out, params.values);
  if (!out) throw DataError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("bad checkpoint magic: " + path.string());
  unsigned char lenbuf[4];
  in.read(reinterpret_cast<char*>(lenbuf), 4);
  if (!in) throw DataError("truncated checkpoint header: " + path.string());
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(lenbuf[i]) << (8 * i);
  std::string header_str(len, '\0');
  in.read(header_str.data(), len);
  if (!in) throw DataError("truncated checkpoint header: " + path.string());

  json header = json::parse(header_str, nullptr, false);
  if (header.is_discarded()) throw DataError("malformed checkpoint header json");

  Checkpoint ck;
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.spec = model_spec_from_json(header.at("spec"));
  auto layout = std::make_shared<ParamLayout>(layout_from_json(header.at("layout")));
  ck.params.layout = layout;
  ck.params.values.assign(layout->total, 0.0);
  read_doubles_le(in, ck.params.values);
  if (!in) throw DataError("truncated checkpoint payload: " + path.string());
  return ck;
}

}  // namespace popgrad
