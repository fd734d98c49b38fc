#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "popgrad/rng.hpp"
#include "popgrad/tape.hpp"
#include "popgrad/tensor.hpp"

namespace popgrad {

enum class Mode { Train, Eval };

/// One named contiguous slice of the flat parameter vector.
struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t count = 0;
  std::vector<std::size_t> shape;
  bool is_bias = false;
};

struct ParamLayout {
  std::vector<ParamSlice> slices;
  std::size_t total = 0;
};

/// Flat trainable parameters plus the layout that names them.
struct ParamVector {
  std::vector<double> values;
  std::shared_ptr<const ParamLayout> layout;

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
};

std::map<std::string, Tensor> unflatten(const ParamVector& params);
ParamVector flatten(const std::map<std::string, Tensor>& tensors,
                    std::shared_ptr<const ParamLayout> layout);

/// Nodes of interest produced by one loss construction on a tape.
struct LossBuild {
  ValueId loss;
  ValueId logits;                                         // invalid for non-classifier losses
  std::vector<ValueId> activations;                       // post-ReLU outputs, in order
  std::vector<ValueId> preactivations;                    // the matching ReLU inputs
  std::vector<std::pair<std::size_t, ValueId>> param_nodes;  // layout slice index -> node
};

/// Anything that can express its loss on a tape as a function of a flat
/// parameter vector. Classifier graphs and analytic test losses both
/// implement this.
class Model {
public:
  virtual ~Model() = default;
  virtual const ParamLayout& layout() const = 0;
  virtual std::shared_ptr<const ParamLayout> layout_ptr() const = 0;
  virtual LossBuild build_loss(Tape& tape, const ParamVector& params, const Batch& batch,
                               Mode mode, RngStream mask_rng) const = 0;

  std::size_t param_count() const { return layout().total; }
};

// ---------------------------------------------------------------------------

enum class ModelKind { Mlp, MiniConv };

struct ModelSpec {
  ModelKind kind = ModelKind::Mlp;
  std::vector<std::size_t> layer_sizes;       // mlp: [in, hidden..., out]
  std::vector<std::size_t> base_channels;     // miniconv conv stages
  std::array<std::size_t, 3> input_shape{1, 1, 1};  // C,H,W (miniconv)
  std::size_t class_count = 2;
  std::size_t hidden_units = 64;              // miniconv classifier-head input width
  double width_multiplier = 1.0;

  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

/// round(base * multiplier), half away from zero, clamped to >= 1.
std::size_t scale_dim(std::size_t base, double multiplier);

/// Returns the spec with hidden affine widths and conv channels scaled and
/// the multiplier folded back to 1. Input and output dims are untouched.
ModelSpec scale_width(const ModelSpec& spec, double multiplier);

class ModelGraph : public Model {
public:
  const ModelSpec& spec() const { return spec_; }
  const ParamLayout& layout() const override { return *layout_; }
  std::shared_ptr<const ParamLayout> layout_ptr() const override { return layout_; }

  LossBuild build_loss(Tape& tape, const ParamVector& params, const Batch& batch,
                       Mode mode, RngStream mask_rng) const override;

  /// Dropout insertion points, one immediately before each ReLU,
  /// in topological order.
  std::vector<std::size_t> dropout_sites() const;
  void set_dropout_probs(const std::vector<double>& probs);
  std::vector<double> dropout_probs() const;

private:
  friend struct ModelBuilder;
  friend struct BuildResult build(const ModelSpec& spec, RngStream init_rng);

  enum class LayerKind { Flatten, Affine, Conv3x3, Relu, MaxPool2x2, Dropout };
  struct Layer {
    LayerKind kind;
    int w_slice = -1;
    int b_slice = -1;
    double dropout_p = 0.0;
  };

  ModelSpec spec_;
  std::vector<Layer> layers_;
  std::shared_ptr<const ParamLayout> layout_;
};

struct BuildResult {
  ModelGraph graph;
  ParamVector params;
};

/// Materializes the graph and a fan-scaled uniform initialization.
BuildResult build(const ModelSpec& spec, RngStream init_rng);

// --- forward/backward entry points -----------------------------------------

struct ForwardPass {
  Tape tape;
  LossBuild build;
  double loss = 0.0;
  std::shared_ptr<const ParamLayout> layout;
};

/// Runs the model forward on a fresh tape. Throws NumericDivergence when the
/// loss is non-finite (epoch/batch indices are filled in by the caller that
/// knows them).
ForwardPass run_forward(const Model& model, const ParamVector& params, const Batch& batch,
                        Mode mode, RngStream mask_rng);

/// One reverse sweep; assembles the flat gradient in layout order.
ParamVector run_backward(ForwardPass& pass);

// --- checkpoint io ----------------------------------------------------------

struct Checkpoint {
  ModelSpec spec;
  ParamVector params;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec,
                     const ParamVector& params, std::uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

}  // namespace popgrad
