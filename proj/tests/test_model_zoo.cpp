#include <doctest.h>

#include <filesystem>

#include "case_gen.hpp"
#include "popgrad/errors.hpp"
#include "popgrad/model.hpp"

using namespace popgrad;
using namespace popgrad::testing;

TEST_CASE("mlp parameter count matches the analytic formula") {
  ModelSpec spec;
  spec.kind = ModelKind::Mlp;
  spec.layer_sizes = {784, 256, 10};
  spec.class_count = 10;
  BuildResult built = build(spec, RngStream(1));
  CHECK(built.params.size() == 784 * 256 + 256 + 256 * 10 + 10);
  CHECK(built.params.size() == 203530);
}

TEST_CASE("miniconv channel scaling") {
  ModelSpec spec;
  spec.kind = ModelKind::MiniConv;
  spec.base_channels = {8, 16};
  spec.input_shape = {1, 28, 28};
  spec.class_count = 10;

  SUBCASE("width 1.0 keeps base channels") {
    BuildResult built = build(spec, RngStream(1));
    const auto tensors = unflatten(built.params);
    CHECK(tensors.at("conv1.w").shape == std::vector<std::size_t>{8, 1, 3, 3});
    CHECK(tensors.at("conv2.w").shape == std::vector<std::size_t>{16, 8, 3, 3});
  }
  SUBCASE("width 2.5 scales to (20,40)") {
    spec.width_multiplier = 2.5;
    BuildResult built = build(spec, RngStream(1));
    const auto tensors = unflatten(built.params);
    CHECK(tensors.at("conv1.w").shape[0] == 20);
    CHECK(tensors.at("conv2.w").shape[0] == 40);
  }
}

TEST_CASE("scale_width arithmetic") {
  ModelSpec spec;
  spec.kind = ModelKind::MiniConv;
  spec.base_channels = {8, 16};
  spec.input_shape = {1, 28, 28};
  spec.class_count = 10;

  CHECK(scale_width(spec, 1.0) == spec);
  ModelSpec at35 = scale_width(spec, 3.5);
  CHECK(at35.base_channels == std::vector<std::size_t>{28, 56});

  ModelSpec tiny = spec;
  tiny.base_channels = {1};
  CHECK(scale_width(tiny, 0.1).base_channels == std::vector<std::size_t>{1});  // clamp

  CHECK(scale_dim(8, 2.5) == 20);
  CHECK(scale_dim(3, 0.5) == 2);  // round half up: 1.5 -> 2
  CHECK(scale_dim(1, 0.1) == 1);
}

TEST_CASE("mlp width multiplier scales hidden sizes only") {
  ModelSpec spec;
  spec.kind = ModelKind::Mlp;
  spec.layer_sizes = {20, 10, 5};
  spec.class_count = 5;
  ModelSpec scaled = scale_width(spec, 2.0);
  CHECK(scaled.layer_sizes == std::vector<std::size_t>{20, 20, 5});
}

TEST_CASE("dropout sites sit before each relu") {
  ModelSpec mlp;
  mlp.kind = ModelKind::Mlp;
  mlp.layer_sizes = {784, 256, 128, 10};
  mlp.class_count = 10;
  CHECK(build(mlp, RngStream(1)).graph.dropout_sites().size() == 2);

  ModelSpec conv;
  conv.kind = ModelKind::MiniConv;
  conv.base_channels = {4, 8};
  conv.input_shape = {1, 12, 12};
  conv.class_count = 10;
  CHECK(build(conv, RngStream(1)).graph.dropout_sites().size() == 3);

  ModelSpec linear;
  linear.kind = ModelKind::Mlp;
  linear.layer_sizes = {784, 10};
  linear.class_count = 10;
  CHECK(build(linear, RngStream(1)).graph.dropout_sites().empty());
}

TEST_CASE("flatten unflatten round trip") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    RandomCase c = random_case(seed, true);
    ParamVector round = flatten(unflatten(c.built.params), c.built.params.layout);
    CHECK(round.values == c.built.params.values);
  }
}

TEST_CASE("parameter count is monotone in the width multiplier") {
  ModelSpec spec;
  spec.kind = ModelKind::MiniConv;
  spec.base_channels = {4, 8};
  spec.input_shape = {1, 12, 12};
  spec.class_count = 10;
  std::size_t prev = 0;
  for (double m : {0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5}) {
    spec.width_multiplier = m;
    const std::size_t count = build(spec, RngStream(1)).params.size();
    CHECK(count >= prev);
    prev = count;
  }
}

TEST_CASE("builds with equal seeds are bitwise identical") {
  ModelSpec spec;
  spec.kind = ModelKind::Mlp;
  spec.layer_sizes = {30, 20, 4};
  spec.class_count = 4;
  BuildResult a = build(spec, RngStream(99));
  BuildResult b = build(spec, RngStream(99));
  CHECK(a.params.values == b.params.values);
  BuildResult c = build(spec, RngStream(100));
  CHECK(a.params.values != c.params.values);
}

TEST_CASE("spec validation") {
  ModelSpec bad;
  bad.kind = ModelKind::Mlp;
  bad.layer_sizes = {10};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  ModelSpec small;
  small.kind = ModelKind::MiniConv;
  small.base_channels = {2, 2, 2};
  small.input_shape = {1, 4, 4};  // three pools cannot fit
  small.class_count = 2;
  CHECK_THROWS_AS(small.validate(), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  ModelSpec spec;
  spec.kind = ModelKind::Mlp;
  spec.layer_sizes = {12, 7, 3};
  spec.class_count = 3;
  BuildResult built = build(spec, RngStream(5));

  const auto path = std::filesystem::temp_directory_path() / "popgrad_ck_test.bin";
  save_checkpoint(path, spec, built.params, 12345);
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.seed == 12345);
  CHECK(ck.spec == spec);
  CHECK(ck.params.values == built.params.values);
  CHECK(ck.params.layout->slices.size() == built.params.layout->slices.size());
  std::filesystem::remove(path);

  CHECK_THROWS_AS(load_checkpoint(path), DataError);
}
