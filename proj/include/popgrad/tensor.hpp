#pragma once

#include <cstddef>
#include <vector>

namespace popgrad {

/// Dense row-major tensor of 64-bit floats.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);

  /// Construction for external inputs: additionally rejects NaN/Inf entries.
  static Tensor input(std::vector<std::size_t> shape, std::vector<double> data);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t extent(std::size_t axis) const { return shape[axis]; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

/// A mini-batch: images [N,C,H,W] (or any model input layout) plus labels.
struct Batch {
  Tensor images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

}  // namespace popgrad
