#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "popgrad/model.hpp"
#include "popgrad/rng.hpp"

namespace popgrad {

struct SliceSpec {
  double x_min = -1.0, x_max = 1.0;
  double y_min = -1.0, y_max = 1.0;
  int resolution = 41;       // per axis
  int arrow_count = 0;
  double arrow_radius = 0.1;
  double arrow_x = 0.0, arrow_y = 0.0;  // arrow neighborhood center
  std::uint64_t seed = 0;

  void validate() const;
};

/// Two unit directions in parameter space: d1 standard-normal normalized,
/// d2 Gram-Schmidt orthogonalized against it. |d1.d2| <= 1e-10.
std::pair<std::vector<double>, std::vector<double>> random_directions(std::size_t n,
                                                                      std::uint64_t seed);

struct LossGrid {
  std::vector<double> xs;
  std::vector<double> ys;
  // row-major [ys.size()][xs.size()]; empty where the loss was non-finite
  std::vector<std::optional<double>> values;

  std::optional<double> at(std::size_t ix, std::size_t iy) const {
    return values[iy * xs.size() + ix];
  }
};

/// Loss evaluated at params*(1 + x*d1 + y*d2) coordinatewise over the grid.
/// Evaluation order independent; params are never mutated.
LossGrid loss_slice(const Model& model, const ParamVector& params, const Batch& batch,
                    const SliceSpec& spec, std::span<const double> d1, std::span<const double> d2,
                    int workers = 1);

struct Arrow {
  double x = 0.0, y = 0.0;   // slice coordinates of the sample point
  double gx = 0.0, gy = 0.0;  // gradient projected onto (d1, d2)
};

struct ArrowField {
  std::vector<Arrow> arrows;
  Arrow mean;
};

/// Full-parameter gradients at `count` points uniform in the disc of given
/// radius around (cx, cy), projected onto the slice directions.
ArrowField gradient_arrows(const Model& model, const ParamVector& params, const Batch& batch,
                           std::span<const double> d1, std::span<const double> d2, double cx,
                           double cy, double radius, int count, std::uint64_t seed);

void write_grid_csv(const std::filesystem::path& path, const LossGrid& grid);
void write_arrows_json(const std::filesystem::path& path, const ArrowField& field);
/// Simple grayscale heatmap; non-finite cells render black.
void write_heatmap_ppm(const std::filesystem::path& path, const LossGrid& grid);

}  // namespace popgrad
