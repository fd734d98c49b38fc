#include "popgrad/landscape.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "popgrad/errors.hpp"
#include "popgrad/parallel.hpp"

namespace popgrad {

void SliceSpec::validate() const {
  if (resolution < 2) throw ConfigError("slice resolution must be at least 2");
  if (x_min >= x_max || y_min >= y_max) throw ConfigError("slice extents must be ordered");
  if (arrow_count < 0) throw ConfigError("arrow count must be non-negative");
  if (arrow_radius < 0.0) throw ConfigError("arrow radius must be non-negative");
}

std::pair<std::vector<double>, std::vector<double>> random_directions(std::size_t n,
                                                                      std::uint64_t seed) {
  if (n < 2) throw UsageError("directions need at least 2 dimensions");
  RngStream rng(seed);

  auto draw_unit = [&](std::vector<double>& v) {
    double norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) return false;
    for (double& x : v) x /= norm;
    return true;
  };

  std::vector<double> d1(n), d2(n);
  for (int attempt = 0; attempt < 64; ++attempt) {
    if (draw_unit(d1)) break;
    if (attempt == 63) throw UsageError("failed to draw a non-degenerate direction");
  }

  for (int attempt = 0; attempt < 64; ++attempt) {
    if (!draw_unit(d2)) continue;
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += d1[i] * d2[i];
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] -= dot * d1[i];
      norm += d2[i] * d2[i];
    }
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;  // nearly parallel draw, retry
    for (double& x : d2) x /= norm;
    // one re-orthogonalization pass tightens the dot product to rounding level
    dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += d1[i] * d2[i];
    norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] -= dot * d1[i];
      norm += d2[i] * d2[i];
    }
    norm = std::sqrt(norm);
    for (double& x : d2) x /= norm;
    return {std::move(d1), std::move(d2)};
  }
  throw UsageError("failed to draw an orthogonal direction pair");
}

namespace {

ParamVector displaced(const ParamVector& params, std::span<const double> d1,
                      std::span<const double> d2, double x, double y) {
  ParamVector out = params;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] *= 1.0 + x * d1[i] + y * d2[i];
  }
  return out;
}

}  // namespace

LossGrid loss_slice(const Model& model, const ParamVector& params, const Batch& batch,
                    const SliceSpec& spec, std::span<const double> d1, std::span<const double> d2,
                    int workers) {
  spec.validate();
  if (d1.size() != params.size() || d2.size() != params.size())
    throw UsageError("direction length must match parameter count");

  LossGrid grid;
  const int res = spec.resolution;
  grid.xs.resize(res);
  grid.ys.resize(res);
  for (int i = 0; i < res; ++i) {
    grid.xs[i] = spec.x_min + (spec.x_max - spec.x_min) * i / double(res - 1);
    grid.ys[i] = spec.y_min + (spec.y_max - spec.y_min) * i / double(res - 1);
  }
  grid.values.assign(static_cast<std::size_t>(res) * res, std::nullopt);

  parallel_for(grid.values.size(), workers, [&](std::size_t cell) {
    const std::size_t ix = cell % static_cast<std::size_t>(res);
    const std::size_t iy = cell / static_cast<std::size_t>(res);
    ParamVector moved = displaced(params, d1, d2, grid.xs[ix], grid.ys[iy]);
    try {
      ForwardPass pass = run_forward(model, moved, batch, Mode::Eval, RngStream(0));
      grid.values[cell] = pass.loss;
    } catch (const NumericDivergence&) {
      // non-finite loss is a marker in the grid, not a failure
    }
  });
  return grid;
}

ArrowField gradient_arrows(const Model& model, const ParamVector& params, const Batch& batch,
                           std::span<const double> d1, std::span<const double> d2, double cx,
                           double cy, double radius, int count, std::uint64_t seed) {
  if (count < 1) throw UsageError("arrow count must be at least 1");
  RngStream rng(seed);
  ArrowField field;
  field.arrows.reserve(count);
  for (int i = 0; i < count; ++i) {
    // uniform in the disc via rejection
    double ox = 0.0, oy = 0.0;
    if (radius > 0.0) {
      do {
        ox = 2.0 * rng.uniform() - 1.0;
        oy = 2.0 * rng.uniform() - 1.0;
      } while (ox * ox + oy * oy > 1.0);
      ox *= radius;
      oy *= radius;
    }
    Arrow arrow;
    arrow.x = cx + ox;
    arrow.y = cy + oy;
    ParamVector moved = displaced(params, d1, d2, arrow.x, arrow.y);
    ForwardPass pass = run_forward(model, moved, batch, Mode::Eval, RngStream(0));
    ParamVector grad = run_backward(pass);
    double gx = 0.0, gy = 0.0;
    for (std::size_t j = 0; j < grad.size(); ++j) {
      gx += grad.values[j] * d1[j];
      gy += grad.values[j] * d2[j];
    }
    arrow.gx = gx;
    arrow.gy = gy;
    field.arrows.push_back(arrow);
  }

  for (std::size_t i = 0; i < field.arrows.size(); ++i) {
    const double inv = 1.0 / static_cast<double>(i + 1);
    field.mean.x += (field.arrows[i].x - field.mean.x) * inv;
    field.mean.y += (field.arrows[i].y - field.mean.y) * inv;
    field.mean.gx += (field.arrows[i].gx - field.mean.gx) * inv;
    field.mean.gy += (field.arrows[i].gy - field.mean.gy) * inv;
  }
  return field;
}

void write_grid_csv(const std::filesystem::path& path, const LossGrid& grid) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string());
  out << "x,y,loss\n";
  out.precision(17);
  for (std::size_t iy = 0; iy < grid.ys.size(); ++iy) {
    for (std::size_t ix = 0; ix < grid.xs.size(); ++ix) {
      out << grid.xs[ix] << ',' << grid.ys[iy] << ',';
      const auto v = grid.at(ix, iy);
      if (v)
        out << *v;
      else
        out << "nonfinite";
      out << '\n';
    }
  }
}

void write_arrows_json(const std::filesystem::path& path, const ArrowField& field) {
  nlohmann::json j;
  j["arrows"] = nlohmann::json::array();
  for (const Arrow& a : field.arrows) {
    j["arrows"].push_back({{"x", a.x}, {"y", a.y}, {"gx", a.gx}, {"gy", a.gy}});
  }
  j["mean"] = {{"x", field.mean.x}, {"y", field.mean.y}, {"gx", field.mean.gx},
               {"gy", field.mean.gy}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string());
  out << j.dump(2) << '\n';
}

void write_heatmap_ppm(const std::filesystem::path& path, const LossGrid& grid) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& v : grid.values) {
    if (!v) continue;
    lo = std::min(lo, *v);
    hi = std::max(hi, *v);
  }
  const double span = hi > lo ? hi - lo : 1.0;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string());
  out << "P6\n" << grid.xs.size() << ' ' << grid.ys.size() << "\n255\n";
  for (std::size_t iy = grid.ys.size(); iy-- > 0;) {  // y up
    for (std::size_t ix = 0; ix < grid.xs.size(); ++ix) {
      const auto v = grid.at(ix, iy);
      unsigned char rgb[3] = {0, 0, 0};
      if (v) {
        const double t = (*v - lo) / span;
        const unsigned char g = static_cast<unsigned char>(255.0 * (1.0 - t));
        rgb[0] = rgb[1] = rgb[2] = g;
      }
      out.write(reinterpret_cast<const char*>(rgb), 3);
    }
  }
}

}  // namespace popgrad
