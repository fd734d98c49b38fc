#include "popgrad/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "popgrad/errors.hpp"

namespace popgrad {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const auto img_bytes = read_file(images_path);
  const auto lab_bytes = read_file(labels_path);

  if (img_bytes.size() < 16 || read_be32(img_bytes.data()) != 0x00000803u)
    throw DataError("bad IDX image magic in " + images_path.string());
  if (lab_bytes.size() < 8 || read_be32(lab_bytes.data()) != 0x00000801u)
    throw DataError("bad IDX label magic in " + labels_path.string());

  const std::size_t n = read_be32(img_bytes.data() + 4);
  const std::size_t h = read_be32(img_bytes.data() + 8);
  const std::size_t w = read_be32(img_bytes.data() + 12);
  const std::size_t n_labels = read_be32(lab_bytes.data() + 4);
  if (n != n_labels)
    throw DataError("IDX image/label count mismatch: " + std::to_string(n) + " vs " +
                    std::to_string(n_labels));
  if (img_bytes.size() != 16 + n * h * w)
    throw DataError("truncated IDX image payload in " + images_path.string());
  if (lab_bytes.size() != 8 + n)
    throw DataError("truncated IDX label payload in " + labels_path.string());

  Dataset ds;
  ds.images = Tensor::zeros({n, 1, h, w});
  for (std::size_t i = 0; i < n * h * w; ++i) {
    ds.images.data[i] = static_cast<double>(img_bytes[16 + i]) / 255.0;
  }
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<int>(lab_bytes[8 + i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.class_count = max_label + 1;
  return ds;
}

Dataset load_cifar_bin(const std::vector<std::filesystem::path>& paths) {
  constexpr std::size_t kRecord = 3073;  // label byte + 3*1024 pixels
  Dataset ds;
  ds.class_count = 10;
  std::size_t total = 0;
  std::vector<std::vector<unsigned char>> files;
  for (const auto& path : paths) {
    auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % kRecord != 0)
      throw DataError("malformed CIFAR batch (length not a multiple of 3073): " + path.string());
    total += bytes.size() / kRecord;
    files.push_back(std::move(bytes));
  }
  if (total == 0) throw DataError("no CIFAR records found");

  ds.images = Tensor::zeros({total, 3, 32, 32});
  ds.labels.resize(total);
  std::size_t rec = 0;
  for (const auto& bytes : files) {
    for (std::size_t off = 0; off < bytes.size(); off += kRecord, ++rec) {
      const int label = bytes[off];
      if (label >= 10) throw DataError("CIFAR label byte out of range");
      ds.labels[rec] = label;
      double* dst = ds.images.data.data() + rec * 3 * 1024;
      for (std::size_t i = 0; i < 3 * 1024; ++i) {
        dst[i] = static_cast<double>(bytes[off + 1 + i]) / 255.0;
      }
    }
  }
  return ds;
}

Dataset synth_blobs(int classes, int per_class, int dim, double spread, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synth_blobs needs at least 2 classes");
  if (per_class < 1 || dim < 1) throw ConfigError("synth_blobs sizes must be positive");

  RngStream rng(seed);
  RngStream center_rng = rng.derive(1);
  RngStream sample_rng = rng.derive(2);

  std::vector<double> centers(static_cast<std::size_t>(classes) * dim);
  for (double& c : centers) c = 0.2 + 0.6 * center_rng.uniform();

  const std::size_t n = static_cast<std::size_t>(classes) * per_class;
  Dataset ds;
  ds.class_count = classes;
  ds.images = Tensor::zeros({n, static_cast<std::size_t>(dim), 1, 1});
  ds.labels.resize(n);
  std::size_t row = 0;
  for (int c = 0; c < classes; ++c) {
    for (int s = 0; s < per_class; ++s, ++row) {
      ds.labels[row] = c;
      double* dst = ds.images.data.data() + row * dim;
      const double* ctr = centers.data() + static_cast<std::size_t>(c) * dim;
      for (int d = 0; d < dim; ++d) {
        dst[d] = std::clamp(ctr[d] + spread * sample_rng.normal(), 0.0, 1.0);
      }
    }
  }
  return ds;
}

void AugmentConfig::validate(std::size_t h, std::size_t w) const {
  if (pads_length < 0) throw ConfigError("pads_length must be non-negative");
  if (static_cast<std::size_t>(pads_length) > std::min(h, w) - 1)
    throw ConfigError("pads_length must be at most min(H,W)-1");
  if (norm_sd && *norm_sd <= 0.0) throw ConfigError("norm_sd must be positive");
}

namespace {

// Resolves a possibly out-of-range source index according to the pad rule.
// Returns -1 for zero fill. Reflection excludes the edge pixel: -1 -> 1,
// n -> n-2.
long resolve_index(long idx, long n, PadType pad) {
  if (idx >= 0 && idx < n) return idx;
  switch (pad) {
    case PadType::Zeros:
      return -1;
    case PadType::Border:
      return idx < 0 ? 0 : n - 1;
    case PadType::Reflection:
      return idx < 0 ? -idx : 2 * (n - 1) - idx;
  }
  return -1;
}

}  // namespace

Tensor shift_image(const Tensor& image, int dx, int dy, PadType pad) {
  if (image.rank() != 3) throw UsageError("shift_image expects [C,H,W]");
  const long c = static_cast<long>(image.extent(0));
  const long h = static_cast<long>(image.extent(1));
  const long w = static_cast<long>(image.extent(2));
  Tensor out = Tensor::zeros(image.shape);
  for (long ch = 0; ch < c; ++ch) {
    const double* src = image.data.data() + ch * h * w;
    double* dst = out.data.data() + ch * h * w;
    for (long r = 0; r < h; ++r) {
      const long sr = resolve_index(r - dy, h, pad);
      for (long col = 0; col < w; ++col) {
        const long sc = resolve_index(col - dx, w, pad);
        dst[r * w + col] = (sr < 0 || sc < 0) ? 0.0 : src[sr * w + sc];
      }
    }
  }
  return out;
}

Tensor hflip_image(const Tensor& image) {
  if (image.rank() != 3) throw UsageError("hflip_image expects [C,H,W]");
  const std::size_t c = image.extent(0), h = image.extent(1), w = image.extent(2);
  Tensor out = Tensor::zeros(image.shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < h; ++r) {
      const double* src = image.data.data() + (ch * h + r) * w;
      double* dst = out.data.data() + (ch * h + r) * w;
      for (std::size_t col = 0; col < w; ++col) dst[col] = src[w - 1 - col];
    }
  }
  return out;
}

Tensor augment(const Tensor& image, const AugmentConfig& cfg, RngStream& rng) {
  cfg.validate(image.extent(1), image.extent(2));
  Tensor out = image;
  if (cfg.pads_length > 0) {
    const int dx = rng.uniform_int(-cfg.pads_length, cfg.pads_length);
    const int dy = rng.uniform_int(-cfg.pads_length, cfg.pads_length);
    if (dx != 0 || dy != 0) out = shift_image(out, dx, dy, cfg.pads_type);
  }
  if (cfg.hflip && rng.uniform() < 0.5) {
    out = hflip_image(out);
  }
  return out;
}

NormStats channel_stats(const Tensor& images) {
  if (images.rank() != 4) throw UsageError("channel_stats expects [N,C,H,W]");
  const std::size_t n = images.extent(0), c = images.extent(1);
  const std::size_t plane = images.extent(2) * images.extent(3);
  NormStats stats;
  stats.mean.assign(c, 0.0);
  stats.sd.assign(c, 0.0);
  const double count = static_cast<double>(n * plane);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = images.data.data() + (s * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) stats.mean[ch] += p[i];
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) stats.mean[ch] /= count;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = images.data.data() + (s * c + ch) * plane;
      const double m = stats.mean[ch];
      for (std::size_t i = 0; i < plane; ++i) stats.sd[ch] += (p[i] - m) * (p[i] - m);
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) stats.sd[ch] = std::sqrt(stats.sd[ch] / count);
  return stats;
}

void normalize_with(Tensor& images, const NormStats& stats, std::optional<double> norm_mean,
                    std::optional<double> norm_sd) {
  if (!norm_mean && !norm_sd) return;
  if (images.rank() != 4) throw UsageError("normalize expects [N,C,H,W]");
  const std::size_t n = images.extent(0), c = images.extent(1);
  const std::size_t plane = images.extent(2) * images.extent(3);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mu = stats.mean[ch];
    const double sigma = stats.sd[ch];
    if (norm_sd && sigma == 0.0)
      throw DataError("degenerate channel " + std::to_string(ch) + ": zero variance");

    // out = (x - mu)/sigma * sd + target_mean, where the target mean falls
    // back to the channel's own mean when only the SD is controlled.
    double scale = 1.0, shift = 0.0;
    if (norm_mean && norm_sd) {
      scale = *norm_sd / sigma;
      shift = *norm_mean;
    } else if (norm_mean) {
      scale = 1.0;
      shift = *norm_mean;
    } else {
      scale = *norm_sd / sigma;
      shift = mu;
    }
    for (std::size_t s = 0; s < n; ++s) {
      double* p = images.data.data() + (s * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - mu) * scale + shift;
    }
  }
}

void normalize(Tensor& images, std::optional<double> norm_mean, std::optional<double> norm_sd) {
  if (!norm_mean && !norm_sd) return;
  normalize_with(images, channel_stats(images), norm_mean, norm_sd);
}

std::vector<std::vector<int>> minibatches(std::size_t n, std::size_t batch_size,
                                          RngStream epoch_rng) {
  if (batch_size == 0) throw UsageError("batch_size must be positive");
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  // Fisher-Yates with our own stream: identical partitions for equal seeds
  // regardless of the standard library in use.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = epoch_rng.uniform_index(i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<int>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

Tensor image_at(const Tensor& images, std::size_t index) {
  const std::size_t c = images.extent(1), h = images.extent(2), w = images.extent(3);
  const std::size_t count = c * h * w;
  std::vector<double> data(images.data.begin() + index * count,
                           images.data.begin() + (index + 1) * count);
  return Tensor({c, h, w}, std::move(data));
}

Batch gather(const Dataset& dataset, std::span<const int> indices) {
  const std::size_t c = dataset.images.extent(1), h = dataset.images.extent(2),
                    w = dataset.images.extent(3);
  const std::size_t count = c * h * w;
  Batch batch;
  batch.images = Tensor::zeros({indices.size(), c, h, w});
  batch.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = static_cast<std::size_t>(indices[i]);
    std::copy(dataset.images.data.begin() + src * count,
              dataset.images.data.begin() + (src + 1) * count,
              batch.images.data.begin() + i * count);
    batch.labels[i] = dataset.labels[src];
  }
  return batch;
}

}  // namespace popgrad
