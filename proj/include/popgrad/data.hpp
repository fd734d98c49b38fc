#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popgrad/rng.hpp"
#include "popgrad/tensor.hpp"

namespace popgrad {

enum class Split { Train, Test };

struct Dataset {
  Tensor images;  // [N,C,H,W], values in [0,1] at load time
  std::vector<int> labels;
  int class_count = 0;
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }
};

/// IDX container pair (big-endian headers, magic 0x803 images / 0x801 labels).
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

/// CIFAR-10 binary batches: 3073-byte records, label byte then
/// channel-planar 3x32x32 pixels.
Dataset load_cifar_bin(const std::vector<std::filesystem::path>& paths);

/// Gaussian blobs around seeded random class centers, clamped to [0,1].
Dataset synth_blobs(int classes, int per_class, int dim, double spread, std::uint64_t seed);

enum class PadType { Zeros, Border, Reflection };

struct AugmentConfig {
  int pads_length = 0;
  PadType pads_type = PadType::Zeros;
  bool hflip = false;
  std::optional<double> norm_mean;
  std::optional<double> norm_sd;

  void validate(std::size_t h, std::size_t w) const;
};

/// Shifts one [C,H,W] image by (dx, dy); out-of-range reads resolved by the
/// padding rule. Reflection mirrors about the edge without repeating it.
Tensor shift_image(const Tensor& image, int dx, int dy, PadType pad);
Tensor hflip_image(const Tensor& image);

/// Random shift plus optional random horizontal flip.
Tensor augment(const Tensor& image, const AugmentConfig& cfg, RngStream& rng);

struct NormStats {
  std::vector<double> mean;  // per channel
  std::vector<double> sd;    // population SD per channel
};

NormStats channel_stats(const Tensor& images);

/// Applies the normalization rule in place using externally supplied stats
/// (the training set's, when transforming test data).
void normalize_with(Tensor& images, const NormStats& stats, std::optional<double> norm_mean,
                    std::optional<double> norm_sd);

/// Stats computed from `images` itself.
void normalize(Tensor& images, std::optional<double> norm_mean, std::optional<double> norm_sd);

/// Seeded shuffle of [0,n) partitioned sequentially; the final partial batch
/// is kept.
std::vector<std::vector<int>> minibatches(std::size_t n, std::size_t batch_size,
                                          RngStream epoch_rng);

Batch gather(const Dataset& dataset, std::span<const int> indices);
Tensor image_at(const Tensor& images, std::size_t index);

}  // namespace popgrad
