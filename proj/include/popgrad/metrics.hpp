#pragma once

#include <span>
#include <vector>

namespace popgrad {

/// Unweighted mean of per-class F1 = 2PR/(P+R); a class with P+R = 0
/// contributes 0.
double f1_macro(std::span<const int> predictions, std::span<const int> labels, int class_count);

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample SD (n-1)
};

/// Mean and sample SD of the final 10 entries. Requires at least 10.
Summary summarize_last10(std::span<const double> series);

struct F1Bin {
  std::size_t begin = 0;  // inclusive
  std::size_t end = 0;    // exclusive
  double mean = 0.0;
  double sd = 0.0;
};

/// Consecutive disjoint windows over the series; a trailing partial window is
/// kept with its actual count.
std::vector<F1Bin> bin_f1(std::span<const double> series, std::size_t window);

}  // namespace popgrad
