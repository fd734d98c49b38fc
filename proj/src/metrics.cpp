#include "popgrad/metrics.hpp"

#include <cmath>

#include "popgrad/errors.hpp"

namespace popgrad {

double f1_macro(std::span<const int> predictions, std::span<const int> labels, int class_count) {
  if (predictions.empty()) throw UsageError("f1_macro requires non-empty input");
  if (predictions.size() != labels.size()) throw UsageError("prediction/label length mismatch");
  if (class_count < 1) throw UsageError("class_count must be positive");

  std::vector<long> tp(class_count, 0), fp(class_count, 0), fn(class_count, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i];
    const int t = labels[i];
    if (p < 0 || p >= class_count || t < 0 || t >= class_count)
      throw UsageError("class index out of range");
    if (p == t) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }

  double sum = 0.0;
  for (int c = 0; c < class_count; ++c) {
    const double precision = tp[c] + fp[c] > 0 ? double(tp[c]) / double(tp[c] + fp[c]) : 0.0;
    const double recall = tp[c] + fn[c] > 0 ? double(tp[c]) / double(tp[c] + fn[c]) : 0.0;
    sum += precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / static_cast<double>(class_count);
}

namespace {

Summary mean_sd(std::span<const double> xs) {
  Summary s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    s.mean += (xs[i] - s.mean) / static_cast<double>(i + 1);
  }
  if (xs.size() > 1) {
    double acc = 0.0;
    for (double x : xs) acc += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(acc / static_cast<double>(xs.size() - 1));
  }
  return s;
}

}  // namespace

Summary summarize_last10(std::span<const double> series) {
  if (series.size() < 10) throw UsageError("summary requires at least 10 epochs");
  return mean_sd(series.subspan(series.size() - 10));
}

std::vector<F1Bin> bin_f1(std::span<const double> series, std::size_t window) {
  if (window < 1) throw UsageError("bin window must be positive");
  std::vector<F1Bin> bins;
  for (std::size_t start = 0; start < series.size(); start += window) {
    const std::size_t end = std::min(series.size(), start + window);
    const Summary s = mean_sd(series.subspan(start, end - start));
    bins.push_back({start, end, s.mean, s.sd});
  }
  return bins;
}

}  // namespace popgrad
