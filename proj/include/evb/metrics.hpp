#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "evb/image.hpp"

namespace evb {

inline constexpr double kPsnrCapDb = 100.0;

/// 10 log10(1 / MSE) for images in [0, 1], capped at 100 dB.
double psnr(const Image& a, const Image& b);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, averaged over windows fully inside the image.
double ssim(const Image& a, const Image& b);

struct ExampleMetrics {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;

  friend bool operator==(const ExampleMetrics&, const ExampleMetrics&) = default;
};

struct MetricsReport {
  std::vector<ExampleMetrics> examples;
  double mean_psnr_db = 0.0;
  double mean_ssim = 0.0;
  std::string config_digest;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

nlohmann::json to_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

/// Means over `examples`; leaves the digest alone.
void finalize(MetricsReport& report);

/// Pairs PNGs by file name. Both directories must hold the same set.
MetricsReport evaluate(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir);

/// Simple bar chart of `values` (one bar each, scaled to [lo, hi]).
void write_bar_plot(const std::filesystem::path& path, const std::vector<double>& values, double lo, double hi);

}  // namespace evb
