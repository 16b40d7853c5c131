#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "csi/image.hpp"

namespace csi {

/// Mean |pred - label| over pixels with m = 0. Rejects masks without masked pixels.
double mae_masked(const Image2D& pred, const Image2D& label, const Image2D& m);

/// 10 log10(peak^2 / MSE) over all pixels; +infinity when MSE = 0.
double psnr(const Image2D& pred, const Image2D& label, double peak = 1.0);

/// PSNR restricted to pixels with m = 0.
double psnr_masked(const Image2D& pred, const Image2D& label, const Image2D& m, double peak = 1.0);

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

struct EvalPair {
  std::string name;
  Image2D pred, label, mask;
};

struct ImageMetrics {
  std::string name;
  double mae = 0.0;
  double psnr = 0.0;
  double psnr_masked = 0.0;
  std::size_t n_pixels_masked = 0;
};

struct MetricReport {
  std::vector<ImageMetrics> per_image;
  // Unweighted means over images.
  double mae = 0.0;
  double psnr = 0.0;
  double psnr_masked = 0.0;
  std::size_t n_pixels_masked = 0;  // total over images
};

MetricReport evaluate_set(std::span<const EvalPair> pairs, double peak = 1.0);

/// One cell group of the comparison table: a method on a mask family.
struct ReportRow {
  std::string method;
  std::string family;
  MetricReport report;
};

/// Aggregate CSV: method,family,n_images,n_pixels_masked,mae,psnr,psnr_masked.
void write_report_csv(const std::filesystem::path& path, std::span<const ReportRow> rows);
/// Per-image CSV: method,family,image,n_pixels_masked,mae,psnr,psnr_masked.
void write_per_image_csv(const std::filesystem::path& path, std::span<const ReportRow> rows);

/// Text table with mask families as rows and one MAE/PSNR column pair per
/// method, in first-appearance order.
std::string format_comparison_table(std::span<const ReportRow> rows);

/// Display label for a mask family key ("metal" -> "Metal mask").
std::string family_label(const std::string& family);

/// Formats a metric for reports; infinity prints as "inf".
std::string format_metric(double v, int precision);

}  // namespace csi
