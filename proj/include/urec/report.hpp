#pragma once

#include "urec/io_store.hpp"

#include <string>
#include <vector>

namespace urec::report {

inline constexpr char const *kUndersampledLabel = "Undersampled";
inline constexpr char const *kAverageAnatomy = "avg";

// One line of the comparison table: model, anatomy, accel, PSNR(dB), SSIM(%), params.
struct ReportRow
{
  std::string model;
  std::string anatomy;
  double accel = 0.0;
  double psnr_db = 0.0;
  double ssim_pct = 0.0;
  Index params = 0;
};

/// Gathers evaluation run manifests found under the given directories
/// (searched recursively). Zero-filled baselines become "Undersampled" rows.
auto collect(std::vector<io::fs::path> const &roots) -> std::vector<ReportRow>;

// Appends a per-model mean row for every acceleration, then orders rows by
// acceleration block, model and anatomy (first-seen order).
auto with_averages(std::vector<ReportRow> rows) -> std::vector<ReportRow>;

auto format_table(std::vector<ReportRow> const &rows) -> std::string;
auto to_csv(std::vector<ReportRow> const &rows) -> std::string;
auto to_json(std::vector<ReportRow> const &rows) -> io::Json;

// Mean PSNR of one model over the real anatomies at one acceleration.
auto mean_psnr(std::vector<ReportRow> const &rows, std::string const &model, double accel) -> double;

} // namespace urec::report
