#pragma once

#include "urec/common.hpp"
#include "urec/tensor.hpp"

#include <Eigen/Core>

#include <limits>

namespace urec::metrics {

using Plane = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kPsnrPerfect = std::numeric_limits<double>::infinity();

struct SsimOptions
{
  Index window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

enum struct RangeMode
{
  PerImage, // max(gt) - min(gt)
  Fixed,    // caller supplied, default 1
};

struct MetricResult
{
  double psnr_db = 0.0;
  double ssim = 0.0; // fraction; multiply by 100 for reporting
  double mae = 0.0;
  double data_range = 1.0;
};

auto psnr(Plane const &pred, Plane const &gt, double data_range) -> double;

/// Mean SSIM over all fully-overlapping Gaussian windows.
auto ssim(Plane const &pred, Plane const &gt, double data_range, SsimOptions const &opts = {}) -> double;

auto mae(Plane const &pred, Plane const &gt) -> double;

auto data_range_of(Plane const &gt) -> double;

auto compare(Plane const &pred, Plane const &gt, RangeMode mode = RangeMode::PerImage, double fixed_range = 1.0)
    -> MetricResult;

// Real channel of an image tensor as a plane.
template <typename T>
auto real_plane(Tensor3<T> const &image) -> Plane;

} // namespace urec::metrics
