#include "urec/metrics.hpp"

#include <fmt/format.h>

#include <cmath>
#include <vector>

namespace urec::metrics {

namespace {

void check_same(Plane const &a, Plane const &b)
{
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(fmt::format("metric inputs differ: {}x{} vs {}x{}", a.rows(), a.cols(), b.rows(), b.cols()));
  }
}

auto gaussian_window(Index size, double sigma) -> std::vector<double>
{
  std::vector<double> g(static_cast<std::size_t>(size));
  double const c = static_cast<double>(size / 2);
  double sum = 0.0;
  for (Index i = 0; i < size; i++) {
    double const d = static_cast<double>(i) - c;
    g[i] = std::exp(-0.5 * d * d / (sigma * sigma));
    sum += g[i];
  }
  for (auto &v : g) {
    v /= sum;
  }
  return g;
}

// Separable 'valid' filtering.
auto filter_valid(Plane const &in, std::vector<double> const &g) -> Plane
{
  Index const k = static_cast<Index>(g.size());
  Index const rows = in.rows() - k + 1;
  Index const cols = in.cols() - k + 1;
  Plane tmp(in.rows(), cols);
  for (Index r = 0; r < in.rows(); r++) {
    for (Index c = 0; c < cols; c++) {
      double s = 0.0;
      for (Index i = 0; i < k; i++) {
        s += g[i] * in(r, c + i);
      }
      tmp(r, c) = s;
    }
  }
  Plane out(rows, cols);
  for (Index r = 0; r < rows; r++) {
    for (Index c = 0; c < cols; c++) {
      double s = 0.0;
      for (Index i = 0; i < k; i++) {
        s += g[i] * tmp(r + i, c);
      }
      out(r, c) = s;
    }
  }
  return out;
}

} // namespace

auto psnr(Plane const &pred, Plane const &gt, double data_range) -> double
{
  check_same(pred, gt);
  if (!(data_range > 0.0)) {
    throw ArgumentError(fmt::format("PSNR data range must be positive, got {}", data_range));
  }
  double const mse = (pred - gt).square().mean();
  if (mse == 0.0) {
    return kPsnrPerfect;
  }
  return 10.0 * std::log10(data_range * data_range / mse);
}

auto ssim(Plane const &pred, Plane const &gt, double data_range, SsimOptions const &opts) -> double
{
  check_same(pred, gt);
  if (pred.rows() < opts.window || pred.cols() < opts.window) {
    throw ShapeError(fmt::format(
        "SSIM window {} exceeds image size {}x{}", opts.window, pred.rows(), pred.cols()));
  }
  if (!(data_range > 0.0)) {
    throw ArgumentError("SSIM data range must be positive");
  }
  auto const g = gaussian_window(opts.window, opts.sigma);
  double const c1 = (opts.k1 * data_range) * (opts.k1 * data_range);
  double const c2 = (opts.k2 * data_range) * (opts.k2 * data_range);

  Plane const mu_x = filter_valid(pred, g);
  Plane const mu_y = filter_valid(gt, g);
  Plane const xx = filter_valid(pred * pred, g);
  Plane const yy = filter_valid(gt * gt, g);
  Plane const xy = filter_valid(pred * gt, g);

  Plane const var_x = xx - mu_x * mu_x;
  Plane const var_y = yy - mu_y * mu_y;
  Plane const cov = xy - mu_x * mu_y;
  Plane const num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
  Plane const den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
  return (num / den).mean();
}

auto mae(Plane const &pred, Plane const &gt) -> double
{
  check_same(pred, gt);
  return (pred - gt).abs().mean();
}

auto data_range_of(Plane const &gt) -> double
{
  double const r = gt.maxCoeff() - gt.minCoeff();
  return r > 0.0 ? r : 1.0;
}

auto compare(Plane const &pred, Plane const &gt, RangeMode mode, double fixed_range) -> MetricResult
{
  MetricResult m;
  m.data_range = mode == RangeMode::PerImage ? data_range_of(gt) : fixed_range;
  m.psnr_db = psnr(pred, gt, m.data_range);
  m.ssim = ssim(pred, gt, m.data_range);
  m.mae = mae(pred, gt);
  return m;
}

template <typename T>
auto real_plane(Tensor3<T> const &image) -> Plane
{
  Plane p(image.height(), image.width());
  auto const re = image.channel(0);
  for (Index i = 0; i < image.plane_size(); i++) {
    p(i / image.width(), i % image.width()) = static_cast<double>(re[i]);
  }
  return p;
}

template auto real_plane(Tensor3<float> const &) -> Plane;
template auto real_plane(Tensor3<double> const &) -> Plane;

} // namespace urec::metrics
