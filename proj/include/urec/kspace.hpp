#pragma once

#include "urec/common.hpp"
#include "urec/io_store.hpp"
#include "urec/tensor.hpp"

#include <complex>
#include <cstdint>
#include <vector>

namespace urec::kspace {

/// Fourier-domain samples on an H x W Cartesian grid, DC at (H/2, W/2).
template <typename T>
class KSpace
{
public:
  using Complex = std::complex<T>;

  KSpace() = default;
  KSpace(Index height, Index width)
    : height_{height}
    , width_{width}
    , values_(static_cast<std::size_t>(height * width))
  {
  }

  auto height() const -> Index { return height_; }
  auto width() const -> Index { return width_; }
  auto size() const -> Index { return height_ * width_; }
  auto operator()(Index y, Index x) -> Complex & { return values_[y * width_ + x]; }
  auto operator()(Index y, Index x) const -> Complex const & { return values_[y * width_ + x]; }
  auto data() -> Complex * { return values_.data(); }
  auto data() const -> Complex const * { return values_.data(); }
  auto values() const -> std::vector<Complex> const & { return values_; }

  friend auto operator==(KSpace const &, KSpace const &) -> bool = default;

private:
  Index height_ = 0;
  Index width_ = 0;
  std::vector<Complex> values_;
};

/// Cartesian mask. Phase encoding runs along the width, so every column is
/// either fully sampled or empty.
struct SamplingMask
{
  Index height = 0;
  Index width = 0;
  double accel = 1.0;
  double center_fraction = 0.0;
  std::uint64_t seed = 0;
  std::vector<Index> lines; // sorted sampled column indices
  std::vector<std::uint8_t> columns;

  auto sampled(Index col) const -> bool { return columns[col] != 0; }
  auto line_count() const -> Index { return static_cast<Index>(lines.size()); }

  static auto from_columns(Index height, std::vector<std::uint8_t> columns) -> SamplingMask;
  static auto full(Index height, Index width) -> SamplingMask;
  static auto empty(Index height, Index width) -> SamplingMask;

  friend auto operator==(SamplingMask const &, SamplingMask const &) -> bool = default;
};

// Standard deviation of the line-selection density, as a fraction of width.
inline constexpr double kDefaultMaskStdFraction = 1.0 / 6.0;
inline constexpr double kDefaultCenterFraction = 0.04;

/// Draws round(w / accel) phase-encode lines: the central
/// ceil(center_fraction * w) lines, plus lines chosen without replacement with
/// probability proportional to a Gaussian centred on DC.
auto make_gaussian_mask(
    Index height,
    Index width,
    double accel,
    double center_fraction,
    std::uint64_t seed,
    double std_fraction = kDefaultMaskStdFraction) -> SamplingMask;

// Mask persisted as an H x W 0/1 tensor plus a JSON sidecar with the draw parameters.
void save_mask(io::fs::path const &dir, std::string const &name, SamplingMask const &mask);
auto load_mask(io::fs::path const &dir, std::string const &name) -> SamplingMask;

template <typename T>
auto fft2c(Tensor3<T> const &image) -> KSpace<T>;

template <typename T>
auto ifft2c(KSpace<T> const &k) -> Tensor3<T>;

template <typename T>
auto undersample(Tensor3<T> const &image, SamplingMask const &mask) -> KSpace<T>;

template <typename T>
auto zero_filled(KSpace<T> const &y) -> Tensor3<T>;

/// Data-consistency weighting. Hard mode replaces sampled k-space with the
/// measurement; soft mode blends (K + lambda y) / (1 + lambda).
struct DcMode
{
  bool hard = true;
  double lambda = 0.0;

  static auto Hard() -> DcMode { return {true, 0.0}; }
  static auto Soft(double lambda) -> DcMode;

  // Weight given to the measurement at sampled locations.
  auto measurement_weight() const -> double { return hard ? 1.0 : lambda / (1.0 + lambda); }
  auto describe() const -> std::string;
  static auto parse(std::string const &text) -> DcMode;

  friend auto operator==(DcMode const &, DcMode const &) -> bool = default;
};

template <typename T>
auto data_consistency(Tensor3<T> const &x_pred, KSpace<T> const &y, SamplingMask const &mask, DcMode mode)
    -> Tensor3<T>;

// Gradient of data_consistency w.r.t. x_pred. The map is affine in x_pred with
// a self-adjoint linear part, so the backward pass applies that part again.
template <typename T>
auto data_consistency_backward(Tensor3<T> const &grad_out, SamplingMask const &mask, DcMode mode) -> Tensor3<T>;

} // namespace urec::kspace
