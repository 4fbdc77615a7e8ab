#pragma once

#include "urec/common.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace urec {

/// Dense channel-major (C x H x W) array. Images are 2-channel tensors holding
/// the real and imaginary parts; network activations use the same layout.
template <typename T>
class Tensor3
{
public:
  Tensor3() = default;
  Tensor3(Index channels, Index height, Index width, T fill = T{0})
    : channels_{channels}
    , height_{height}
    , width_{width}
  {
    if (channels < 0 || height < 0 || width < 0) {
      throw ShapeError("negative tensor dimension");
    }
    values_.assign(static_cast<std::size_t>(channels * height * width), fill);
  }

  auto channels() const -> Index { return channels_; }
  auto height() const -> Index { return height_; }
  auto width() const -> Index { return width_; }
  auto plane_size() const -> Index { return height_ * width_; }
  auto size() const -> Index { return channels_ * height_ * width_; }
  auto empty() const -> bool { return values_.empty(); }

  auto operator()(Index c, Index y, Index x) -> T & { return values_[(c * height_ + y) * width_ + x]; }
  auto operator()(Index c, Index y, Index x) const -> T const &
  {
    return values_[(c * height_ + y) * width_ + x];
  }

  auto data() -> T * { return values_.data(); }
  auto data() const -> T const * { return values_.data(); }
  auto values() -> std::span<T> { return values_; }
  auto values() const -> std::span<T const> { return values_; }
  auto channel(Index c) -> std::span<T> { return values().subspan(c * plane_size(), plane_size()); }
  auto channel(Index c) const -> std::span<T const>
  {
    return values().subspan(c * plane_size(), plane_size());
  }

  auto same_shape(Tensor3 const &other) const -> bool
  {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  auto operator+=(Tensor3 const &other) -> Tensor3 &
  {
    if (!same_shape(other)) {
      throw ShapeError("tensor shapes differ in +=");
    }
    for (std::size_t i = 0; i < values_.size(); i++) {
      values_[i] += other.values_[i];
    }
    return *this;
  }

  template <typename U>
  auto cast() const -> Tensor3<U>
  {
    Tensor3<U> out(channels_, height_, width_);
    std::transform(values_.begin(), values_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  auto all_finite() const -> bool
  {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
  }

  friend auto operator==(Tensor3 const &, Tensor3 const &) -> bool = default;

private:
  Index channels_ = 0;
  Index height_ = 0;
  Index width_ = 0;
  std::vector<T> values_;
};

// Number of channels in an image-domain tensor (real, imaginary).
inline constexpr Index kImageChannels = 2;

} // namespace urec
