#include "urec/layers.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <cmath>

namespace urec::net {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<RowMatrix<T> const>;

template <typename T>
using StridedMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<RowMatrix<T> const, 0, Eigen::OuterStride<>>;

// A 'same' convolution is evaluated on a zero-padded copy of the input. In
// the flattened padded plane every output pixel and each of its k*k taps sit
// a fixed distance apart, so one tap is a single GEMM over a contiguous
// window. The window also covers the 2*pad columns between rows; those junk
// columns are discarded on output and held at zero on the way back.
struct PaddedGeometry
{
  Index h, w, pad, wp, np, first, span;

  PaddedGeometry(Index height, Index width, Index kernel)
    : h{height}
    , w{width}
    , pad{kernel / 2}
    , wp{width + 2 * pad}
    , np{(height + 2 * pad) * wp}
    , first{pad * wp + pad}
    , span{(height - 1) * wp + width}
  {
  }

  auto tap_offset(Index ky, Index kx) const -> Index { return (ky - pad) * wp + (kx - pad); }
};

template <typename T>
void pad_planes(Tensor3<T> const &in, PaddedGeometry const &g, std::vector<T> &out)
{
  out.assign(static_cast<std::size_t>(in.channels() * g.np), T(0));
  for (Index c = 0; c < in.channels(); c++) {
    for (Index y = 0; y < g.h; y++) {
      std::copy_n(in.data() + (c * g.h + y) * g.w, g.w, out.data() + c * g.np + g.first + y * g.wp);
    }
  }
}

// Rows of `window` (row stride `stride`) laid out at y * wp + x back into planes.
template <typename T>
void unpad_window(T const *window, Index stride, PaddedGeometry const &g, Tensor3<T> &out)
{
  for (Index c = 0; c < out.channels(); c++) {
    for (Index y = 0; y < g.h; y++) {
      std::copy_n(window + c * stride + y * g.wp, g.w, out.data() + (c * g.h + y) * g.w);
    }
  }
}

// weight[oc][c][ky][kx] regrouped as one (out x in) matrix per tap.
template <typename T>
void split_taps(std::span<T const> weight, Index out_channels, Index in_channels, Index k, std::vector<T> &taps)
{
  taps.resize(weight.size());
  Index const kk = k * k;
  for (Index oc = 0; oc < out_channels; oc++) {
    for (Index c = 0; c < in_channels; c++) {
      for (Index t = 0; t < kk; t++) {
        taps[(t * out_channels + oc) * in_channels + c] = weight[(oc * in_channels + c) * kk + t];
      }
    }
  }
}

template <typename T>
struct Scratch
{
  std::vector<T> padded, taps, window, grad_taps;
};

template <typename T>
auto scratch() -> Scratch<T> &
{
  thread_local Scratch<T> buffers;
  return buffers;
}

// Sum of f(0..n-1) over eight interleaved partial sums combined in a fixed
// order. The lanes map onto vector registers, and the result does not depend
// on buffer alignment.
template <typename F>
auto lane_sum(Index n, F f) -> double
{
  constexpr Index kLanes = 8;
  double acc[kLanes] = {};
  Index i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (Index j = 0; j < kLanes; j++) {
      acc[j] += f(i + j);
    }
  }
  double tail = 0.0;
  for (; i < n; i++) {
    tail += f(i);
  }
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

void check_weight(Index weight_size, Index out_channels, Index in_channels, Index kernel)
{
  if (kernel < 1 || kernel % 2 == 0) {
    throw ArgumentError(fmt::format("kernel size must be odd and positive, got {}", kernel));
  }
  if (weight_size != out_channels * in_channels * kernel * kernel) {
    throw ShapeError(fmt::format(
        "conv weight has {} values, expected {}x{}x{}x{}", weight_size, out_channels, in_channels, kernel, kernel));
  }
}

} // namespace

template <typename T>
auto conv_forward(Tensor3<T> const &x, std::span<T const> weight, std::span<T const> bias, Index out_channels, Index kernel)
    -> Tensor3<T>
{
  check_weight(static_cast<Index>(weight.size()), out_channels, x.channels(), kernel);
  if (static_cast<Index>(bias.size()) != out_channels) {
    throw ShapeError("conv bias length differs from output channels");
  }
  Index const c_in = x.channels();
  PaddedGeometry const g(x.height(), x.width(), kernel);
  auto &s = scratch<T>();
  pad_planes(x, g, s.padded);
  split_taps(weight, out_channels, c_in, kernel, s.taps);
  s.window.resize(static_cast<std::size_t>(out_channels * g.span));
  MatrixMap<T> o(s.window.data(), out_channels, g.span);
  for (Index ky = 0; ky < kernel; ky++) {
    for (Index kx = 0; kx < kernel; kx++) {
      Index const t = ky * kernel + kx;
      ConstMatrixMap<T> w(s.taps.data() + t * out_channels * c_in, out_channels, c_in);
      ConstStridedMap<T> in(s.padded.data() + g.first + g.tap_offset(ky, kx), c_in, g.span, Eigen::OuterStride<>(g.np));
      if (t == 0) {
        o.noalias() = w * in;
      } else {
        o.noalias() += w * in;
      }
    }
  }
  Tensor3<T> out(out_channels, x.height(), x.width());
  unpad_window(s.window.data(), g.span, g, out);
  for (Index oc = 0; oc < out_channels; oc++) {
    for (auto &v : out.channel(oc)) {
      v += bias[oc];
    }
  }
  return out;
}

template <typename T>
auto conv_backward(
    Tensor3<T> const &x,
    std::span<T const> weight,
    Tensor3<T> const &grad_out,
    Index kernel,
    std::span<T> grad_weight,
    std::span<T> grad_bias) -> Tensor3<T>
{
  Index const out_channels = grad_out.channels();
  Index const c_in = x.channels();
  check_weight(static_cast<Index>(weight.size()), out_channels, c_in, kernel);
  if (grad_out.height() != x.height() || grad_out.width() != x.width()) {
    throw ShapeError("conv gradient spatial size differs from input");
  }
  PaddedGeometry const g(x.height(), x.width(), kernel);
  auto &s = scratch<T>();
  // grad_out on the padded window, zero in the junk columns.
  s.window.assign(static_cast<std::size_t>(out_channels * g.span), T(0));
  for (Index oc = 0; oc < out_channels; oc++) {
    for (Index y = 0; y < g.h; y++) {
      std::copy_n(grad_out.data() + (oc * g.h + y) * g.w, g.w, s.window.data() + oc * g.span + y * g.wp);
    }
  }
  ConstMatrixMap<T> go(s.window.data(), out_channels, g.span);
  Index const kk = kernel * kernel;

  if (!grad_weight.empty()) {
    pad_planes(x, g, s.padded);
    s.grad_taps.resize(static_cast<std::size_t>(kk * out_channels * c_in));
    for (Index ky = 0; ky < kernel; ky++) {
      for (Index kx = 0; kx < kernel; kx++) {
        Index const t = ky * kernel + kx;
        ConstStridedMap<T> in(
            s.padded.data() + g.first + g.tap_offset(ky, kx), c_in, g.span, Eigen::OuterStride<>(g.np));
        MatrixMap<T> gt(s.grad_taps.data() + t * out_channels * c_in, out_channels, c_in);
        gt.noalias() = go * in.transpose();
      }
    }
    for (Index oc = 0; oc < out_channels; oc++) {
      for (Index c = 0; c < c_in; c++) {
        for (Index t = 0; t < kk; t++) {
          grad_weight[(oc * c_in + c) * kk + t] += s.grad_taps[(t * out_channels + oc) * c_in + c];
        }
      }
    }
  }
  if (!grad_bias.empty()) {
    // Not Eigen's sum: it peels by pointer alignment, so its rounding would
    // depend on where the buffer was allocated.
    for (Index oc = 0; oc < out_channels; oc++) {
      auto const plane = grad_out.channel(oc);
      grad_bias[oc] += static_cast<T>(lane_sum(g.h * g.w, [&](Index i) { return static_cast<double>(plane[i]); }));
    }
  }

  split_taps(weight, out_channels, c_in, kernel, s.taps);
  s.padded.assign(static_cast<std::size_t>(c_in * g.np), T(0));
  for (Index ky = 0; ky < kernel; ky++) {
    for (Index kx = 0; kx < kernel; kx++) {
      Index const t = ky * kernel + kx;
      ConstMatrixMap<T> w(s.taps.data() + t * out_channels * c_in, out_channels, c_in);
      StridedMap<T> gin(s.padded.data() + g.first + g.tap_offset(ky, kx), c_in, g.span, Eigen::OuterStride<>(g.np));
      gin.noalias() += w.transpose() * go;
    }
  }
  Tensor3<T> grad_in(c_in, x.height(), x.width());
  unpad_window(s.padded.data() + g.first, g.np, g, grad_in);
  return grad_in;
}

template <typename T>
auto instance_norm(
    Tensor3<T> const &h, std::span<T const> gamma, std::span<T const> beta, double eps, NormStats<T> *stats)
    -> Tensor3<T>
{
  Index const c_n = h.channels();
  if (static_cast<Index>(gamma.size()) != c_n || static_cast<Index>(beta.size()) != c_n) {
    throw ShapeError(fmt::format(
        "normalisation affine parameters have lengths {}/{} for {} channels", gamma.size(), beta.size(), c_n));
  }
  if (h.plane_size() < 1) {
    throw ShapeError("instance norm needs a non-empty spatial extent");
  }
  if (!(eps > 0.0)) {
    throw ArgumentError("instance norm eps must be positive");
  }
  Index const n = h.plane_size();
  Tensor3<T> out(c_n, h.height(), h.width());
  if (stats) {
    stats->mean.assign(static_cast<std::size_t>(c_n), T(0));
    stats->inv_std.assign(static_cast<std::size_t>(c_n), T(0));
  }
  for (Index c = 0; c < c_n; c++) {
    auto const in = h.channel(c);
    double const mean = lane_sum(n, [&](Index i) { return static_cast<double>(in[i]); }) / static_cast<double>(n);
    double const sq = lane_sum(n, [&](Index i) {
      double const d = static_cast<double>(in[i]) - mean;
      return d * d;
    });
    double const inv_std = 1.0 / std::sqrt(sq / static_cast<double>(n) + eps);
    auto o = out.channel(c);
    double const scale = static_cast<double>(gamma[c]) * inv_std;
    for (Index i = 0; i < n; i++) {
      o[i] = static_cast<T>((static_cast<double>(in[i]) - mean) * scale + static_cast<double>(beta[c]));
    }
    if (stats) {
      stats->mean[c] = static_cast<T>(mean);
      stats->inv_std[c] = static_cast<T>(inv_std);
    }
  }
  return out;
}

template <typename T>
auto instance_norm_backward(
    Tensor3<T> const &h,
    NormStats<T> const &stats,
    std::span<T const> gamma,
    Tensor3<T> const &grad_out,
    std::span<T> grad_gamma,
    std::span<T> grad_beta) -> Tensor3<T>
{
  if (!h.same_shape(grad_out)) {
    throw ShapeError("instance norm gradient shape differs from input");
  }
  Index const c_n = h.channels();
  Index const n = h.plane_size();
  Tensor3<T> grad_in(c_n, h.height(), h.width());
  for (Index c = 0; c < c_n; c++) {
    auto const in = h.channel(c);
    auto const g = grad_out.channel(c);
    double const mean = stats.mean[c];
    double const inv_std = stats.inv_std[c];
    double const sum_g = lane_sum(n, [&](Index i) { return static_cast<double>(g[i]); });
    double const sum_g_xhat = lane_sum(n, [&](Index i) {
      return static_cast<double>(g[i]) * ((static_cast<double>(in[i]) - mean) * inv_std);
    });
    if (!grad_gamma.empty()) {
      grad_gamma[c] += static_cast<T>(sum_g_xhat);
    }
    if (!grad_beta.empty()) {
      grad_beta[c] += static_cast<T>(sum_g);
    }
    // dx = gamma * inv_std / n * (n g - sum g - xhat sum(g xhat))
    double const scale = static_cast<double>(gamma[c]) * inv_std / static_cast<double>(n);
    auto gi = grad_in.channel(c);
    for (Index i = 0; i < n; i++) {
      double const xhat = (static_cast<double>(in[i]) - mean) * inv_std;
      gi[i] = static_cast<T>(scale * (static_cast<double>(n) * g[i] - sum_g - xhat * sum_g_xhat));
    }
  }
  return grad_in;
}

template <typename T>
auto relu(Tensor3<T> const &x) -> Tensor3<T>
{
  Tensor3<T> out(x.channels(), x.height(), x.width());
  auto const in = x.values();
  auto o = out.values();
  for (std::size_t i = 0; i < in.size(); i++) {
    o[i] = in[i] > T(0) ? in[i] : T(0);
  }
  return out;
}

template <typename T>
auto relu_backward(Tensor3<T> const &pre, Tensor3<T> const &grad) -> Tensor3<T>
{
  Tensor3<T> out(grad.channels(), grad.height(), grad.width());
  auto const p = pre.values();
  auto const g = grad.values();
  auto o = out.values();
  for (std::size_t i = 0; i < g.size(); i++) {
    o[i] = p[i] > T(0) ? g[i] : T(0);
  }
  return out;
}

#define UREC_LAYERS_INSTANTIATE(T)                                                                                 \
  template auto conv_forward(Tensor3<T> const &, std::span<T const>, std::span<T const>, Index, Index) -> Tensor3<T>; \
  template auto conv_backward(Tensor3<T> const &, std::span<T const>, Tensor3<T> const &, Index, std::span<T>,       \
                              std::span<T>) -> Tensor3<T>;                                                         \
  template auto instance_norm(Tensor3<T> const &, std::span<T const>, std::span<T const>, double, NormStats<T> *)    \
      -> Tensor3<T>;                                                                                               \
  template auto instance_norm_backward(Tensor3<T> const &, NormStats<T> const &, std::span<T const>,               \
                                       Tensor3<T> const &, std::span<T>, std::span<T>) -> Tensor3<T>;              \
  template auto relu(Tensor3<T> const &) -> Tensor3<T>;                                                            \
  template auto relu_backward(Tensor3<T> const &, Tensor3<T> const &) -> Tensor3<T>;

UREC_LAYERS_INSTANTIATE(float)
UREC_LAYERS_INSTANTIATE(double)

} // namespace urec::net
