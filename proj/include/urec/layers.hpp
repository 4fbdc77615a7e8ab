#pragma once

#include "urec/tensor.hpp"

#include <span>
#include <vector>

namespace urec::net {

/// Same-padded square convolution, weight layout [out][in][k][k].
template <typename T>
auto conv_forward(Tensor3<T> const &x, std::span<T const> weight, std::span<T const> bias, Index out_channels, Index kernel)
    -> Tensor3<T>;

/// Backward of conv_forward. Weight and bias gradients are accumulated into
/// the given spans when they are non-empty. Returns the input gradient.
template <typename T>
auto conv_backward(
    Tensor3<T> const &x,
    std::span<T const> weight,
    Tensor3<T> const &grad_out,
    Index kernel,
    std::span<T> grad_weight,
    std::span<T> grad_bias) -> Tensor3<T>;

template <typename T>
struct NormStats
{
  std::vector<T> mean;
  std::vector<T> inv_std; // 1 / sqrt(var + eps), population variance
};

/// Per-channel normalisation over the spatial extent followed by an affine map.
template <typename T>
auto instance_norm(
    Tensor3<T> const &h, std::span<T const> gamma, std::span<T const> beta, double eps, NormStats<T> *stats = nullptr)
    -> Tensor3<T>;

template <typename T>
auto instance_norm_backward(
    Tensor3<T> const &h,
    NormStats<T> const &stats,
    std::span<T const> gamma,
    Tensor3<T> const &grad_out,
    std::span<T> grad_gamma,
    std::span<T> grad_beta) -> Tensor3<T>;

template <typename T>
auto relu(Tensor3<T> const &x) -> Tensor3<T>;

// grad * (pre > 0)
template <typename T>
auto relu_backward(Tensor3<T> const &pre, Tensor3<T> const &grad) -> Tensor3<T>;

} // namespace urec::net
