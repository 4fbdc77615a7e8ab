#pragma once

#include "urec/common.hpp"
#include "urec/tensor.hpp"

#include <vector>

namespace urec::distill {

/// Spatial attention of an activation: sum over channels of squared values.
template <typename T>
class AttentionMap
{
public:
  AttentionMap() = default;
  AttentionMap(Index height, Index width, std::vector<T> values);

  auto height() const -> Index { return height_; }
  auto width() const -> Index { return width_; }
  auto values() const -> std::vector<T> const & { return values_; }
  auto operator()(Index y, Index x) const -> T { return values_[y * width_ + x]; }

private:
  Index height_ = 0;
  Index width_ = 0;
  std::vector<T> values_;
};

template <typename T>
auto attention_map(Tensor3<T> const &h) -> AttentionMap<T>;

// Maps with an L2 norm below this are treated as all-zero after normalisation.
inline constexpr double kNormFloor = 1e-12;

template <typename T>
struct CascadeLoss
{
  double value = 0.0;
  bool degenerate = false;   // at least one map had zero norm
  std::vector<T> grad_student; // d value / d student map, flattened
};

/// L1 distance between the L2-normalised teacher and student maps.
template <typename T>
auto at_loss_cascade(AttentionMap<T> const &teacher, AttentionMap<T> const &student) -> CascadeLoss<T>;

template <typename T>
struct DistillPair
{
  Tensor3<T> teacher;
  Tensor3<T> student;
};

template <typename T>
struct TotalLoss
{
  double value = 0.0;
  int degenerate_cascades = 0;
  std::vector<Tensor3<T>> grad_student; // d value / d student activation, per cascade
};

/// Sum of per-cascade losses over the traced activations. `expected_cascades`
/// guards against a missing cascade.
template <typename T>
auto total_at_loss(std::vector<DistillPair<T>> const &pairs, int expected_cascades) -> TotalLoss<T>;

} // namespace urec::distill
