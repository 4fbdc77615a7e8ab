#include "urec/distill.hpp"

#include <fmt/format.h>

#include <cmath>

namespace urec::distill {

template <typename T>
AttentionMap<T>::AttentionMap(Index height, Index width, std::vector<T> values)
  : height_{height}
  , width_{width}
  , values_{std::move(values)}
{
  if (static_cast<Index>(values_.size()) != height * width) {
    throw ShapeError("attention map size disagrees with its dimensions");
  }
}

template <typename T>
auto attention_map(Tensor3<T> const &h) -> AttentionMap<T>
{
  if (h.channels() < 1 || h.plane_size() < 1) {
    throw ShapeError("attention map of an empty activation");
  }
  std::vector<T> o(static_cast<std::size_t>(h.plane_size()), T(0));
  for (Index c = 0; c < h.channels(); c++) {
    auto const m = h.channel(c);
    for (Index i = 0; i < h.plane_size(); i++) {
      o[i] += m[i] * m[i];
    }
  }
  return AttentionMap<T>(h.height(), h.width(), std::move(o));
}

template <typename T>
auto at_loss_cascade(AttentionMap<T> const &teacher, AttentionMap<T> const &student) -> CascadeLoss<T>
{
  if (teacher.height() != student.height() || teacher.width() != student.width()) {
    throw ShapeError(fmt::format(
        "attention maps differ in shape: {}x{} vs {}x{}",
        teacher.height(),
        teacher.width(),
        student.height(),
        student.width()));
  }
  auto norm = [](std::vector<T> const &v) {
    double s = 0.0;
    for (auto x : v) {
      s += static_cast<double>(x) * static_cast<double>(x);
    }
    return std::sqrt(s);
  };
  auto const &ot = teacher.values();
  auto const &os = student.values();
  double const nt = norm(ot);
  double const ns = norm(os);
  CascadeLoss<T> out;
  out.degenerate = nt < kNormFloor || ns < kNormFloor;
  std::size_t const n = ot.size();
  std::vector<double> u(n, 0.0); // normalised student
  std::vector<double> diff_sign(n, 0.0);
  double value = 0.0;
  for (std::size_t i = 0; i < n; i++) {
    double const t = nt < kNormFloor ? 0.0 : static_cast<double>(ot[i]) / nt;
    u[i] = ns < kNormFloor ? 0.0 : static_cast<double>(os[i]) / ns;
    double const d = t - u[i];
    value += std::abs(d);
    // d|t - u| / du = -sign(t - u)
    diff_sign[i] = d > 0.0 ? -1.0 : (d < 0.0 ? 1.0 : 0.0);
  }
  out.value = value;
  out.grad_student.assign(n, T(0));
  if (ns >= kNormFloor) {
    // u = o / |o|  =>  dL/do = (g - (g . u) u) / |o|
    double gu = 0.0;
    for (std::size_t i = 0; i < n; i++) {
      gu += diff_sign[i] * u[i];
    }
    for (std::size_t i = 0; i < n; i++) {
      out.grad_student[i] = static_cast<T>((diff_sign[i] - gu * u[i]) / ns);
    }
  }
  return out;
}

template <typename T>
auto total_at_loss(std::vector<DistillPair<T>> const &pairs, int expected_cascades) -> TotalLoss<T>
{
  if (static_cast<int>(pairs.size()) != expected_cascades) {
    throw ArgumentError(fmt::format(
        "attention transfer needs one pair per cascade: got {}, expected {}", pairs.size(), expected_cascades));
  }
  TotalLoss<T> total;
  for (auto const &p : pairs) {
    if (p.teacher.empty() || p.student.empty()) {
      throw ArgumentError("attention transfer pair is missing a trace");
    }
    auto const loss = at_loss_cascade(attention_map(p.teacher), attention_map(p.student));
    total.value += loss.value;
    total.degenerate_cascades += loss.degenerate ? 1 : 0;
    // O = sum_c h_c^2  =>  dL/dh_c = 2 h_c dL/dO
    Tensor3<T> g(p.student.channels(), p.student.height(), p.student.width());
    for (Index c = 0; c < g.channels(); c++) {
      auto const h = p.student.channel(c);
      auto gc = g.channel(c);
      for (Index i = 0; i < g.plane_size(); i++) {
        gc[i] = T(2) * h[i] * loss.grad_student[i];
      }
    }
    total.grad_student.push_back(std::move(g));
  }
  return total;
}

template class AttentionMap<float>;
template class AttentionMap<double>;
template auto attention_map(Tensor3<float> const &) -> AttentionMap<float>;
template auto attention_map(Tensor3<double> const &) -> AttentionMap<double>;
template auto at_loss_cascade(AttentionMap<float> const &, AttentionMap<float> const &) -> CascadeLoss<float>;
template auto at_loss_cascade(AttentionMap<double> const &, AttentionMap<double> const &) -> CascadeLoss<double>;
template auto total_at_loss(std::vector<DistillPair<float>> const &, int) -> TotalLoss<float>;
template auto total_at_loss(std::vector<DistillPair<double>> const &, int) -> TotalLoss<double>;

} // namespace urec::distill
