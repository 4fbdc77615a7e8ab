#include "urec/kspace.hpp"

#include "urec/rng.hpp"

#include <fftw3.h>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <tuple>

namespace urec::kspace {

namespace {

// FFTW planning is not thread-safe; execution on a finished plan is.
std::mutex plan_mutex;

template <typename T>
struct Fftw;

template <>
struct Fftw<double>
{
  using Plan = fftw_plan;
  using Cx = fftw_complex;
  static auto plan(int h, int w, int sign) -> Plan
  {
    std::vector<std::complex<double>> scratch(static_cast<std::size_t>(h * w));
    auto *p = reinterpret_cast<Cx *>(scratch.data());
    fftw_forget_wisdom();
    return fftw_plan_dft_2d(h, w, p, p, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  static void execute(Plan p, std::complex<double> *in, std::complex<double> *out)
  {
    fftw_execute_dft(p, reinterpret_cast<Cx *>(in), reinterpret_cast<Cx *>(out));
  }
};

template <>
struct Fftw<float>
{
  using Plan = fftwf_plan;
  using Cx = fftwf_complex;
  static auto plan(int h, int w, int sign) -> Plan
  {
    std::vector<std::complex<float>> scratch(static_cast<std::size_t>(h * w));
    auto *p = reinterpret_cast<Cx *>(scratch.data());
    fftwf_forget_wisdom();
    return fftwf_plan_dft_2d(h, w, p, p, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  static void execute(Plan p, std::complex<float> *in, std::complex<float> *out)
  {
    fftwf_execute_dft(p, reinterpret_cast<Cx *>(in), reinterpret_cast<Cx *>(out));
  }
};

// Plans live for the lifetime of the process. Wisdom is cleared before each
// plan so the chosen algorithm, and hence rounding, does not depend on which
// sizes were planned earlier.
template <typename T>
auto cached_plan(Index h, Index w, int sign) -> typename Fftw<T>::Plan
{
  static std::map<std::tuple<Index, Index, int>, typename Fftw<T>::Plan> plans;
  std::lock_guard lock(plan_mutex);
  auto key = std::make_tuple(h, w, sign);
  auto it = plans.find(key);
  if (it == plans.end()) {
    it = plans.emplace(key, Fftw<T>::plan(static_cast<int>(h), static_cast<int>(w), sign)).first;
  }
  return it->second;
}

void check_even(Index h, Index w)
{
  if (h <= 0 || w <= 0 || h % 2 != 0 || w % 2 != 0) {
    throw ShapeError(fmt::format("centered FFT needs positive even dimensions, got {}x{}", h, w));
  }
}

// For even sizes fftshift and ifftshift coincide: swap quadrants.
template <typename C>
void shift2(std::vector<C> &v, Index h, Index w)
{
  std::vector<C> out(v.size());
  Index const hh = h / 2;
  Index const hw = w / 2;
  for (Index y = 0; y < h; y++) {
    Index const ys = (y + hh) % h;
    for (Index x = 0; x < w; x++) {
      out[ys * w + (x + hw) % w] = v[y * w + x];
    }
  }
  v.swap(out);
}

template <typename T>
void centered_transform(std::vector<std::complex<T>> &v, Index h, Index w, int sign)
{
  shift2(v, h, w);
  Fftw<T>::execute(cached_plan<T>(h, w, sign), v.data(), v.data());
  shift2(v, h, w);
  T const scale = T(1) / std::sqrt(static_cast<T>(h * w));
  for (auto &c : v) {
    c *= scale;
  }
}

template <typename T>
void check_image(Tensor3<T> const &image)
{
  if (image.channels() != kImageChannels) {
    throw ShapeError(fmt::format("image tensors have 2 channels, got {}", image.channels()));
  }
  check_even(image.height(), image.width());
}

void check_mask(SamplingMask const &mask, Index h, Index w)
{
  if (mask.height != h || mask.width != w) {
    throw ShapeError(fmt::format("mask is {}x{} but data is {}x{}", mask.height, mask.width, h, w));
  }
}

} // namespace

auto SamplingMask::from_columns(Index height, std::vector<std::uint8_t> columns) -> SamplingMask
{
  SamplingMask m;
  m.height = height;
  m.width = static_cast<Index>(columns.size());
  for (Index x = 0; x < m.width; x++) {
    columns[x] = columns[x] ? 1 : 0;
    if (columns[x]) {
      m.lines.push_back(x);
    }
  }
  m.columns = std::move(columns);
  m.accel = m.lines.empty() ? 0.0 : static_cast<double>(m.width) / static_cast<double>(m.lines.size());
  return m;
}

auto SamplingMask::full(Index height, Index width) -> SamplingMask
{
  return from_columns(height, std::vector<std::uint8_t>(static_cast<std::size_t>(width), 1));
}

auto SamplingMask::empty(Index height, Index width) -> SamplingMask
{
  return from_columns(height, std::vector<std::uint8_t>(static_cast<std::size_t>(width), 0));
}

auto make_gaussian_mask(
    Index height, Index width, double accel, double center_fraction, std::uint64_t seed, double std_fraction)
    -> SamplingMask
{
  if (height <= 0 || width <= 0) {
    throw ArgumentError("mask dimensions must be positive");
  }
  if (!(accel > 1.0)) {
    throw ArgumentError(fmt::format("acceleration must exceed 1, got {}", accel));
  }
  if (!(center_fraction >= 0.0 && center_fraction < 1.0 / accel)) {
    throw ArgumentError(
        fmt::format("center fraction {} must lie in [0, 1/accel) = [0, {})", center_fraction, 1.0 / accel));
  }
  if (!(std_fraction > 0.0)) {
    throw ArgumentError("mask density std must be positive");
  }
  auto const total = static_cast<Index>(std::llround(static_cast<double>(width) / accel));
  auto const center = static_cast<Index>(std::ceil(center_fraction * static_cast<double>(width) - 1e-9));
  if (center > total || total < 1) {
    throw ArgumentError(fmt::format(
        "infeasible mask: {} center lines but only {} lines at acceleration {} for width {}",
        center,
        total,
        accel,
        width));
  }

  std::vector<std::uint8_t> columns(static_cast<std::size_t>(width), 0);
  Index const dc = width / 2;
  Index const first = dc - center / 2;
  for (Index x = first; x < first + center; x++) {
    columns[x] = 1;
  }

  double const sigma = std_fraction * static_cast<double>(width);
  std::vector<double> weight(static_cast<std::size_t>(width));
  for (Index x = 0; x < width; x++) {
    double const d = static_cast<double>(x - dc);
    weight[x] = columns[x] ? 0.0 : std::exp(-0.5 * d * d / (sigma * sigma));
  }

  Rng rng(seed);
  for (Index drawn = center; drawn < total; drawn++) {
    double const sum = std::accumulate(weight.begin(), weight.end(), 0.0);
    Index pick = -1;
    if (sum > 0.0) {
      double target = rng.uniform() * sum;
      for (Index x = 0; x < width; x++) {
        if (weight[x] <= 0.0) {
          continue;
        }
        pick = x;
        target -= weight[x];
        if (target < 0.0) {
          break;
        }
      }
    } else {
      // Gaussian tails underflowed; fall back to uniform over the remaining lines.
      std::vector<Index> free;
      for (Index x = 0; x < width; x++) {
        if (!columns[x]) {
          free.push_back(x);
        }
      }
      pick = free[rng.below(free.size())];
    }
    columns[pick] = 1;
    weight[pick] = 0.0;
  }

  auto mask = SamplingMask::from_columns(height, std::move(columns));
  mask.accel = accel;
  mask.center_fraction = center_fraction;
  mask.seed = seed;
  return mask;
}

void save_mask(io::fs::path const &dir, std::string const &name, SamplingMask const &mask)
{
  io::StoredTensor t;
  t.shape = {static_cast<std::uint32_t>(mask.height), static_cast<std::uint32_t>(mask.width)};
  t.values.resize(static_cast<std::size_t>(mask.height * mask.width));
  for (Index y = 0; y < mask.height; y++) {
    for (Index x = 0; x < mask.width; x++) {
      t.values[y * mask.width + x] = mask.sampled(x) ? 1.0f : 0.0f;
    }
  }
  io::write_tensor(dir, name, t);
  io::Json meta{{"accel", mask.accel}, {"center_fraction", mask.center_fraction}, {"seed", mask.seed}};
  io::write_json(dir / (name + ".json"), meta);
}

auto load_mask(io::fs::path const &dir, std::string const &name) -> SamplingMask
{
  auto const t = io::read_tensor(dir / (name + io::kTensorExtension));
  if (t.shape.size() != 2) {
    throw FormatError("mask tensor must be rank 2");
  }
  Index const h = t.shape[0];
  Index const w = t.shape[1];
  std::vector<std::uint8_t> columns(static_cast<std::size_t>(w));
  for (Index x = 0; x < w; x++) {
    columns[x] = t.values[x] != 0.0f;
    for (Index y = 1; y < h; y++) {
      if ((t.values[y * w + x] != 0.0f) != static_cast<bool>(columns[x])) {
        throw FormatError("mask column " + std::to_string(x) + " is not constant along the readout");
      }
    }
  }
  auto mask = SamplingMask::from_columns(h, std::move(columns));
  auto const meta = io::read_json(dir / (name + ".json"));
  mask.accel = meta.at("accel").get<double>();
  mask.center_fraction = meta.at("center_fraction").get<double>();
  mask.seed = meta.at("seed").get<std::uint64_t>();
  return mask;
}

template <typename T>
auto fft2c(Tensor3<T> const &image) -> KSpace<T>
{
  check_image(image);
  Index const h = image.height();
  Index const w = image.width();
  std::vector<std::complex<T>> v(static_cast<std::size_t>(h * w));
  auto const re = image.channel(0);
  auto const im = image.channel(1);
  for (Index i = 0; i < h * w; i++) {
    v[i] = {re[i], im[i]};
  }
  centered_transform(v, h, w, FFTW_FORWARD);
  KSpace<T> k(h, w);
  std::copy(v.begin(), v.end(), k.data());
  return k;
}

template <typename T>
auto ifft2c(KSpace<T> const &k) -> Tensor3<T>
{
  check_even(k.height(), k.width());
  Index const h = k.height();
  Index const w = k.width();
  std::vector<std::complex<T>> v(k.values());
  centered_transform(v, h, w, FFTW_BACKWARD);
  Tensor3<T> image(kImageChannels, h, w);
  auto re = image.channel(0);
  auto im = image.channel(1);
  for (Index i = 0; i < h * w; i++) {
    re[i] = v[i].real();
    im[i] = v[i].imag();
  }
  return image;
}

template <typename T>
auto undersample(Tensor3<T> const &image, SamplingMask const &mask) -> KSpace<T>
{
  check_image(image);
  check_mask(mask, image.height(), image.width());
  auto k = fft2c(image);
  for (Index y = 0; y < k.height(); y++) {
    for (Index x = 0; x < k.width(); x++) {
      if (!mask.sampled(x)) {
        k(y, x) = {};
      }
    }
  }
  return k;
}

template <typename T>
auto zero_filled(KSpace<T> const &y) -> Tensor3<T>
{
  return ifft2c(y);
}

auto DcMode::Soft(double lambda) -> DcMode
{
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw ArgumentError(fmt::format("soft data consistency needs a finite lambda > 0, got {}", lambda));
  }
  return {false, lambda};
}

auto DcMode::describe() const -> std::string { return hard ? "hard" : fmt::format("soft:{}", lambda); }

auto DcMode::parse(std::string const &text) -> DcMode
{
  if (text == "hard") {
    return Hard();
  }
  if (text.rfind("soft:", 0) == 0) {
    return Soft(std::stod(text.substr(5)));
  }
  throw ArgumentError("data consistency mode must be 'hard' or 'soft:<lambda>', got '" + text + "'");
}

template <typename T>
auto data_consistency(Tensor3<T> const &x_pred, KSpace<T> const &y, SamplingMask const &mask, DcMode mode)
    -> Tensor3<T>
{
  check_image(x_pred);
  check_mask(mask, x_pred.height(), x_pred.width());
  if (y.height() != x_pred.height() || y.width() != x_pred.width()) {
    throw ShapeError("k-space and image sizes differ");
  }
  auto k = fft2c(x_pred);
  T const wy = static_cast<T>(mode.measurement_weight());
  for (Index r = 0; r < k.height(); r++) {
    for (Index c = 0; c < k.width(); c++) {
      if (!mask.sampled(c)) {
        continue;
      }
      if (mode.hard) {
        k(r, c) = y(r, c);
      } else {
        k(r, c) = (T(1) - wy) * k(r, c) + wy * y(r, c);
      }
    }
  }
  return ifft2c(k);
}

template <typename T>
auto data_consistency_backward(Tensor3<T> const &grad_out, SamplingMask const &mask, DcMode mode) -> Tensor3<T>
{
  check_image(grad_out);
  check_mask(mask, grad_out.height(), grad_out.width());
  auto k = fft2c(grad_out);
  T const keep = mode.hard ? T(0) : static_cast<T>(1.0 - mode.measurement_weight());
  for (Index r = 0; r < k.height(); r++) {
    for (Index c = 0; c < k.width(); c++) {
      if (mask.sampled(c)) {
        k(r, c) *= keep;
      }
    }
  }
  return ifft2c(k);
}

#define UREC_KSPACE_INSTANTIATE(T)                                                                           \
  template auto fft2c(Tensor3<T> const &) -> KSpace<T>;                                                      \
  template auto ifft2c(KSpace<T> const &) -> Tensor3<T>;                                                     \
  template auto undersample(Tensor3<T> const &, SamplingMask const &) -> KSpace<T>;                          \
  template auto zero_filled(KSpace<T> const &) -> Tensor3<T>;                                                \
  template auto data_consistency(Tensor3<T> const &, KSpace<T> const &, SamplingMask const &, DcMode)        \
      -> Tensor3<T>;                                                                                         \
  template auto data_consistency_backward(Tensor3<T> const &, SamplingMask const &, DcMode) -> Tensor3<T>;

UREC_KSPACE_INSTANTIATE(float)
UREC_KSPACE_INSTANTIATE(double)

} // namespace urec::kspace
