#include "urec/phantom.hpp"

#include "urec/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace urec::phantom {

namespace {

constexpr std::uint64_t kSplitStream = 0x5b1d;
constexpr int kRecenterPasses = 8;

struct Ellipse
{
  double cx, cy, a, b, cos_t, sin_t, amp;

  auto contains(double u, double v) const -> bool
  {
    double const du = u - cx;
    double const dv = v - cy;
    double const p = (du * cos_t + dv * sin_t) / a;
    double const q = (-du * sin_t + dv * cos_t) / b;
    return p * p + q * q <= 1.0;
  }
};

auto mean_of(std::span<float const> v) -> double
{
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace

void AnatomyProfile::validate() const
{
  if (name.empty()) {
    throw ArgumentError("anatomy profile needs a name");
  }
  if (!(intensity_mean > 0.0 && intensity_mean < 1.0)) {
    throw ArgumentError(fmt::format("{}: intensity_mean must lie in (0, 1)", name));
  }
  if (!(contrast_scale > 0.0)) {
    throw ArgumentError(fmt::format("{}: contrast_scale must be positive", name));
  }
  if (ellipses_min < 0 || ellipses_max < ellipses_min) {
    throw ArgumentError(fmt::format("{}: invalid ellipse count range [{}, {}]", name, ellipses_min, ellipses_max));
  }
  if (!(texture_frequency >= 0.0)) {
    throw ArgumentError(fmt::format("{}: texture_frequency must be non-negative", name));
  }
  if (dataset_size < 10) {
    throw ArgumentError(fmt::format("{}: dataset_size must be at least 10", name));
  }
}

auto to_json(AnatomyProfile const &p) -> io::Json
{
  return io::Json{
      {"anatomy_id", p.anatomy_id},
      {"name", p.name},
      {"intensity_mean", p.intensity_mean},
      {"contrast_scale", p.contrast_scale},
      {"ellipse_count_range", {p.ellipses_min, p.ellipses_max}},
      {"texture_frequency", p.texture_frequency},
      {"dataset_size", p.dataset_size},
  };
}

auto profile_from_json(io::Json const &j) -> AnatomyProfile
{
  AnatomyProfile p;
  try {
    p.anatomy_id = j.at("anatomy_id").get<int>();
    p.name = j.at("name").get<std::string>();
    p.intensity_mean = j.at("intensity_mean").get<double>();
    p.contrast_scale = j.at("contrast_scale").get<double>();
    auto const &range = j.at("ellipse_count_range");
    p.ellipses_min = range.at(0).get<int>();
    p.ellipses_max = range.at(1).get<int>();
    p.texture_frequency = j.at("texture_frequency").get<double>();
    p.dataset_size = j.at("dataset_size").get<int>();
  } catch (nlohmann::json::exception const &e) {
    throw FormatError(std::string("anatomy profile: ") + e.what());
  }
  p.validate();
  return p;
}

auto load_profile(io::fs::path const &path) -> AnatomyProfile
{
  auto const j = io::read_json(path);
  if (j.is_string()) {
    return builtin_profile(j.get<std::string>());
  }
  return profile_from_json(j);
}

auto builtin_profiles() -> std::vector<AnatomyProfile>
{
  return {
      {0, "brain", 0.30, 0.35, 4, 8, 3.0, 200},
      {1, "knee", 0.60, 0.20, 6, 12, 6.0, 200},
      {2, "cardiac", 0.45, 0.30, 3, 6, 2.0, 20},
      {3, "abdomen", 0.40, 0.25, 5, 10, 4.0, 20},
      {4, "prostate", 0.35, 0.40, 2, 5, 1.0, 20},
  };
}

auto builtin_profile(std::string const &name) -> AnatomyProfile
{
  for (auto const &p : builtin_profiles()) {
    if (p.name == name) {
      return p;
    }
  }
  throw ArgumentError("no built-in anatomy profile named '" + name + "'");
}

auto generate_image(AnatomyProfile const &profile, Index image_size, std::uint64_t seed, Index index)
    -> Tensor3<float>
{
  profile.validate();
  if (image_size < 32 || image_size % 2 != 0) {
    throw ArgumentError(fmt::format("image size must be even and at least 32, got {}", image_size));
  }
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(profile.anatomy_id), static_cast<std::uint64_t>(index)));

  auto const count = static_cast<int>(rng.integer(profile.ellipses_min, profile.ellipses_max));
  std::vector<Ellipse> ellipses;
  for (int e = 0; e < count; e++) {
    double const theta = rng.uniform(0.0, std::numbers::pi);
    ellipses.push_back({
        rng.uniform(-0.5, 0.5),
        rng.uniform(-0.5, 0.5),
        rng.uniform(0.1, 0.6),
        rng.uniform(0.1, 0.6),
        std::cos(theta),
        std::sin(theta),
        rng.uniform(-1.0, 1.0) * profile.contrast_scale,
    });
  }
  double const tex_angle = rng.uniform(0.0, std::numbers::pi);
  double const tex_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double const tex_amp = profile.texture_frequency > 0.0 ? 0.25 * profile.contrast_scale : 0.0;

  Index const n = image_size;
  std::vector<double> field(static_cast<std::size_t>(n * n), 0.0);
  for (Index y = 0; y < n; y++) {
    double const v = (2.0 * static_cast<double>(y) + 1.0) / static_cast<double>(n) - 1.0;
    for (Index x = 0; x < n; x++) {
      double const u = (2.0 * static_cast<double>(x) + 1.0) / static_cast<double>(n) - 1.0;
      double f = 0.0;
      for (auto const &e : ellipses) {
        if (e.contains(u, v)) {
          f += e.amp;
        }
      }
      if (tex_amp > 0.0) {
        double const s = u * std::cos(tex_angle) + v * std::sin(tex_angle);
        f += tex_amp * std::sin(2.0 * std::numbers::pi * profile.texture_frequency * s + tex_phase);
      }
      field[y * n + x] = f;
    }
  }

  double const field_mean = std::accumulate(field.begin(), field.end(), 0.0) / static_cast<double>(field.size());
  Tensor3<float> image(kImageChannels, n, n);
  auto re = image.channel(0);
  for (Index i = 0; i < n * n; i++) {
    re[i] = static_cast<float>(std::clamp(profile.intensity_mean + field[i] - field_mean, 0.0, 1.0));
  }
  // Clamping biases the mean; shift back towards the target.
  for (int pass = 0; pass < kRecenterPasses; pass++) {
    double const shift = profile.intensity_mean - mean_of(re);
    if (std::abs(shift) < 1e-6) {
      break;
    }
    for (auto &v : re) {
      v = static_cast<float>(std::clamp(static_cast<double>(v) + shift, 0.0, 1.0));
    }
  }
  return image;
}

auto generate_dataset(AnatomyProfile const &profile, Index image_size, std::uint64_t seed)
    -> std::vector<Tensor3<float>>
{
  profile.validate();
  std::vector<Tensor3<float>> images;
  images.reserve(static_cast<std::size_t>(profile.dataset_size));
  for (Index i = 0; i < profile.dataset_size; i++) {
    images.push_back(generate_image(profile, image_size, seed, i));
  }
  return images;
}

auto split_dataset(Index n, std::uint64_t seed) -> DatasetSplit
{
  if (n < 10) {
    throw ArgumentError(fmt::format("need at least 10 samples to split, got {}", n));
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(seed);
  for (Index i = n - 1; i > 0; i--) {
    auto const j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[i], order[j]);
  }
  auto const n_train = static_cast<Index>(std::llround(0.8 * static_cast<double>(n)));
  auto const n_val = static_cast<Index>(std::llround(0.1 * static_cast<double>(n)));
  DatasetSplit split;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  split.test.assign(order.begin() + n_train + n_val, order.end());
  return split;
}

template <typename T>
auto resize_or_crop(Tensor3<T> const &image, Index target) -> Tensor3<T>
{
  if (target <= 0) {
    throw ArgumentError(fmt::format("target size must be positive, got {}", target));
  }
  if (image.channels() != kImageChannels) {
    throw ShapeError("resize_or_crop expects a 2-channel image");
  }
  Index const h = image.height();
  Index const w = image.width();
  Tensor3<T> out(image.channels(), target, target);
  if (h >= target && w >= target) {
    Index const y0 = (h - target) / 2;
    Index const x0 = (w - target) / 2;
    for (Index c = 0; c < image.channels(); c++) {
      for (Index y = 0; y < target; y++) {
        for (Index x = 0; x < target; x++) {
          out(c, y, x) = image(c, y0 + y, x0 + x);
        }
      }
    }
    return out;
  }
  auto source = [](Index dst, Index src_n, Index dst_n) {
    double const s = (static_cast<double>(dst) + 0.5) * static_cast<double>(src_n) / static_cast<double>(dst_n) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(src_n - 1));
  };
  for (Index y = 0; y < target; y++) {
    double const sy = source(y, h, target);
    auto const y0 = static_cast<Index>(std::floor(sy));
    Index const y1 = std::min(y0 + 1, h - 1);
    double const fy = sy - static_cast<double>(y0);
    for (Index x = 0; x < target; x++) {
      double const sx = source(x, w, target);
      auto const x0 = static_cast<Index>(std::floor(sx));
      Index const x1 = std::min(x0 + 1, w - 1);
      double const fx = sx - static_cast<double>(x0);
      for (Index c = 0; c < image.channels(); c++) {
        double const top = (1.0 - fx) * image(c, y0, x0) + fx * image(c, y0, x1);
        double const bottom = (1.0 - fx) * image(c, y1, x0) + fx * image(c, y1, x1);
        out(c, y, x) = static_cast<T>((1.0 - fy) * top + fy * bottom);
      }
    }
  }
  return out;
}

template auto resize_or_crop(Tensor3<float> const &, Index) -> Tensor3<float>;
template auto resize_or_crop(Tensor3<double> const &, Index) -> Tensor3<double>;

auto Dataset::subset(std::vector<Index> const &indices) const -> std::vector<Tensor3<float>>
{
  std::vector<Tensor3<float>> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    out.push_back(images.at(static_cast<std::size_t>(i)));
  }
  return out;
}

auto make_dataset(AnatomyProfile const &profile, Index image_size, std::uint64_t seed) -> Dataset
{
  Dataset d;
  d.profile = profile;
  d.image_size = image_size;
  d.seed = seed;
  d.images = generate_dataset(profile, image_size, seed);
  d.split = split_dataset(static_cast<Index>(d.images.size()), derive_seed(seed, kSplitStream));
  return d;
}

void save_dataset(io::fs::path const &dir, Dataset const &dataset)
{
  io::fs::create_directories(dir);
  io::Json files = io::Json::array();
  for (std::size_t i = 0; i < dataset.images.size(); i++) {
    auto const name = fmt::format("img_{:05d}", i);
    io::write_tensor(dir, name, io::to_stored(dataset.images[i]));
    files.push_back(name + io::kTensorExtension);
  }
  io::Json manifest{
      {"format", "urec-dataset/1"},
      {"profile", to_json(dataset.profile)},
      {"image_size", dataset.image_size},
      {"seed", dataset.seed},
      {"count", dataset.images.size()},
      {"images", files},
      {"split", {{"train", dataset.split.train}, {"val", dataset.split.val}, {"test", dataset.split.test}}},
  };
  io::write_json(dir / "manifest.json", manifest);
}

auto load_dataset(io::fs::path const &dir) -> Dataset
{
  auto const manifest_path = dir / "manifest.json";
  if (!io::fs::exists(manifest_path)) {
    throw IoError("no dataset manifest in " + dir.string());
  }
  auto const m = io::read_json(manifest_path);
  Dataset d;
  try {
    d.profile = profile_from_json(m.at("profile"));
    d.image_size = m.at("image_size").get<Index>();
    d.seed = m.at("seed").get<std::uint64_t>();
    for (auto const &f : m.at("images")) {
      auto img = io::to_tensor3(io::read_tensor(dir / f.get<std::string>()));
      if (img.channels() != kImageChannels || img.height() != d.image_size || img.width() != d.image_size) {
        throw FormatError(fmt::format("{} does not match the declared image size", f.get<std::string>()));
      }
      d.images.push_back(std::move(img));
    }
    d.split.train = m.at("split").at("train").get<std::vector<Index>>();
    d.split.val = m.at("split").at("val").get<std::vector<Index>>();
    d.split.test = m.at("split").at("test").get<std::vector<Index>>();
  } catch (nlohmann::json::exception const &e) {
    throw FormatError(dir.string() + ": " + e.what());
  }
  return d;
}

} // namespace urec::phantom
