#pragma once

#include "urec/common.hpp"
#include "urec/io_store.hpp"
#include "urec/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace urec::phantom {

/// Statistical signature of one synthetic anatomy. Distinct profiles give
/// datasets with measurably different intensity statistics.
struct AnatomyProfile
{
  int anatomy_id = 0;
  std::string name;
  double intensity_mean = 0.5;
  double contrast_scale = 0.3;
  int ellipses_min = 4;
  int ellipses_max = 8;
  double texture_frequency = 0.0;
  int dataset_size = 200;

  void validate() const;
  friend auto operator==(AnatomyProfile const &, AnatomyProfile const &) -> bool = default;
};

auto to_json(AnatomyProfile const &p) -> io::Json;
auto profile_from_json(io::Json const &j) -> AnatomyProfile;
auto load_profile(io::fs::path const &path) -> AnatomyProfile;

// brain, knee (large), cardiac, abdomen, prostate (small).
auto builtin_profiles() -> std::vector<AnatomyProfile>;
auto builtin_profile(std::string const &name) -> AnatomyProfile;

struct DatasetSplit
{
  std::vector<Index> train;
  std::vector<Index> val;
  std::vector<Index> test;

  friend auto operator==(DatasetSplit const &, DatasetSplit const &) -> bool = default;
};

/// Magnitude-only images: channel 0 in [0, 1], channel 1 zero. Image i
/// depends only on (profile, seed, i).
auto generate_image(AnatomyProfile const &profile, Index image_size, std::uint64_t seed, Index index)
    -> Tensor3<float>;
auto generate_dataset(AnatomyProfile const &profile, Index image_size, std::uint64_t seed)
    -> std::vector<Tensor3<float>>;

// Shuffled 80/10/10 partition of [0, n).
auto split_dataset(Index n, std::uint64_t seed) -> DatasetSplit;

// Centre crop when the source covers the target, bilinear resize otherwise.
template <typename T>
auto resize_or_crop(Tensor3<T> const &image, Index target) -> Tensor3<T>;

struct Dataset
{
  AnatomyProfile profile;
  Index image_size = 0;
  std::uint64_t seed = 0;
  std::vector<Tensor3<float>> images;
  DatasetSplit split;

  auto subset(std::vector<Index> const &indices) const -> std::vector<Tensor3<float>>;
};

auto make_dataset(AnatomyProfile const &profile, Index image_size, std::uint64_t seed) -> Dataset;

// Directory of one tensor file per image plus manifest.json.
void save_dataset(io::fs::path const &dir, Dataset const &dataset);
auto load_dataset(io::fs::path const &dir) -> Dataset;

} // namespace urec::phantom
