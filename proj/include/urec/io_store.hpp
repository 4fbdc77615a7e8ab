#pragma once

#include "urec/common.hpp"
#include "urec/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace urec::io {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

/*
 * Tensor file layout (all integers little-endian):
 *
 *   offset 0   8 bytes   magic "URECTNSR"
 *   offset 8   1 byte    dtype (0 = f32)
 *   offset 9   1 byte    rank r, 0 <= r <= 4
 *   offset 10  4r bytes  shape, uint32 per dimension
 *   then       4n bytes  f32 payload, row-major, n = product(shape)
 */
inline constexpr char kTensorMagic[8] = {'U', 'R', 'E', 'C', 'T', 'N', 'S', 'R'};
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::size_t kMaxRank = 4;
inline constexpr char const *kTensorExtension = ".urt";

struct StoredTensor
{
  std::vector<std::uint32_t> shape;
  std::vector<float> values;

  auto element_count() const -> std::size_t;
  friend auto operator==(StoredTensor const &, StoredTensor const &) -> bool = default;
};

auto encode_tensor(StoredTensor const &tensor) -> std::vector<std::byte>;
auto decode_tensor(std::span<std::byte const> bytes) -> StoredTensor;

// Writes dir/<name>.urt and returns the path.
auto write_tensor(fs::path const &dir, std::string const &name, StoredTensor const &tensor) -> fs::path;
auto read_tensor(fs::path const &path) -> StoredTensor;

template <typename T>
auto to_stored(Tensor3<T> const &t) -> StoredTensor;
auto to_tensor3(StoredTensor const &s) -> Tensor3<float>;

auto read_json(fs::path const &path) -> Json;
void write_json(fs::path const &path, Json const &value);

auto read_bytes(fs::path const &path) -> std::vector<std::byte>;
void write_bytes(fs::path const &path, std::span<std::byte const> bytes);

} // namespace urec::io
