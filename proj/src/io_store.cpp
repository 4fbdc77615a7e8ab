#include "urec/io_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace urec::io {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
void put_le(std::vector<std::byte> &out, U v)
{
  for (std::size_t i = 0; i < sizeof(U); i++) {
    out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
  }
}

auto get_u32(std::span<std::byte const> b, std::size_t at) -> std::uint32_t
{
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; i++) {
    v |= std::to_integer<std::uint32_t>(b[at + i]) << (8 * i);
  }
  return v;
}

} // namespace

auto StoredTensor::element_count() const -> std::size_t
{
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, [](std::size_t a, std::uint32_t d) {
    return a * d;
  });
}

auto encode_tensor(StoredTensor const &tensor) -> std::vector<std::byte>
{
  if (tensor.shape.size() > kMaxRank) {
    throw ArgumentError("tensor rank " + std::to_string(tensor.shape.size()) + " exceeds 4");
  }
  if (tensor.element_count() != tensor.values.size()) {
    throw ShapeError(
        "tensor has " + std::to_string(tensor.values.size()) + " values but shape implies " +
        std::to_string(tensor.element_count()));
  }
  for (float v : tensor.values) {
    if (!std::isfinite(v)) {
      throw ArgumentError("refusing to write non-finite tensor value");
    }
  }
  std::vector<std::byte> out;
  out.reserve(10 + 4 * tensor.shape.size() + 4 * tensor.values.size());
  for (char c : kTensorMagic) {
    out.push_back(static_cast<std::byte>(c));
  }
  out.push_back(static_cast<std::byte>(kDtypeF32));
  out.push_back(static_cast<std::byte>(tensor.shape.size()));
  for (auto d : tensor.shape) {
    put_le(out, d);
  }
  for (float v : tensor.values) {
    put_le(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

auto decode_tensor(std::span<std::byte const> bytes) -> StoredTensor
{
  if (bytes.size() < 10) {
    throw FormatError("tensor file shorter than its header");
  }
  if (std::memcmp(bytes.data(), kTensorMagic, 8) != 0) {
    throw FormatError("bad tensor magic");
  }
  auto const dtype = std::to_integer<std::uint8_t>(bytes[8]);
  if (dtype != kDtypeF32) {
    throw FormatError("unsupported tensor dtype " + std::to_string(dtype));
  }
  std::size_t const rank = std::to_integer<std::size_t>(bytes[9]);
  if (rank > kMaxRank) {
    throw FormatError("tensor rank " + std::to_string(rank) + " exceeds 4");
  }
  if (bytes.size() < 10 + 4 * rank) {
    throw FormatError("truncated tensor shape");
  }
  StoredTensor t;
  for (std::size_t i = 0; i < rank; i++) {
    t.shape.push_back(get_u32(bytes, 10 + 4 * i));
  }
  std::size_t const n = t.element_count();
  std::size_t const payload_at = 10 + 4 * rank;
  if (bytes.size() - payload_at != 4 * n) {
    throw FormatError(
        "tensor payload is " + std::to_string(bytes.size() - payload_at) + " bytes, expected " +
        std::to_string(4 * n));
  }
  t.values.resize(n);
  for (std::size_t i = 0; i < n; i++) {
    t.values[i] = std::bit_cast<float>(get_u32(bytes, payload_at + 4 * i));
  }
  return t;
}

auto read_bytes(fs::path const &path) -> std::vector<std::byte>
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  in.seekg(0, std::ios::end);
  auto const size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char *>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) {
    throw IoError("failed reading " + path.string());
  }
  return bytes;
}

void write_bytes(fs::path const &path, std::span<std::byte const> bytes)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out.write(reinterpret_cast<char const *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("failed writing " + path.string());
  }
}

auto write_tensor(fs::path const &dir, std::string const &name, StoredTensor const &tensor) -> fs::path
{
  auto const bytes = encode_tensor(tensor);
  auto path = dir / (name + kTensorExtension);
  write_bytes(path, bytes);
  return path;
}

auto read_tensor(fs::path const &path) -> StoredTensor { return decode_tensor(read_bytes(path)); }

template <typename T>
auto to_stored(Tensor3<T> const &t) -> StoredTensor
{
  StoredTensor s;
  s.shape = {static_cast<std::uint32_t>(t.channels()), static_cast<std::uint32_t>(t.height()),
             static_cast<std::uint32_t>(t.width())};
  s.values.assign(t.values().begin(), t.values().end());
  return s;
}

template auto to_stored(Tensor3<float> const &) -> StoredTensor;
template auto to_stored(Tensor3<double> const &) -> StoredTensor;

auto to_tensor3(StoredTensor const &s) -> Tensor3<float>
{
  if (s.shape.size() != 3) {
    throw ShapeError("expected a rank-3 tensor, got rank " + std::to_string(s.shape.size()));
  }
  Tensor3<float> t(s.shape[0], s.shape[1], s.shape[2]);
  std::copy(s.values.begin(), s.values.end(), t.data());
  return t;
}

auto read_json(fs::path const &path) -> Json
{
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  try {
    return Json::parse(in);
  } catch (nlohmann::json::parse_error const &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(fs::path const &path, Json const &value)
{
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out << value.dump(2) << '\n';
}

} // namespace urec::io
