#pragma once

#include "urec/io_store.hpp"
#include "urec/rng.hpp"
#include "urec/tensor.hpp"

#include <string>

namespace urec::test {

inline auto random_tensor(Index c, Index h, Index w, std::uint64_t seed, double lo = -1.0, double hi = 1.0)
    -> Tensor3<double>
{
  Rng rng(seed);
  Tensor3<double> t(c, h, w);
  for (auto &v : t.values()) {
    v = rng.uniform(lo, hi);
  }
  return t;
}

inline auto dot(Tensor3<double> const &a, Tensor3<double> const &b) -> double
{
  double s = 0.0;
  for (Index i = 0; i < a.size(); i++) {
    s += a.data()[i] * b.data()[i];
  }
  return s;
}

// Fresh, empty directory under the system temp path.
class TempDir
{
public:
  explicit TempDir(std::string const &tag)
    : path_{io::fs::temp_directory_path() / ("urec_test_" + tag)}
  {
    io::fs::remove_all(path_);
    io::fs::create_directories(path_);
  }
  ~TempDir() { io::fs::remove_all(path_); }
  TempDir(TempDir const &) = delete;
  auto operator=(TempDir const &) -> TempDir & = delete;

  auto path() const -> io::fs::path const & { return path_; }
  auto operator/(std::string const &name) const -> io::fs::path { return path_ / name; }

private:
  io::fs::path path_;
};

inline auto relative_close(double analytic, double numeric, double tol, double floor = 1e-3) -> bool
{
  return std::abs(analytic - numeric) <= tol * std::max({std::abs(analytic), std::abs(numeric), floor});
}

} // namespace urec::test
