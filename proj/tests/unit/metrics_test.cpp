#include "helpers.hpp"

#include "urec/metrics.hpp"

#include <doctest.h>

#include <cmath>

using namespace urec;
using metrics::Plane;

namespace {

template <typename F>
auto plane(Index rows, Index cols, F f) -> Plane
{
  Plane p(rows, cols);
  for (Index y = 0; y < rows; y++) {
    for (Index x = 0; x < cols; x++) {
      p(y, x) = f(static_cast<double>(x), static_cast<double>(y));
    }
  }
  return p;
}

auto noisy(Plane const &gt, double sigma, std::uint64_t seed) -> Plane
{
  Rng rng(seed);
  Plane p = gt;
  for (Index i = 0; i < p.size(); i++) {
    p.data()[i] += sigma * rng.uniform(-1.0, 1.0);
  }
  return p;
}

} // namespace

TEST_SUITE("metrics")
{
  // Reference values computed with scikit-image's structural_similarity
  // (gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1).
  TEST_CASE("SSIM matches frozen reference values")
  {
    auto const gt = plane(16, 16, [](double x, double y) {
      return std::fmod(std::floor(x / 4) + std::floor(y / 4), 2.0);
    });
    Plane const inv = 1.0 - gt;
    CHECK(metrics::ssim(inv, gt, 1.0) == doctest::Approx(-0.8722577658236664).epsilon(1e-9));

    auto const gt2 = plane(16, 16, [](double x, double y) { return std::fmod(x * 7 + y * 13, 17.0) / 16.0; });
    auto const pred2 = plane(16, 16, [&](double x, double y) {
      return gt2(static_cast<Index>(y), static_cast<Index>(x)) + 0.05 * std::sin(x + 2 * y);
    });
    CHECK(metrics::ssim(pred2, gt2, 1.0) == doctest::Approx(0.9935021536662261).epsilon(1e-9));

    auto const gt3 = plane(20, 24, [](double x, double y) { return std::cos(0.3 * x) * std::sin(0.2 * y) * 0.5 + 0.5; });
    auto const pred3 = plane(20, 24, [&](double x, double y) {
      return std::clamp(gt3(static_cast<Index>(y), static_cast<Index>(x)) + 0.1 * std::cos(1.7 * x + 0.9 * y), 0.0, 1.0);
    });
    CHECK(metrics::ssim(pred3, gt3, 1.0) == doctest::Approx(0.8701715478104092).epsilon(1e-9));
  }

  TEST_CASE("PSNR of a uniform offset")
  {
    auto const gt = plane(16, 16, [](double x, double y) { return (x + y) / 40.0; });
    Plane const pred = gt + 0.1;
    CHECK(std::abs(metrics::psnr(pred, gt, 1.0) - 20.0) <= 1e-6);
    CHECK(std::abs(metrics::psnr(gt - 0.01, gt, 1.0) - 40.0) <= 1e-6);
  }

  TEST_CASE("identity cases")
  {
    auto const gt = plane(16, 16, [](double x, double y) { return std::sin(x) * std::cos(y); });
    CHECK(std::isinf(metrics::psnr(gt, gt, 1.0)));
    CHECK(metrics::ssim(gt, gt, 1.0) == 1.0);
    CHECK(metrics::mae(gt, gt) == 0.0);
    auto const r = metrics::compare(gt, gt);
    CHECK(std::isinf(r.psnr_db));
    CHECK(r.ssim == 1.0);
    CHECK(r.mae == 0.0);
  }

  TEST_CASE("symmetry and MAE triangle inequality")
  {
    auto const a = plane(16, 16, [](double x, double y) { return 0.5 + 0.4 * std::sin(0.7 * x + 0.3 * y); });
    auto const b = noisy(a, 0.1, 1);
    auto const c = noisy(a, 0.2, 2);
    CHECK(metrics::ssim(a, b, 1.0) == doctest::Approx(metrics::ssim(b, a, 1.0)).epsilon(1e-12));
    CHECK(metrics::psnr(a, b, 1.0) == doctest::Approx(metrics::psnr(b, a, 1.0)).epsilon(1e-12));
    CHECK(metrics::mae(a, c) <= metrics::mae(a, b) + metrics::mae(b, c) + 1e-15);
  }

  TEST_CASE("metrics degrade monotonically with noise")
  {
    auto const gt = plane(32, 32, [](double x, double y) { return 0.5 + 0.4 * std::cos(0.4 * x) * std::sin(0.3 * y); });
    double prev_psnr = std::numeric_limits<double>::infinity();
    double prev_ssim = 1.0;
    double prev_mae = 0.0;
    for (double sigma : {0.01, 0.03, 0.1, 0.3}) {
      auto const pred = noisy(gt, sigma, 4);
      auto const r = metrics::compare(pred, gt, metrics::RangeMode::Fixed, 1.0);
      CHECK(r.psnr_db < prev_psnr);
      CHECK(r.ssim < prev_ssim);
      CHECK(r.mae > prev_mae);
      prev_psnr = r.psnr_db;
      prev_ssim = r.ssim;
      prev_mae = r.mae;
    }
  }

  TEST_CASE("data range")
  {
    auto const gt = plane(16, 16, [](double x, double) { return 0.2 + 0.01 * x; });
    CHECK(metrics::data_range_of(gt) == doctest::Approx(0.15));
    Plane const flat = Plane::Constant(16, 16, 0.3);
    CHECK(metrics::data_range_of(flat) == 1.0);
    auto const r = metrics::compare(gt + 0.015, gt);
    CHECK(r.data_range == doctest::Approx(0.15));
    CHECK(r.psnr_db == doctest::Approx(20.0));
  }

  TEST_CASE("argument validation")
  {
    Plane const small = Plane::Zero(8, 8);
    CHECK_THROWS(metrics::ssim(small, small, 1.0));
    CHECK_THROWS(metrics::psnr(Plane::Zero(16, 16), Plane::Zero(16, 15), 1.0));
    CHECK_THROWS(metrics::psnr(Plane::Zero(16, 16), Plane::Zero(16, 16), 0.0));
  }

  TEST_CASE("real channel extraction")
  {
    Tensor3<float> t(2, 2, 3);
    t(0, 1, 2) = 0.5f;
    t(1, 1, 2) = 9.0f;
    auto const p = metrics::real_plane(t);
    CHECK(p.rows() == 2);
    CHECK(p.cols() == 3);
    CHECK(p(1, 2) == 0.5);
  }
}
