#include "urec/checkpoint.hpp"
#include "urec/cli.hpp"
#include "urec/kspace.hpp"
#include "urec/metrics.hpp"
#include "urec/phantom.hpp"
#include "urec/recon_net.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace urec;

namespace {

using ImageArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using PlaneArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// Images cross the boundary as (2, H, W) float32 arrays: real and imaginary planes.
auto to_tensor(ImageArray const &a) -> Tensor3<float>
{
  if (a.ndim() != 3 || a.shape(0) != kImageChannels) {
    throw ShapeError("expected an image of shape (2, H, W)");
  }
  Tensor3<float> t(a.shape(0), a.shape(1), a.shape(2));
  std::copy_n(a.data(), t.size(), t.data());
  return t;
}

auto to_array(Tensor3<float> const &t) -> ImageArray
{
  ImageArray a({t.channels(), t.height(), t.width()});
  std::copy_n(t.data(), t.size(), a.mutable_data());
  return a;
}

auto to_plane(PlaneArray const &a) -> metrics::Plane
{
  if (a.ndim() != 2) {
    throw ShapeError("expected a 2-D array");
  }
  return Eigen::Map<metrics::Plane const>(a.data(), a.shape(0), a.shape(1));
}

auto to_mask(MaskArray const &columns, Index height) -> kspace::SamplingMask
{
  if (columns.ndim() != 1) {
    throw ShapeError("expected a 1-D column mask");
  }
  return kspace::SamplingMask::from_columns(height, {columns.data(), columns.data() + columns.size()});
}

auto parse_scope(std::string const &s) -> net::CountScope
{
  if (s == "base") {
    return net::CountScope::Base;
  }
  if (s == "per-anatomy") {
    return net::CountScope::PerAnatomy;
  }
  if (s == "total") {
    return net::CountScope::Total;
  }
  throw ArgumentError("scope must be base, per-anatomy or total");
}

class Model
{
public:
  explicit Model(std::string const &dir)
    : loaded_{io::load_checkpoint(dir)}
  {
  }

  auto stage() const -> std::string { return io::to_string(loaded_.stage); }
  auto anatomies() const -> std::vector<std::string> { return loaded_.model.anatomies(); }
  auto aspin() const -> bool { return loaded_.model.arch().aspin; }
  auto parameter_count() const -> Index { return loaded_.model.count_parameters(net::CountScope::Total); }

  auto reconstruct(ImageArray const &image, MaskArray const &columns, std::string const &anatomy) const -> ImageArray
  {
    auto const gt = to_tensor(image);
    auto const mask = to_mask(columns, gt.height());
    auto const y = kspace::undersample(gt, mask);
    std::optional<int> a;
    if (loaded_.model.arch().aspin) {
      a = loaded_.model.anatomy_index(anatomy);
    }
    Tensor3<float> out;
    {
      py::gil_scoped_release release;
      out = net::model_forward<float>(loaded_.model, kspace::zero_filled(y), y, mask, a);
    }
    return to_array(out);
  }

private:
  io::LoadedCheckpoint loaded_;
};

} // namespace

PYBIND11_MODULE(_urec, m)
{
  m.doc() = "Undersampled MRI reconstruction: k-space operators, phantoms, metrics and trained cascades.";

  // Translators run most recent first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);

  m.def(
      "fft2c",
      [](ImageArray const &image) {
        auto const k = kspace::fft2c(to_tensor(image));
        py::array_t<std::complex<float>> out({k.height(), k.width()});
        std::copy_n(k.data(), k.size(), out.mutable_data());
        return out;
      },
      py::arg("image"), "Centred orthonormal 2-D FFT of a (2, H, W) image; returns complex64 (H, W).");

  m.def(
      "ifft2c",
      [](py::array_t<std::complex<float>, py::array::c_style | py::array::forcecast> const &k) {
        if (k.ndim() != 2) {
          throw ShapeError("expected a 2-D k-space array");
        }
        kspace::KSpace<float> ks(k.shape(0), k.shape(1));
        std::copy_n(k.data(), ks.size(), ks.data());
        return to_array(kspace::ifft2c(ks));
      },
      py::arg("kspace"), "Inverse of fft2c; returns a (2, H, W) float32 image.");

  m.def(
      "gaussian_mask",
      [](Index height, Index width, double accel, double center_fraction, std::uint64_t seed, double std_fraction) {
        auto const mask = kspace::make_gaussian_mask(height, width, accel, center_fraction, seed, std_fraction);
        MaskArray out(std::vector<py::ssize_t>{width});
        std::copy(mask.columns.begin(), mask.columns.end(), out.mutable_data());
        return out;
      },
      py::arg("height"), py::arg("width"), py::arg("accel") = 4.0,
      py::arg("center_fraction") = kspace::kDefaultCenterFraction, py::arg("seed") = 0,
      py::arg("std_fraction") = kspace::kDefaultMaskStdFraction,
      "Column mask (uint8 per phase-encode line) with a Gaussian density around the centre.");

  m.def(
      "zero_filled",
      [](ImageArray const &image, MaskArray const &columns) {
        auto const gt = to_tensor(image);
        return to_array(kspace::zero_filled(kspace::undersample(gt, to_mask(columns, gt.height()))));
      },
      py::arg("image"), py::arg("mask"), "Zero-filled reconstruction of the image sampled with the column mask.");

  m.def(
      "psnr", [](PlaneArray const &pred, PlaneArray const &gt, double range) { return metrics::psnr(to_plane(pred), to_plane(gt), range); },
      py::arg("pred"), py::arg("gt"), py::arg("data_range") = 1.0);
  m.def(
      "ssim", [](PlaneArray const &pred, PlaneArray const &gt, double range) { return metrics::ssim(to_plane(pred), to_plane(gt), range); },
      py::arg("pred"), py::arg("gt"), py::arg("data_range") = 1.0);
  m.def(
      "mae", [](PlaneArray const &pred, PlaneArray const &gt) { return metrics::mae(to_plane(pred), to_plane(gt)); },
      py::arg("pred"), py::arg("gt"));

  m.def(
      "count_parameters",
      [](int anatomies, std::string const &scope) {
        return net::count_parameters(net::Architecture::universal(), anatomies, parse_scope(scope));
      },
      py::arg("anatomies") = 0, py::arg("scope") = "base",
      "Parameter count of the 5-cascade, 5-layer network; scope is base, per-anatomy or total.");

  m.def("builtin_profiles", [] {
    std::vector<std::string> names;
    for (auto const &p : phantom::builtin_profiles()) {
      names.push_back(p.name);
    }
    return names;
  });

  m.def(
      "phantom",
      [](std::string const &profile, Index size, std::uint64_t seed, Index index) {
        return to_array(phantom::generate_image(phantom::builtin_profile(profile), size, seed, index));
      },
      py::arg("profile"), py::arg("size") = 64, py::arg("seed") = 0, py::arg("index") = 0,
      "One synthetic image of a built-in anatomy profile as a (2, H, W) float32 array.");

  m.def(
      "run_cli",
      [](std::vector<std::string> const &args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a urec subcommand in-process; returns (exit_code, stdout, stderr).");

  py::class_<Model>(m, "Model", "A trained cascade loaded from a checkpoint directory.")
      .def(py::init<std::string const &>(), py::arg("checkpoint_dir"))
      .def_property_readonly("stage", &Model::stage)
      .def_property_readonly("anatomies", &Model::anatomies)
      .def_property_readonly("aspin", &Model::aspin)
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def("reconstruct", &Model::reconstruct, py::arg("image"), py::arg("mask"), py::arg("anatomy") = "",
           "Undersamples the image with the mask and returns the network reconstruction.");
}
