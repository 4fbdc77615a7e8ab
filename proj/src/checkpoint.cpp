#include "urec/checkpoint.hpp"

#include <fmt/format.h>

#include <cmath>

namespace urec::io {

auto to_string(Stage stage) -> std::string
{
  switch (stage) {
  case Stage::S1:
    return "S1";
  case Stage::S2:
    return "S2";
  case Stage::S3:
    return "S3";
  case Stage::S4:
    return "S4";
  }
  return "?";
}

auto parse_stage(std::string const &text) -> Stage
{
  for (auto s : {Stage::S1, Stage::S2, Stage::S3, Stage::S4}) {
    if (to_string(s) == text) {
      return s;
    }
  }
  throw FormatError("unknown pipeline stage '" + text + "'");
}

auto to_json(net::Architecture const &arch) -> Json
{
  return Json{
      {"cascades", arch.cascades},
      {"conv_layers", arch.conv_layers},
      {"features", arch.features},
      {"kernel", arch.kernel},
      {"aspin", arch.aspin},
      {"eps", arch.eps},
      {"dc", arch.dc.describe()},
  };
}

auto architecture_from_json(Json const &j) -> net::Architecture
{
  net::Architecture a;
  a.cascades = j.at("cascades").get<int>();
  a.conv_layers = j.at("conv_layers").get<int>();
  a.features = j.at("features").get<int>();
  a.kernel = j.at("kernel").get<int>();
  a.aspin = j.at("aspin").get<bool>();
  a.eps = j.at("eps").get<double>();
  a.dc = kspace::DcMode::parse(j.at("dc").get<std::string>());
  a.validate();
  return a;
}

auto save_checkpoint(net::CascadeModel<float> const &model, Stage stage, fs::path const &dir) -> Checkpoint
{
  fs::create_directories(dir);
  Json entries = Json::array();
  for (auto const &p : model.parameters()) {
    StoredTensor t;
    for (auto d : p.shape) {
      t.shape.push_back(static_cast<std::uint32_t>(d));
    }
    t.values = p.value;
    auto const path = write_tensor(dir, p.name, t);
    entries.push_back({{"name", p.name}, {"shape", p.shape}, {"file", path.filename().string()}, {"trainable", p.trainable}});
  }
  Json manifest{
      {"format", "urec-checkpoint/1"},
      {"stage", to_string(stage)},
      {"architecture", to_json(model.arch())},
      {"anatomies", model.anatomies()},
      {"parameter_count", model.count_parameters(net::CountScope::Total)},
      {"parameters", entries},
  };
  write_json(dir / kCheckpointManifest, manifest);
  return {dir, stage};
}

auto load_checkpoint(fs::path const &dir) -> LoadedCheckpoint
{
  auto const manifest_path = dir / kCheckpointManifest;
  if (!fs::exists(manifest_path)) {
    throw IoError("no checkpoint manifest in " + dir.string());
  }
  auto const m = read_json(manifest_path);
  try {
    if (!m.contains("stage")) {
      throw FormatError("checkpoint manifest lacks a stage tag");
    }
    auto const stage = parse_stage(m.at("stage").get<std::string>());
    auto const arch = architecture_from_json(m.at("architecture"));
    auto anatomies = m.at("anatomies").get<std::vector<std::string>>();
    std::vector<net::Parameter<float>> params;
    for (auto const &e : m.at("parameters")) {
      net::Parameter<float> p;
      p.name = e.at("name").get<std::string>();
      p.shape = e.at("shape").get<std::vector<Index>>();
      p.trainable = e.at("trainable").get<bool>();
      auto const file = dir / e.at("file").get<std::string>();
      if (!fs::exists(file)) {
        throw IoError("checkpoint entry '" + p.name + "' refers to missing file " + file.string());
      }
      auto t = read_tensor(file);
      if (t.shape.size() != p.shape.size() ||
          !std::equal(t.shape.begin(), t.shape.end(), p.shape.begin(), [](std::uint32_t a, Index b) {
            return static_cast<Index>(a) == b;
          })) {
        throw ShapeError("stored tensor for '" + p.name + "' does not match the declared shape");
      }
      p.value = std::move(t.values);
      params.push_back(std::move(p));
    }
    if (!arch.aspin) {
      auto model = net::CascadeModel<float>::from_parameters(arch, {}, std::move(params));
      model.label_anatomies(std::move(anatomies));
      return {std::move(model), stage};
    }
    return {net::CascadeModel<float>::from_parameters(arch, std::move(anatomies), std::move(params)), stage};
  } catch (nlohmann::json::exception const &e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
}

auto psnr_to_json(double psnr_db) -> Json
{
  if (std::isinf(psnr_db) && psnr_db > 0) {
    return "inf";
  }
  return psnr_db;
}

auto psnr_from_json(Json const &j) -> double
{
  if (j.is_string() && j.get<std::string>() == "inf") {
    return std::numeric_limits<double>::infinity();
  }
  return j.get<double>();
}

void RunManifest::validate(fs::path const &base) const
{
  for (std::size_t i = 1; i < metrics.size(); i++) {
    if (metrics[i].epoch < metrics[i - 1].epoch) {
      throw FormatError(fmt::format(
          "metric rows go backwards in epoch: {} after {}", metrics[i].epoch, metrics[i - 1].epoch));
    }
  }
  for (auto const &c : checkpoints) {
    if (!fs::exists(base / c)) {
      throw FormatError("run manifest references missing path " + (base / c).string());
    }
  }
}

auto to_json(RunManifest const &m) -> Json
{
  Json rows = Json::array();
  for (auto const &r : m.metrics) {
    rows.push_back({{"epoch", r.epoch},
                    {"anatomy", r.anatomy},
                    {"split", r.split},
                    {"psnr_db", psnr_to_json(r.psnr_db)},
                    {"ssim_pct", r.ssim_pct},
                    {"mae", r.mae}});
  }
  return Json{
      {"format", "urec-run/1"},
      {"command", m.command},
      {"seed", m.seed},
      {"determinism", m.determinism},
      {"config", m.config},
      {"metrics", rows},
      {"checkpoints", m.checkpoints},
      {"results", m.results},
  };
}

auto run_manifest_from_json(Json const &j) -> RunManifest
{
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.determinism = j.at("determinism").get<std::string>();
    m.config = j.at("config");
    for (auto const &r : j.at("metrics")) {
      m.metrics.push_back({r.at("epoch").get<int>(),
                           r.at("anatomy").get<std::string>(),
                           r.at("split").get<std::string>(),
                           psnr_from_json(r.at("psnr_db")),
                           r.at("ssim_pct").get<double>(),
                           r.at("mae").get<double>()});
    }
    m.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    m.results = j.value("results", Json::object());
  } catch (nlohmann::json::exception const &e) {
    throw FormatError(std::string("run manifest: ") + e.what());
  }
  return m;
}

void save_run_manifest(fs::path const &dir, RunManifest const &m)
{
  fs::create_directories(dir);
  m.validate(dir);
  write_json(dir / kRunManifest, to_json(m));
}

auto load_run_manifest(fs::path const &dir) -> RunManifest
{
  auto const m = run_manifest_from_json(read_json(dir / kRunManifest));
  m.validate(dir);
  return m;
}

} // namespace urec::io
