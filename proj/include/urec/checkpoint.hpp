#pragma once

#include "urec/io_store.hpp"
#include "urec/recon_net.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace urec::io {

// S1 independent, S2 universal pre-training, S3 distillation, S4 adaptation.
enum struct Stage
{
  S1,
  S2,
  S3,
  S4,
};

auto to_string(Stage stage) -> std::string;
auto parse_stage(std::string const &text) -> Stage;

auto to_json(net::Architecture const &arch) -> Json;
auto architecture_from_json(Json const &j) -> net::Architecture;

inline constexpr char const *kCheckpointManifest = "checkpoint.json";

struct Checkpoint
{
  fs::path dir;
  Stage stage = Stage::S1;
};

/// Writes one tensor file per parameter plus checkpoint.json listing names,
/// shapes, trainable flags, the anatomy registry and the stage tag.
auto save_checkpoint(net::CascadeModel<float> const &model, Stage stage, fs::path const &dir) -> Checkpoint;

struct LoadedCheckpoint
{
  net::CascadeModel<float> model;
  Stage stage;
};

auto load_checkpoint(fs::path const &dir) -> LoadedCheckpoint;

// PSNR may be +inf; JSON carries that as the string "inf".
auto psnr_to_json(double psnr_db) -> Json;
auto psnr_from_json(Json const &j) -> double;

struct MetricRow
{
  int epoch = 0;
  std::string anatomy;
  std::string split;
  double psnr_db = 0.0;
  double ssim_pct = 0.0;
  double mae = 0.0;

  friend auto operator==(MetricRow const &, MetricRow const &) -> bool = default;
};

inline constexpr char const *kRunManifest = "run_manifest.json";

/// Record of one command: resolved configuration, seed, per-epoch metrics and
/// produced artefacts. Paths are relative to the manifest's directory.
struct RunManifest
{
  std::string command;
  Json config = Json::object();
  std::uint64_t seed = 0;
  std::string determinism = "bit-exact";
  std::vector<MetricRow> metrics;
  std::vector<std::string> checkpoints;
  Json results = Json::object(); // command-specific payload (evaluation tables, reports)

  // Epoch indices never decrease and every referenced path exists under base.
  void validate(fs::path const &base) const;
};

auto to_json(RunManifest const &m) -> Json;
auto run_manifest_from_json(Json const &j) -> RunManifest;
void save_run_manifest(fs::path const &dir, RunManifest const &m);
auto load_run_manifest(fs::path const &dir) -> RunManifest;

} // namespace urec::io
