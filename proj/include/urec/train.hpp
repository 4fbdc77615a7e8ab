#pragma once

#include "urec/checkpoint.hpp"
#include "urec/kspace.hpp"
#include "urec/metrics.hpp"
#include "urec/phantom.hpp"
#include "urec/recon_net.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace urec::train {

struct TrainConfig
{
  io::Stage stage = io::Stage::S1;
  int epochs = 10;
  int batch_size = 4;
  double learning_rate = 1e-3;
  double weight_decay = 1e-7;
  double omega = 1e-4;
  std::vector<double> accels{4.0};
  double center_fraction = kspace::kDefaultCenterFraction;
  double mask_std_fraction = kspace::kDefaultMaskStdFraction;
  int distill_layer = net::kDefaultTraceLayer;
  std::uint64_t seed = 0;
  bool freeze_base = true; // S4 only; false is rejected
  net::Architecture architecture = net::Architecture::d5c5();
  std::vector<std::string> anatomies;

  void validate() const;
};

auto to_json(TrainConfig const &c) -> io::Json;
// Missing keys keep the defaults of `base`.
auto config_from_json(io::Json const &j, TrainConfig base = {}) -> TrainConfig;

struct AnatomyData
{
  std::string name;
  std::vector<Tensor3<float>> train;
  std::vector<Tensor3<float>> val;
  std::vector<Tensor3<float>> test;
};

auto anatomy_data(phantom::Dataset const &dataset) -> AnatomyData;

struct Batch
{
  int anatomy = 0;
  std::vector<Index> indices;
};

/// Single-anatomy batches, anatomies alternating round-robin. Each anatomy's
/// training list is reshuffled every epoch; an anatomy with fewer batches
/// wraps around so every window of A iterations sees each anatomy once.
class BatchSchedule
{
public:
  BatchSchedule(std::vector<Index> train_sizes, int batch_size, std::uint64_t seed);

  auto epoch(int e) const -> std::vector<Batch>;
  auto iterations_per_epoch() const -> Index;

  static auto round_robin(int anatomies, Index iterations) -> std::vector<int>;

private:
  std::vector<Index> sizes_;
  int batch_size_;
  std::uint64_t seed_;
};

/// Trainable flags per pipeline stage: S1-S3 train everything; S4 trains only
/// the named anatomy's normalisation parameters.
struct FreezePolicy
{
  static void apply(net::CascadeModel<float> &model, io::Stage stage, std::string const &new_anatomy = {});
  static auto trainable_count(net::CascadeModel<float> const &model) -> Index;
};

/// Adam with L2 weight decay added to the gradient. Only tensors marked as
/// computed in the gradient set and trainable in the model are updated.
class Adam
{
public:
  Adam(net::CascadeModel<float> const &model, double learning_rate, double weight_decay);
  void step(net::CascadeModel<float> &model, net::Gradients<float> const &grads);

private:
  double lr_, wd_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::vector<std::vector<float>> m_, v_;
  std::vector<long> t_;
};

struct TrainResult
{
  net::CascadeModel<float> model;
  std::vector<io::MetricRow> history; // validation rows per epoch and anatomy
  std::vector<double> train_loss;     // mean batch loss per epoch
  int best_epoch = 0;                 // 0 = initial weights kept
};

struct TrainerHooks
{
  // Called after every optimiser step with (iteration, anatomy, gradients, model).
  std::function<void(Index, int, net::Gradients<float> const &, net::CascadeModel<float> const &)> after_step;
  std::optional<Index> max_iterations; // stop early, for inspection
};

auto train_independent(AnatomyData const &data, TrainConfig const &config, TrainerHooks const &hooks = {})
    -> TrainResult;

/// Round-robin training over several anatomies. With use_aspin the model
/// carries one normalisation set per anatomy; without it this is the plain
/// shared baseline. An initial model continues training from its weights.
auto pretrain_universal(
    std::vector<AnatomyData> const &data,
    TrainConfig const &config,
    bool use_aspin = true,
    net::CascadeModel<float> const *init = nullptr,
    TrainerHooks const &hooks = {}) -> TrainResult;

/// Fine-tunes a universal model with L = L_MAE + omega * L_AT, where the
/// teacher for each batch is the independent model of the batch's anatomy.
auto distill_universal(
    net::CascadeModel<float> const &student,
    std::map<std::string, net::CascadeModel<float>> const &teachers,
    std::vector<AnatomyData> const &data,
    TrainConfig const &config,
    TrainerHooks const &hooks = {}) -> TrainResult;

/// Inserts a normalisation set for a new anatomy and trains only that set.
auto adapt_new_anatomy(
    net::CascadeModel<float> const &base, AnatomyData const &data, TrainConfig const &config, TrainerHooks const &hooks = {})
    -> TrainResult;

struct EvalConfig
{
  double accel = 4.0;
  double center_fraction = kspace::kDefaultCenterFraction;
  double mask_std_fraction = kspace::kDefaultMaskStdFraction;
  std::uint64_t seed = 0;
  metrics::RangeMode range = metrics::RangeMode::PerImage;
};

struct EvalRow
{
  Index image = 0;
  metrics::MetricResult model;
  metrics::MetricResult zero_filled;
};

struct EvalTable
{
  std::string anatomy;
  double accel = 4.0;
  std::vector<EvalRow> rows;
  metrics::MetricResult mean_model;
  metrics::MetricResult mean_zero_filled;
};

// Per-image and mean metrics for the model and for the zero-filled input.
auto evaluate(
    net::CascadeModel<float> const &model,
    std::vector<Tensor3<float>> const &images,
    std::string const &anatomy,
    EvalConfig const &config) -> EvalTable;

auto to_json(EvalTable const &t) -> io::Json;

// Seed of the sampling mask drawn for one training image in one epoch.
auto training_mask_seed(std::uint64_t seed, int epoch, int anatomy, Index image) -> std::uint64_t;

struct DivergenceError : Error
{
  using Error::Error;
};

} // namespace urec::train
