#include "urec/train.hpp"

#include "urec/distill.hpp"
#include "urec/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace urec::train {

namespace {

constexpr std::uint64_t kScheduleStream = 0x5c4ed;
constexpr std::uint64_t kMaskStream = 0x3a5c;
constexpr std::uint64_t kValidationStream = 0x7a11d;
constexpr std::uint64_t kInitStream = 0x1417;

using Model = net::CascadeModel<float>;

// One anatomy as seen by the trainer.
struct Slot
{
  AnatomyData const *data = nullptr;
  std::optional<int> model_anatomy; // set for models with a normalisation bank
  Model const *teacher = nullptr;
};

auto model_anatomy_for(Model const &model, std::string const &name) -> std::optional<int>
{
  if (!model.arch().aspin) {
    return std::nullopt;
  }
  return model.anatomy_index(name);
}

auto mae_loss_and_grad(Tensor3<float> const &pred, Tensor3<float> const &gt, float scale, Tensor3<float> &grad) -> double
{
  grad = Tensor3<float>(pred.channels(), pred.height(), pred.width());
  auto const p = pred.channel(0);
  auto const g = gt.channel(0);
  auto out = grad.channel(0);
  double sum = 0.0;
  float const w = scale / static_cast<float>(p.size());
  for (std::size_t i = 0; i < p.size(); i++) {
    float const d = p[i] - g[i];
    sum += std::abs(static_cast<double>(d));
    out[i] = d > 0.0f ? w : (d < 0.0f ? -w : 0.0f);
  }
  return sum / static_cast<double>(p.size());
}

auto mean_metrics(std::vector<metrics::MetricResult> const &rows) -> metrics::MetricResult
{
  metrics::MetricResult m{0.0, 0.0, 0.0, 0.0};
  if (rows.empty()) {
    return m;
  }
  for (auto const &r : rows) {
    m.psnr_db += r.psnr_db;
    m.ssim += r.ssim;
    m.mae += r.mae;
    m.data_range += r.data_range;
  }
  double const n = static_cast<double>(rows.size());
  m.psnr_db /= n;
  m.ssim /= n;
  m.mae /= n;
  m.data_range /= n;
  return m;
}

auto validation_config(TrainConfig const &config) -> EvalConfig
{
  EvalConfig e;
  e.accel = config.accels.front();
  e.center_fraction = config.center_fraction;
  e.mask_std_fraction = config.mask_std_fraction;
  e.seed = derive_seed(config.seed, kValidationStream);
  return e;
}

auto run_training(Model model, std::vector<Slot> const &slots, TrainConfig const &config, TrainerHooks const &hooks)
    -> TrainResult
{
  config.validate();
  bool const distilling = std::any_of(slots.begin(), slots.end(), [](Slot const &s) { return s.teacher != nullptr; });
  int const trace_layer = config.distill_layer;

  std::vector<Index> sizes;
  for (auto const &s : slots) {
    if (s.data->train.empty()) {
      throw ArgumentError("anatomy '" + s.data->name + "' has no training images");
    }
    sizes.push_back(static_cast<Index>(s.data->train.size()));
  }
  BatchSchedule const schedule(sizes, config.batch_size, derive_seed(config.seed, kScheduleStream));
  Adam adam(model, config.learning_rate, config.weight_decay);
  net::Gradients<float> grads(model);

  TrainResult result{model, {}, {}, 0};
  double best = std::numeric_limits<double>::infinity();
  auto const val_config = validation_config(config);
  Index iteration = 0;
  bool stop = false;

  for (int epoch = 1; epoch <= config.epochs && !stop; epoch++) {
    double epoch_loss = 0.0;
    Index epoch_batches = 0;
    for (auto const &batch : schedule.epoch(epoch)) {
      auto const &slot = slots[batch.anatomy];
      grads.zero();
      double batch_loss = 0.0;
      float const scale = 1.0f / static_cast<float>(batch.indices.size());
      for (auto idx : batch.indices) {
        auto const &gt = slot.data->train[idx];
        auto const mask_seed = training_mask_seed(config.seed, epoch, batch.anatomy, idx);
        double const accel = config.accels[mask_seed % config.accels.size()];
        auto const mask = kspace::make_gaussian_mask(
            gt.height(), gt.width(), accel, config.center_fraction, mask_seed, config.mask_std_fraction);
        auto const y = kspace::undersample(gt, mask);
        auto const x_u = kspace::zero_filled(y);

        net::ForwardCache<float> cache;
        net::ActivationTrace<float> student_trace;
        auto const pred = net::model_forward(
            model, x_u, y, mask, slot.model_anatomy, &cache, distilling ? &student_trace : nullptr, trace_layer);
        Tensor3<float> grad_out;
        double loss = mae_loss_and_grad(pred, gt, scale, grad_out);

        net::ActivationTrace<float> trace_grad;
        if (slot.teacher) {
          net::ActivationTrace<float> teacher_trace;
          net::model_forward<float>(*slot.teacher, x_u, y, mask, std::nullopt, nullptr, &teacher_trace, trace_layer);
          std::vector<distill::DistillPair<float>> pairs;
          for (std::size_t t = 0; t < student_trace.size(); t++) {
            pairs.push_back({teacher_trace[t], student_trace[t]});
          }
          auto const at = distill::total_at_loss(pairs, model.arch().cascades);
          loss += config.omega * at.value;
          float const w = static_cast<float>(config.omega) * scale;
          for (auto g : at.grad_student) {
            for (auto &v : g.values()) {
              v *= w;
            }
            trace_grad.push_back(std::move(g));
          }
        }
        net::model_backward(model, cache, mask, grad_out, grads, slot.teacher ? &trace_grad : nullptr, trace_layer);
        batch_loss += loss * static_cast<double>(scale);
      }
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError(fmt::format(
            "non-finite loss at epoch {} iteration {} (anatomy '{}')", epoch, iteration, slot.data->name));
      }
      adam.step(model, grads);
      if (hooks.after_step) {
        hooks.after_step(iteration, batch.anatomy, grads, model);
      }
      epoch_loss += batch_loss;
      epoch_batches++;
      iteration++;
      if (hooks.max_iterations && iteration >= *hooks.max_iterations) {
        stop = true;
        break;
      }
    }
    result.train_loss.push_back(epoch_batches ? epoch_loss / static_cast<double>(epoch_batches) : 0.0);

    double val_mae = 0.0;
    int val_sets = 0;
    for (auto const &slot : slots) {
      if (slot.data->val.empty()) {
        continue;
      }
      auto const table = evaluate(model, slot.data->val, slot.data->name, val_config);
      result.history.push_back({epoch, slot.data->name, "val", table.mean_model.psnr_db,
                                100.0 * table.mean_model.ssim, table.mean_model.mae});
      val_mae += table.mean_model.mae;
      val_sets++;
    }
    double const score = val_sets ? val_mae / val_sets : result.train_loss.back();
    if (score < best) {
      best = score;
      result.model = model;
      result.best_epoch = epoch;
    }
  }
  if (config.epochs > 0 && result.best_epoch == 0) {
    result.model = model;
  }
  return result;
}

} // namespace

void TrainConfig::validate() const
{
  if (epochs < 0) {
    throw ArgumentError("epochs must be non-negative");
  }
  if (batch_size < 1) {
    throw ArgumentError("batch size must be at least 1");
  }
  if (!(learning_rate > 0.0) || !(weight_decay >= 0.0)) {
    throw ArgumentError("learning rate must be positive and weight decay non-negative");
  }
  if (!(omega >= 0.0)) {
    throw ArgumentError("omega must be non-negative");
  }
  if (accels.empty()) {
    throw ArgumentError("at least one acceleration is required");
  }
  for (auto a : accels) {
    if (!(a > 1.0)) {
      throw ArgumentError(fmt::format("acceleration must exceed 1, got {}", a));
    }
  }
  if (distill_layer < 1 || distill_layer > architecture.conv_layers) {
    throw ArgumentError(fmt::format("distillation layer must lie in 1..{}", architecture.conv_layers));
  }
  architecture.validate();
}

auto to_json(TrainConfig const &c) -> io::Json
{
  return io::Json{
      {"stage", io::to_string(c.stage)},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"weight_decay", c.weight_decay},
      {"omega", c.omega},
      {"accels", c.accels},
      {"center_fraction", c.center_fraction},
      {"mask_std_fraction", c.mask_std_fraction},
      {"distill_layer", c.distill_layer},
      {"seed", c.seed},
      {"freeze_base", c.freeze_base},
      {"architecture", io::to_json(c.architecture)},
      {"anatomies", c.anatomies},
      {"optimizer", {{"name", "adam"}, {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}},
      {"loss", "mae(real channel)"},
      {"model_selection", "best mean validation MAE"},
      {"ssim", {{"window", 11}, {"sigma", 1.5}, {"k1", 0.01}, {"k2", 0.03}, {"data_range", "per-image max-min"}}},
  };
}

auto config_from_json(io::Json const &j, TrainConfig c) -> TrainConfig
{
  try {
    if (j.contains("stage")) {
      c.stage = io::parse_stage(j.at("stage").get<std::string>());
    }
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.omega = j.value("omega", c.omega);
    if (j.contains("accels")) {
      c.accels = j.at("accels").get<std::vector<double>>();
    }
    c.center_fraction = j.value("center_fraction", c.center_fraction);
    c.mask_std_fraction = j.value("mask_std_fraction", c.mask_std_fraction);
    c.distill_layer = j.value("distill_layer", c.distill_layer);
    c.seed = j.value("seed", c.seed);
    c.freeze_base = j.value("freeze_base", c.freeze_base);
    if (j.contains("architecture")) {
      auto merged = io::to_json(c.architecture);
      merged.update(j.at("architecture"));
      c.architecture = io::architecture_from_json(merged);
    }
    if (j.contains("anatomies")) {
      c.anatomies = j.at("anatomies").get<std::vector<std::string>>();
    }
  } catch (nlohmann::json::exception const &e) {
    throw FormatError(std::string("training config: ") + e.what());
  }
  return c;
}

auto anatomy_data(phantom::Dataset const &dataset) -> AnatomyData
{
  return {dataset.profile.name, dataset.subset(dataset.split.train), dataset.subset(dataset.split.val),
          dataset.subset(dataset.split.test)};
}

BatchSchedule::BatchSchedule(std::vector<Index> train_sizes, int batch_size, std::uint64_t seed)
  : sizes_{std::move(train_sizes)}
  , batch_size_{batch_size}
  , seed_{seed}
{
  if (sizes_.empty() || batch_size_ < 1) {
    throw ArgumentError("batch schedule needs at least one anatomy and a positive batch size");
  }
  for (auto s : sizes_) {
    if (s < 1) {
      throw ArgumentError("every anatomy in a batch schedule needs data");
    }
  }
}

auto BatchSchedule::iterations_per_epoch() const -> Index
{
  Index most = 0;
  for (auto s : sizes_) {
    most = std::max(most, (s + batch_size_ - 1) / batch_size_);
  }
  return most * static_cast<Index>(sizes_.size());
}

auto BatchSchedule::epoch(int e) const -> std::vector<Batch>
{
  int const a_count = static_cast<int>(sizes_.size());
  std::vector<std::vector<Batch>> per_anatomy(static_cast<std::size_t>(a_count));
  for (int a = 0; a < a_count; a++) {
    std::vector<Index> order(static_cast<std::size_t>(sizes_[a]));
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(a)));
    for (Index i = static_cast<Index>(order.size()) - 1; i > 0; i--) {
      std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i + 1))]);
    }
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size_)) {
      auto const end = std::min(order.size(), start + static_cast<std::size_t>(batch_size_));
      per_anatomy[a].push_back({a, std::vector<Index>(order.begin() + start, order.begin() + end)});
    }
  }
  auto const order = round_robin(a_count, iterations_per_epoch());
  std::vector<Batch> out;
  std::vector<std::size_t> cursor(static_cast<std::size_t>(a_count), 0);
  for (int a : order) {
    auto &list = per_anatomy[a];
    out.push_back(list[cursor[a] % list.size()]);
    cursor[a]++;
  }
  return out;
}

auto BatchSchedule::round_robin(int anatomies, Index iterations) -> std::vector<int>
{
  if (anatomies < 1) {
    throw ArgumentError("round-robin needs at least one anatomy");
  }
  std::vector<int> order(static_cast<std::size_t>(iterations));
  for (Index i = 0; i < iterations; i++) {
    order[i] = static_cast<int>(i % anatomies);
  }
  return order;
}

void FreezePolicy::apply(net::CascadeModel<float> &model, io::Stage stage, std::string const &new_anatomy)
{
  if (stage != io::Stage::S4) {
    model.set_all_trainable(true);
    return;
  }
  int const a = model.anatomy_index(new_anatomy);
  model.set_all_trainable(false);
  for (int site = 0; site < model.arch().site_count(); site++) {
    model.parameters()[model.gamma_index(a, site)].trainable = true;
    model.parameters()[model.beta_index(a, site)].trainable = true;
  }
}

auto FreezePolicy::trainable_count(net::CascadeModel<float> const &model) -> Index
{
  Index n = 0;
  for (auto const &p : model.parameters()) {
    n += p.trainable ? p.size() : 0;
  }
  return n;
}

Adam::Adam(net::CascadeModel<float> const &model, double learning_rate, double weight_decay)
  : lr_{learning_rate}
  , wd_{weight_decay}
{
  for (auto const &p : model.parameters()) {
    m_.emplace_back(p.value.size(), 0.0f);
    v_.emplace_back(p.value.size(), 0.0f);
  }
  t_.assign(m_.size(), 0);
}

void Adam::step(net::CascadeModel<float> &model, net::Gradients<float> const &grads)
{
  auto &params = model.parameters();
  if (params.size() != m_.size()) {
    throw Error("optimiser state does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); i++) {
    if (!params[i].trainable || !grads.computed[i]) {
      continue;
    }
    t_[i]++;
    double const bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_[i]));
    double const bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_[i]));
    auto &theta = params[i].value;
    auto const &g = grads.values[i];
    auto &m = m_[i];
    auto &v = v_[i];
    float const b1 = static_cast<float>(beta1_);
    float const b2 = static_cast<float>(beta2_);
    float const step = static_cast<float>(lr_ / bc1);
    float const inv_bc2 = static_cast<float>(1.0 / bc2);
    float const wd = static_cast<float>(wd_);
    float const eps = static_cast<float>(eps_);
    for (std::size_t k = 0; k < theta.size(); k++) {
      float const gk = g[k] + wd * theta[k];
      m[k] = b1 * m[k] + (1.0f - b1) * gk;
      v[k] = b2 * v[k] + (1.0f - b2) * gk * gk;
      theta[k] -= step * m[k] / (std::sqrt(v[k] * inv_bc2) + eps);
    }
  }
}

auto training_mask_seed(std::uint64_t seed, int epoch, int anatomy, Index image) -> std::uint64_t
{
  return derive_seed(derive_seed(seed, kMaskStream), derive_seed(static_cast<std::uint64_t>(epoch),
                                                                 static_cast<std::uint64_t>(anatomy)),
                     static_cast<std::uint64_t>(image));
}

auto train_independent(AnatomyData const &data, TrainConfig const &config, TrainerHooks const &hooks) -> TrainResult
{
  auto arch = config.architecture;
  arch.aspin = false;
  Model model(arch, derive_seed(config.seed, kInitStream));
  model.label_anatomies({data.name});
  FreezePolicy::apply(model, io::Stage::S1);
  return run_training(std::move(model), {{&data, std::nullopt, nullptr}}, config, hooks);
}

auto pretrain_universal(
    std::vector<AnatomyData> const &data,
    TrainConfig const &config,
    bool use_aspin,
    net::CascadeModel<float> const *init,
    TrainerHooks const &hooks) -> TrainResult
{
  if (data.size() < 2) {
    throw ArgumentError("universal pre-training needs at least two anatomies");
  }
  std::optional<Model> model;
  if (init) {
    model = *init;
  } else {
    auto arch = config.architecture;
    arch.aspin = use_aspin;
    model.emplace(arch, derive_seed(config.seed, kInitStream));
    if (use_aspin) {
      for (auto const &d : data) {
        model->add_anatomy(d.name);
      }
    } else {
      std::vector<std::string> names;
      for (auto const &d : data) {
        names.push_back(d.name);
      }
      model->label_anatomies(names);
    }
  }
  FreezePolicy::apply(*model, io::Stage::S2);
  std::vector<Slot> slots;
  for (auto const &d : data) {
    slots.push_back({&d, model_anatomy_for(*model, d.name), nullptr});
  }
  return run_training(std::move(*model), slots, config, hooks);
}

auto distill_universal(
    net::CascadeModel<float> const &student,
    std::map<std::string, net::CascadeModel<float>> const &teachers,
    std::vector<AnatomyData> const &data,
    TrainConfig const &config,
    TrainerHooks const &hooks) -> TrainResult
{
  if (!student.arch().aspin) {
    throw ArgumentError("distillation expects a universal student with anatomy-specific normalisation");
  }
  Model model = student;
  FreezePolicy::apply(model, io::Stage::S3);
  std::vector<Slot> slots;
  for (auto const &d : data) {
    auto it = teachers.find(d.name);
    if (it == teachers.end()) {
      throw ArgumentError("no teacher model for anatomy '" + d.name + "'");
    }
    if (it->second.arch().cascades != student.arch().cascades ||
        it->second.arch().features != student.arch().features ||
        it->second.arch().conv_layers != student.arch().conv_layers) {
      throw ShapeError("teacher for '" + d.name + "' has a different architecture; traces would not align");
    }
    slots.push_back({&d, model.anatomy_index(d.name), &it->second});
  }
  return run_training(std::move(model), slots, config, hooks);
}

auto adapt_new_anatomy(
    net::CascadeModel<float> const &base, AnatomyData const &data, TrainConfig const &config, TrainerHooks const &hooks)
    -> TrainResult
{
  if (!config.freeze_base) {
    throw ArgumentError("adaptation trains only the new anatomy's normalisation; base weights cannot be unfrozen");
  }
  Model model = base;
  int const a = model.add_anatomy(data.name);
  FreezePolicy::apply(model, io::Stage::S4, data.name);
  return run_training(std::move(model), {{&data, a, nullptr}}, config, hooks);
}

auto evaluate(
    net::CascadeModel<float> const &model,
    std::vector<Tensor3<float>> const &images,
    std::string const &anatomy,
    EvalConfig const &config) -> EvalTable
{
  if (images.empty()) {
    throw ArgumentError("evaluation needs at least one image");
  }
  auto const model_anatomy = model_anatomy_for(model, anatomy);
  EvalTable table;
  table.anatomy = anatomy;
  table.accel = config.accel;
  std::vector<metrics::MetricResult> ours, zf;
  for (std::size_t i = 0; i < images.size(); i++) {
    auto const &gt = images[i];
    auto const mask = kspace::make_gaussian_mask(
        gt.height(), gt.width(), config.accel, config.center_fraction,
        derive_seed(config.seed, static_cast<std::uint64_t>(i)), config.mask_std_fraction);
    auto const y = kspace::undersample(gt, mask);
    auto const x_u = kspace::zero_filled(y);
    auto const pred = net::model_forward(model, x_u, y, mask, model_anatomy);
    auto const truth = metrics::real_plane(gt);
    EvalRow row;
    row.image = static_cast<Index>(i);
    row.model = metrics::compare(metrics::real_plane(pred), truth, config.range);
    row.zero_filled = metrics::compare(metrics::real_plane(x_u), truth, config.range);
    ours.push_back(row.model);
    zf.push_back(row.zero_filled);
    table.rows.push_back(row);
  }
  table.mean_model = mean_metrics(ours);
  table.mean_zero_filled = mean_metrics(zf);
  return table;
}

auto to_json(EvalTable const &t) -> io::Json
{
  auto metric = [](metrics::MetricResult const &m) {
    return io::Json{{"psnr_db", io::psnr_to_json(m.psnr_db)}, {"ssim_pct", 100.0 * m.ssim}, {"mae", m.mae}};
  };
  io::Json rows = io::Json::array();
  for (auto const &r : t.rows) {
    rows.push_back({{"image", r.image}, {"model", metric(r.model)}, {"zero_filled", metric(r.zero_filled)}});
  }
  return io::Json{{"anatomy", t.anatomy},
                  {"accel", t.accel},
                  {"mean_model", metric(t.mean_model)},
                  {"mean_zero_filled", metric(t.mean_zero_filled)},
                  {"rows", rows}};
}

} // namespace urec::train
