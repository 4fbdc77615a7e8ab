#include "urec/cli.hpp"

#include "urec/checkpoint.hpp"
#include "urec/phantom.hpp"
#include "urec/report.hpp"
#include "urec/train.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <functional>

namespace urec::cli {

namespace {

namespace fs = io::fs;
using io::Json;

struct Common
{
  std::string config;
  std::string out;
  int epochs = 0;
  int batch_size = 0;
  double lr = 0.0;
  double wd = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> accels;
  std::string dc;

  CLI::Option *epochs_opt = nullptr;
  CLI::Option *batch_opt = nullptr;
  CLI::Option *lr_opt = nullptr;
  CLI::Option *wd_opt = nullptr;
  CLI::Option *seed_opt = nullptr;
  CLI::Option *accel_opt = nullptr;
  CLI::Option *dc_opt = nullptr;
};

void add_training_flags(CLI::App *cmd, Common &c)
{
  cmd->add_option("--config", c.config, "Training config or run manifest (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "Output directory")->required();
  c.epochs_opt = cmd->add_option("--epochs", c.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  c.batch_opt = cmd->add_option("--batch-size", c.batch_size, "Images per batch")->check(CLI::PositiveNumber);
  c.lr_opt = cmd->add_option("--lr", c.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  c.wd_opt = cmd->add_option("--weight-decay", c.wd, "L2 weight decay")->check(CLI::NonNegativeNumber);
  c.seed_opt = cmd->add_option("--seed", c.seed, "Global seed");
  c.accel_opt = cmd->add_option("--accel", c.accels, "Training acceleration(s)");
  c.dc_opt = cmd->add_option("--dc-mode", c.dc, "hard or soft:<lambda>");
}

// Loads a config file; a run manifest contributes its recorded config.
auto config_file(std::string const &path) -> Json
{
  if (path.empty()) {
    return Json::object();
  }
  auto j = io::read_json(path);
  if (j.contains("command") && j.contains("config")) {
    j = j.at("config");
  }
  if (!j.is_object()) {
    throw FormatError("config file " + path + " must hold a JSON object");
  }
  return j;
}

// Precedence: explicit flag, then config file, then defaults.
auto resolve(io::Stage stage, Common const &c, Json const &file) -> train::TrainConfig
{
  auto cfg = train::config_from_json(file);
  cfg.stage = stage;
  if (c.epochs_opt->count()) {
    cfg.epochs = c.epochs;
  }
  if (c.batch_opt->count()) {
    cfg.batch_size = c.batch_size;
  }
  if (c.lr_opt->count()) {
    cfg.learning_rate = c.lr;
  }
  if (c.wd_opt->count()) {
    cfg.weight_decay = c.wd;
  }
  if (c.seed_opt->count()) {
    cfg.seed = c.seed;
  }
  if (c.accel_opt->count()) {
    cfg.accels = c.accels;
  }
  if (c.dc_opt->count()) {
    cfg.architecture.dc = kspace::DcMode::parse(c.dc);
  }
  cfg.validate();
  return cfg;
}

auto inputs_from(Json const &file, char const *key, std::vector<std::string> flag) -> std::vector<std::string>
{
  if (!flag.empty()) {
    return flag;
  }
  if (file.contains("inputs") && file.at("inputs").contains(key)) {
    auto const &v = file.at("inputs").at(key);
    return v.is_array() ? v.get<std::vector<std::string>>() : std::vector<std::string>{v.get<std::string>()};
  }
  return {};
}

auto absolute(std::vector<std::string> const &paths) -> std::vector<std::string>
{
  std::vector<std::string> out;
  for (auto const &p : paths) {
    out.push_back(fs::absolute(p).lexically_normal().string());
  }
  return out;
}

auto load_data(std::vector<std::string> const &dirs) -> std::vector<train::AnatomyData>
{
  std::vector<train::AnatomyData> out;
  for (auto const &d : dirs) {
    out.push_back(train::anatomy_data(phantom::load_dataset(d)));
  }
  return out;
}

void print_history(std::ostream &out, train::TrainResult const &r)
{
  for (auto const &row : r.history) {
    out << fmt::format("epoch {:3d}  {:<10} val  PSNR {:7.3f} dB  SSIM {:6.2f} %  MAE {:.5f}\n", row.epoch,
                       row.anatomy, row.psnr_db, row.ssim_pct, row.mae);
  }
  out << fmt::format("selected epoch {}\n", r.best_epoch);
}

auto finish_training(
    std::string const &command,
    train::TrainConfig const &cfg,
    Json inputs,
    train::TrainResult const &result,
    fs::path const &out_dir,
    Json extra,
    std::ostream &out) -> void
{
  fs::create_directories(out_dir);
  io::save_checkpoint(result.model, cfg.stage, out_dir / "checkpoint");
  io::RunManifest m;
  m.command = command;
  m.config = train::to_json(cfg);
  m.config["inputs"] = std::move(inputs);
  m.seed = cfg.seed;
  m.metrics = result.history;
  m.checkpoints = {"checkpoint"};
  m.results = Json{{"best_epoch", result.best_epoch},
                   {"train_loss", result.train_loss},
                   {"anatomies", result.model.anatomies()},
                   {"parameters", result.model.count_parameters(net::CountScope::Total)},
                   {"trainable_parameters", train::FreezePolicy::trainable_count(result.model)}};
  m.results.update(extra);
  io::save_run_manifest(out_dir, m);
  print_history(out, result);
  out << fmt::format("wrote {}\n", (out_dir / "checkpoint").string());
}

void write_text(fs::path const &path, std::string const &text)
{
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) {
    throw IoError("cannot write " + path.string());
  }
}

auto single(std::vector<std::string> const &v, char const *what) -> std::string
{
  if (v.size() != 1) {
    throw ArgumentError(fmt::format("expected exactly one {}", what));
  }
  return v.front();
}

} // namespace

auto run(std::vector<std::string> args, std::ostream &out, std::ostream &err) -> int
{
  CLI::App app{"Undersampled MRI reconstruction toolkit", "urec"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  std::function<void()> action;

  // gen-data
  std::string profile_arg;
  Index size = 64;
  Index count = 0;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  auto *gen = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset");
  gen->add_option("--anatomy-profile", profile_arg, "Profile JSON file or built-in name")->required();
  gen->add_option("--size", size, "Image side length")->check(CLI::PositiveNumber);
  gen->add_option("--count", count, "Number of images (default from profile)")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Generation seed");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->callback([&] {
    action = [&] {
      auto profile = fs::is_regular_file(profile_arg) ? phantom::load_profile(profile_arg)
                                                     : phantom::builtin_profile(profile_arg);
      if (count > 0) {
        profile.dataset_size = count;
      }
      profile.validate();
      auto const ds = phantom::make_dataset(profile, size, gen_seed);
      phantom::save_dataset(gen_out, ds);
      io::RunManifest m;
      m.command = "gen-data";
      m.config = Json{{"profile", phantom::to_json(profile)},
                      {"size", size},
                      {"seed", gen_seed},
                      {"inputs", {{"profile", profile_arg}}}};
      m.seed = gen_seed;
      m.results = Json{{"images", ds.images.size()},
                       {"train", ds.split.train.size()},
                       {"val", ds.split.val.size()},
                       {"test", ds.split.test.size()}};
      io::save_run_manifest(gen_out, m);
      out << fmt::format("{}: {} images of {}x{} (train {}, val {}, test {}) -> {}\n", profile.name,
                         ds.images.size(), size, size, ds.split.train.size(), ds.split.val.size(),
                         ds.split.test.size(), gen_out);
    };
  });

  // train-independent
  Common s1;
  std::vector<std::string> s1_data;
  auto *ti = app.add_subcommand("train-independent", "Train a single-anatomy model");
  add_training_flags(ti, s1);
  ti->add_option("--data", s1_data, "Dataset directory");
  ti->callback([&] {
    action = [&] {
      auto const file = config_file(s1.config);
      auto cfg = resolve(io::Stage::S1, s1, file);
      auto const data_dirs = absolute(inputs_from(file, "data", s1_data));
      auto const data = load_data({single(data_dirs, "--data")});
      cfg.anatomies = {data[0].name};
      auto const result = train::train_independent(data[0], cfg);
      finish_training("train-independent", cfg, Json{{"data", data_dirs}}, result, s1.out, Json::object(), out);
    };
  });

  // pretrain-universal
  Common s2;
  std::vector<std::string> s2_data;
  std::string s2_init;
  bool no_aspin = false;
  auto *pu = app.add_subcommand("pretrain-universal", "Round-robin training over several anatomies");
  add_training_flags(pu, s2);
  pu->add_option("--data", s2_data, "Dataset directories (one per anatomy)");
  pu->add_option("--init", s2_init, "Checkpoint to continue from")->check(CLI::ExistingDirectory);
  pu->add_flag("--no-aspin", no_aspin, "Shared normalisation-free baseline");
  pu->callback([&] {
    action = [&] {
      auto const file = config_file(s2.config);
      auto cfg = resolve(io::Stage::S2, s2, file);
      auto const data_dirs = absolute(inputs_from(file, "data", s2_data));
      auto const data = load_data(data_dirs);
      cfg.anatomies.clear();
      for (auto const &d : data) {
        cfg.anatomies.push_back(d.name);
      }
      Json inputs{{"data", data_dirs}, {"aspin", !no_aspin}};
      std::optional<io::LoadedCheckpoint> init;
      if (!s2_init.empty()) {
        init = io::load_checkpoint(s2_init);
        inputs["init"] = fs::absolute(s2_init).lexically_normal().string();
      }
      auto const result = train::pretrain_universal(data, cfg, !no_aspin, init ? &init->model : nullptr);
      finish_training("pretrain-universal", cfg, inputs, result, s2.out, Json{{"aspin", !no_aspin}}, out);
    };
  });

  // distill
  Common s3;
  std::vector<std::string> s3_data, s3_teachers;
  std::string s3_base;
  double omega = 0.0;
  int layer = 0;
  auto *di = app.add_subcommand("distill", "Attention-transfer fine-tuning from independent teachers");
  add_training_flags(di, s3);
  di->add_option("--base", s3_base, "Universal checkpoint (student)");
  di->add_option("--teacher", s3_teachers, "Independent checkpoints, one per anatomy");
  di->add_option("--data", s3_data, "Dataset directories");
  auto *omega_opt = di->add_option("--omega", omega, "Attention-transfer weight")->check(CLI::NonNegativeNumber);
  auto *layer_opt = di->add_option("--distill-layer", layer, "Traced convolution layer")->check(CLI::Range(1, 64));
  di->callback([&] {
    action = [&] {
      auto const file = config_file(s3.config);
      auto cfg = resolve(io::Stage::S3, s3, file);
      if (omega_opt->count()) {
        cfg.omega = omega;
      }
      if (layer_opt->count()) {
        cfg.distill_layer = layer;
      }
      auto const base_dir = absolute(inputs_from(file, "base", s3_base.empty() ? std::vector<std::string>{}
                                                                                 : std::vector<std::string>{s3_base}));
      auto const teacher_dirs = absolute(inputs_from(file, "teachers", s3_teachers));
      auto const data_dirs = absolute(inputs_from(file, "data", s3_data));
      auto const student = io::load_checkpoint(single(base_dir, "--base")).model;
      cfg.architecture = student.arch();
      cfg.validate();
      std::map<std::string, net::CascadeModel<float>> teachers;
      for (auto const &t : teacher_dirs) {
        auto teacher = io::load_checkpoint(t).model;
        if (teacher.anatomies().size() != 1) {
          throw ArgumentError("teacher " + t + " must be a single-anatomy model");
        }
        auto const name = teacher.anatomies().front();
        teachers.emplace(name, std::move(teacher));
      }
      auto const data = load_data(data_dirs);
      cfg.anatomies.clear();
      for (auto const &d : data) {
        cfg.anatomies.push_back(d.name);
      }
      auto const result = train::distill_universal(student, teachers, data, cfg);
      finish_training("distill", cfg, Json{{"base", base_dir}, {"teachers", teacher_dirs}, {"data", data_dirs}},
                      result, s3.out, Json{{"distill_layer", cfg.distill_layer}, {"omega", cfg.omega}}, out);
    };
  });

  // adapt
  Common s4;
  std::vector<std::string> s4_data;
  std::string s4_base;
  auto *ad = app.add_subcommand("adapt", "Add a new anatomy by training only its normalisation");
  add_training_flags(ad, s4);
  ad->add_option("--base", s4_base, "Universal checkpoint");
  ad->add_option("--data", s4_data, "Dataset directory of the new anatomy");
  ad->callback([&] {
    action = [&] {
      auto const file = config_file(s4.config);
      auto cfg = resolve(io::Stage::S4, s4, file);
      auto const base_dir = absolute(inputs_from(file, "base", s4_base.empty() ? std::vector<std::string>{}
                                                                                 : std::vector<std::string>{s4_base}));
      auto const data_dirs = absolute(inputs_from(file, "data", s4_data));
      auto const base = io::load_checkpoint(single(base_dir, "--base")).model;
      cfg.architecture = base.arch();
      auto const data = load_data({single(data_dirs, "--data")});
      cfg.anatomies = {data[0].name};
      auto const result = train::adapt_new_anatomy(base, data[0], cfg);
      // Every parameter that existed before adaptation must be untouched.
      auto const &before = base.parameters();
      auto const &after = result.model.parameters();
      for (std::size_t i = 0; i < before.size(); i++) {
        if (before[i].name != after[i].name || before[i].value != after[i].value) {
          throw Error("adaptation modified pre-existing parameter " + before[i].name);
        }
      }
      finish_training("adapt", cfg, Json{{"base", base_dir}, {"data", data_dirs}}, result, s4.out,
                      Json{{"new_anatomy", data[0].name}, {"base_parameters_unchanged", true}}, out);
    };
  });

  // evaluate
  std::string ev_model, ev_out, ev_label, ev_split = "test";
  std::vector<std::string> ev_data;
  double ev_accel = 4.0;
  std::uint64_t ev_seed = 0;
  auto *ev = app.add_subcommand("evaluate", "Score a checkpoint on held-out images");
  ev->add_option("--model", ev_model, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--data", ev_data, "Dataset directories")->required();
  ev->add_option("--accel", ev_accel, "Acceleration")->check(CLI::IsMember({4.0, 6.0}));
  ev->add_option("--seed", ev_seed, "Mask seed");
  ev->add_option("--split", ev_split, "Split to score")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--label", ev_label, "Model name in reports (default: checkpoint directory)");
  ev->add_option("--out", ev_out, "Output directory")->required();
  ev->callback([&] {
    action = [&] {
      auto const loaded = io::load_checkpoint(ev_model);
      auto const label = ev_label.empty() ? fs::absolute(ev_model).lexically_normal().parent_path().filename().string()
                                          : ev_label;
      train::EvalConfig ec;
      ec.accel = ev_accel;
      ec.seed = ev_seed;
      Json tables = Json::array();
      auto const data_dirs = absolute(ev_data);
      out << fmt::format("{:<12} {:<10} {:>6} {:>10} {:>9} {:>10} {:>9}\n", "model", "anatomy", "accel", "PSNR(dB)",
                         "SSIM(%)", "ZF PSNR", "ZF SSIM");
      for (auto const &d : data_dirs) {
        auto const ds = phantom::load_dataset(d);
        auto const &idx = ev_split == "train" ? ds.split.train : ev_split == "val" ? ds.split.val : ds.split.test;
        auto const table = train::evaluate(loaded.model, ds.subset(idx), ds.profile.name, ec);
        tables.push_back(train::to_json(table));
        out << fmt::format("{:<12} {:<10} {:>5g}x {:>10.3f} {:>9.2f} {:>10.3f} {:>9.2f}\n", label, table.anatomy,
                           ev_accel, table.mean_model.psnr_db, 100.0 * table.mean_model.ssim,
                           table.mean_zero_filled.psnr_db, 100.0 * table.mean_zero_filled.ssim);
      }
      io::RunManifest m;
      m.command = "evaluate";
      m.config = Json{{"accel", ev_accel},
                      {"seed", ev_seed},
                      {"split", ev_split},
                      {"center_fraction", ec.center_fraction},
                      {"mask_std_fraction", ec.mask_std_fraction},
                      {"data_range", "per-image max-min"},
                      {"inputs", {{"model", fs::absolute(ev_model).lexically_normal().string()}, {"data", data_dirs}}}};
      m.seed = ev_seed;
      m.results = Json{{"label", label},
                       {"stage", io::to_string(loaded.stage)},
                       {"params", loaded.model.count_parameters(net::CountScope::Total)},
                       {"tables", tables}};
      fs::create_directories(ev_out);
      io::save_run_manifest(ev_out, m);
    };
  });

  // count-params
  std::string arch_name = "d5c5", scope_name = "base", cp_model, cp_out;
  int cp_anatomies = 0;
  bool breakdown = false;
  auto *cp = app.add_subcommand("count-params", "Count network parameters");
  cp->add_option("--arch", arch_name, "Architecture preset")->check(CLI::IsMember({"d5c5"}));
  auto *anat_opt = cp->add_option("--anatomies", cp_anatomies, "Number of anatomies")->check(CLI::NonNegativeNumber);
  auto *scope_opt =
      cp->add_option("--scope", scope_name, "base, per-anatomy or total")->check(CLI::IsMember({"base", "per-anatomy", "total"}));
  cp->add_option("--model", cp_model, "Count a checkpoint instead")->check(CLI::ExistingDirectory);
  cp->add_flag("--breakdown", breakdown, "Print base, per-anatomy and total counts");
  cp->add_option("--out", cp_out, "Write a run manifest here");
  cp->callback([&] {
    action = [&] {
      auto arch = net::Architecture::d5c5();
      int anatomies = cp_anatomies;
      if (!cp_model.empty()) {
        auto const loaded = io::load_checkpoint(cp_model);
        arch = loaded.model.arch();
        anatomies = arch.aspin ? static_cast<int>(loaded.model.anatomies().size()) : 0;
      } else if (anatomies > 0) {
        arch.aspin = true;
      }
      auto scope = net::CountScope::Base;
      if (scope_opt->count()) {
        scope = scope_name == "base" ? net::CountScope::Base
                : scope_name == "total" ? net::CountScope::Total
                                        : net::CountScope::PerAnatomy;
      } else if (anat_opt->count() || !cp_model.empty()) {
        scope = net::CountScope::Total;
      }
      auto const base = net::count_parameters(arch, anatomies, net::CountScope::Base);
      auto const per = net::count_parameters(net::Architecture::universal(), 1, net::CountScope::PerAnatomy);
      auto const total = net::count_parameters(arch, anatomies, net::CountScope::Total);
      auto const value = net::count_parameters(arch, anatomies, scope);
      if (scope == net::CountScope::PerAnatomy) {
        out << per << "\n";
      } else {
        out << value << "\n";
      }
      if (breakdown) {
        out << fmt::format("base {}\nper-anatomy {} ({:.3f}% of base)\nanatomies {}\ntotal {}\n", base, per,
                           100.0 * static_cast<double>(per) / static_cast<double>(base), anatomies, total);
      }
      if (!cp_out.empty()) {
        io::RunManifest m;
        m.command = "count-params";
        m.config = Json{{"arch", arch_name}, {"anatomies", anatomies}, {"scope", scope_name}};
        m.results = Json{{"base", base}, {"per_anatomy", per}, {"total", total}};
        fs::create_directories(cp_out);
        io::save_run_manifest(cp_out, m);
      }
    };
  });

  // report
  std::vector<std::string> rp_runs;
  std::string rp_out;
  auto *rp = app.add_subcommand("report", "Aggregate evaluation runs into a comparison table");
  rp->add_option("--runs", rp_runs, "Evaluation output directories (searched recursively)")->required();
  rp->add_option("--out", rp_out, "Output directory")->required();
  rp->callback([&] {
    action = [&] {
      std::vector<fs::path> roots(rp_runs.begin(), rp_runs.end());
      auto const rows = report::with_averages(report::collect(roots));
      if (rows.empty()) {
        throw ArgumentError("no evaluation runs found");
      }
      auto const table = report::format_table(rows);
      fs::create_directories(rp_out);
      write_text(fs::path(rp_out) / "report.txt", table);
      write_text(fs::path(rp_out) / "report.csv", report::to_csv(rows));
      io::RunManifest m;
      m.command = "report";
      m.config = Json{{"inputs", {{"runs", absolute(rp_runs)}}}};
      m.results = Json{{"columns", {"model", "anatomy", "accel", "PSNR(dB)", "SSIM(%)", "params"}},
                       {"rows", report::to_json(rows)}};
      io::save_run_manifest(rp_out, m);
      out << table;
    };
  });

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (CLI::CallForHelp const &) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (CLI::CallForAllHelp const &) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (CLI::ParseError const &e) {
    err << "error: " << e.what() << "\n\n";
    auto const *sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return 2;
  }

  try {
    action();
  } catch (ArgumentError const &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (std::exception const &e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

} // namespace urec::cli
