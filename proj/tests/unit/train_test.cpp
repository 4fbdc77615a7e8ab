#include "helpers.hpp"

#include "urec/train.hpp"

#include <doctest.h>

#include <set>

using namespace urec;
using namespace urec::train;

namespace {

auto tiny_arch() -> net::Architecture
{
  net::Architecture a;
  a.cascades = 2;
  a.conv_layers = 3;
  a.features = 4;
  return a;
}

auto tiny_config(io::Stage stage, int epochs = 2) -> TrainConfig
{
  TrainConfig c;
  c.stage = stage;
  c.epochs = epochs;
  c.batch_size = 2;
  c.seed = 5;
  c.architecture = tiny_arch();
  c.distill_layer = 2;
  return c;
}

auto tiny_data(std::string const &name) -> AnatomyData
{
  auto p = phantom::builtin_profile(name);
  p.dataset_size = 10;
  return anatomy_data(phantom::make_dataset(p, 32, 3));
}

auto same_parameters(net::CascadeModel<float> const &a, net::CascadeModel<float> const &b) -> bool
{
  if (a.parameters().size() != b.parameters().size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.parameters().size(); i++) {
    if (a.parameters()[i].value != b.parameters()[i].value) {
      return false;
    }
  }
  return true;
}

} // namespace

TEST_SUITE("train")
{
  TEST_CASE("config validation and JSON round-trip")
  {
    auto c = tiny_config(io::Stage::S3);
    c.accels = {4.0, 6.0};
    c.omega = 0.01;
    auto const back = config_from_json(to_json(c));
    CHECK(back.stage == c.stage);
    CHECK(back.epochs == c.epochs);
    CHECK(back.accels == c.accels);
    CHECK(back.omega == c.omega);
    CHECK(back.architecture == c.architecture);
    CHECK(config_from_json(io::Json{{"epochs", 7}}, c).batch_size == 2);

    auto bad = c;
    bad.accels = {1.0};
    CHECK_THROWS_AS(bad.validate(), ArgumentError);
    bad = c;
    bad.distill_layer = 4;
    CHECK_THROWS_AS(bad.validate(), ArgumentError);
    bad = c;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ArgumentError);
    bad = c;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), ArgumentError);
  }

  TEST_CASE("round-robin schedule")
  {
    CHECK(BatchSchedule::round_robin(2, 6) == std::vector<int>{0, 1, 0, 1, 0, 1});
    BatchSchedule const s({8, 3}, 2, 1);
    CHECK(s.iterations_per_epoch() == 8);
    auto const batches = s.epoch(1);
    REQUIRE(static_cast<Index>(batches.size()) == 8);
    std::set<Index> seen0, seen1;
    for (std::size_t i = 0; i < batches.size(); i++) {
      CHECK(batches[i].anatomy == static_cast<int>(i % 2));
      CHECK(batches[i].indices.size() >= 1);
      CHECK(batches[i].indices.size() <= 2);
      for (auto idx : batches[i].indices) {
        (batches[i].anatomy == 0 ? seen0 : seen1).insert(idx);
      }
    }
    CHECK(seen0.size() == 8);
    CHECK(seen1.size() == 3);
    CHECK(s.epoch(1).front().indices == batches.front().indices);
    bool differs = false;
    for (int e = 2; e < 6; e++) {
      differs = differs || s.epoch(e).front().indices != batches.front().indices;
    }
    CHECK(differs);
  }

  TEST_CASE("zero epochs returns the initial model")
  {
    auto const data = tiny_data("brain");
    auto const r = train_independent(data, tiny_config(io::Stage::S1, 0));
    CHECK(r.history.empty());
    CHECK(r.best_epoch == 0);
    net::CascadeModel<float> init(tiny_arch(), derive_seed(5, 0x1417));
    CHECK(same_parameters(r.model, init));
  }

  TEST_CASE("training is deterministic and records history")
  {
    auto const data = tiny_data("brain");
    auto const a = train_independent(data, tiny_config(io::Stage::S1));
    auto const b = train_independent(data, tiny_config(io::Stage::S1));
    CHECK(same_parameters(a.model, b.model));
    CHECK(a.history == b.history);
    CHECK(a.train_loss == b.train_loss);
    REQUIRE(a.history.size() == 2);
    CHECK(a.history[0].epoch == 1);
    CHECK(a.history[1].epoch == 2);
    CHECK(a.history[0].anatomy == "brain");
    CHECK(a.best_epoch >= 1);
    CHECK(a.model.anatomies() == std::vector<std::string>{"brain"});
    auto c = tiny_config(io::Stage::S1);
    c.seed = 6;
    CHECK_FALSE(same_parameters(train_independent(data, c).model, a.model));
  }

  TEST_CASE("training reduces the loss")
  {
    auto const data = tiny_data("knee");
    auto const r = train_independent(data, tiny_config(io::Stage::S1, 4));
    CHECK(r.train_loss.back() < r.train_loss.front());
  }

  TEST_CASE("universal pre-training touches only the current anatomy's normalisation")
  {
    std::vector<AnatomyData> const data{tiny_data("brain"), tiny_data("knee")};
    TrainerHooks hooks;
    int checked = 0;
    hooks.after_step = [&](Index iteration, int anatomy, net::Gradients<float> const &grads,
                           net::CascadeModel<float> const &model) {
      CHECK(anatomy == static_cast<int>(iteration % 2));
      int const other = 1 - anatomy;
      for (int s = 0; s < model.arch().site_count(); s++) {
        CHECK(grads.computed[model.gamma_index(anatomy, s)]);
        for (auto idx : {model.gamma_index(other, s), model.beta_index(other, s)}) {
          CHECK_FALSE(grads.computed[idx]);
          for (auto v : grads.values[idx]) {
            CHECK(v == 0.0f);
          }
        }
      }
      checked++;
    };
    hooks.max_iterations = 6;
    auto const r = pretrain_universal(data, tiny_config(io::Stage::S2), true, nullptr, hooks);
    CHECK(checked == 6);
    CHECK(r.model.anatomies() == std::vector<std::string>{"brain", "knee"});
    CHECK(r.model.arch().aspin);
  }

  TEST_CASE("shared baseline has no normalisation bank")
  {
    std::vector<AnatomyData> const data{tiny_data("brain"), tiny_data("knee")};
    auto const r = pretrain_universal(data, tiny_config(io::Stage::S2, 1), false);
    CHECK_FALSE(r.model.arch().aspin);
    CHECK(r.model.count_parameters(net::CountScope::Total) == r.model.count_parameters(net::CountScope::Base));
    CHECK_THROWS(pretrain_universal({data[0]}, tiny_config(io::Stage::S2, 1)));
  }

  TEST_CASE("distillation with zero weight equals continued pre-training")
  {
    std::vector<AnatomyData> const data{tiny_data("brain"), tiny_data("knee")};
    auto const s2 = pretrain_universal(data, tiny_config(io::Stage::S2, 1)).model;
    std::map<std::string, net::CascadeModel<float>> teachers;
    teachers.emplace("brain", train_independent(data[0], tiny_config(io::Stage::S1, 1)).model);
    teachers.emplace("knee", train_independent(data[1], tiny_config(io::Stage::S1, 1)).model);

    auto cfg = tiny_config(io::Stage::S3, 2);
    cfg.omega = 0.0;
    auto const distilled = distill_universal(s2, teachers, data, cfg);
    auto cont_cfg = cfg;
    cont_cfg.stage = io::Stage::S2;
    auto const continued = pretrain_universal(data, cont_cfg, true, &s2);
    CHECK(same_parameters(distilled.model, continued.model));
    CHECK(distilled.history == continued.history);

    cfg.omega = 1.0;
    auto const weighted = distill_universal(s2, teachers, data, cfg);
    CHECK_FALSE(same_parameters(weighted.model, continued.model));

    teachers.erase("knee");
    CHECK_THROWS(distill_universal(s2, teachers, data, cfg));
  }

  TEST_CASE("adaptation trains only the new anatomy")
  {
    std::vector<AnatomyData> const data{tiny_data("brain"), tiny_data("knee")};
    auto const base = pretrain_universal(data, tiny_config(io::Stage::S2, 1)).model;
    auto const fresh = tiny_data("cardiac");
    auto const r = adapt_new_anatomy(base, fresh, tiny_config(io::Stage::S4, 2));
    auto const &m = r.model;
    REQUIRE(m.anatomy_count() == 3);
    CHECK(train::FreezePolicy::trainable_count(m) == m.arch().per_anatomy_parameter_count());
    for (std::size_t i = 0; i < base.parameters().size(); i++) {
      CHECK(m.parameters()[i].value == base.parameters()[i].value);
    }
    bool moved = false;
    for (int s = 0; s < m.arch().site_count(); s++) {
      for (auto v : m.parameters()[m.gamma_index(2, s)].value) {
        moved = moved || v != 1.0f;
      }
    }
    CHECK(moved);

    auto const &img = data[0].test.front();
    auto const mask = kspace::make_gaussian_mask(32, 32, 4.0, 0.04, 1);
    auto const y = kspace::undersample(img, mask);
    auto const x_u = kspace::zero_filled(y);
    for (int a = 0; a < 2; a++) {
      CHECK(net::model_forward<float>(base, x_u, y, mask, a) == net::model_forward<float>(m, x_u, y, mask, a));
    }

    auto cfg = tiny_config(io::Stage::S4, 1);
    cfg.freeze_base = false;
    CHECK_THROWS_AS(adapt_new_anatomy(base, fresh, cfg), ArgumentError);
    CHECK_THROWS(adapt_new_anatomy(base, data[0], tiny_config(io::Stage::S4, 1)));
  }

  TEST_CASE("adam skips parameters without gradients")
  {
    net::CascadeModel<float> m(tiny_arch(), 1);
    auto const before = m.parameters();
    net::Gradients<float> g(m);
    auto s0 = g.slot(0);
    std::fill(s0.begin(), s0.end(), 1.0f);
    Adam adam(m, 1e-3, 0.0);
    adam.step(m, g);
    CHECK(m.parameters()[0].value != before[0].value);
    for (std::size_t i = 1; i < before.size(); i++) {
      CHECK(m.parameters()[i].value == before[i].value);
    }
    // First Adam step moves each entry by lr against the gradient sign.
    CHECK(m.parameters()[0].value[0] == doctest::Approx(before[0].value[0] - 1e-3).epsilon(1e-4));
  }

  TEST_CASE("evaluation reports model and zero-filled metrics")
  {
    auto const data = tiny_data("brain");
    net::CascadeModel<float> m(tiny_arch(), 1);
    EvalConfig ec;
    ec.seed = 3;
    auto const t = evaluate(m, data.test, "brain", ec);
    CHECK(t.rows.size() == data.test.size());
    CHECK(t.mean_zero_filled.psnr_db > 0.0);
    auto const again = evaluate(m, data.test, "brain", ec);
    CHECK(again.mean_model.psnr_db == t.mean_model.psnr_db);
    auto const j = to_json(t);
    CHECK(j.at("anatomy") == "brain");
    CHECK(j.at("rows").size() == data.test.size());
  }
}
