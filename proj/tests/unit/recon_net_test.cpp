#include "helpers.hpp"

#include "urec/recon_net.hpp"

#include <doctest.h>

#include <numeric>

using namespace urec;
using namespace urec::net;

namespace {

constexpr double kStep = 1e-6;
constexpr double kTol = 1e-3;

auto span_of(std::vector<double> const &v) -> std::span<double const> { return v; }

auto random_values(Index n, std::uint64_t seed, double lo, double hi) -> std::vector<double>
{
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto &x : v) {
    x = rng.uniform(lo, hi);
  }
  return v;
}

// Randomises every normalisation pair so gradients through gamma and beta are non-trivial.
void jitter_affine(CascadeModel<double> &model, std::uint64_t seed)
{
  Rng rng(seed);
  for (int a = 0; a < model.anatomy_count(); a++) {
    for (int s = 0; s < model.arch().site_count(); s++) {
      for (auto &g : model.parameters()[model.gamma_index(a, s)].value) {
        g = rng.uniform(0.5, 1.5);
      }
      for (auto &b : model.parameters()[model.beta_index(a, s)].value) {
        b = rng.uniform(-0.3, 0.3);
      }
    }
  }
  for (int t = 0; t < model.arch().cascades; t++) {
    for (int l = 0; l < model.arch().conv_layers; l++) {
      for (auto &b : model.parameters()[model.conv_bias_index(t, l)].value) {
        b = rng.uniform(-0.1, 0.1);
      }
    }
  }
}

struct Fixture
{
  Tensor3<double> x_u;
  kspace::KSpace<double> y;
  kspace::SamplingMask mask;
};

auto make_fixture(Index size, std::uint64_t seed) -> Fixture
{
  auto const gt = test::random_tensor(2, size, size, seed, 0.0, 1.0);
  auto mask = kspace::make_gaussian_mask(size, size, 2.0, 0.125, seed);
  auto y = kspace::undersample(gt, mask);
  return {kspace::zero_filled(y), y, mask};
}

// Checks a handful of entries of each parameter tensor against central differences of
// loss(model) = <weights, forward(model)>.
template <typename Forward>
void check_parameter_gradients(
    CascadeModel<double> &model, Gradients<double> const &grads, Forward forward, std::vector<std::size_t> const &tensors)
{
  for (auto i : tensors) {
    REQUIRE(grads.computed[i]);
    auto &value = model.parameters()[i].value;
    Rng rng(derive_seed(99, i));
    for (int k = 0; k < 3; k++) {
      auto const j = static_cast<std::size_t>(rng.below(value.size()));
      double const saved = value[j];
      value[j] = saved + kStep;
      double const up = forward();
      value[j] = saved - kStep;
      double const down = forward();
      value[j] = saved;
      double const numeric = (up - down) / (2 * kStep);
      INFO(model.parameters()[i].name, "[", j, "] analytic ", grads.values[i][j], " numeric ", numeric);
      CHECK(test::relative_close(grads.values[i][j], numeric, kTol));
    }
  }
}

auto all_indices(CascadeModel<double> const &model) -> std::vector<std::size_t>
{
  std::vector<std::size_t> v(model.parameters().size());
  std::iota(v.begin(), v.end(), 0);
  return v;
}

} // namespace

TEST_SUITE("recon_net")
{
  TEST_CASE("parameter counts")
  {
    CHECK(count_parameters(Architecture::d5c5(), 0, CountScope::Base) == 144650);
    CHECK(count_parameters(Architecture::universal(), 1, CountScope::PerAnatomy) == 1280);
    CHECK(count_parameters(Architecture::universal(), 5, CountScope::Total) == 151050);
    CascadeModel<float> m(Architecture::universal(), 1);
    CHECK(m.count_parameters(CountScope::Total) == 144650);
    for (auto name : {"a", "b", "c", "d", "e"}) {
      m.add_anatomy(name);
    }
    CHECK(m.count_parameters(CountScope::Total) == 151050);
    CHECK(m.count_parameters(CountScope::Base) == 144650);
    CHECK(m.count_parameters(CountScope::PerAnatomy) == 1280);
  }

  TEST_CASE("parameter naming and layout")
  {
    CascadeModel<float> m(Architecture::universal(), 1);
    m.add_anatomy("brain");
    auto const &p = m.parameters();
    CHECK(p.front().name == "cascade1.conv1.weight");
    CHECK(p.front().shape == std::vector<Index>{32, 2, 3, 3});
    CHECK(p[m.conv_weight_index(4, 4)].name == "cascade5.conv5.weight");
    CHECK(p[m.conv_weight_index(4, 4)].shape == std::vector<Index>{2, 32, 3, 3});
    CHECK(p[m.gamma_index(0, 0)].name == "aspin.brain.cascade1.norm1.gamma");
    CHECK(p[m.beta_index(0, 19)].name == "aspin.brain.cascade5.norm4.beta");
    for (auto v : p[m.gamma_index(0, 3)].value) {
      CHECK(v == 1.0f);
    }
    for (auto v : p[m.beta_index(0, 3)].value) {
      CHECK(v == 0.0f);
    }
  }

  TEST_CASE("initialisation is seeded")
  {
    CascadeModel<float> a(Architecture::d5c5(), 4);
    CascadeModel<float> b(Architecture::d5c5(), 4);
    CascadeModel<float> c(Architecture::d5c5(), 5);
    CHECK(a.parameters()[0].value == b.parameters()[0].value);
    CHECK_FALSE(a.parameters()[0].value == c.parameters()[0].value);
  }

  TEST_CASE("anatomy registry")
  {
    CascadeModel<float> m(Architecture::universal(), 1);
    CHECK(m.add_anatomy("brain") == 0);
    auto const before = m.parameters();
    CHECK(m.add_anatomy("knee") == 1);
    for (std::size_t i = 0; i < before.size(); i++) {
      CHECK(m.parameters()[i].value == before[i].value);
    }
    CHECK_THROWS(m.add_anatomy("brain"));
    CHECK_THROWS(m.add_anatomy(""));
    CHECK(m.anatomy_index("knee") == 1);
    CHECK_THROWS(m.anatomy_index("liver"));
    CascadeModel<float> plain(Architecture::d5c5(), 1);
    CHECK_THROWS(plain.add_anatomy("brain"));
  }

  TEST_CASE("instance norm statistics")
  {
    auto const h = test::random_tensor(3, 8, 8, 1, -2.0, 5.0);
    std::vector<double> const gamma{1.0, 2.0, 0.5};
    std::vector<double> const beta{0.0, -1.0, 3.0};
    auto const out = instance_norm<double>(h, gamma, beta, 1e-5);
    for (Index c = 0; c < 3; c++) {
      double mean = 0.0, var = 0.0;
      for (auto v : out.channel(c)) {
        mean += v;
      }
      mean /= 64.0;
      for (auto v : out.channel(c)) {
        var += (v - mean) * (v - mean);
      }
      var /= 64.0;
      CHECK(std::abs(mean - beta[c]) <= 1e-4);
      CHECK(std::abs(var - gamma[c] * gamma[c]) <= 1e-3);
    }
  }

  TEST_CASE("instance norm gradient")
  {
    auto const h = test::random_tensor(2, 8, 8, 2, -1.0, 2.0);
    auto const gamma = random_values(2, 3, 0.5, 1.5);
    auto const beta = random_values(2, 4, -0.5, 0.5);
    auto const w = test::random_tensor(2, 8, 8, 5);
    auto loss = [&](Tensor3<double> const &x, std::vector<double> const &g, std::vector<double> const &b) {
      return test::dot(instance_norm<double>(x, g, b, 1e-5), w);
    };
    NormStats<double> stats;
    instance_norm<double>(h, gamma, beta, 1e-5, &stats);
    std::vector<double> dg(2, 0.0), db(2, 0.0);
    auto const dx = instance_norm_backward<double>(h, stats, gamma, w, dg, db);
    for (Index i = 0; i < h.size(); i += 7) {
      auto hp = h, hm = h;
      hp.data()[i] += kStep;
      hm.data()[i] -= kStep;
      double const numeric = (loss(hp, gamma, beta) - loss(hm, gamma, beta)) / (2 * kStep);
      CHECK(test::relative_close(dx.data()[i], numeric, kTol));
    }
    for (std::size_t c = 0; c < 2; c++) {
      auto gp = gamma, gm = gamma, bp = beta, bm = beta;
      gp[c] += kStep;
      gm[c] -= kStep;
      bp[c] += kStep;
      bm[c] -= kStep;
      CHECK(test::relative_close(dg[c], (loss(h, gp, beta) - loss(h, gm, beta)) / (2 * kStep), kTol));
      CHECK(test::relative_close(db[c], (loss(h, gamma, bp) - loss(h, gamma, bm)) / (2 * kStep), kTol));
    }
  }

  TEST_CASE("convolution gradient")
  {
    auto const x = test::random_tensor(2, 8, 8, 1);
    auto weight = random_values(3 * 2 * 9, 2, -0.5, 0.5);
    auto bias = random_values(3, 3, -0.1, 0.1);
    auto const w = test::random_tensor(3, 8, 8, 4);
    auto loss = [&](Tensor3<double> const &in) {
      return test::dot(conv_forward<double>(in, span_of(weight), span_of(bias), 3, 3), w);
    };
    std::vector<double> dw(weight.size(), 0.0), db(3, 0.0);
    auto const dx = conv_backward<double>(x, span_of(weight), w, 3, dw, db);
    for (Index i = 0; i < x.size(); i += 5) {
      auto xp = x, xm = x;
      xp.data()[i] += kStep;
      xm.data()[i] -= kStep;
      CHECK(test::relative_close(dx.data()[i], (loss(xp) - loss(xm)) / (2 * kStep), kTol));
    }
    for (std::size_t i = 0; i < weight.size(); i += 3) {
      double const saved = weight[i];
      weight[i] = saved + kStep;
      double const up = loss(x);
      weight[i] = saved - kStep;
      double const down = loss(x);
      weight[i] = saved;
      CHECK(test::relative_close(dw[i], (up - down) / (2 * kStep), kTol));
    }
    for (std::size_t c = 0; c < 3; c++) {
      double sum = 0.0;
      for (auto v : w.channel(static_cast<Index>(c))) {
        sum += v;
      }
      CHECK(db[c] == doctest::Approx(sum));
    }
  }

  TEST_CASE("convolution of a delta reproduces the kernel")
  {
    Tensor3<double> x(1, 5, 5);
    x(0, 2, 2) = 1.0;
    std::vector<double> const weight{1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<double> const bias{0.5};
    auto const out = conv_forward<double>(x, span_of(weight), span_of(bias), 1, 3);
    // Cross-correlation: out(y, x) = sum w(dy, dx) in(y + dy - 1, x + dx - 1).
    CHECK(out(0, 1, 1) == 9.0 + 0.5);
    CHECK(out(0, 2, 2) == 5.0 + 0.5);
    CHECK(out(0, 3, 3) == 1.0 + 0.5);
    CHECK(out(0, 0, 0) == 0.5);
  }

  TEST_CASE("aspin selects the anatomy's affine pair over shared statistics")
  {
    CascadeModel<double> m(Architecture::universal(), 1);
    m.add_anatomy("a");
    m.add_anatomy("b");
    jitter_affine(m, 3);
    auto const h = test::random_tensor(32, 8, 8, 2);
    NormStats<double> sa, sb;
    auto const oa = aspin_forward(h, 5, 0, m, &sa);
    auto const ob = aspin_forward(h, 5, 1, m, &sb);
    CHECK(sa.mean == sb.mean);
    CHECK(sa.inv_std == sb.inv_std);
    auto const &ga = m.parameters()[m.gamma_index(0, 5)].value;
    auto const &ba = m.parameters()[m.beta_index(0, 5)].value;
    auto const &gb = m.parameters()[m.gamma_index(1, 5)].value;
    auto const &bb = m.parameters()[m.beta_index(1, 5)].value;
    for (Index c = 0; c < 32; c++) {
      double const xhat = (oa(c, 3, 4) - ba[c]) / ga[c];
      CHECK(ob(c, 3, 4) == doctest::Approx(gb[c] * xhat + bb[c]));
    }
  }

  TEST_CASE("other anatomies receive no gradient")
  {
    CascadeModel<double> m(Architecture::universal(), 1);
    m.add_anatomy("a");
    m.add_anatomy("b");
    auto const f = make_fixture(8, 1);
    ForwardCache<double> cache;
    auto const out = model_forward<double>(m, f.x_u, f.y, f.mask, 0, &cache);
    Gradients<double> grads(m);
    model_backward<double>(m, cache, f.mask, test::random_tensor(2, 8, 8, 2), grads);
    for (int s = 0; s < m.arch().site_count(); s++) {
      CHECK(grads.computed[m.gamma_index(0, s)]);
      CHECK_FALSE(grads.computed[m.gamma_index(1, s)]);
      CHECK_FALSE(grads.computed[m.beta_index(1, s)]);
      for (auto v : grads.values[m.gamma_index(1, s)]) {
        CHECK(v == 0.0);
      }
    }
  }

  TEST_CASE("zeroed output layer makes the block an identity")
  {
    CascadeModel<double> m(Architecture::d5c5(), 1);
    for (int t = 0; t < 5; t++) {
      std::fill_n(m.parameters()[m.conv_weight_index(t, 4)].value.begin(), m.parameters()[m.conv_weight_index(t, 4)].size(), 0.0);
    }
    auto const x = test::random_tensor(2, 8, 8, 1);
    CHECK(cnn_block_forward<double>(m, 2, x, std::nullopt) == x);
  }

  TEST_CASE("block gradient")
  {
    CascadeModel<double> m(Architecture::universal(), 7);
    m.add_anatomy("a");
    m.add_anatomy("b");
    jitter_affine(m, 1);
    auto const x = test::random_tensor(2, 8, 8, 3);
    auto const w = test::random_tensor(2, 8, 8, 4);
    BlockCache<double> cache;
    cnn_block_forward<double>(m, 1, x, 1, &cache);
    Gradients<double> grads(m);
    auto const dx = cnn_block_backward<double>(m, 1, cache, w, 1, grads);
    auto forward = [&] { return test::dot(cnn_block_forward<double>(m, 1, x, 1), w); };
    std::vector<std::size_t> tensors;
    for (int l = 0; l < 5; l++) {
      tensors.push_back(m.conv_weight_index(1, l));
      tensors.push_back(m.conv_bias_index(1, l));
    }
    for (int l = 0; l < 4; l++) {
      tensors.push_back(m.gamma_index(1, m.site_index(1, l)));
      tensors.push_back(m.beta_index(1, m.site_index(1, l)));
    }
    check_parameter_gradients(m, grads, forward, tensors);
    for (Index i = 0; i < x.size(); i += 9) {
      auto xp = x, xm = x;
      xp.data()[i] += kStep;
      xm.data()[i] -= kStep;
      double const numeric = (test::dot(cnn_block_forward<double>(m, 1, xp, 1), w) -
                              test::dot(cnn_block_forward<double>(m, 1, xm, 1), w)) /
                             (2 * kStep);
      CHECK(test::relative_close(dx.data()[i], numeric, kTol));
    }
  }

  TEST_CASE("full model gradient")
  {
    for (bool aspin : {false, true}) {
      CAPTURE(aspin);
      auto arch = Architecture::d5c5();
      arch.aspin = aspin;
      CascadeModel<double> m(arch, 3);
      std::optional<int> anatomy;
      if (aspin) {
        m.add_anatomy("a");
        m.add_anatomy("b");
        jitter_affine(m, 2);
        anatomy = 1;
      }
      auto const f = make_fixture(8, 5);
      auto const w = test::random_tensor(2, 8, 8, 6);
      ForwardCache<double> cache;
      model_forward<double>(m, f.x_u, f.y, f.mask, anatomy, &cache);
      Gradients<double> grads(m);
      model_backward<double>(m, cache, f.mask, w, grads);
      auto forward = [&] { return test::dot(model_forward<double>(m, f.x_u, f.y, f.mask, anatomy), w); };
      std::vector<std::size_t> tensors;
      for (auto i : all_indices(m)) {
        if (grads.computed[i]) {
          tensors.push_back(i);
        }
      }
      CHECK(tensors.size() == (aspin ? 50u + 40u : 50u));
      check_parameter_gradients(m, grads, forward, tensors);
    }
  }

  TEST_CASE("soft data consistency gradient")
  {
    auto arch = Architecture::d5c5();
    arch.cascades = 2;
    arch.dc = kspace::DcMode::Soft(2.0);
    CascadeModel<double> m(arch, 3);
    auto const f = make_fixture(8, 5);
    auto const w = test::random_tensor(2, 8, 8, 6);
    ForwardCache<double> cache;
    model_forward<double>(m, f.x_u, f.y, f.mask, std::nullopt, &cache);
    Gradients<double> grads(m);
    model_backward<double>(m, cache, f.mask, w, grads);
    auto forward = [&] { return test::dot(model_forward<double>(m, f.x_u, f.y, f.mask, std::nullopt), w); };
    check_parameter_gradients(m, grads, forward, all_indices(m));
  }

  TEST_CASE("trace gradient injection")
  {
    for (int layer : {1, 3, 5}) {
      CAPTURE(layer);
      CascadeModel<double> m(Architecture::universal(), 8);
      m.add_anatomy("a");
      jitter_affine(m, 4);
      auto const f = make_fixture(8, 2);
      auto const w = test::random_tensor(2, 8, 8, 3);
      ActivationTrace<double> v;
      for (int t = 0; t < 5; t++) {
        v.push_back(test::random_tensor(layer == 5 ? 2 : 32, 8, 8, 10 + t));
      }
      auto forward = [&] {
        ActivationTrace<double> trace;
        double s = test::dot(model_forward<double>(m, f.x_u, f.y, f.mask, 0, nullptr, &trace, layer), w);
        REQUIRE(trace.size() == 5);
        for (int t = 0; t < 5; t++) {
          s += test::dot(trace[t], v[t]);
        }
        return s;
      };
      ForwardCache<double> cache;
      ActivationTrace<double> trace;
      model_forward<double>(m, f.x_u, f.y, f.mask, 0, &cache, &trace, layer);
      CHECK(trace[0].channels() == (layer == 5 ? 2 : 32));
      Gradients<double> grads(m);
      model_backward<double>(m, cache, f.mask, w, grads, &v, layer);
      std::vector<std::size_t> tensors{m.conv_weight_index(0, 0), m.conv_bias_index(0, 0), m.conv_weight_index(2, layer - 1),
                                       m.gamma_index(0, 0), m.beta_index(0, 0)};
      check_parameter_gradients(m, grads, forward, tensors);
    }
  }

  TEST_CASE("float and double models agree")
  {
    CascadeModel<float> mf(Architecture::universal(), 2);
    mf.add_anatomy("a");
    auto const md = mf.cast<double>();
    auto const f = make_fixture(16, 3);
    auto const out_d = model_forward<double>(md, f.x_u, f.y, f.mask, 0);
    auto const out_f = model_forward<float>(mf, f.x_u.cast<float>(), kspace::undersample(kspace::zero_filled(f.y).cast<float>(), f.mask), f.mask, 0);
    for (Index i = 0; i < out_d.size(); i++) {
      CHECK(std::abs(out_d.data()[i] - out_f.data()[i]) < 1e-4);
    }
  }

  TEST_CASE("from_parameters checks the layout")
  {
    CascadeModel<float> m(Architecture::universal(), 2);
    m.add_anatomy("a");
    auto const rebuilt = CascadeModel<float>::from_parameters(m.arch(), m.anatomies(), m.parameters());
    CHECK(rebuilt.parameters().size() == m.parameters().size());
    auto broken = m.parameters();
    broken.pop_back();
    CHECK_THROWS(CascadeModel<float>::from_parameters(m.arch(), m.anatomies(), broken));
    broken = m.parameters();
    broken[3].value.push_back(0.0f);
    CHECK_THROWS(CascadeModel<float>::from_parameters(m.arch(), m.anatomies(), broken));
  }
}
