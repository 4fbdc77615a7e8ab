#include "urec/recon_net.hpp"

#include "urec/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace urec::net {

namespace {

constexpr double kOutputLayerGain = 0.1;

void check_anatomy_name(std::string const &name)
{
  if (name.empty() || !std::all_of(name.begin(), name.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
      })) {
    throw ArgumentError("anatomy names must be non-empty and use [A-Za-z0-9_-], got '" + name + "'");
  }
}

template <typename T>
auto conv_parameters(Architecture const &arch, Rng &rng) -> std::vector<Parameter<T>>
{
  std::vector<Parameter<T>> params;
  Index const k = arch.kernel;
  for (int t = 0; t < arch.cascades; t++) {
    for (int l = 0; l < arch.conv_layers; l++) {
      Index const in = arch.layer_in(l);
      Index const out = arch.layer_out(l);
      Parameter<T> w{fmt::format("cascade{}.conv{}.weight", t + 1, l + 1), {out, in, k, k}, {}, true};
      // Kaiming-uniform with ReLU gain; the residual output layer starts small
      // so each cascade begins close to the identity.
      double const gain = l + 1 == arch.conv_layers ? kOutputLayerGain : 1.0;
      double const bound = gain * std::sqrt(6.0 / static_cast<double>(in * k * k));
      w.value.resize(static_cast<std::size_t>(out * in * k * k));
      for (auto &v : w.value) {
        v = static_cast<T>(rng.uniform(-bound, bound));
      }
      Parameter<T> b{fmt::format("cascade{}.conv{}.bias", t + 1, l + 1), {out}, std::vector<T>(out, T(0)), true};
      params.push_back(std::move(w));
      params.push_back(std::move(b));
    }
  }
  return params;
}

template <typename T>
auto aspin_parameters(Architecture const &arch, std::string const &anatomy) -> std::vector<Parameter<T>>
{
  std::vector<Parameter<T>> params;
  Index const c = arch.features;
  for (int t = 0; t < arch.cascades; t++) {
    for (int l = 0; l < arch.sites_per_cascade(); l++) {
      params.push_back({fmt::format("aspin.{}.cascade{}.norm{}.gamma", anatomy, t + 1, l + 1), {c},
                        std::vector<T>(c, T(1)), true});
      params.push_back({fmt::format("aspin.{}.cascade{}.norm{}.beta", anatomy, t + 1, l + 1), {c},
                        std::vector<T>(c, T(0)), true});
    }
  }
  return params;
}

template <typename T>
auto expected_layout(Architecture const &arch, std::vector<std::string> const &anatomies) -> std::vector<Parameter<T>>
{
  Rng rng(0);
  auto params = conv_parameters<T>(arch, rng);
  if (arch.aspin) {
    for (auto const &a : anatomies) {
      auto extra = aspin_parameters<T>(arch, a);
      params.insert(params.end(), extra.begin(), extra.end());
    }
  }
  return params;
}

template <typename T>
void check_image_input(Tensor3<T> const &x)
{
  if (x.channels() != kImageChannels) {
    throw ShapeError(fmt::format("network input must have 2 channels, got {}", x.channels()));
  }
}

} // namespace

auto Architecture::base_parameter_count() const -> Index
{
  Index total = 0;
  for (int l = 0; l < conv_layers; l++) {
    total += layer_out(l) * layer_in(l) * kernel * kernel + layer_out(l);
  }
  return total * cascades;
}

void Architecture::validate() const
{
  if (cascades < 1 || conv_layers < 2 || features < 1 || kernel < 1 || kernel % 2 == 0) {
    throw ArgumentError(fmt::format(
        "invalid architecture: {} cascades, {} layers, {} features, kernel {}", cascades, conv_layers, features, kernel));
  }
  if (!(eps > 0.0)) {
    throw ArgumentError("normalisation eps must be positive");
  }
}

auto count_parameters(Architecture const &arch, int anatomies, CountScope scope) -> Index
{
  Index const per = arch.aspin ? arch.per_anatomy_parameter_count() : 0;
  switch (scope) {
  case CountScope::Base:
    return arch.base_parameter_count();
  case CountScope::PerAnatomy:
    return per;
  case CountScope::Total:
    return arch.base_parameter_count() + anatomies * per;
  }
  return 0;
}

template <typename T>
CascadeModel<T>::CascadeModel(Architecture arch, std::uint64_t init_seed)
  : arch_{arch}
{
  arch_.validate();
  Rng rng(init_seed);
  params_ = conv_parameters<T>(arch_, rng);
}

template <typename T>
auto CascadeModel<T>::from_parameters(
    Architecture arch, std::vector<std::string> anatomies, std::vector<Parameter<T>> params) -> CascadeModel
{
  arch.validate();
  for (auto const &a : anatomies) {
    check_anatomy_name(a);
  }
  auto const layout = expected_layout<T>(arch, anatomies);
  if (layout.size() != params.size()) {
    throw FormatError(fmt::format("expected {} parameter tensors, got {}", layout.size(), params.size()));
  }
  for (std::size_t i = 0; i < layout.size(); i++) {
    if (layout[i].name != params[i].name) {
      throw FormatError(fmt::format("parameter {} should be '{}', got '{}'", i, layout[i].name, params[i].name));
    }
    if (layout[i].shape != params[i].shape || layout[i].value.size() != params[i].value.size()) {
      throw ShapeError("parameter '" + params[i].name + "' has the wrong shape");
    }
  }
  CascadeModel m;
  m.arch_ = arch;
  m.anatomies_ = std::move(anatomies);
  m.params_ = std::move(params);
  return m;
}

template <typename T>
auto CascadeModel<T>::conv_weight_index(int cascade, int layer) const -> std::size_t
{
  if (cascade < 0 || cascade >= arch_.cascades || layer < 0 || layer >= arch_.conv_layers) {
    throw ArgumentError(fmt::format("no conv layer {} in cascade {}", layer + 1, cascade + 1));
  }
  return static_cast<std::size_t>(2 * (cascade * arch_.conv_layers + layer));
}

template <typename T>
auto CascadeModel<T>::gamma_index(int anatomy, int site) const -> std::size_t
{
  if (!arch_.aspin) {
    throw ArgumentError("model has no anatomy-specific normalisation");
  }
  if (anatomy < 0 || anatomy >= anatomy_count()) {
    throw ArgumentError(fmt::format("anatomy index {} is not registered", anatomy));
  }
  if (site < 0 || site >= arch_.site_count()) {
    throw ArgumentError(fmt::format("normalisation site {} out of range", site));
  }
  std::size_t const base = static_cast<std::size_t>(2 * arch_.cascades * arch_.conv_layers);
  return base + static_cast<std::size_t>(2 * (anatomy * arch_.site_count() + site));
}

template <typename T>
auto CascadeModel<T>::has_anatomy(std::string const &name) const -> bool
{
  return std::find(anatomies_.begin(), anatomies_.end(), name) != anatomies_.end();
}

template <typename T>
auto CascadeModel<T>::anatomy_index(std::string const &name) const -> int
{
  auto it = std::find(anatomies_.begin(), anatomies_.end(), name);
  if (it == anatomies_.end()) {
    throw ArgumentError("anatomy '" + name + "' is not registered with this model");
  }
  return static_cast<int>(it - anatomies_.begin());
}

template <typename T>
auto CascadeModel<T>::add_anatomy(std::string const &name) -> int
{
  if (!arch_.aspin) {
    throw ArgumentError("cannot add an anatomy to a model without anatomy-specific normalisation");
  }
  check_anatomy_name(name);
  if (has_anatomy(name)) {
    throw ArgumentError("anatomy '" + name + "' is already registered");
  }
  auto extra = aspin_parameters<T>(arch_, name);
  params_.insert(params_.end(), extra.begin(), extra.end());
  anatomies_.push_back(name);
  return anatomy_count() - 1;
}

template <typename T>
void CascadeModel<T>::label_anatomies(std::vector<std::string> names)
{
  if (arch_.aspin) {
    throw ArgumentError("models with a normalisation bank register anatomies through add_anatomy");
  }
  for (auto const &n : names) {
    check_anatomy_name(n);
  }
  anatomies_ = std::move(names);
}

template <typename T>
auto CascadeModel<T>::count_parameters(CountScope scope) const -> Index
{
  Index const base = arch_.base_parameter_count();
  Index const per = arch_.aspin ? arch_.per_anatomy_parameter_count() : 0;
  Index stored = 0;
  for (auto const &p : params_) {
    stored += p.size();
  }
  if (stored != base + anatomy_count() * per) {
    throw Error("parameter storage disagrees with the architecture");
  }
  return net::count_parameters(arch_, anatomy_count(), scope);
}

template <typename T>
void CascadeModel<T>::set_all_trainable(bool trainable)
{
  for (auto &p : params_) {
    p.trainable = trainable;
  }
}

template <typename T>
template <typename U>
auto CascadeModel<T>::cast() const -> CascadeModel<U>
{
  CascadeModel<U> out;
  out.arch_ = arch_;
  out.anatomies_ = anatomies_;
  for (auto const &p : params_) {
    Parameter<U> q{p.name, p.shape, std::vector<U>(p.value.size()), p.trainable};
    std::transform(p.value.begin(), p.value.end(), q.value.begin(), [](T v) { return static_cast<U>(v); });
    out.params_.push_back(std::move(q));
  }
  return out;
}

template <typename T>
Gradients<T>::Gradients(CascadeModel<T> const &model)
{
  for (auto const &p : model.parameters()) {
    values.emplace_back(p.value.size(), T(0));
  }
  computed.assign(values.size(), false);
}

template <typename T>
void Gradients<T>::zero()
{
  for (auto &v : values) {
    std::fill(v.begin(), v.end(), T(0));
  }
  std::fill(computed.begin(), computed.end(), false);
}

template <typename T>
auto aspin_forward(Tensor3<T> const &h, int site, int anatomy, CascadeModel<T> const &model, NormStats<T> *stats)
    -> Tensor3<T>
{
  auto const &gamma = model.parameters()[model.gamma_index(anatomy, site)].value;
  auto const &beta = model.parameters()[model.beta_index(anatomy, site)].value;
  return instance_norm<T>(h, gamma, beta, model.arch().eps, stats);
}

template <typename T>
auto cnn_block_forward(
    CascadeModel<T> const &model,
    int cascade,
    Tensor3<T> const &x,
    std::optional<int> anatomy,
    BlockCache<T> *cache,
    int trace_layer,
    Tensor3<T> *trace) -> Tensor3<T>
{
  auto const &arch = model.arch();
  check_image_input(x);
  if (arch.aspin && !anatomy) {
    throw ArgumentError("a model with anatomy-specific normalisation needs an anatomy for every forward pass");
  }
  if (trace && (trace_layer < 1 || trace_layer > arch.conv_layers)) {
    throw ArgumentError(fmt::format("trace layer must lie in 1..{}, got {}", arch.conv_layers, trace_layer));
  }
  auto const &params = model.parameters();
  if (cache) {
    *cache = BlockCache<T>{};
    cache->input = x;
  }
  Tensor3<T> h = x;
  int const last = arch.conv_layers - 1;
  for (int l = 0; l < arch.conv_layers; l++) {
    auto const &w = params[model.conv_weight_index(cascade, l)].value;
    auto const &b = params[model.conv_bias_index(cascade, l)].value;
    Tensor3<T> a = conv_forward<T>(h, w, b, arch.layer_out(l), arch.kernel);
    if (l == last) {
      if (trace && trace_layer == l + 1) {
        *trace = a;
      }
      Tensor3<T> out = x;
      out += a;
      if (cache) {
        cache->pre.push_back(std::move(a));
      }
      return out;
    }
    NormStats<T> stats;
    Tensor3<T> n = arch.aspin ? aspin_forward(a, model.site_index(cascade, l), *anatomy, model, &stats) : a;
    if (trace && trace_layer == l + 1) {
      *trace = n;
    }
    h = relu(n);
    if (cache) {
      cache->pre.push_back(std::move(a));
      cache->normed.push_back(std::move(n));
      cache->act.push_back(h);
      cache->stats.push_back(std::move(stats));
    }
  }
  return h; // unreachable: conv_layers >= 2
}

template <typename T>
auto cnn_block_backward(
    CascadeModel<T> const &model,
    int cascade,
    BlockCache<T> const &cache,
    Tensor3<T> const &grad_out,
    std::optional<int> anatomy,
    Gradients<T> &grads,
    int trace_layer,
    Tensor3<T> const *trace_grad) -> Tensor3<T>
{
  auto const &arch = model.arch();
  auto const &params = model.parameters();
  int const last = arch.conv_layers - 1;
  if (static_cast<int>(cache.pre.size()) != arch.conv_layers) {
    throw Error("block cache is incomplete; run the forward pass with a cache first");
  }
  auto weight_grad = [&](std::size_t index) -> std::span<T> {
    return params[index].trainable ? grads.slot(index) : std::span<T>{};
  };

  Tensor3<T> grad_x = grad_out; // residual path
  Tensor3<T> g = grad_out;
  if (trace_grad && trace_layer == arch.conv_layers) {
    g += *trace_grad;
  }
  for (int l = last; l >= 0; l--) {
    Tensor3<T> const &in = l == 0 ? cache.input : cache.act[l - 1];
    auto const wi = model.conv_weight_index(cascade, l);
    auto const bi = model.conv_bias_index(cascade, l);
    Tensor3<T> g_in = conv_backward<T>(in, params[wi].value, g, arch.kernel, weight_grad(wi), weight_grad(bi));
    if (l == 0) {
      grad_x += g_in;
      break;
    }
    int const j = l - 1; // normalisation/activation index feeding layer l
    Tensor3<T> g_n = relu_backward(cache.normed[j], g_in);
    if (trace_grad && trace_layer == l) {
      g_n += *trace_grad;
    }
    if (arch.aspin) {
      int const site = model.site_index(cascade, j);
      auto const gi = model.gamma_index(*anatomy, site);
      auto const bi2 = model.beta_index(*anatomy, site);
      g = instance_norm_backward<T>(
          cache.pre[j], cache.stats[j], params[gi].value, g_n, weight_grad(gi), weight_grad(bi2));
    } else {
      g = std::move(g_n);
    }
  }
  return grad_x;
}

template <typename T>
auto model_forward(
    CascadeModel<T> const &model,
    Tensor3<T> const &x_u,
    kspace::KSpace<T> const &y,
    kspace::SamplingMask const &mask,
    std::optional<int> anatomy,
    ForwardCache<T> *cache,
    ActivationTrace<T> *trace,
    int trace_layer) -> Tensor3<T>
{
  auto const &arch = model.arch();
  check_image_input(x_u);
  if (anatomy && (*anatomy < 0 || *anatomy >= model.anatomy_count()) && arch.aspin) {
    throw ArgumentError(fmt::format("anatomy index {} is not registered", *anatomy));
  }
  if (cache) {
    cache->blocks.assign(static_cast<std::size_t>(arch.cascades), BlockCache<T>{});
    cache->anatomy = anatomy;
  }
  if (trace) {
    trace->assign(static_cast<std::size_t>(arch.cascades), Tensor3<T>{});
  }
  Tensor3<T> x = x_u;
  for (int t = 0; t < arch.cascades; t++) {
    Tensor3<T> block = cnn_block_forward(
        model, t, x, anatomy, cache ? &cache->blocks[t] : nullptr, trace_layer, trace ? &(*trace)[t] : nullptr);
    x = kspace::data_consistency(block, y, mask, arch.dc);
  }
  return x;
}

template <typename T>
auto model_backward(
    CascadeModel<T> const &model,
    ForwardCache<T> const &cache,
    kspace::SamplingMask const &mask,
    Tensor3<T> const &grad_out,
    Gradients<T> &grads,
    ActivationTrace<T> const *trace_grad,
    int trace_layer) -> Tensor3<T>
{
  auto const &arch = model.arch();
  if (static_cast<int>(cache.blocks.size()) != arch.cascades) {
    throw Error("forward cache does not match the model");
  }
  if (trace_grad && static_cast<int>(trace_grad->size()) != arch.cascades) {
    throw ArgumentError("trace gradient needs one entry per cascade");
  }
  Tensor3<T> g = grad_out;
  for (int t = arch.cascades - 1; t >= 0; t--) {
    g = kspace::data_consistency_backward(g, mask, arch.dc);
    Tensor3<T> const *tg = nullptr;
    if (trace_grad && !(*trace_grad)[t].empty()) {
      tg = &(*trace_grad)[t];
    }
    g = cnn_block_backward(model, t, cache.blocks[t], g, cache.anatomy, grads, trace_layer, tg);
  }
  return g;
}

template class CascadeModel<float>;
template class CascadeModel<double>;
template auto CascadeModel<float>::cast<double>() const -> CascadeModel<double>;
template auto CascadeModel<double>::cast<float>() const -> CascadeModel<float>;
template auto CascadeModel<float>::cast<float>() const -> CascadeModel<float>;
template auto CascadeModel<double>::cast<double>() const -> CascadeModel<double>;
template struct Gradients<float>;
template struct Gradients<double>;

#define UREC_NET_INSTANTIATE(T)                                                                                    \
  template auto aspin_forward(Tensor3<T> const &, int, int, CascadeModel<T> const &, NormStats<T> *) -> Tensor3<T>; \
  template auto cnn_block_forward(CascadeModel<T> const &, int, Tensor3<T> const &, std::optional<int>,            \
                                  BlockCache<T> *, int, Tensor3<T> *) -> Tensor3<T>;                              \
  template auto cnn_block_backward(CascadeModel<T> const &, int, BlockCache<T> const &, Tensor3<T> const &,         \
                                   std::optional<int>, Gradients<T> &, int, Tensor3<T> const *) -> Tensor3<T>;     \
  template auto model_forward(CascadeModel<T> const &, Tensor3<T> const &, kspace::KSpace<T> const &,              \
                              kspace::SamplingMask const &, std::optional<int>, ForwardCache<T> *,                 \
                              ActivationTrace<T> *, int) -> Tensor3<T>;                                            \
  template auto model_backward(CascadeModel<T> const &, ForwardCache<T> const &, kspace::SamplingMask const &,      \
                               Tensor3<T> const &, Gradients<T> &, ActivationTrace<T> const *, int) -> Tensor3<T>;

UREC_NET_INSTANTIATE(float)
UREC_NET_INSTANTIATE(double)

} // namespace urec::net
