#pragma once

#include "urec/common.hpp"
#include "urec/kspace.hpp"
#include "urec/layers.hpp"
#include "urec/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace urec::net {

/// Shape of a cascaded reconstruction network. The defaults describe D5C5:
/// five cascades of five 3x3 conv layers (2 -> 32 -> 32 -> 32 -> 32 -> 2),
/// ReLU after layers 1-4, a residual connection around each block and a data
/// consistency step after it.
struct Architecture
{
  int cascades = 5;
  int conv_layers = 5;
  int features = 32;
  int kernel = 3;
  bool aspin = false; // anatomy-specific normalisation after conv layers 1..L-1
  double eps = 1e-5;
  kspace::DcMode dc = kspace::DcMode::Hard();

  static auto d5c5() -> Architecture { return {}; }
  static auto universal() -> Architecture
  {
    Architecture a;
    a.aspin = true;
    return a;
  }

  auto sites_per_cascade() const -> int { return conv_layers - 1; }
  auto site_count() const -> int { return cascades * sites_per_cascade(); }
  auto layer_in(int layer) const -> Index { return layer == 0 ? kImageChannels : features; }
  auto layer_out(int layer) const -> Index { return layer == conv_layers - 1 ? kImageChannels : features; }
  auto base_parameter_count() const -> Index;
  auto per_anatomy_parameter_count() const -> Index { return static_cast<Index>(site_count()) * 2 * features; }
  void validate() const;

  friend auto operator==(Architecture const &, Architecture const &) -> bool = default;
};

template <typename T>
struct Parameter
{
  std::string name;
  std::vector<Index> shape;
  std::vector<T> value;
  bool trainable = true;

  auto size() const -> Index { return static_cast<Index>(value.size()); }
};

enum struct CountScope
{
  Base,
  PerAnatomy,
  Total,
};

/// Cascade network with an optional bank of anatomy-specific affine
/// parameters. Parameters are kept in one ordered list: every conv weight and
/// bias (cascade-major), then for each registered anatomy the gamma/beta pair
/// of every normalisation site.
template <typename T>
class CascadeModel
{
public:
  CascadeModel(Architecture arch, std::uint64_t init_seed);

  // Assembles a model from stored parameters, checking names and shapes.
  static auto from_parameters(
      Architecture arch, std::vector<std::string> anatomies, std::vector<Parameter<T>> params) -> CascadeModel;

  auto arch() const -> Architecture const & { return arch_; }
  auto parameters() -> std::vector<Parameter<T>> & { return params_; }
  auto parameters() const -> std::vector<Parameter<T>> const & { return params_; }

  auto conv_weight_index(int cascade, int layer) const -> std::size_t;
  auto conv_bias_index(int cascade, int layer) const -> std::size_t { return conv_weight_index(cascade, layer) + 1; }
  auto gamma_index(int anatomy, int site) const -> std::size_t;
  auto beta_index(int anatomy, int site) const -> std::size_t { return gamma_index(anatomy, site) + 1; }
  auto site_index(int cascade, int layer) const -> int { return cascade * arch_.sites_per_cascade() + layer; }

  auto anatomies() const -> std::vector<std::string> const & { return anatomies_; }
  auto anatomy_count() const -> int { return static_cast<int>(anatomies_.size()); }
  auto has_anatomy(std::string const &name) const -> bool;
  auto anatomy_index(std::string const &name) const -> int;

  /// Registers an anatomy with a fresh (gamma = 1, beta = 0) set at every
  /// normalisation site. Existing parameters are untouched.
  auto add_anatomy(std::string const &name) -> int;

  // Records the anatomies a model without a bank was trained on.
  void label_anatomies(std::vector<std::string> names);

  auto count_parameters(CountScope scope) const -> Index;

  void set_all_trainable(bool trainable);

  template <typename U>
  auto cast() const -> CascadeModel<U>;

private:
  CascadeModel() = default;
  template <typename U>
  friend class CascadeModel;

  Architecture arch_;
  std::vector<std::string> anatomies_;
  std::vector<Parameter<T>> params_;
};

/// Gradient buffers aligned with a model's parameter list. `computed` marks
/// the tensors a backward pass actually touched; frozen tensors stay false.
template <typename T>
struct Gradients
{
  std::vector<std::vector<T>> values;
  std::vector<bool> computed;

  explicit Gradients(CascadeModel<T> const &model);
  void zero();
  auto slot(std::size_t index) -> std::span<T>
  {
    computed[index] = true;
    return values[index];
  }
};

template <typename T>
struct BlockCache
{
  Tensor3<T> input;
  std::vector<Tensor3<T>> pre;    // conv outputs
  std::vector<Tensor3<T>> normed; // post-normalisation, pre-ReLU (layers 1..L-1)
  std::vector<Tensor3<T>> act;    // ReLU outputs
  std::vector<NormStats<T>> stats;
};

template <typename T>
struct ForwardCache
{
  std::vector<BlockCache<T>> blocks;
  std::optional<int> anatomy;
};

/// One recorded activation per cascade at the traced layer. For layers
/// 1..L-1 this is the pre-ReLU tensor (post-normalisation when the model has
/// a bank); for layer L it is the final conv output.
template <typename T>
using ActivationTrace = std::vector<Tensor3<T>>;

inline constexpr int kDefaultTraceLayer = 3;

/// Selects the anatomy's affine pair at a normalisation site; the statistics
/// are shared by all anatomies.
template <typename T>
auto aspin_forward(Tensor3<T> const &h, int site, int anatomy, CascadeModel<T> const &model, NormStats<T> *stats = nullptr)
    -> Tensor3<T>;

template <typename T>
auto cnn_block_forward(
    CascadeModel<T> const &model,
    int cascade,
    Tensor3<T> const &x,
    std::optional<int> anatomy,
    BlockCache<T> *cache = nullptr,
    int trace_layer = kDefaultTraceLayer,
    Tensor3<T> *trace = nullptr) -> Tensor3<T>;

// Returns the gradient w.r.t. the block input.
template <typename T>
auto cnn_block_backward(
    CascadeModel<T> const &model,
    int cascade,
    BlockCache<T> const &cache,
    Tensor3<T> const &grad_out,
    std::optional<int> anatomy,
    Gradients<T> &grads,
    int trace_layer = kDefaultTraceLayer,
    Tensor3<T> const *trace_grad = nullptr) -> Tensor3<T>;

template <typename T>
auto model_forward(
    CascadeModel<T> const &model,
    Tensor3<T> const &x_u,
    kspace::KSpace<T> const &y,
    kspace::SamplingMask const &mask,
    std::optional<int> anatomy,
    ForwardCache<T> *cache = nullptr,
    ActivationTrace<T> *trace = nullptr,
    int trace_layer = kDefaultTraceLayer) -> Tensor3<T>;

/// Accumulates parameter gradients for a loss whose gradient w.r.t. the
/// final output is grad_out, plus optional per-cascade gradients w.r.t. the
/// traced activations. Returns the gradient w.r.t. x_u.
template <typename T>
auto model_backward(
    CascadeModel<T> const &model,
    ForwardCache<T> const &cache,
    kspace::SamplingMask const &mask,
    Tensor3<T> const &grad_out,
    Gradients<T> &grads,
    ActivationTrace<T> const *trace_grad = nullptr,
    int trace_layer = kDefaultTraceLayer) -> Tensor3<T>;

auto count_parameters(Architecture const &arch, int anatomies, CountScope scope) -> Index;

} // namespace urec::net
