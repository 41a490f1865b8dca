#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "oncoclip/linalg.hpp"
#include "oncoclip/random.hpp"

namespace oncoclip::volume {
struct Volume3D;
}

namespace oncoclip::nn {

enum class Activation { identity, tanh };

struct LayerSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation act = Activation::identity;
  bool operator==(const LayerSpec&) const = default;
};

// Per-layer activations kept by a forward pass for the matching backward.
struct MlpCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> outputs;
  bool valid = false;
};

// Stack of affine layers, each followed by an activation. Parameters live in
// one flat array: for every layer, W (out x in, row-major) then b (out).
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<LayerSpec> layers);

  // in -> hidden... -> out; hidden layers use `hidden_act`.
  static Mlp stack(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                   Activation hidden_act, Activation out_act);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
  std::size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }
  std::size_t param_count() const { return params_.size(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<double> weight(std::size_t layer);
  std::span<double> bias(std::size_t layer);
  std::span<const double> weight(std::size_t layer) const;
  std::span<const double> bias(std::size_t layer) const;

  // Uniform in +-1/sqrt(fan_in), biases included.
  void init_uniform(std::uint64_t seed);
  // W = I (truncated/zero-padded for rectangular layers), b = 0.
  void init_identity();
  void set_zero();

  // Rows of x are samples. Fills `cache` when given.
  Matrix forward(const Matrix& x, MlpCache* cache = nullptr) const;
  // Accumulates dL/dparams into `grad` and returns dL/dx.
  Matrix backward(const MlpCache& cache, const Matrix& dy, std::span<double> grad) const;

  nlohmann::json layout() const;
  static Mlp from_layout(const nlohmann::json& j);

 private:
  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

// Question-order class counts of the 14 structured report attributes.
inline constexpr std::array<std::size_t, 14> kAttributeClasses{4, 4, 5, 2, 5, 4, 7, 3, 7, 4, 3, 5, 5, 3};

// Affine+tanh backbone standing in for the volumetric CNN.
struct ImageEncoder {
  Mlp backbone;

  static ImageEncoder make(std::size_t input_size, const std::vector<std::size_t>& hidden,
                           std::uint64_t seed);
  std::size_t input_size() const { return backbone.input_dim(); }
  std::size_t feature_dim() const { return backbone.output_dim(); }
};

// Maps backbone features to the text embedding dimension. Depth is
// configurable; the default is a single affine layer.
struct ProjectionHead {
  Mlp net;

  static ProjectionHead make(std::size_t feature_dim, std::size_t embed_dim, std::uint64_t seed,
                             const std::vector<std::size_t>& hidden = {});
  std::size_t embed_dim() const { return net.output_dim(); }
};

// One affine head per attribute.
struct MultiTaskHeads {
  std::vector<Mlp> heads;

  static MultiTaskHeads make(std::size_t feature_dim, std::uint64_t seed,
                             std::span<const std::size_t> classes = kAttributeClasses);
  std::size_t size() const { return heads.size(); }
};

std::vector<double> forward_image(const ImageEncoder& enc, std::span<const double> input);
std::vector<double> forward_image(const ImageEncoder& enc, const volume::Volume3D& vol);

struct TextCache {
  std::vector<std::uint32_t> tokens;
  std::vector<double> mask;  // tokens x dim; 0 or 1/(1-p)
  bool valid = false;
};

// Token-embedding table with mean pooling and inverted dropout.
struct TextEncoder {
  Matrix table;  // vocab x dim
  double dropout = 0.0;

  static TextEncoder make(std::size_t vocab, std::size_t dim, double dropout, std::uint64_t seed);
  std::size_t vocab() const { return table.rows; }
  std::size_t dim() const { return table.cols; }
};

// Mean of dropout-masked token rows. `rng` may be null, which disables dropout
// (inference with a frozen table).
std::vector<double> forward_text(const TextEncoder& enc, std::span<const std::uint32_t> tokens, Rng* rng,
                                 TextCache* cache = nullptr);
// Accumulates dL/dtable.
void backward_text(const TextEncoder& enc, const TextCache& cache, std::span<const double> dy, Matrix& grad_table);

std::vector<double> l2_normalize(std::span<const double> v);
// Row-wise normalisation; `norms` receives the original row norms.
Matrix l2_normalize_rows(const Matrix& x, std::vector<double>* norms = nullptr);
// Given y = x / |x| (row-wise) and dL/dy, returns dL/dx.
Matrix l2_normalize_rows_backward(const Matrix& y, const std::vector<double>& norms, const Matrix& dy);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace oncoclip::nn
