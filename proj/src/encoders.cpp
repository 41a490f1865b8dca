#include "oncoclip/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "oncoclip/error.hpp"
#include "oncoclip/kernels.hpp"
#include "oncoclip/volume.hpp"

namespace oncoclip::nn {

namespace {

const char* activation_name(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

Activation activation_from(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation: " + s);
}

}  // namespace

Mlp::Mlp(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
  std::size_t total = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& s = layers_[l];
    if (s.in == 0 || s.out == 0) throw std::invalid_argument("Mlp: layer dims must be positive");
    if (l > 0 && layers_[l - 1].out != s.in) throw std::invalid_argument("Mlp: consecutive layer dims do not chain");
    offsets_.push_back(total);
    total += s.out * s.in + s.out;
  }
  params_.assign(total, 0.0);
}

Mlp Mlp::stack(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, Activation hidden_act,
               Activation out_act) {
  std::vector<LayerSpec> specs;
  std::size_t prev = in;
  for (auto h : hidden) {
    specs.push_back({prev, h, hidden_act});
    prev = h;
  }
  specs.push_back({prev, out, out_act});
  return Mlp(std::move(specs));
}

std::span<double> Mlp::weight(std::size_t l) {
  return {params_.data() + offsets_.at(l), layers_[l].out * layers_[l].in};
}
std::span<double> Mlp::bias(std::size_t l) {
  return {params_.data() + offsets_.at(l) + layers_[l].out * layers_[l].in, layers_[l].out};
}
std::span<const double> Mlp::weight(std::size_t l) const {
  return {params_.data() + offsets_.at(l), layers_[l].out * layers_[l].in};
}
std::span<const double> Mlp::bias(std::size_t l) const {
  return {params_.data() + offsets_.at(l) + layers_[l].out * layers_[l].in, layers_[l].out};
}

void Mlp::init_uniform(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layers_[l].in));
    for (auto& w : weight(l)) w = rng.uniform(-bound, bound);
    for (auto& b : bias(l)) b = rng.uniform(-bound, bound);
  }
}

void Mlp::init_identity() {
  set_zero();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto w = weight(l);
    const auto n = std::min(layers_[l].in, layers_[l].out);
    for (std::size_t i = 0; i < n; ++i) w[i * layers_[l].in + i] = 1.0;
  }
}

void Mlp::set_zero() { std::fill(params_.begin(), params_.end(), 0.0); }

Matrix Mlp::forward(const Matrix& x, MlpCache* cache) const {
  if (layers_.empty()) throw StateError("Mlp::forward: empty network");
  if (x.cols != input_dim())
    throw std::invalid_argument("Mlp::forward: input has " + std::to_string(x.cols) + " columns, expected " +
                                std::to_string(input_dim()));
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->outputs.clear();
    cache->valid = false;
  }
  Matrix cur = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix next(cur.rows, layers_[l].out);
    kernels::affine(cur, weight(l), bias(l), next);
    if (layers_[l].act == Activation::tanh)
      for (auto& v : next.data) v = std::tanh(v);
    if (cache != nullptr) cache->inputs.push_back(std::move(cur));
    cur = std::move(next);
    if (cache != nullptr) cache->outputs.push_back(cur);
  }
  if (cache != nullptr) cache->valid = true;
  return cur;
}

Matrix Mlp::backward(const MlpCache& cache, const Matrix& dy, std::span<double> grad) const {
  if (!cache.valid || cache.inputs.size() != layers_.size())
    throw StateError("Mlp::backward: no matching forward cache");
  if (grad.size() != params_.size()) throw std::invalid_argument("Mlp::backward: gradient buffer size mismatch");
  Matrix delta = dy;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& spec = layers_[li];
    const Matrix& in = cache.inputs[li];
    const Matrix& out = cache.outputs[li];
    if (delta.rows != out.rows || delta.cols != out.cols)
      throw std::invalid_argument("Mlp::backward: upstream gradient shape mismatch");
    if (spec.act == Activation::tanh)
      for (std::size_t k = 0; k < delta.data.size(); ++k) delta.data[k] *= 1.0 - out.data[k] * out.data[k];

    double* gw = grad.data() + offsets_[li];
    double* gb = gw + spec.out * spec.in;
    const auto n_out = static_cast<long long>(spec.out);
#pragma omp parallel for schedule(static)
    for (long long oo = 0; oo < n_out; ++oo) {
      const auto o = static_cast<std::size_t>(oo);
      double* gwo = gw + o * spec.in;
      double sb = 0.0;
      for (std::size_t i = 0; i < in.rows; ++i) {
        const double d = delta(i, o);
        if (d == 0.0) continue;
        sb += d;
        const double* xi = in.data.data() + i * spec.in;
        for (std::size_t k = 0; k < spec.in; ++k) gwo[k] += d * xi[k];
      }
      gb[o] += sb;
    }

    const auto w = weight(li);
    Matrix dx(in.rows, spec.in);
    const auto n_rows = static_cast<long long>(in.rows);
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < n_rows; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      double* dxi = dx.data.data() + i * spec.in;
      for (std::size_t o = 0; o < spec.out; ++o) {
        const double d = delta(i, o);
        if (d == 0.0) continue;
        const double* wo = w.data() + o * spec.in;
        for (std::size_t k = 0; k < spec.in; ++k) dxi[k] += d * wo[k];
      }
    }
    delta = std::move(dx);
  }
  return delta;
}

nlohmann::json Mlp::layout() const {
  auto arr = nlohmann::json::array();
  for (const auto& s : layers_) arr.push_back({s.in, s.out, activation_name(s.act)});
  return arr;
}

Mlp Mlp::from_layout(const nlohmann::json& j) {
  std::vector<LayerSpec> specs;
  for (const auto& l : j)
    specs.push_back({l.at(0).get<std::size_t>(), l.at(1).get<std::size_t>(), activation_from(l.at(2).get<std::string>())});
  return Mlp(std::move(specs));
}

ImageEncoder ImageEncoder::make(std::size_t input_size, const std::vector<std::size_t>& hidden, std::uint64_t seed) {
  if (hidden.empty()) throw std::invalid_argument("ImageEncoder: at least one layer required");
  std::vector<std::size_t> inner(hidden.begin(), hidden.end() - 1);
  ImageEncoder enc{Mlp::stack(input_size, inner, hidden.back(), Activation::tanh, Activation::tanh)};
  enc.backbone.init_uniform(seed);
  return enc;
}

ProjectionHead ProjectionHead::make(std::size_t feature_dim, std::size_t embed_dim, std::uint64_t seed,
                                    const std::vector<std::size_t>& hidden) {
  ProjectionHead head{Mlp::stack(feature_dim, hidden, embed_dim, Activation::tanh, Activation::identity)};
  head.net.init_uniform(seed);
  return head;
}

MultiTaskHeads MultiTaskHeads::make(std::size_t feature_dim, std::uint64_t seed, std::span<const std::size_t> classes) {
  MultiTaskHeads h;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    Mlp head({{feature_dim, classes[k], Activation::identity}});
    head.init_uniform(derive_seed(seed, k));
    h.heads.push_back(std::move(head));
  }
  return h;
}

std::vector<double> forward_image(const ImageEncoder& enc, std::span<const double> input) {
  if (input.size() != enc.input_size())
    throw std::invalid_argument("forward_image: input size " + std::to_string(input.size()) + " does not match encoder input " +
                                std::to_string(enc.input_size()));
  Matrix x(1, input.size());
  std::copy(input.begin(), input.end(), x.data.begin());
  return enc.backbone.forward(x).row_vector(0);
}

std::vector<double> forward_image(const ImageEncoder& enc, const volume::Volume3D& vol) {
  std::vector<double> flat(vol.voxels.begin(), vol.voxels.end());
  return forward_image(enc, flat);
}

TextEncoder TextEncoder::make(std::size_t vocab, std::size_t dim, double dropout, std::uint64_t seed) {
  if (vocab == 0 || dim == 0) throw std::invalid_argument("TextEncoder: vocab and dim must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("TextEncoder: dropout must be in [0, 1)");
  TextEncoder enc{Matrix(vocab, dim), dropout};
  Rng rng(seed);
  for (auto& v : enc.table.data) v = rng.uniform(-1.0, 1.0);
  return enc;
}

std::vector<double> forward_text(const TextEncoder& enc, std::span<const std::uint32_t> tokens, Rng* rng,
                                 TextCache* cache) {
  if (tokens.empty()) throw std::invalid_argument("forward_text: empty token sequence");
  const std::size_t d = enc.dim();
  for (auto t : tokens)
    if (t >= enc.vocab()) throw std::invalid_argument("forward_text: token id " + std::to_string(t) + " out of vocabulary");
  const bool drop = rng != nullptr && enc.dropout > 0.0;
  const double keep_scale = drop ? 1.0 / (1.0 - enc.dropout) : 1.0;
  std::vector<double> mask;
  if (drop || cache != nullptr) mask.assign(tokens.size() * d, 1.0);
  if (drop)
    for (auto& m : mask) m = rng->uniform() < enc.dropout ? 0.0 : keep_scale;

  std::vector<double> out(d, 0.0);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto row = enc.table.row(tokens[t]);
    for (std::size_t k = 0; k < d; ++k) out[k] += drop ? row[k] * mask[t * d + k] : row[k];
  }
  const double inv_n = 1.0 / static_cast<double>(tokens.size());
  for (auto& v : out) v *= inv_n;
  if (cache != nullptr) {
    cache->tokens.assign(tokens.begin(), tokens.end());
    cache->mask = std::move(mask);
    cache->valid = true;
  }
  return out;
}

void backward_text(const TextEncoder& enc, const TextCache& cache, std::span<const double> dy, Matrix& grad_table) {
  if (!cache.valid) throw StateError("backward_text: no matching forward cache");
  if (dy.size() != enc.dim()) throw std::invalid_argument("backward_text: gradient dimension mismatch");
  if (grad_table.rows != enc.vocab() || grad_table.cols != enc.dim()) grad_table = Matrix(enc.vocab(), enc.dim());
  const std::size_t d = enc.dim();
  const double inv_n = 1.0 / static_cast<double>(cache.tokens.size());
  for (std::size_t t = 0; t < cache.tokens.size(); ++t) {
    auto g = grad_table.row(cache.tokens[t]);
    for (std::size_t k = 0; k < d; ++k) g[k] += dy[k] * cache.mask[t * d + k] * inv_n;
  }
}

std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = std::sqrt(dot(v, v));
  if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("l2_normalize: zero or non-finite vector");
  std::vector<double> out(v.begin(), v.end());
  for (auto& x : out) x /= n;
  return out;
}

Matrix l2_normalize_rows(const Matrix& x, std::vector<double>* norms) {
  Matrix y = x;
  if (norms != nullptr) norms->assign(x.rows, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double n = std::sqrt(dot(x.row(i), x.row(i)));
    if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("l2_normalize_rows: zero or non-finite row");
    for (auto& v : y.row(i)) v /= n;
    if (norms != nullptr) (*norms)[i] = n;
  }
  return y;
}

Matrix l2_normalize_rows_backward(const Matrix& y, const std::vector<double>& norms, const Matrix& dy) {
  Matrix dx(y.rows, y.cols);
  for (std::size_t i = 0; i < y.rows; ++i) {
    const double proj = dot(y.row(i), dy.row(i));
    for (std::size_t k = 0; k < y.cols; ++k) dx(i, k) = (dy(i, k) - y(i, k) * proj) / norms[i];
  }
  return dx;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += (p[i] = std::exp(logits[i] - m));
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace oncoclip::nn
