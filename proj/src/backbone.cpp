#include "relvid/backbone.hpp"

#include <algorithm>
#include <cctype>

#include "relvid/error.hpp"

namespace relvid::nn {

std::string_view to_string(BackboneKind k) noexcept {
  switch (k) {
    case BackboneKind::C3D:
      return "c3d";
    case BackboneKind::R3D:
      return "r3d";
    case BackboneKind::R2plus1D:
      return "r2plus1d";
  }
  return "?";
}

BackboneKind backbone_kind_from_string(std::string_view s) {
  std::string low(s);
  std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) { return std::tolower(c); });
  if (low == "c3d") return BackboneKind::C3D;
  if (low == "r3d") return BackboneKind::R3D;
  if (low == "r2plus1d" || low == "r(2+1)d" || low == "r21d") return BackboneKind::R2plus1D;
  throw ConfigError("unknown backbone '" + std::string(s) + "'");
}

BackboneConfig BackboneConfig::tiny(BackboneKind kind) { return {kind, {8, 16, 32, 64, 64}}; }
BackboneConfig BackboneConfig::full(BackboneKind kind) { return {kind, {64, 128, 256, 512, 512}}; }

void BackboneConfig::validate() const {
  for (int w : widths)
    if (w <= 0) throw ConfigError("backbone widths must be positive");
  if (in_channels <= 0) throw ConfigError("backbone input channels must be positive");
  for (int d : input)
    if (d <= 0) throw ConfigError("backbone input extents must be positive");
}

int r2plus1d_mid_channels(int in_channels, int out_channels) {
  const long num = 27L * in_channels * out_channels;
  const long den = 9L * in_channels + 3L * out_channels;
  return static_cast<int>(std::max(1L, num / den));
}

// ---------------------------------------------------------------------------

template <typename T>
ConvUnit<T>::ConvUnit(const std::string& name, bool fact, int in_c, int out_c, std::array<int, 3> stride)
    : factorized(fact) {
  if (!factorized) {
    full = Conv3d<T>(name + ".weight", in_c, out_c, {3, 3, 3}, stride, {1, 1, 1});
    return;
  }
  const int mid = r2plus1d_mid_channels(in_c, out_c);
  spatial = Conv3d<T>(name + ".spatial.weight", in_c, mid, {1, 3, 3}, {1, stride[1], stride[2]}, {0, 1, 1});
  mid_bn = BatchNorm3d<T>(name + ".mid_bn", mid);
  temporal = Conv3d<T>(name + ".temporal.weight", mid, out_c, {3, 1, 1}, {stride[0], 1, 1}, {1, 0, 0});
}

template <typename T>
void ConvUnit<T>::init(Rng& rng) {
  if (!factorized) {
    full.init(rng);
  } else {
    spatial.init(rng);
    temporal.init(rng);
  }
}

template <typename T>
Tensor<T> ConvUnit<T>::forward(const Tensor<T>& x, NormMode mode, Cache* cache) {
  if (cache) cache->x = x;
  if (!factorized) return full.forward(x);
  Tensor<T> m = mid_bn.forward(spatial.forward(x), mode, cache ? &cache->bn : nullptr);
  relu_inplace(m);
  Tensor<T> y = temporal.forward(m);
  if (cache) cache->mid = std::move(m);
  return y;
}

template <typename T>
Tensor<T> ConvUnit<T>::backward(const Tensor<T>& dy, Cache& cache, bool need_dx) {
  if (!factorized) return full.backward(cache.x, dy, need_dx);
  Tensor<T> dm = temporal.backward(cache.mid, dy, true);
  relu_backward_inplace(cache.mid, dm);
  return spatial.backward(cache.x, mid_bn.backward(dm, cache.bn), need_dx);
}

template <typename T>
void ConvUnit<T>::collect(std::vector<Param<T>*>& params, std::vector<BatchNorm3d<T>*>& norms) {
  if (!factorized) {
    params.push_back(&full.weight);
    return;
  }
  params.push_back(&spatial.weight);
  params.push_back(&mid_bn.gamma);
  params.push_back(&mid_bn.beta);
  params.push_back(&temporal.weight);
  norms.push_back(&mid_bn);
}

// ---------------------------------------------------------------------------

template <typename T>
Block<T>::Block(const std::string& name, BackboneKind k, int in_c, int out_c, std::array<int, 3> stride)
    : kind(k), residual(k != BackboneKind::C3D) {
  const bool fact = k == BackboneKind::R2plus1D;
  conv1 = ConvUnit<T>(name + ".conv1", fact, in_c, out_c, stride);
  bn1 = BatchNorm3d<T>(name + ".bn1", out_c);
  if (!residual) return;
  conv2 = ConvUnit<T>(name + ".conv2", fact, out_c, out_c, {1, 1, 1});
  bn2 = BatchNorm3d<T>(name + ".bn2", out_c);
  project = in_c != out_c || stride != std::array<int, 3>{1, 1, 1};
  if (project) {
    proj = Conv3d<T>(name + ".proj.weight", in_c, out_c, {1, 1, 1}, stride, {0, 0, 0});
    proj_bn = BatchNorm3d<T>(name + ".proj_bn", out_c);
  }
}

template <typename T>
void Block<T>::init(Rng& rng) {
  conv1.init(rng);
  if (!residual) return;
  conv2.init(rng);
  if (project) proj.init(rng);
}

template <typename T>
Tensor<T> Block<T>::forward(const Tensor<T>& x, NormMode mode, Cache* cache) {
  Tensor<T> h = bn1.forward(conv1.forward(x, mode, cache ? &cache->c1 : nullptr), mode, cache ? &cache->b1 : nullptr);
  relu_inplace(h);
  if (!residual) {
    if (cache) cache->out = h;
    return h;
  }
  Tensor<T> z = bn2.forward(conv2.forward(h, mode, cache ? &cache->c2 : nullptr), mode, cache ? &cache->b2 : nullptr);
  if (project) {
    add_inplace(z, proj_bn.forward(proj.forward(x), mode, cache ? &cache->pb : nullptr));
    if (cache) cache->x = x;
  } else {
    add_inplace(z, x);
  }
  relu_inplace(z);
  if (cache) {
    cache->h = std::move(h);
    cache->out = z;
  }
  return z;
}

template <typename T>
Tensor<T> Block<T>::backward(const Tensor<T>& dy, Cache& cache, bool need_dx) {
  Tensor<T> dz = dy;
  relu_backward_inplace(cache.out, dz);
  if (!residual) return conv1.backward(bn1.backward(dz, cache.b1), cache.c1, need_dx);

  Tensor<T> dh = conv2.backward(bn2.backward(dz, cache.b2), cache.c2, true);
  relu_backward_inplace(cache.h, dh);
  Tensor<T> dx = conv1.backward(bn1.backward(dh, cache.b1), cache.c1, need_dx);
  if (project) {
    Tensor<T> ds = proj.backward(cache.x, proj_bn.backward(dz, cache.pb), need_dx);
    if (need_dx) add_inplace(dx, ds);
  } else if (need_dx) {
    add_inplace(dx, dz);
  }
  return dx;
}

template <typename T>
void Block<T>::collect(std::vector<Param<T>*>& params, std::vector<BatchNorm3d<T>*>& norms) {
  conv1.collect(params, norms);
  params.push_back(&bn1.gamma);
  params.push_back(&bn1.beta);
  norms.push_back(&bn1);
  if (!residual) return;
  conv2.collect(params, norms);
  params.push_back(&bn2.gamma);
  params.push_back(&bn2.beta);
  norms.push_back(&bn2);
  if (project) {
    params.push_back(&proj.weight);
    params.push_back(&proj_bn.gamma);
    params.push_back(&proj_bn.beta);
    norms.push_back(&proj_bn);
  }
}

template <typename T>
std::vector<const Conv3d<T>*> Block<T>::convolutions() const {
  std::vector<const Conv3d<T>*> out;
  auto unit = [&](const ConvUnit<T>& u) {
    if (u.factorized) {
      out.push_back(&u.spatial);
      out.push_back(&u.temporal);
    } else {
      out.push_back(&u.full);
    }
  };
  unit(conv1);
  if (residual) {
    unit(conv2);
    if (project) out.push_back(&proj);
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  int in_c = config_.in_channels;
  for (int s = 0; s < 5; ++s) {
    blocks_.emplace_back("stage" + std::to_string(s + 1), config_.kind, in_c, config_.widths[s], kStageStrides[s]);
    in_c = config_.widths[s];
  }
  for (auto& b : blocks_) b.init(rng);
}

template <typename T>
void Backbone<T>::check_input(const std::vector<int>& shape) const {
  const std::vector<int> expected_tail = {config_.in_channels, config_.input[0], config_.input[1], config_.input[2]};
  if (shape.size() != 5 || shape[0] <= 0 || !std::equal(shape.begin() + 1, shape.end(), expected_tail.begin()))
    throw InputError("backbone: expected input (B, " + std::to_string(expected_tail[0]) + ", " +
                     std::to_string(expected_tail[1]) + ", " + std::to_string(expected_tail[2]) + ", " +
                     std::to_string(expected_tail[3]) + "), got " + shape_string(shape));
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& x, NormMode mode, Tape* tape) {
  check_input(x.shape());
  if (tape) tape->blocks.assign(blocks_.size(), {});
  Tensor<T> h = x;
  for (std::size_t i = 0; i < blocks_.size(); ++i) h = blocks_[i].forward(h, mode, tape ? &tape->blocks[i] : nullptr);
  if (tape) tape->last_shape = h.shape();
  return global_avg_pool(h);
}

template <typename T>
void Backbone<T>::backward(const Tensor<T>& d_features, Tape& tape) {
  if (tape.blocks.size() != blocks_.size()) throw InputError("backbone: backward without a recorded forward");
  Tensor<T> d = global_avg_pool_backward(tape.last_shape, d_features);
  for (std::size_t i = blocks_.size(); i-- > 0;) d = blocks_[i].backward(d, tape.blocks[i], i > 0);
}

template <typename T>
std::vector<Tensor<T>> Backbone<T>::stage_outputs(const Tensor<T>& x, NormMode mode) {
  check_input(x.shape());
  std::vector<Tensor<T>> out;
  const Tensor<T>* h = &x;
  for (auto& b : blocks_) {
    out.push_back(b.forward(*h, mode, nullptr));
    h = &out.back();
  }
  return out;
}

template <typename T>
std::vector<Param<T>*> Backbone<T>::parameters() {
  std::vector<Param<T>*> params;
  std::vector<BatchNorm3d<T>*> norms;
  for (auto& b : blocks_) b.collect(params, norms);
  return params;
}

template <typename T>
std::vector<const Param<T>*> Backbone<T>::parameters() const {
  auto p = const_cast<Backbone*>(this)->parameters();
  return {p.begin(), p.end()};
}

template <typename T>
std::vector<BatchNorm3d<T>*> Backbone<T>::norms() {
  std::vector<Param<T>*> params;
  std::vector<BatchNorm3d<T>*> norms;
  for (auto& b : blocks_) b.collect(params, norms);
  return norms;
}

template <typename T>
std::vector<const BatchNorm3d<T>*> Backbone<T>::norms() const {
  auto n = const_cast<Backbone*>(this)->norms();
  return {n.begin(), n.end()};
}

template <typename T>
void Backbone<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template class ConvUnit<float>;
template class ConvUnit<double>;
template class Block<float>;
template class Block<double>;
template class Backbone<float>;
template class Backbone<double>;

}  // namespace relvid::nn
