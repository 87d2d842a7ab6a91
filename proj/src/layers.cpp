#include "relvid/layers.hpp"

#include <cmath>

#include "relvid/error.hpp"

namespace relvid::nn {

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace {

template <typename T>
Param<T> make_param(std::string name, std::vector<int> shape, bool decay) {
  Param<T> p;
  p.name = std::move(name);
  p.value = Tensor<T>(shape);
  p.grad = Tensor<T>(std::move(shape));
  p.decay = decay;
  return p;
}

void expect_rank5(const std::vector<int>& shape, int channels, const std::string& who) {
  if (shape.size() != 5 || shape[1] != channels)
    throw InputError(who + ": expected (B, " + std::to_string(channels) + ", T, H, W), got " + shape_string(shape));
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv3d

template <typename T>
Conv3d<T>::Conv3d(std::string name, int in_c, int out_c, std::array<int, 3> k, std::array<int, 3> s,
                  std::array<int, 3> p)
    : in_channels(in_c), out_channels(out_c), kernel(k), stride(s), pad(p) {
  if (in_c <= 0 || out_c <= 0) throw ConfigError(name + ": channel counts must be positive");
  weight = make_param<T>(std::move(name), {out_c, in_c, k[0], k[1], k[2]}, true);
}

template <typename T>
void Conv3d<T>::init(Rng& rng) {
  const double fan_in = static_cast<double>(in_channels) * kernel[0] * kernel[1] * kernel[2];
  const double sd = std::sqrt(2.0 / fan_in);
  for (auto& w : weight.value.values()) w = static_cast<T>(sd * standard_normal(rng));
}

template <typename T>
kernels::Conv3dGeometry Conv3d<T>::geometry(const std::vector<int>& in) const {
  expect_rank5(in, in_channels, weight.name);
  kernels::Conv3dGeometry g;
  g.in_channels = in_channels;
  g.out_channels = out_channels;
  g.kernel = kernel;
  g.stride = stride;
  g.pad = pad;
  g.in_size = {in[2], in[3], in[4]};
  for (int o : g.out_size())
    if (o <= 0) throw InputError(weight.name + ": input " + shape_string(in) + " too small");
  return g;
}

template <typename T>
std::vector<int> Conv3d<T>::output_shape(const std::vector<int>& in) const {
  const auto o = geometry(in).out_size();
  return {in[0], out_channels, o[0], o[1], o[2]};
}

template <typename T>
Tensor<T> Conv3d<T>::forward(const Tensor<T>& x) const {
  const auto g = geometry(x.shape());
  const auto o = g.out_size();
  Tensor<T> y({x.dim(0), out_channels, o[0], o[1], o[2]});
  kernels::conv3d_forward(g, x.dim(0), x.data(), weight.value.data(), y.data());
  return y;
}

template <typename T>
Tensor<T> Conv3d<T>::backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_dx) {
  const auto g = geometry(x.shape());
  if (dy.shape() != output_shape(x.shape()))
    throw InputError(weight.name + ": gradient shape " + shape_string(dy.shape()) + " does not match output");
  kernels::conv3d_backward_weight(g, x.dim(0), x.data(), dy.data(), weight.grad.data());
  if (!need_dx) return {};
  Tensor<T> dx(x.shape());
  kernels::conv3d_backward_data(g, x.dim(0), dy.data(), weight.value.data(), dx.data());
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm3d

template <typename T>
BatchNorm3d<T>::BatchNorm3d(std::string n, int c) : channels(c), name(std::move(n)) {
  if (c <= 0) throw ConfigError(name + ": channel count must be positive");
  gamma = make_param<T>(name + ".gamma", {c}, false);
  beta = make_param<T>(name + ".beta", {c}, false);
  gamma.value.fill(T(1));
  running_mean = Tensor<T>({c});
  running_var = Tensor<T>({c}, T(1));
}

template <typename T>
Tensor<T> BatchNorm3d<T>::forward(const Tensor<T>& x, NormMode mode, Cache* cache) {
  expect_rank5(x.shape(), channels, name);
  const int b_n = x.dim(0);
  const std::size_t v_n = x.stride0() / static_cast<std::size_t>(channels);
  const double count = static_cast<double>(b_n) * static_cast<double>(v_n);
  if (mode == NormMode::Batch && count < 2) throw InputError(name + ": batch statistics need at least 2 values");
  Tensor<T> y(x.shape());
  std::vector<T> inv_std(channels);
  Tensor<T> xhat;
  if (cache) xhat = Tensor<T>(x.shape());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    double mean, var;
    if (mode == NormMode::Batch) {
      double s = 0.0;
      for (int b = 0; b < b_n; ++b) {
        const T* p = x.data() + (static_cast<std::size_t>(b) * channels + c) * v_n;
        for (std::size_t v = 0; v < v_n; ++v) s += p[v];
      }
      mean = s / count;
      double ss = 0.0;
      for (int b = 0; b < b_n; ++b) {
        const T* p = x.data() + (static_cast<std::size_t>(b) * channels + c) * v_n;
        for (std::size_t v = 0; v < v_n; ++v) {
          const double d = p[v] - mean;
          ss += d * d;
        }
      }
      var = ss / count;
      running_mean[c] = static_cast<T>((1 - momentum) * running_mean[c] + momentum * mean);
      running_var[c] = static_cast<T>((1 - momentum) * running_var[c] + momentum * ss / (count - 1));
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const T is = static_cast<T>(1.0 / std::sqrt(var + eps));
    const T m = static_cast<T>(mean);
    inv_std[c] = is;
    const T g = gamma.value[c], bt = beta.value[c];
    for (int b = 0; b < b_n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * v_n;
      const T* p = x.data() + off;
      T* q = y.data() + off;
      if (cache) {
        T* h = xhat.data() + off;
        for (std::size_t v = 0; v < v_n; ++v) {
          h[v] = (p[v] - m) * is;
          q[v] = g * h[v] + bt;
        }
      } else {
        for (std::size_t v = 0; v < v_n; ++v) q[v] = g * ((p[v] - m) * is) + bt;
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->inv_std = std::move(inv_std);
    cache->xhat = std::move(xhat);
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm3d<T>::backward(const Tensor<T>& dy, const Cache& cache) {
  if (dy.shape() != cache.xhat.shape()) throw InputError(name + ": gradient shape mismatch");
  const int b_n = dy.dim(0);
  const std::size_t v_n = dy.stride0() / static_cast<std::size_t>(channels);
  const double count = static_cast<double>(b_n) * static_cast<double>(v_n);
  Tensor<T> dx(dy.shape());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int b = 0; b < b_n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * v_n;
      const T* d = dy.data() + off;
      const T* h = cache.xhat.data() + off;
      for (std::size_t v = 0; v < v_n; ++v) {
        sum_dy += d[v];
        sum_dy_xhat += static_cast<double>(d[v]) * h[v];
      }
    }
    gamma.grad[c] += static_cast<T>(sum_dy_xhat);
    beta.grad[c] += static_cast<T>(sum_dy);
    const T scale = gamma.value[c] * cache.inv_std[c];
    if (cache.mode == NormMode::Batch) {
      const T mean_dy = static_cast<T>(sum_dy / count);
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
      for (int b = 0; b < b_n; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * v_n;
        const T* d = dy.data() + off;
        const T* h = cache.xhat.data() + off;
        T* o = dx.data() + off;
        for (std::size_t v = 0; v < v_n; ++v) o[v] = scale * (d[v] - mean_dy - h[v] * mean_dy_xhat);
      }
    } else {
      for (int b = 0; b < b_n; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * v_n;
        const T* d = dy.data() + off;
        T* o = dx.data() + off;
        for (std::size_t v = 0; v < v_n; ++v) o[v] = scale * d[v];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Pointwise and pooling

template <typename T>
void relu_inplace(Tensor<T>& x) {
  T* p = x.data();
  const std::size_t n = x.size();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) p[i] = p[i] > T(0) ? p[i] : T(0);
}

template <typename T>
void relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy) {
  if (y.shape() != dy.shape()) throw InputError("relu: gradient shape mismatch");
  const T* m = y.data();
  T* d = dy.data();
  const std::size_t n = y.size();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) d[i] = m[i] > T(0) ? d[i] : T(0);
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw InputError("add: shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  T* p = a.data();
  const T* q = b.data();
  const std::size_t n = a.size();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) p[i] += q[i];
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() < 3) throw InputError("global_avg_pool: expected (B, C, ...), got " + shape_string(x.shape()));
  const int b_n = x.dim(0), c_n = x.dim(1);
  const std::size_t v_n = x.stride0() / static_cast<std::size_t>(c_n);
  Tensor<T> y({b_n, c_n});
  for (int b = 0; b < b_n; ++b)
    for (int c = 0; c < c_n; ++c) {
      const T* p = x.data() + (static_cast<std::size_t>(b) * c_n + c) * v_n;
      double s = 0.0;
      for (std::size_t v = 0; v < v_n; ++v) s += p[v];
      y[static_cast<std::size_t>(b) * c_n + c] = static_cast<T>(s / static_cast<double>(v_n));
    }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const std::vector<int>& in_shape, const Tensor<T>& dy) {
  Tensor<T> dx(in_shape);
  const int b_n = in_shape[0], c_n = in_shape[1];
  const std::size_t v_n = dx.stride0() / static_cast<std::size_t>(c_n);
  const T scale = T(1) / static_cast<T>(v_n);
  for (int b = 0; b < b_n; ++b)
    for (int c = 0; c < c_n; ++c) {
      const T g = dy[static_cast<std::size_t>(b) * c_n + c] * scale;
      T* p = dx.data() + (static_cast<std::size_t>(b) * c_n + c) * v_n;
      for (std::size_t v = 0; v < v_n; ++v) p[v] = g;
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(std::string name, int in_f, int out_f) : in_features(in_f), out_features(out_f) {
  if (in_f <= 0 || out_f <= 0) throw ConfigError(name + ": feature counts must be positive");
  weight = make_param<T>(name + ".weight", {out_f, in_f}, true);
  bias = make_param<T>(name + ".bias", {out_f}, false);
}

template <typename T>
void Linear<T>::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  for (auto& w : weight.value.values()) w = static_cast<T>(uniform_real(rng, -bound, bound));
  for (auto& b : bias.value.values()) b = static_cast<T>(uniform_real(rng, -bound, bound));
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) const {
  if (x.rank() != 2 || x.dim(1) != in_features)
    throw InputError(weight.name + ": expected (B, " + std::to_string(in_features) + "), got " +
                     shape_string(x.shape()));
  const int b_n = x.dim(0);
  Tensor<T> y({b_n, out_features});
  for (int b = 0; b < b_n; ++b)
    for (int o = 0; o < out_features; ++o) {
      const T* w = weight.value.data() + static_cast<std::size_t>(o) * in_features;
      const T* xi = x.data() + static_cast<std::size_t>(b) * in_features;
      T s = bias.value[o];
      for (int i = 0; i < in_features; ++i) s += w[i] * xi[i];
      y[static_cast<std::size_t>(b) * out_features + o] = s;
    }
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_dx) {
  const int b_n = x.dim(0);
  if (dy.rank() != 2 || dy.dim(0) != b_n || dy.dim(1) != out_features)
    throw InputError(weight.name + ": gradient shape mismatch");
  for (int b = 0; b < b_n; ++b)
    for (int o = 0; o < out_features; ++o) {
      const T g = dy[static_cast<std::size_t>(b) * out_features + o];
      bias.grad[o] += g;
      T* gw = weight.grad.data() + static_cast<std::size_t>(o) * in_features;
      const T* xi = x.data() + static_cast<std::size_t>(b) * in_features;
      for (int i = 0; i < in_features; ++i) gw[i] += g * xi[i];
    }
  if (!need_dx) return {};
  Tensor<T> dx(x.shape());
  for (int b = 0; b < b_n; ++b)
    for (int o = 0; o < out_features; ++o) {
      const T g = dy[static_cast<std::size_t>(b) * out_features + o];
      const T* w = weight.value.data() + static_cast<std::size_t>(o) * in_features;
      T* d = dx.data() + static_cast<std::size_t>(b) * in_features;
      for (int i = 0; i < in_features; ++i) d[i] += g * w[i];
    }
  return dx;
}

#define RELVID_INSTANTIATE(T)                                                                   \
  template class Conv3d<T>;                                                                     \
  template class BatchNorm3d<T>;                                                                \
  template class Linear<T>;                                                                     \
  template void relu_inplace<T>(Tensor<T>&);                                                    \
  template void relu_backward_inplace<T>(const Tensor<T>&, Tensor<T>&);                         \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                      \
  template Tensor<T> global_avg_pool_backward<T>(const std::vector<int>&, const Tensor<T>&);
RELVID_INSTANTIATE(float)
RELVID_INSTANTIATE(double)
#undef RELVID_INSTANTIATE

}  // namespace relvid::nn
