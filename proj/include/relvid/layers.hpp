#pragma once

#include <array>
#include <string>
#include <vector>

#include "relvid/kernels.hpp"
#include "relvid/rng.hpp"
#include "relvid/tensor.hpp"

namespace relvid::nn {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = true;  ///< weight decay applies (weights only, not norms or biases)

  void zero_grad() { grad.fill(T(0)); }
};

/// Batch: normalise with batch statistics and update the running averages.
/// Frozen: normalise with the running averages (deterministic map).
enum class NormMode { Batch, Frozen };

template <typename T>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(std::string name, int in_channels, int out_channels, std::array<int, 3> kernel, std::array<int, 3> stride,
         std::array<int, 3> pad);

  /// He-normal initialisation, std = sqrt(2 / fan_in).
  void init(Rng& rng);

  kernels::Conv3dGeometry geometry(const std::vector<int>& in_shape) const;
  std::vector<int> output_shape(const std::vector<int>& in_shape) const;

  Tensor<T> forward(const Tensor<T>& x) const;
  /// Accumulates into weight.grad; returns dx, or an empty tensor when
  /// `need_dx` is false.
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_dx);

  int in_channels = 0;
  int out_channels = 0;
  std::array<int, 3> kernel{3, 3, 3};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad{1, 1, 1};
  Param<T> weight;  ///< (out, in, kt, kh, kw)
};

template <typename T>
class BatchNorm3d {
 public:
  struct Cache {
    NormMode mode = NormMode::Frozen;
    std::vector<T> inv_std;
    Tensor<T> xhat;
  };

  BatchNorm3d() = default;
  BatchNorm3d(std::string name, int channels);

  Tensor<T> forward(const Tensor<T>& x, NormMode mode, Cache* cache);
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache);

  int channels = 0;
  T momentum = T(0.1);
  T eps = T(1e-5);
  Param<T> gamma;
  Param<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  std::string name;
};

/// In place; the output doubles as the backward mask.
template <typename T>
void relu_inplace(Tensor<T>& x);
template <typename T>
void relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy);

/// (B, C, ...) -> (B, C), mean over all trailing positions.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> global_avg_pool_backward(const std::vector<int>& in_shape, const Tensor<T>& dy);

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in_features, int out_features);

  /// Uniform(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
  void init(Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_dx);

  int in_features = 0;
  int out_features = 0;
  Param<T> weight;  ///< (out, in)
  Param<T> bias;
};

/// Elementwise a += b (shapes must match).
template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

}  // namespace relvid::nn
