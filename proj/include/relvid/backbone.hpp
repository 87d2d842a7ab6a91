#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "relvid/layers.hpp"

namespace relvid::nn {

enum class BackboneKind { C3D, R3D, R2plus1D };

std::string_view to_string(BackboneKind k) noexcept;
/// Accepts "c3d", "r3d", "r2plus1d" (case-insensitive).
BackboneKind backbone_kind_from_string(std::string_view s);

/// Per-stage (temporal, height, width) strides. With 3x3x3 kernels and unit
/// padding a 16x112x112 clip becomes 16x56x56, 8x28x28, 4x14x14, 2x7x7 and
/// finally 2x4x4 before global average pooling.
inline constexpr std::array<std::array<int, 3>, 5> kStageStrides = {
    {{1, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {1, 2, 2}}};

struct BackboneConfig {
  BackboneKind kind = BackboneKind::C3D;
  std::array<int, 5> widths{8, 16, 32, 64, 64};
  int in_channels = 3;
  std::array<int, 3> input{16, 112, 112};  ///< (T, H, W)

  static BackboneConfig tiny(BackboneKind kind);
  static BackboneConfig full(BackboneKind kind);

  int feature_dim() const noexcept { return widths[4]; }
  /// Throws ConfigError on non-positive widths or input extents.
  void validate() const;
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

/// Intermediate width of a factorised (2+1)D convolution chosen so that its
/// parameter count matches the full 3x3x3 kernel:
/// floor(27 * in * out / (9 * in + 3 * out)).
int r2plus1d_mid_channels(int in_channels, int out_channels);

/// A 3x3x3 convolution, or its (2+1)D factorisation: 1x3x3 spatial conv,
/// batch norm, ReLU, 3x1x1 temporal conv.
template <typename T>
class ConvUnit {
 public:
  struct Cache {
    Tensor<T> x;
    Tensor<T> mid;  ///< factorised only: ReLU output between the two convs
    typename BatchNorm3d<T>::Cache bn;
  };

  ConvUnit() = default;
  ConvUnit(const std::string& name, bool factorized, int in_channels, int out_channels, std::array<int, 3> stride);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, NormMode mode, Cache* cache);
  Tensor<T> backward(const Tensor<T>& dy, Cache& cache, bool need_dx);
  void collect(std::vector<Param<T>*>& params, std::vector<BatchNorm3d<T>*>& norms);

  bool factorized = false;
  Conv3d<T> full;
  Conv3d<T> spatial;
  BatchNorm3d<T> mid_bn;
  Conv3d<T> temporal;
};

/// C3D: conv-BN-ReLU. R3D / R(2+1)D: two conv-BN stages with an additive
/// skip (1x1x1 conv + BN when the shape changes) and a final ReLU.
template <typename T>
class Block {
 public:
  struct Cache {
    typename ConvUnit<T>::Cache c1, c2;
    typename BatchNorm3d<T>::Cache b1, b2, pb;
    Tensor<T> h;    ///< residual only: ReLU output of the first stage
    Tensor<T> x;    ///< residual with projection: block input
    Tensor<T> out;  ///< final ReLU output
  };

  Block() = default;
  Block(const std::string& name, BackboneKind kind, int in_channels, int out_channels, std::array<int, 3> stride);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, NormMode mode, Cache* cache);
  Tensor<T> backward(const Tensor<T>& dy, Cache& cache, bool need_dx);
  void collect(std::vector<Param<T>*>& params, std::vector<BatchNorm3d<T>*>& norms);

  /// Every convolution of the block, in forward order.
  std::vector<const Conv3d<T>*> convolutions() const;

  BackboneKind kind = BackboneKind::C3D;
  bool residual = false;
  bool project = false;
  ConvUnit<T> conv1;
  BatchNorm3d<T> bn1;
  ConvUnit<T> conv2;
  BatchNorm3d<T> bn2;
  Conv3d<T> proj;
  BatchNorm3d<T> proj_bn;
};

template <typename T>
class Backbone {
 public:
  /// Per-forward activation record; one per siamese stack.
  struct Tape {
    std::vector<typename Block<T>::Cache> blocks;
    std::vector<int> last_shape;
  };

  Backbone() = default;
  /// Deterministic architecture; parameters drawn from `rng`.
  Backbone(const BackboneConfig& config, Rng& rng);

  const BackboneConfig& config() const noexcept { return config_; }

  /// (B, C, T, H, W) -> (B, feature_dim). With a tape the activations needed
  /// by `backward` are recorded.
  Tensor<T> forward(const Tensor<T>& x, NormMode mode, Tape* tape = nullptr);
  /// Accumulates parameter gradients from d(loss)/d(features).
  void backward(const Tensor<T>& d_features, Tape& tape);

  /// Outputs of the five stages (before pooling).
  std::vector<Tensor<T>> stage_outputs(const Tensor<T>& x, NormMode mode = NormMode::Frozen);

  /// Stable order; names are unique.
  std::vector<Param<T>*> parameters();
  std::vector<const Param<T>*> parameters() const;
  std::vector<BatchNorm3d<T>*> norms();
  std::vector<const BatchNorm3d<T>*> norms() const;
  const std::vector<Block<T>>& blocks() const noexcept { return blocks_; }

  void zero_grad();
  void check_input(const std::vector<int>& shape) const;

 private:
  BackboneConfig config_;
  std::vector<Block<T>> blocks_;
};

}  // namespace relvid::nn
