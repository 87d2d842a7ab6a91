#pragma once

#include <array>
#include <cstddef>

/// Compute kernels for 3D convolution. The functions in `relvid::kernels`
/// are OpenMP-parallel (im2col + blocked GEMM); `relvid::kernels::reference`
/// holds direct serial loops with the same signatures, kept for testing and
/// benchmarking.
namespace relvid::kernels {

/// Convolution geometry for one sample, channels-first (C, T, H, W).
struct Conv3dGeometry {
  int in_channels = 0;
  int out_channels = 0;
  std::array<int, 3> kernel{3, 3, 3};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad{1, 1, 1};
  std::array<int, 3> in_size{16, 112, 112};

  std::array<int, 3> out_size() const noexcept {
    std::array<int, 3> o{};
    for (int i = 0; i < 3; ++i) o[i] = (in_size[i] + 2 * pad[i] - kernel[i]) / stride[i] + 1;
    return o;
  }
  std::size_t in_volume() const noexcept {
    return static_cast<std::size_t>(in_size[0]) * in_size[1] * in_size[2];
  }
  std::size_t out_volume() const noexcept {
    const auto o = out_size();
    return static_cast<std::size_t>(o[0]) * o[1] * o[2];
  }
  std::size_t patch_size() const noexcept {
    return static_cast<std::size_t>(in_channels) * kernel[0] * kernel[1] * kernel[2];
  }
  std::size_t weight_size() const noexcept { return patch_size() * static_cast<std::size_t>(out_channels); }
};

/// C[m x n] += A[m x k] * B[k x n], all row-major with leading dimensions.
template <typename T>
void gemm_accumulate(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc);

/// C[m x n] += A[m x k] * B[n x k]^T.
template <typename T>
void gemm_nt_accumulate(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc);

/// out[b] = W * in[b] for every sample of the batch (no bias).
template <typename T>
void conv3d_forward(const Conv3dGeometry& g, int batch, const T* in, const T* weight, T* out);

/// d_in[b] = W^T * d_out[b] (overwrites d_in).
template <typename T>
void conv3d_backward_data(const Conv3dGeometry& g, int batch, const T* d_out, const T* weight, T* d_in);

/// d_weight += sum_b d_out[b] * in[b]^T.
template <typename T>
void conv3d_backward_weight(const Conv3dGeometry& g, int batch, const T* in, const T* d_out, T* d_weight);

namespace reference {

template <typename T>
void gemm_accumulate(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc);
template <typename T>
void conv3d_forward(const Conv3dGeometry& g, int batch, const T* in, const T* weight, T* out);
template <typename T>
void conv3d_backward_data(const Conv3dGeometry& g, int batch, const T* d_out, const T* weight, T* d_in);
template <typename T>
void conv3d_backward_weight(const Conv3dGeometry& g, int batch, const T* in, const T* d_out, T* d_weight);

}  // namespace reference
}  // namespace relvid::kernels
