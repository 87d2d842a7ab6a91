#include "relvid/kernels.hpp"

#include <algorithm>

namespace relvid::kernels::reference {

template <typename T>
void gemm_accumulate(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T s = 0;
      for (int p = 0; p < k; ++p) s += a[static_cast<std::size_t>(i) * lda + p] * b[static_cast<std::size_t>(p) * ldb + j];
      c[static_cast<std::size_t>(i) * ldc + j] += s;
    }
}

namespace {

// Visits every (output position, kernel tap) pair that lands inside the input.
template <typename T, typename F>
void for_each_tap(const Conv3dGeometry& g, F&& f) {
  const auto o = g.out_size();
  const auto& in = g.in_size;
  for (int co = 0; co < g.out_channels; ++co)
    for (int ci = 0; ci < g.in_channels; ++ci)
      for (int kt = 0; kt < g.kernel[0]; ++kt)
        for (int kh = 0; kh < g.kernel[1]; ++kh)
          for (int kw = 0; kw < g.kernel[2]; ++kw) {
            const std::size_t widx =
                ((static_cast<std::size_t>(co) * g.in_channels + ci) * g.kernel[0] + kt) * g.kernel[1] * g.kernel[2] +
                static_cast<std::size_t>(kh) * g.kernel[2] + kw;
            for (int t = 0; t < o[0]; ++t) {
              const int it = t * g.stride[0] + kt - g.pad[0];
              if (it < 0 || it >= in[0]) continue;
              for (int y = 0; y < o[1]; ++y) {
                const int iy = y * g.stride[1] + kh - g.pad[1];
                if (iy < 0 || iy >= in[1]) continue;
                for (int x = 0; x < o[2]; ++x) {
                  const int ix = x * g.stride[2] + kw - g.pad[2];
                  if (ix < 0 || ix >= in[2]) continue;
                  const std::size_t oidx = ((static_cast<std::size_t>(co) * o[0] + t) * o[1] + y) * o[2] + x;
                  const std::size_t iidx = ((static_cast<std::size_t>(ci) * in[0] + it) * in[1] + iy) * in[2] + ix;
                  f(widx, iidx, oidx);
                }
              }
            }
          }
}

}  // namespace

template <typename T>
void conv3d_forward(const Conv3dGeometry& g, int batch, const T* in, const T* weight, T* out) {
  const std::size_t in_n = g.in_volume() * g.in_channels;
  const std::size_t out_n = g.out_volume() * g.out_channels;
  for (int b = 0; b < batch; ++b) {
    const T* x = in + b * in_n;
    T* y = out + b * out_n;
    std::fill(y, y + out_n, T(0));
    for_each_tap<T>(g, [&](std::size_t w, std::size_t i, std::size_t o) { y[o] += weight[w] * x[i]; });
  }
}

template <typename T>
void conv3d_backward_data(const Conv3dGeometry& g, int batch, const T* d_out, const T* weight, T* d_in) {
  const std::size_t in_n = g.in_volume() * g.in_channels;
  const std::size_t out_n = g.out_volume() * g.out_channels;
  for (int b = 0; b < batch; ++b) {
    const T* dy = d_out + b * out_n;
    T* dx = d_in + b * in_n;
    std::fill(dx, dx + in_n, T(0));
    for_each_tap<T>(g, [&](std::size_t w, std::size_t i, std::size_t o) { dx[i] += weight[w] * dy[o]; });
  }
}

template <typename T>
void conv3d_backward_weight(const Conv3dGeometry& g, int batch, const T* in, const T* d_out, T* d_weight) {
  const std::size_t in_n = g.in_volume() * g.in_channels;
  const std::size_t out_n = g.out_volume() * g.out_channels;
  for (int b = 0; b < batch; ++b) {
    const T* x = in + b * in_n;
    const T* dy = d_out + b * out_n;
    for_each_tap<T>(g, [&](std::size_t w, std::size_t i, std::size_t o) { d_weight[w] += x[i] * dy[o]; });
  }
}

#define RELVID_INSTANTIATE(T)                                                                           \
  template void gemm_accumulate<T>(int, int, int, const T*, int, const T*, int, T*, int);               \
  template void conv3d_forward<T>(const Conv3dGeometry&, int, const T*, const T*, T*);                  \
  template void conv3d_backward_data<T>(const Conv3dGeometry&, int, const T*, const T*, T*);            \
  template void conv3d_backward_weight<T>(const Conv3dGeometry&, int, const T*, const T*, T*);
RELVID_INSTANTIATE(float)
RELVID_INSTANTIATE(double)
#undef RELVID_INSTANTIATE

}  // namespace relvid::kernels::reference
