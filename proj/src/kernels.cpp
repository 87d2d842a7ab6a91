#include "relvid/kernels.hpp"

#include <algorithm>
#include <memory>
#include <stdexcept>
#include <vector>

namespace relvid::kernels {
namespace {

// Register tile: MR rows of C by two vector widths of columns.
template <typename T>
constexpr int kTileCols = 128 / static_cast<int>(sizeof(T));
constexpr int kTileRows = 4;
constexpr int kPanelCols = 256;

template <typename T, int MR, int NR>
inline void micro_tile(int k, const T* __restrict a, int lda, const T* __restrict b, int ldb, T* __restrict c,
                       int ldc) {
  T acc[MR][NR];
  for (int r = 0; r < MR; ++r)
    for (int j = 0; j < NR; ++j) acc[r][j] = c[static_cast<std::size_t>(r) * ldc + j];
  for (int p = 0; p < k; ++p) {
    const T* bp = b + static_cast<std::size_t>(p) * ldb;
    for (int r = 0; r < MR; ++r) {
      const T ar = a[static_cast<std::size_t>(r) * lda + p];
#pragma omp simd
      for (int j = 0; j < NR; ++j) acc[r][j] += ar * bp[j];
    }
  }
  for (int r = 0; r < MR; ++r)
    for (int j = 0; j < NR; ++j) c[static_cast<std::size_t>(r) * ldc + j] = acc[r][j];
}

template <typename T>
inline void edge_tile(int mr, int nr, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
  for (int r = 0; r < mr; ++r) {
    T* cr = c + static_cast<std::size_t>(r) * ldc;
    for (int p = 0; p < k; ++p) {
      const T ar = a[static_cast<std::size_t>(r) * lda + p];
      const T* bp = b + static_cast<std::size_t>(p) * ldb;
#pragma omp simd
      for (int j = 0; j < nr; ++j) cr[j] += ar * bp[j];
    }
  }
}

// Rows of the patch matrix restricted to output positions [p0, p1); the
// panel is laid out row-major with leading dimension p1 - p0.
template <typename T>
void im2col_panel(const Conv3dGeometry& g, const T* x, std::size_t p0, std::size_t p1, T* col) {
  const auto o = g.out_size();
  const auto& in = g.in_size;
  const std::size_t width = p1 - p0;
  const std::size_t plane = static_cast<std::size_t>(o[1]) * o[2];
  const int sw = g.stride[2];
  const int kt_n = g.kernel[0], kh_n = g.kernel[1], kw_n = g.kernel[2];
  int lo[8], hi[8];
  for (int kw = 0; kw < kw_n; ++kw) {
    lo[kw] = 0;
    hi[kw] = o[2];
    while (lo[kw] < o[2] && lo[kw] * sw + kw - g.pad[2] < 0) ++lo[kw];
    while (hi[kw] > lo[kw] && (hi[kw] - 1) * sw + kw - g.pad[2] >= in[2]) --hi[kw];
  }
  std::size_t p = p0;
  while (p < p1) {
    const int t = static_cast<int>(p / plane);
    const int y = static_cast<int>((p / o[2]) % o[1]);
    const int xa = static_cast<int>(p % o[2]);
    const int xb = static_cast<int>(std::min<std::size_t>(o[2], xa + (p1 - p)));
    const std::size_t off = (p - p0) - static_cast<std::size_t>(xa);
    int row = 0;
    for (int ci = 0; ci < g.in_channels; ++ci) {
      const T* src = x + static_cast<std::size_t>(ci) * g.in_volume();
      for (int kt = 0; kt < kt_n; ++kt) {
        const int it = t * g.stride[0] + kt - g.pad[0];
        for (int kh = 0; kh < kh_n; ++kh) {
          const int iy = y * g.stride[1] + kh - g.pad[1];
          const bool inside = it >= 0 && it < in[0] && iy >= 0 && iy < in[1];
          const T* s = src + (inside ? (static_cast<std::size_t>(it) * in[1] + iy) * in[2] : 0);
          for (int kw = 0; kw < kw_n; ++kw, ++row) {
            T* d = col + static_cast<std::size_t>(row) * width + off;
            if (!inside) {
              for (int xx = xa; xx < xb; ++xx) d[xx] = T(0);
              continue;
            }
            const int l = std::clamp(lo[kw], xa, xb), h = std::clamp(hi[kw], l, xb);
            for (int xx = xa; xx < l; ++xx) d[xx] = T(0);
            const T* sk = s + kw - g.pad[2];
            if (sw == 1) {
              for (int xx = l; xx < h; ++xx) d[xx] = sk[xx];
            } else if (sw == 2) {
              for (int xx = l; xx < h; ++xx) d[xx] = sk[2 * xx];
            } else {
              for (int xx = l; xx < h; ++xx) d[xx] = sk[xx * sw];
            }
            for (int xx = h; xx < xb; ++xx) d[xx] = T(0);
          }
        }
      }
    }
    p += static_cast<std::size_t>(xb - xa);
  }
}

// Scatter-adds a patch-matrix panel back onto the input gradient. Lines
// are visited in position order and taps in patch order, so the summation
// order is fixed.
template <typename T>
void col2im_panel(const Conv3dGeometry& g, const T* col, std::size_t p0, std::size_t p1, T* dx) {
  const auto o = g.out_size();
  const auto& in = g.in_size;
  const std::size_t width = p1 - p0;
  const std::size_t plane = static_cast<std::size_t>(o[1]) * o[2];
  const int sw = g.stride[2];
  const int kt_n = g.kernel[0], kh_n = g.kernel[1], kw_n = g.kernel[2];
  int lo[8], hi[8];
  for (int kw = 0; kw < kw_n; ++kw) {
    lo[kw] = 0;
    hi[kw] = o[2];
    while (lo[kw] < o[2] && lo[kw] * sw + kw - g.pad[2] < 0) ++lo[kw];
    while (hi[kw] > lo[kw] && (hi[kw] - 1) * sw + kw - g.pad[2] >= in[2]) --hi[kw];
  }
  // Channels own disjoint slices of dx.
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < g.in_channels; ++ci) {
    T* dst = dx + static_cast<std::size_t>(ci) * g.in_volume();
    std::size_t p = p0;
    while (p < p1) {
      const int t = static_cast<int>(p / plane);
      const int y = static_cast<int>((p / o[2]) % o[1]);
      const int xa = static_cast<int>(p % o[2]);
      const int xb = static_cast<int>(std::min<std::size_t>(o[2], xa + (p1 - p)));
      const std::size_t off = (p - p0) - static_cast<std::size_t>(xa);
      int row = ci * kt_n * kh_n * kw_n;
      for (int kt = 0; kt < kt_n; ++kt) {
        const int it = t * g.stride[0] + kt - g.pad[0];
        for (int kh = 0; kh < kh_n; ++kh, row += kw_n) {
          const int iy = y * g.stride[1] + kh - g.pad[1];
          if (it < 0 || it >= in[0] || iy < 0 || iy >= in[1]) continue;
          T* d = dst + (static_cast<std::size_t>(it) * in[1] + iy) * in[2] - g.pad[2];
          for (int kw = 0; kw < kw_n; ++kw) {
            const T* sr = col + static_cast<std::size_t>(row + kw) * width + off;
            const int l = std::clamp(lo[kw], xa, xb), h = std::clamp(hi[kw], l, xb);
            T* dk = d + kw;
            if (sw == 1) {
              for (int xx = l; xx < h; ++xx) dk[xx] += sr[xx];
            } else {
              for (int xx = l; xx < h; ++xx) dk[xx * sw] += sr[xx];
            }
          }
        }
      }
      p += static_cast<std::size_t>(xb - xa);
    }
  }
}

/// Output positions per patch-matrix panel: keeps a panel near 256 KiB.
template <typename T>
std::size_t panel_width(std::size_t k, std::size_t n) {
  std::size_t w = (std::size_t{1} << 18) / (sizeof(T) * std::max<std::size_t>(k, 1));
  w = std::max<std::size_t>(64, w / 64 * 64);
  return std::min(w, n);
}

// Scratch buffer reused across calls; avoids re-faulting large im2col pages.
template <typename T>
T* workspace(std::size_t size, int slot = 0) {
  thread_local std::unique_ptr<T[]> buf[2];
  thread_local std::size_t cap[2] = {0, 0};
  if (size > cap[slot]) {
    buf[slot].reset(new T[size]);
    cap[slot] = size;
  }
  return buf[slot].get();
}

constexpr std::size_t kSmallVolume = 512;

bool is_pointwise(const Conv3dGeometry& g) {
  return g.kernel == std::array<int, 3>{1, 1, 1} && g.stride == std::array<int, 3>{1, 1, 1} &&
         g.pad == std::array<int, 3>{0, 0, 0};
}

template <typename T>
void gemm_panel(int m, int j0, int j1, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
  constexpr int NR = kTileCols<T>;
  constexpr int MR = kTileRows;
  for (int i = 0; i < m; i += MR) {
    const int mr = std::min(MR, m - i);
    const T* ai = a + static_cast<std::size_t>(i) * lda;
    T* ci = c + static_cast<std::size_t>(i) * ldc;
    int j = j0;
    if (mr == MR)
      for (; j + NR <= j1; j += NR) micro_tile<T, MR, NR>(k, ai, lda, b + j, ldb, ci + j, ldc);
    if (j < j1) edge_tile(mr, j1 - j, k, ai, lda, b + j, ldb, ci + j, ldc);
  }
}

template <typename T>
void gemm_serial(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
  for (int j0 = 0; j0 < n; j0 += kPanelCols) gemm_panel(m, j0, std::min(n, j0 + kPanelCols), k, a, lda, b, ldb, c, ldc);
}

}  // namespace

template <typename T>
void gemm_accumulate(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
  const int panels = (n + kPanelCols - 1) / kPanelCols;
  // Each thread owns whole column panels of C, so results do not depend on
  // the thread count.
#pragma omp parallel for schedule(static)
  for (int pnl = 0; pnl < panels; ++pnl) {
    const int j0 = pnl * kPanelCols;
    gemm_panel(m, j0, std::min(n, j0 + kPanelCols), k, a, lda, b, ldb, c, ldc);
  }
}

template <typename T>
void gemm_nt_accumulate(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
  constexpr int R = 4;
  const int col_blocks = (n + R - 1) / R;
#pragma omp parallel for schedule(static)
  for (int jb = 0; jb < col_blocks; ++jb) {
    const int j = jb * R;
    const int nr = std::min(R, n - j);
    for (int i = 0; i < m; i += R) {
      const int mr = std::min(R, m - i);
      if (mr == R && nr == R) {
        const T* a0 = a + static_cast<std::size_t>(i) * lda;
        const T* a1 = a0 + lda;
        const T* a2 = a1 + lda;
        const T* a3 = a2 + lda;
        const T* b0 = b + static_cast<std::size_t>(j) * ldb;
        const T* b1 = b0 + ldb;
        const T* b2 = b1 + ldb;
        const T* b3 = b2 + ldb;
        T s00 = 0, s01 = 0, s02 = 0, s03 = 0, s10 = 0, s11 = 0, s12 = 0, s13 = 0;
        T s20 = 0, s21 = 0, s22 = 0, s23 = 0, s30 = 0, s31 = 0, s32 = 0, s33 = 0;
#pragma omp simd reduction(+ : s00, s01, s02, s03, s10, s11, s12, s13, s20, s21, s22, s23, s30, s31, s32, s33)
        for (int p = 0; p < k; ++p) {
          const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
          const T y0 = b0[p], y1 = b1[p], y2 = b2[p], y3 = b3[p];
          s00 += x0 * y0; s01 += x0 * y1; s02 += x0 * y2; s03 += x0 * y3;
          s10 += x1 * y0; s11 += x1 * y1; s12 += x1 * y2; s13 += x1 * y3;
          s20 += x2 * y0; s21 += x2 * y1; s22 += x2 * y2; s23 += x2 * y3;
          s30 += x3 * y0; s31 += x3 * y1; s32 += x3 * y2; s33 += x3 * y3;
        }
        T* c0 = c + static_cast<std::size_t>(i) * ldc + j;
        c0[0] += s00; c0[1] += s01; c0[2] += s02; c0[3] += s03;
        c0 += ldc;
        c0[0] += s10; c0[1] += s11; c0[2] += s12; c0[3] += s13;
        c0 += ldc;
        c0[0] += s20; c0[1] += s21; c0[2] += s22; c0[3] += s23;
        c0 += ldc;
        c0[0] += s30; c0[1] += s31; c0[2] += s32; c0[3] += s33;
      } else {
        for (int r = 0; r < mr; ++r)
          for (int q = 0; q < nr; ++q) {
            const T* ar = a + static_cast<std::size_t>(i + r) * lda;
            const T* bq = b + static_cast<std::size_t>(j + q) * ldb;
            T sum = 0;
#pragma omp simd reduction(+ : sum)
            for (int p = 0; p < k; ++p) sum += ar[p] * bq[p];
            c[static_cast<std::size_t>(i + r) * ldc + j + q] += sum;
          }
      }
    }
  }
}

void check(const Conv3dGeometry& g) {
  for (int e : g.kernel)
    if (e < 1 || e > 8)
      throw std::invalid_argument("conv3d: kernel extent must be in [1, 8]");
}

template <typename T>
void conv3d_forward(const Conv3dGeometry& g, int batch, const T* in, const T* weight, T* out) {
  check(g);
  const std::size_t in_n = g.in_volume() * g.in_channels;
  const std::size_t n = g.out_volume();
  const std::size_t out_n = n * g.out_channels;
  const std::size_t k = g.patch_size();
  const bool pointwise = is_pointwise(g);
  const std::size_t pw = panel_width<T>(k, n);
  const std::size_t panels = (n + pw - 1) / pw;
  for (int b = 0; b < batch; ++b) {
    const T* x = in + b * in_n;
    T* y = out + b * out_n;
    std::fill(y, y + out_n, T(0));
    if (pointwise) {
      gemm_accumulate<T>(g.out_channels, static_cast<int>(n), static_cast<int>(k), weight, static_cast<int>(k), x,
                         static_cast<int>(n), y, static_cast<int>(n));
      continue;
    }
#pragma omp parallel for schedule(static)
    for (std::size_t pi = 0; pi < panels; ++pi) {
      const std::size_t p0 = pi * pw, p1 = std::min(n, p0 + pw);
      T* col = workspace<T>(k * pw);
      im2col_panel(g, x, p0, p1, col);
      gemm_serial<T>(g.out_channels, static_cast<int>(p1 - p0), static_cast<int>(k), weight, static_cast<int>(k),
                     col, static_cast<int>(p1 - p0), y + p0, static_cast<int>(n));
    }
  }
}

template <typename T>
void conv3d_backward_data(const Conv3dGeometry& g, int batch, const T* d_out, const T* weight, T* d_in) {
  check(g);
  const std::size_t in_n = g.in_volume() * g.in_channels;
  const std::size_t n = g.out_volume();
  const std::size_t out_n = n * g.out_channels;
  const std::size_t k = g.patch_size();
  const bool pointwise = is_pointwise(g);
  std::vector<T> wt(k * g.out_channels);
  for (int co = 0; co < g.out_channels; ++co)
    for (std::size_t p = 0; p < k; ++p) wt[p * g.out_channels + co] = weight[co * k + p];
  const std::size_t pw = panel_width<T>(k, n);
  T* col = pointwise ? nullptr : workspace<T>(k * pw);
  for (int b = 0; b < batch; ++b) {
    const T* dy = d_out + b * out_n;
    T* dx = d_in + b * in_n;
    std::fill(dx, dx + in_n, T(0));
    if (pointwise) {
      gemm_accumulate<T>(static_cast<int>(k), static_cast<int>(n), g.out_channels, wt.data(), g.out_channels, dy,
                         static_cast<int>(n), dx, static_cast<int>(n));
      continue;
    }
    // Panels overlap in dx (kernel halo), so they are visited in order.
    for (std::size_t p0 = 0; p0 < n; p0 += pw) {
      const std::size_t p1 = std::min(n, p0 + pw);
      const std::size_t w = p1 - p0;
      std::fill(col, col + k * w, T(0));
      gemm_accumulate<T>(static_cast<int>(k), static_cast<int>(w), g.out_channels, wt.data(), g.out_channels,
                         dy + p0, static_cast<int>(n), col, static_cast<int>(w));
      col2im_panel(g, col, p0, p1, dx);
    }
  }
}

template <typename T>
void conv3d_backward_weight(const Conv3dGeometry& g, int batch, const T* in, const T* d_out, T* d_weight) {
  check(g);
  const std::size_t in_n = g.in_volume() * g.in_channels;
  const std::size_t n = g.out_volume();
  const std::size_t out_n = n * g.out_channels;
  const std::size_t k = g.patch_size();
  const bool pointwise = is_pointwise(g);
  const std::size_t pw = panel_width<T>(k, n);
  T* col = pointwise ? nullptr : workspace<T>(k * pw);
  for (int b = 0; b < batch; ++b) {
    const T* x = in + b * in_n;
    const T* dy = d_out + b * out_n;
    if (pointwise) {
      gemm_nt_accumulate<T>(g.out_channels, static_cast<int>(k), static_cast<int>(n), dy, static_cast<int>(n), x,
                            static_cast<int>(n), d_weight, static_cast<int>(k));
      continue;
    }
    if (n < kSmallVolume) {
      // Few positions: transpose the patch matrix and run a plain GEMM
      // whose inner dimension is the position count.
      T* full = workspace<T>(k * n);
      im2col_panel(g, x, 0, n, full);
      T* colt = workspace<T>(k * n, 1);
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t q = 0; q < n; ++q) colt[q * k + r] = full[r * n + q];
      gemm_accumulate<T>(g.out_channels, static_cast<int>(k), static_cast<int>(n), dy, static_cast<int>(n), colt,
                         static_cast<int>(k), d_weight, static_cast<int>(k));
      continue;
    }
    for (std::size_t p0 = 0; p0 < n; p0 += pw) {
      const std::size_t p1 = std::min(n, p0 + pw);
      const std::size_t w = p1 - p0;
      im2col_panel(g, x, p0, p1, col);
      gemm_nt_accumulate<T>(g.out_channels, static_cast<int>(k), static_cast<int>(w), dy + p0, static_cast<int>(n),
                            col, static_cast<int>(w), d_weight, static_cast<int>(k));
    }
  }
}

#define RELVID_INSTANTIATE(T)                                                                           \
  template void gemm_accumulate<T>(int, int, int, const T*, int, const T*, int, T*, int);               \
  template void gemm_nt_accumulate<T>(int, int, int, const T*, int, const T*, int, T*, int);            \
  template void conv3d_forward<T>(const Conv3dGeometry&, int, const T*, const T*, T*);                  \
  template void conv3d_backward_data<T>(const Conv3dGeometry&, int, const T*, const T*, T*);            \
  template void conv3d_backward_weight<T>(const Conv3dGeometry&, int, const T*, const T*, T*);
RELVID_INSTANTIATE(float)
RELVID_INSTANTIATE(double)
#undef RELVID_INSTANTIATE

}  // namespace relvid::kernels
