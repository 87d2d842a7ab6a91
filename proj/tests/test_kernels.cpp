#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "relvid/kernels.hpp"
#include "relvid/rng.hpp"

using namespace relvid;
using kernels::Conv3dGeometry;

namespace {

std::vector<double> randn(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = standard_normal(rng);
  return v;
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double scale = 1e-12, diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    diff = std::max(diff, std::abs(a[i] - b[i]));
  }
  return diff / scale;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Conv3dGeometry random_geometry(Rng& rng) {
  Conv3dGeometry g;
  g.in_channels = static_cast<int>(uniform_int(rng, 1, 5));
  g.out_channels = static_cast<int>(uniform_int(rng, 1, 6));
  for (int d = 0; d < 3; ++d) {
    g.kernel[d] = static_cast<int>(uniform_int(rng, 1, 3));
    g.stride[d] = static_cast<int>(uniform_int(rng, 1, 2));
    g.pad[d] = static_cast<int>(uniform_int(rng, 0, g.kernel[d] / 2));
    g.in_size[d] = static_cast<int>(uniform_int(rng, g.kernel[d], 9));
  }
  return g;
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("gemm matches a triple loop") {
    Rng rng(3);
    for (auto [m, n, k] : {std::array{1, 1, 1}, {7, 5, 3}, {33, 70, 19}, {64, 64, 64}, {5, 300, 200}}) {
      const auto a = randn(static_cast<std::size_t>(m) * k, rng);
      const auto b = randn(static_cast<std::size_t>(k) * n, rng);
      std::vector<double> c(static_cast<std::size_t>(m) * n, 1.0), want(c);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          for (int p = 0; p < k; ++p) want[i * n + j] += a[i * k + p] * b[p * n + j];
      kernels::gemm_accumulate<double>(m, n, k, a.data(), k, b.data(), n, c.data(), n);
      CHECK(max_rel_diff(c, want) < 1e-12);

      // B stored transposed.
      std::vector<double> bt(b.size());
      for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
      std::vector<double> c2(static_cast<std::size_t>(m) * n, 1.0);
      kernels::gemm_nt_accumulate<double>(m, n, k, a.data(), k, bt.data(), k, c2.data(), n);
      CHECK(max_rel_diff(c2, want) < 1e-12);
    }
  }

  TEST_CASE("parallel convolution agrees with the serial reference") {
    Rng rng(11);
    for (int trial = 0; trial < 40; ++trial) {
      const auto g = random_geometry(rng);
      const int batch = static_cast<int>(uniform_int(rng, 1, 3));
      const std::size_t in_n = g.in_volume() * g.in_channels * batch;
      const std::size_t out_n = g.out_volume() * g.out_channels * batch;
      const auto x = randn(in_n, rng), w = randn(g.weight_size(), rng), dy = randn(out_n, rng);

      std::vector<double> y(out_n), y_ref(out_n);
      kernels::conv3d_forward<double>(g, batch, x.data(), w.data(), y.data());
      kernels::reference::conv3d_forward<double>(g, batch, x.data(), w.data(), y_ref.data());
      CHECK(max_rel_diff(y, y_ref) < 1e-12);

      std::vector<double> dx(in_n, 7.0), dx_ref(in_n, -7.0);
      kernels::conv3d_backward_data<double>(g, batch, dy.data(), w.data(), dx.data());
      kernels::reference::conv3d_backward_data<double>(g, batch, dy.data(), w.data(), dx_ref.data());
      CHECK(max_rel_diff(dx, dx_ref) < 1e-12);

      std::vector<double> dw(g.weight_size(), 0.5), dw_ref(g.weight_size(), 0.5);
      kernels::conv3d_backward_weight<double>(g, batch, x.data(), dy.data(), dw.data());
      kernels::reference::conv3d_backward_weight<double>(g, batch, x.data(), dy.data(), dw_ref.data());
      CHECK(max_rel_diff(dw, dw_ref) < 1e-12);
    }
  }

  TEST_CASE("backward passes are adjoints of the forward map") {
    // <conv(x; w), dy> = <x, conv_T(dy; w)> = <w, conv_W(x, dy)>
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const auto g = random_geometry(rng);
      const auto x = randn(g.in_volume() * g.in_channels, rng);
      const auto w = randn(g.weight_size(), rng);
      const auto dy = randn(g.out_volume() * g.out_channels, rng);
      std::vector<double> y(dy.size()), dx(x.size()), dw(w.size(), 0.0);
      kernels::conv3d_forward<double>(g, 1, x.data(), w.data(), y.data());
      kernels::conv3d_backward_data<double>(g, 1, dy.data(), w.data(), dx.data());
      kernels::conv3d_backward_weight<double>(g, 1, x.data(), dy.data(), dw.data());
      const double lhs = dot(y, dy);
      CHECK(dot(x, dx) == doctest::Approx(lhs).epsilon(1e-10));
      CHECK(dot(w, dw) == doctest::Approx(lhs).epsilon(1e-10));
    }
  }

  TEST_CASE("1x1x1 convolution is a per-voxel matrix product") {
    Conv3dGeometry g{2, 3, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, {2, 2, 2}};
    std::vector<double> x(16), w = {1, 2, -1, 0, 0.5, 3}, y(24);
    for (int i = 0; i < 16; ++i) x[i] = i;
    kernels::conv3d_forward<double>(g, 1, x.data(), w.data(), y.data());
    for (int v = 0; v < 8; ++v)
      for (int o = 0; o < 3; ++o) CHECK(y[o * 8 + v] == doctest::Approx(w[o * 2] * x[v] + w[o * 2 + 1] * x[8 + v]));
  }

  TEST_CASE("float kernels track double within single precision") {
    Rng rng(8);
    Conv3dGeometry g{3, 8, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, {8, 20, 20}};
    const auto x = randn(g.in_volume() * 3, rng), w = randn(g.weight_size(), rng);
    std::vector<float> xf(x.begin(), x.end()), wf(w.begin(), w.end()), yf(g.out_volume() * 8);
    std::vector<double> y(yf.size());
    kernels::conv3d_forward<double>(g, 1, x.data(), w.data(), y.data());
    kernels::conv3d_forward<float>(g, 1, xf.data(), wf.data(), yf.data());
    CHECK(max_rel_diff(std::vector<double>(yf.begin(), yf.end()), y) < 1e-5);
  }

  TEST_CASE("oversized kernels are rejected") {
    Conv3dGeometry g{1, 1, {9, 1, 1}, {1, 1, 1}, {0, 0, 0}, {9, 1, 1}};
    std::vector<double> x(9), w(9), y(1);
    CHECK_THROWS_AS(kernels::conv3d_forward<double>(g, 1, x.data(), w.data(), y.data()), std::invalid_argument);
  }
}
