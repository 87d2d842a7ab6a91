#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "relvid/backbone.hpp"
#include "relvid/error.hpp"
#include "relvid/layers.hpp"
#include "relvid/rng.hpp"
#include "relvid/siamese.hpp"
#include "relvid/trainer.hpp"

using namespace relvid;
using namespace relvid::nn;

namespace {

template <typename T>
Tensor<T> randn(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(scale * standard_normal(rng));
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

BackboneConfig small(BackboneKind kind) {
  auto c = BackboneConfig::tiny(kind);
  c.widths = {3, 4, 4, 5, 5};
  c.input = {4, 16, 16};
  return c;
}

}  // namespace

TEST_SUITE("softmax") {
  TEST_CASE("probabilities sum to one and ignore shifts") {
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
      std::vector<double> a(7);
      for (auto& v : a) v = 10.0 * standard_normal(rng);
      const auto p = softmax(a);
      double sum = 0.0;
      for (double v : p) sum += v;
      CHECK(std::abs(sum - 1.0) < 1e-12);
      auto shifted = a;
      for (auto& v : shifted) v += 123.5;
      const auto q = softmax(shifted);
      for (std::size_t j = 0; j < p.size(); ++j) CHECK(std::abs(p[j] - q[j]) < 1e-12);
    }
  }

  TEST_CASE("known values") {
    const auto p = softmax(std::vector<double>{0.0, std::log(2.0)});
    CHECK(p[0] == doctest::Approx(1.0 / 3.0));
    CHECK(p[1] == doctest::Approx(2.0 / 3.0));
    CHECK(log_sum_exp(std::vector<double>{1000.0, 1000.0}) == doctest::Approx(1000.0 + std::log(2.0)));
  }

  TEST_CASE("uniform logits cost ln c") {
    for (int c : {2, 3, 7}) {
      std::vector<double> a(static_cast<std::size_t>(c), 0.25);
      CHECK(std::abs(cross_entropy_with_logits(a, 0) - std::log(static_cast<double>(c))) < 1e-12);
      CHECK(std::abs(cross_entropy(softmax(a), c - 1) - std::log(static_cast<double>(c))) < 1e-12);
    }
  }

  TEST_CASE("logit gradient is p minus the one-hot label") {
    Rng rng(2);
    std::vector<double> a(7), g;
    for (auto& v : a) v = standard_normal(rng);
    cross_entropy_with_logits(a, 3, &g);
    const auto p = softmax(a);
    for (int j = 0; j < 7; ++j) CHECK(std::abs(g[j] - (p[j] - (j == 3 ? 1.0 : 0.0))) < 1e-12);
  }

  TEST_CASE("non-finite logits are rejected") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(softmax(std::vector<double>{0.0, nan}), NumericError);
    CHECK_THROWS_AS(cross_entropy_with_logits(std::vector<double>{0.0, INFINITY}, 0), NumericError);
  }

  TEST_CASE("confident wrong predictions stay finite") {
    const double loss = cross_entropy(std::vector<double>{1.0, 0.0}, 1);
    CHECK(std::isfinite(loss));
    CHECK(loss > 700.0);
  }
}

TEST_SUITE("layers") {
  TEST_CASE("batch statistics normalise each channel and feed the running averages") {
    Rng rng(3);
    BatchNorm3d<double> bn("bn", 2);
    auto x = randn<double>({3, 2, 2, 3, 3}, rng, 2.0);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += 5.0;
    typename BatchNorm3d<double>::Cache cache;
    const auto y = bn.forward(x, NormMode::Batch, &cache);
    const int per = 2 * 3 * 3, n = 3 * per;
    for (int c = 0; c < 2; ++c) {
      double mean = 0.0, var = 0.0, xm = 0.0, xv = 0.0;
      for (int b = 0; b < 3; ++b)
        for (int i = 0; i < per; ++i) {
          const std::size_t idx = (static_cast<std::size_t>(b) * 2 + c) * per + i;
          mean += y[idx] / n;
          xm += x[idx] / n;
        }
      for (int b = 0; b < 3; ++b)
        for (int i = 0; i < per; ++i) {
          const std::size_t idx = (static_cast<std::size_t>(b) * 2 + c) * per + i;
          var += (y[idx] - mean) * (y[idx] - mean) / n;
          xv += (x[idx] - xm) * (x[idx] - xm) / (n - 1);
        }
      CHECK(std::abs(mean) < 1e-12);
      CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
      CHECK(bn.running_mean[c] == doctest::Approx(0.1 * xm));
      CHECK(bn.running_var[c] == doctest::Approx(0.9 + 0.1 * xv));
    }
    // Frozen mode is the affine map given by the running statistics.
    const auto z = bn.forward(x, NormMode::Frozen, nullptr);
    CHECK(z[0] == doctest::Approx((x[0] - bn.running_mean[0]) / std::sqrt(bn.running_var[0] + 1e-5)));
  }

  TEST_CASE("batch-norm backward matches finite differences") {
    Rng rng(4);
    for (NormMode mode : {NormMode::Batch, NormMode::Frozen}) {
      BatchNorm3d<double> bn("bn", 3);
      for (auto& v : bn.gamma.value.storage()) v = 1.0 + 0.3 * standard_normal(rng);
      for (auto& v : bn.beta.value.storage()) v = 0.3 * standard_normal(rng);
      const double momentum = bn.momentum;
      bn.momentum = 0.0;  // keep the running stats fixed across probes
      bn.running_var.fill(1.7);
      auto x = randn<double>({2, 3, 2, 2, 2}, rng);
      const auto w = randn<double>(x.shape(), rng);
      typename BatchNorm3d<double>::Cache cache;
      bn.forward(x, mode, &cache);
      bn.gamma.zero_grad();
      const auto dx = bn.backward(w, cache);
      const double h = 1e-6;
      for (std::size_t i = 0; i < x.size(); i += 5) {
        const double s = x[i];
        x[i] = s + h;
        const double up = dot(bn.forward(x, mode, nullptr), w);
        x[i] = s - h;
        const double down = dot(bn.forward(x, mode, nullptr), w);
        x[i] = s;
        CHECK(dx[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
      }
      bn.momentum = momentum;
    }
  }

  TEST_CASE("linear layer backward matches finite differences") {
    Rng rng(5);
    Linear<double> fc("fc", 4, 3);
    fc.init(rng);
    auto x = randn<double>({2, 4}, rng);
    const auto w = randn<double>({2, 3}, rng);
    fc.weight.zero_grad();
    fc.bias.zero_grad();
    const auto dx = fc.backward(x, w, true);
    const double h = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = x[i];
      x[i] = s + h;
      const double up = dot(fc.forward(x), w);
      x[i] = s - h;
      const double down = dot(fc.forward(x), w);
      x[i] = s;
      CHECK(dx[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-7));
    }
    // dL/db is the column sum of dy.
    for (int j = 0; j < 3; ++j) CHECK(fc.bias.grad[j] == doctest::Approx(w[j] + w[3 + j]));
    CHECK_FALSE(fc.bias.decay);
    CHECK(fc.weight.decay);
  }

  TEST_CASE("global average pooling and its backward are adjoint") {
    Rng rng(6);
    const auto x = randn<double>({2, 3, 2, 2, 2}, rng);
    const auto dy = randn<double>({2, 3}, rng);
    const auto y = global_avg_pool(x);
    const auto dx = global_avg_pool_backward(x.shape(), dy);
    CHECK(dot(y, dy) == doctest::Approx(dot(x, dx)));
  }

  TEST_CASE("ReLU masks the gradient by the output") {
    Tensor<double> y({4});
    y.storage() = {-1.0, 0.0, 2.0, 3.0};
    relu_inplace(y);
    Tensor<double> dy({4}, 1.0);
    relu_backward_inplace(y, dy);
    CHECK(dy.storage() == std::vector<double>{0.0, 0.0, 1.0, 1.0});
  }
}

TEST_SUITE("backbone") {
  TEST_CASE("(2+1)D width matches the 3x3x3 parameter budget") {
    CHECK(r2plus1d_mid_channels(64, 64) == 144);
    CHECK(r2plus1d_mid_channels(3, 64) == 23);
    CHECK(r2plus1d_mid_channels(1, 1) == 2);
    for (int in : {3, 8, 64, 128})
      for (int out : {8, 64, 256}) {
        const int m = r2plus1d_mid_channels(in, out);
        const long factorised = 9L * in * m + 3L * m * out;
        CHECK(factorised <= 27L * in * out);
        CHECK(factorised + 9L * in + 3L * out > 27L * in * out);
      }
  }

  TEST_CASE("stage shapes follow the stride schedule") {
    Rng rng(7);
    for (auto kind : {BackboneKind::C3D, BackboneKind::R3D, BackboneKind::R2plus1D}) {
      Backbone<float> net(BackboneConfig::tiny(kind), rng);
      const auto x = randn<float>({1, 3, 16, 112, 112}, rng);
      const auto stages = net.stage_outputs(x);
      REQUIRE(stages.size() == 5u);
      const std::vector<std::vector<int>> want{
          {1, 8, 16, 56, 56}, {1, 16, 8, 28, 28}, {1, 32, 4, 14, 14}, {1, 64, 2, 7, 7}, {1, 64, 2, 4, 4}};
      for (int s = 0; s < 5; ++s) CHECK(stages[s].shape() == want[s]);
      CHECK(net.forward(x, NormMode::Frozen).shape() == std::vector<int>{1, 64});
    }
  }

  TEST_CASE("wrong input shapes are rejected") {
    Rng rng(8);
    Backbone<float> net(BackboneConfig::tiny(BackboneKind::C3D), rng);
    CHECK_THROWS_AS(net.forward(Tensor<float>({1, 3, 8, 112, 112}), NormMode::Frozen), InputError);
    CHECK_THROWS_AS(net.forward(Tensor<float>({1, 1, 16, 112, 112}), NormMode::Frozen), InputError);
  }

  TEST_CASE("parameter names are unique and weight decay skips norms") {
    Rng rng(9);
    for (auto kind : {BackboneKind::C3D, BackboneKind::R3D, BackboneKind::R2plus1D}) {
      Backbone<double> net(small(kind), rng);
      std::set<std::string> names;
      for (auto* p : net.parameters()) {
        CHECK(names.insert(p->name).second);
        const bool is_norm = p->name.find("gamma") != std::string::npos || p->name.find("beta") != std::string::npos;
        CHECK(p->decay == !is_norm);
      }
    }
  }

  TEST_CASE("R3D and C3D of equal widths differ only by the residual structure") {
    Rng rng(10);
    Backbone<float> c3d(BackboneConfig::tiny(BackboneKind::C3D), rng);
    Backbone<float> r3d(BackboneConfig::tiny(BackboneKind::R3D), rng);
    CHECK(c3d.blocks().size() == 5u);
    CHECK(r3d.blocks().size() == 5u);
    for (const auto& b : c3d.blocks()) CHECK_FALSE(b.residual);
    for (const auto& b : r3d.blocks()) CHECK(b.residual);
  }

  TEST_CASE("analytic gradients match central differences") {
    for (auto kind : {BackboneKind::C3D, BackboneKind::R3D, BackboneKind::R2plus1D}) {
      Rng rng(11);
      SiameseModel<double> model(small(kind), std::vector<Relation>(kAllRelations.begin(), kAllRelations.end()), rng);
      const auto a = randn<double>({2, 3, 4, 16, 16}, rng);
      const auto b = randn<double>({2, 3, 4, 16, 16}, rng);
      // Non-trivial running statistics for the frozen pass.
      for (int i = 0; i < 3; ++i) model.forward_pair(a, b, NormMode::Batch);
      const auto res = numeric_gradient_check(model, a, b, {1, 5}, 60, rng);
      INFO(to_string(kind), " worst ", res.worst_parameter);
      CHECK(res.checked == 60);
      CHECK(res.max_relative_error < 1e-5);
    }
  }
}

TEST_SUITE("optimizer") {
  TEST_CASE("momentum SGD with decay on weights only") {
    Param<double> w{"w", Tensor<double>({1}, 1.0), Tensor<double>({1}, 0.5), true};
    Param<double> b{"b", Tensor<double>({1}, 1.0), Tensor<double>({1}, 0.5), false};
    Sgd<double> sgd({0.1, 0.9, 0.1});
    sgd.step({&w, &b}, 0.1);
    CHECK(w.value[0] == doctest::Approx(0.94));
    CHECK(b.value[0] == doctest::Approx(0.95));
    sgd.step({&w, &b}, 0.1);
    // v = 0.9 * 0.6 + 0.5 + 0.1 * 0.94 = 1.134
    CHECK(w.value[0] == doctest::Approx(0.94 - 0.1134));
    // v = 0.9 * 0.5 + 0.5 = 0.95
    CHECK(b.value[0] == doctest::Approx(0.95 - 0.095));
  }

  TEST_CASE("learning-rate milestones") {
    TrainConfig c;
    c.sgd.learning_rate = 0.01;
    CHECK(learning_rate_at(c, 0) == doctest::Approx(0.01));
    CHECK(learning_rate_at(c, 99) == doctest::Approx(0.01));
    CHECK(learning_rate_at(c, 100) == doctest::Approx(0.001));
    CHECK(learning_rate_at(c, 250) == doctest::Approx(0.0001));
  }
}
