#include <doctest.h>

#include <Eigen/SVD>
#include <algorithm>
#include <filesystem>
#include <numeric>

#include "relvid/downstream.hpp"
#include "relvid/error.hpp"
#include "relvid/rng.hpp"
#include "relvid/synthetic.hpp"

using namespace relvid;
namespace fs = std::filesystem;

namespace {

VideoDescriptor desc(std::string id, int label, std::vector<double> v) {
  VideoDescriptor d;
  d.video_id = std::move(id);
  d.label = label;
  d.clip_vectors = {v};
  d.vector = std::move(v);
  return d;
}

double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return 1.0 - ab / std::sqrt(aa * bb);
}

// Brute force: sort the gallery by distance and look at the first k.
double brute_top_k(const std::vector<VideoDescriptor>& test, const std::vector<VideoDescriptor>& train, int k) {
  int hits = 0;
  for (const auto& q : test) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < train.size(); ++j) d.emplace_back(cosine_distance(q.vector, train[j].vector), j);
    std::sort(d.begin(), d.end());
    bool hit = false;
    for (int r = 0; r < k && r < static_cast<int>(d.size()); ++r) hit = hit || train[d[r].second].label == q.label;
    hits += hit;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

}  // namespace

TEST_SUITE("downstream") {
  TEST_CASE("evaluation clips are spread uniformly") {
    CHECK(uniform_clip_starts(48) == std::vector<std::int64_t>{0, 3, 7, 10, 14, 17, 21, 24, 28, 32});
    CHECK(uniform_clip_starts(16) == std::vector<std::int64_t>(10, 0));
    CHECK(uniform_clip_starts(100, 1) == std::vector<std::int64_t>{0});
    CHECK_THROWS_AS(uniform_clip_starts(15), InputError);
  }

  TEST_CASE("retrieval agrees with a brute-force search") {
    Rng rng(1);
    std::vector<VideoDescriptor> train, test;
    for (int i = 0; i < 60; ++i) {
      std::vector<double> v(5);
      for (auto& x : v) x = standard_normal(rng);
      (i < 40 ? train : test).push_back(desc("v" + std::to_string(i), static_cast<int>(uniform_int(rng, 0, 5)), v));
    }
    const auto r = retrieve(test, train);
    for (int k : {1, 5, 10, 20, 50}) CHECK(r.top_k.at(k) == doctest::Approx(brute_top_k(test, train, k)));
    CHECK(r.queries == 20);
    double prev = 0.0;
    for (const auto& [k, acc] : r.top_k) {
      CHECK(acc >= prev);
      prev = acc;
    }
  }

  TEST_CASE("hand-sized retrieval example") {
    std::vector<VideoDescriptor> train{desc("a", 0, {1, 0}), desc("b", 1, {0, 1}), desc("c", 1, {1, 0.1})};
    std::vector<VideoDescriptor> test{desc("q0", 1, {1, 0.01}), desc("q1", 0, {0, 1})};
    RetrievalOptions o;
    o.ks = {1, 2, 3};
    const auto r = retrieve(test, train, o);
    // q0: nearest a (0), then c (1) -> hit at 2. q1: b, c, a -> hit at 3.
    CHECK(r.top_k.at(1) == 0.0);
    CHECK(r.top_k.at(2) == 0.5);
    CHECK(r.top_k.at(3) == 1.0);
    o.metric = DistanceMetric::Euclidean;
    CHECK(retrieve(test, train, o).top_k.at(1) == 0.0);
  }

  TEST_CASE("class-coded descriptors retrieve perfectly") {
    std::vector<VideoDescriptor> train, test;
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i < 3; ++i) {
        std::vector<double> v(4, 0.01 * i);
        v[c] = 1.0;
        train.push_back(desc("tr", c, v));
        v[c] = 2.0;
        test.push_back(desc("te", c, v));
      }
    for (auto mode : {RetrievalMode::Video, RetrievalMode::Clip}) {
      RetrievalOptions o;
      o.mode = mode;
      CHECK(retrieve(test, train, o).top_k.at(1) == 1.0);
    }
  }

  TEST_CASE("table header mirrors the k list") {
    RetrievalResult r;
    r.top_k = {{1, 0.5}, {5, 0.75}, {10, 1.0}, {20, 1.0}, {50, 1.0}};
    const auto t = format_retrieval_table({{"ours", r}});
    CHECK(t == "method,top1,top5,top10,top20,top50\nours,0.5000,0.7500,1.0000,1.0000,1.0000\n");
  }

  TEST_CASE("retrieval input errors") {
    CHECK_THROWS_AS(retrieve({}, {desc("a", 0, {1})}), InputError);
    CHECK_THROWS_AS(retrieve({desc("a", 0, {1})}, {desc("b", 0, {1, 2})}), InputError);
  }

  TEST_CASE("PCA matches an SVD of the centred data") {
    Rng rng(3);
    Eigen::MatrixXd x(30, 6);
    for (int i = 0; i < 30; ++i)
      for (int j = 0; j < 6; ++j) x(i, j) = standard_normal(rng) * (j + 1);
    const auto p = pca_embed(x, 3);
    const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(c, Eigen::ComputeThinV);
    const auto s = svd.singularValues();
    double total = 0.0;
    for (int i = 0; i < s.size(); ++i) total += s(i) * s(i);
    for (int i = 0; i < 3; ++i) {
      CHECK(p.explained_variance(i) == doctest::Approx(s(i) * s(i) / 29.0));
      CHECK(p.explained_ratio(i) == doctest::Approx(s(i) * s(i) / total));
      const Eigen::VectorXd axis = svd.matrixV().col(i);
      CHECK(std::abs(axis.dot(p.components.row(i).transpose())) == doctest::Approx(1.0));
      Eigen::Index arg;
      p.components.row(i).cwiseAbs().maxCoeff(&arg);
      CHECK(p.components(i, arg) > 0.0);
    }
    CHECK((p.coordinates - c * p.components.transpose()).norm() < 1e-9);
  }

  TEST_CASE("collinear data has one component") {
    Eigen::MatrixXd x(5, 3);
    for (int i = 0; i < 5; ++i) x.row(i) << i, 2.0 * i, -i;
    const auto p = pca_embed(x, 2);
    CHECK(p.explained_ratio(0) == doctest::Approx(1.0));
    CHECK(std::abs(p.explained_ratio(1)) < 1e-12);
    CHECK_THROWS_AS(pca_embed(x.topRows(1), 2), InputError);
    CHECK_THROWS_AS(pca_embed(x, 4), InputError);
  }

  TEST_CASE("attention maps sum channel magnitudes and scale per frame") {
    nn::Tensor<double> a({2, 2, 1, 3});
    // frame 0: channel sums |.| = {1, 3, 5}; frame 1 constant.
    a.storage() = {1, -2, 3, 4, 4, 4, 0, 1, -2, 0, 0, 0};
    const auto m = attention_map(a);
    CHECK(m.shape() == std::vector<int>{2, 1, 3});
    CHECK(m[0] == 0.0);
    CHECK(m[1] == doctest::Approx(0.5));
    CHECK(m[2] == 1.0);
    for (int i = 3; i < 6; ++i) CHECK(m[i] == 0.0);
  }

  TEST_CASE("all-zero activations give all-zero maps") {
    const auto m = attention_map(nn::Tensor<float>({4, 2, 3, 3}));
    for (double v : m.storage()) CHECK(v == 0.0);
    CHECK_THROWS_AS(attention_map(nn::Tensor<float>({4, 3, 3})), InputError);
  }

  TEST_CASE("overlay keeps the frame size") {
    Image frame(112, 112);
    nn::Tensor<double> maps({2, 4, 4}, 0.5);
    const auto o = attention_overlay(frame, maps, 1);
    CHECK(o.height == 112);
    CHECK(o.width == 112);
    CHECK_THROWS_AS(attention_overlay(frame, maps, 2), InputError);
  }

  TEST_CASE("classifier archives round-trip") {
    Rng rng(4);
    auto cfg = nn::BackboneConfig::tiny(nn::BackboneKind::C3D);
    cfg.widths = {3, 4, 4, 5, 6};
    cfg.input = {4, 16, 16};
    Classifier<float> model(nn::Backbone<float>(cfg, rng), 3, rng);
    nn::Archive ar;
    write_classifier(ar, model);
    auto copy = load_classifier<float>(ar);
    nn::Tensor<float> x({2, 3, 4, 16, 16});
    for (auto& v : x.storage()) v = static_cast<float>(standard_normal(rng));
    CHECK(copy.forward(x, nn::NormMode::Frozen) == model.forward(x, nn::NormMode::Frozen));
    CHECK(copy.class_count() == 3);
  }

  TEST_CASE("descriptors average the ten evaluation clips") {
    const auto dir = fs::temp_directory_path() / "relvid_test_actions";
    fs::remove_all(dir);
    ActionDatasetSpec spec;
    spec.classes = 2;
    spec.train_per_class = 1;
    spec.test_per_class = 1;
    spec.frames = 20;
    const auto ds = generate_action_dataset(spec, dir);
    Rng rng(5);
    nn::Backbone<float> net(nn::BackboneConfig::tiny(nn::BackboneKind::C3D), rng);
    const auto d = extract_descriptor(net, ds.videos.front().video, ds.videos.front().label);
    REQUIRE(d.clip_vectors.size() == 10u);
    for (std::size_t j = 0; j < d.vector.size(); ++j) {
      double mean = 0.0;
      for (const auto& c : d.clip_vectors) mean += c[j] / 10.0;
      CHECK(d.vector[j] == doctest::Approx(mean));
    }
    CHECK(extract_descriptors(net, ds).size() == ds.videos.size());
    fs::remove_all(dir);
  }
}
