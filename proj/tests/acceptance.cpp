// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "label_verifier.hpp"
#include "relvid/checkpoint.hpp"
#include "relvid/downstream.hpp"
#include "relvid/error.hpp"
#include "relvid/rng.hpp"
#include "relvid/siamese.hpp"
#include "relvid/synthetic.hpp"
#include "relvid/trainer.hpp"

using namespace relvid;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances and budgets.
constexpr double kFrequencyTolerance = 0.02;
constexpr double kSoftmaxSumTol = 1e-12;
constexpr double kShiftTol = 1e-12;
constexpr double kUniformLossTol = 1e-10;
constexpr double kLogitGradTol = 1e-10;
constexpr double kFiniteDiffTol = 1e-4;
constexpr double kFiniteDiffStep = 1e-6;
constexpr double kTrainAccuracy = 0.95;
constexpr double kHeldOutAccuracy = 0.60;
constexpr int kPretrainEpochCap = 200;
constexpr double kFinetuneAccuracy = 0.90;
constexpr int kFinetuneEpochCap = 100;
const std::map<int, double> kBudgetSeconds{{1, 120}, {2, 10},   {3, 300},  {4, 10}, {5, 300},
                                           {6, 120}, {7, 1800}, {8, 1800}, {9, 60}, {10, 900}};

const std::vector<Relation> kAll(kAllRelations.begin(), kAllRelations.end());

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

class Budget : public std::runtime_error {
 public:
  Budget() : std::runtime_error("time budget exceeded") {}
};

struct Context {
  fs::path work;
  std::optional<SyntheticCorpus> corpus20;
  std::optional<Manifest> manifest20;
  std::optional<PretrainResult> pretrained;
  std::optional<LabeledVideoDataset> actions;

  const Manifest& manifest() {
    if (!manifest20) {
      SyntheticCorpusSpec spec;
      spec.num_videos = 20;
      spec.shots_min = 2;
      spec.shots_max = 4;
      spec.shot_len_min = 60;
      spec.shot_len_max = 160;
      spec.seed = 2024;
      corpus20 = generate_synthetic_corpus(spec, work / "corpus20");
      manifest20 = build_manifest(corpus20->videos).manifest;
    }
    return *manifest20;
  }

  // Tiny C3D pretrained on the easy corpus: translating shots only, three
  // shots per video, with a fixed training set.
  const PretrainResult& pretrain_easy(Clock::time_point t0, double budget) {
    if (!pretrained) {
      SyntheticCorpusSpec spec;
      spec.num_videos = 6;
      spec.shots_min = 3;
      spec.shots_max = 3;
      spec.shot_len_min = 100;
      spec.shot_len_max = 100;
      spec.motion_kinds = {MotionKind::Translating};
      spec.seed = 7;
      const auto corpus = generate_synthetic_corpus(spec, work / "easy");
      const auto manifest = build_manifest(corpus.videos).manifest;
      TrainConfig tc;
      tc.epochs = kPretrainEpochCap;
      tc.batch_size = 8;
      tc.sgd.learning_rate = 0.01;
      tc.lr_milestones = {};
      tc.train_samples = 280;
      tc.validation_samples = 70;
      tc.seed = 3;
      tc.stop_train_accuracy = kTrainAccuracy;
      tc.stop_validation_accuracy = kHeldOutAccuracy;
      pretrained = pretrain<float>(manifest, kAll, nn::BackboneConfig::tiny(nn::BackboneKind::C3D), tc, nullptr,
                                   [&](const EpochMetrics&) {
                                     if (seconds_since(t0) > budget) throw Budget();
                                   });
    }
    return *pretrained;
  }

  const LabeledVideoDataset& action_set() {
    if (!actions) {
      ActionDatasetSpec spec;
      spec.seed = 1;
      actions = generate_action_dataset(spec, work / "actions");
    }
    return *actions;
  }
};

// 1. Shot detection on a 20-video corpus.
Outcome shot_detection(Context& ctx) {
  ctx.manifest();
  std::set<std::pair<std::string, std::int64_t>> truth, found;
  for (const auto& s : ctx.corpus20->ground_truth)
    if (s.begin > 0) truth.emplace(s.video_id, s.begin);
  for (const auto& v : ctx.corpus20->videos) {
    for (const auto& s : detect_shot_changes(v))
      if (s.begin > 0) found.emplace(s.video_id, s.begin);
  }
  std::size_t hit = 0;
  for (const auto& b : found) hit += truth.count(b);
  const double precision = found.empty() ? (truth.empty() ? 1.0 : 0.0) : double(hit) / double(found.size());
  const double recall = truth.empty() ? 1.0 : double(hit) / double(truth.size());
  return {precision == 1.0 && recall == 1.0,
          fmt("%zu true cuts, %zu detected, precision %.4f recall %.4f", truth.size(), found.size(), precision, recall)};
}

// 2. Segmentation against a direct enumeration.
Outcome segmentation(Context&) {
  constexpr std::int64_t min_len = 48;
  Rng rng(22);
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::int64_t k = uniform_int(rng, min_len + 1, 600);
    const std::int64_t b = uniform_int(rng, 1, 3000);
    const std::int64_t e = b + uniform_int(rng, 1, 3000);
    const std::int64_t after = e + uniform_int(rng, 1, 500);
    const std::vector<Shot> shots{{"v", 0, b, "v_s000"}, {"v", b, e, "v_s001"}, {"v", e, after, "v_s002"}};
    const auto segs = segment_shots(shots, k, min_len);

    std::vector<std::pair<std::int64_t, std::int64_t>> want;
    for (const auto& s : shots) {
      std::int64_t i = 0;
      for (; s.begin + (i + 1) * k <= s.end; ++i) want.emplace_back(s.begin + i * k, s.begin + (i + 1) * k);
      if (s.end - (s.begin + i * k) >= min_len) want.emplace_back(s.begin + i * k, s.end);
    }
    bool ok = segs.size() == want.size();
    for (std::size_t i = 0; ok && i < segs.size(); ++i) {
      ok = segs[i].start == want[i].first && segs[i].end == want[i].second;
      const auto& owner = *std::find_if(shots.begin(), shots.end(),
                                        [&](const Shot& s) { return s.shot_id == segs[i].shot_id; });
      ok = ok && segs[i].start >= owner.begin && segs[i].end <= owner.end;
    }
    bad += !ok;
  }
  return {bad == 0, fmt("1000 random (b, e, K) triples, %d mismatches", bad)};
}

// 3. Sampler labels recovered from provenance alone.
Outcome sampler_soundness(Context& ctx) {
  const Manifest& m = ctx.manifest();
  constexpr std::int64_t n = 10000;
  constexpr std::uint64_t seed = 31;
  const auto idx = build_sample_index(m, kAll, n, seed);
  std::int64_t mismatches = 0, kept = 0;
  std::map<Relation, std::int64_t> counts;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& s = idx.samples[static_cast<std::size_t>(i)];
    const auto v = testing::verify_relation(s, m);
    if (!v || *v != s.label) ++mismatches;
    // Samples whose first category draw failed are left out of the counts.
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::vector<Relation> failed;
    make_sample(m, kAll, rng, {}, &failed);
    if (failed.empty()) {
      ++counts[s.label];
      ++kept;
    }
  }
  double worst = 0.0;
  for (Relation r : kAll) worst = std::max(worst, std::abs(double(counts[r]) / double(kept) - 1.0 / 7.0));
  std::int64_t fallbacks = 0;
  for (const auto& [r, c] : idx.fallbacks) fallbacks += c;
  return {mismatches == 0 && worst <= kFrequencyTolerance,
          fmt("%lld samples, %lld mismatches, %lld fallbacks, max |freq - 1/7| = %.4f",
              static_cast<long long>(n), static_cast<long long>(mismatches), static_cast<long long>(fallbacks), worst)};
}

// 4. Transform algebra.
Outcome transform_algebra(Context&) {
  Rng rng(44);
  int failures = 0;
  auto expect = [&](bool ok) { failures += !ok; };
  auto random_clip = [&](int size) {
    Clip c;
    for (int t = 0; t < kClipLength; ++t) {
      Image img(size, size);
      for (auto& p : img.pixels) p = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
      c.frames.push_back(std::move(img));
    }
    return c;
  };
  auto same_frames = [](const Clip& a, const Clip& b) { return a.frames == b.frames; };
  auto is_bijection = [](const std::vector<int>& p) {
    std::vector<int> s = p;
    std::sort(s.begin(), s.end());
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] != static_cast<int>(i)) return false;
    return true;
  };
  auto not_trivial = [](const std::vector<int>& p) {
    bool id = true, rev = true;
    const int n = static_cast<int>(p.size());
    for (int i = 0; i < n; ++i) {
      id = id && p[i] == i;
      rev = rev && p[i] == n - 1 - i;
    }
    return !id && !rev;
  };
  auto check_length = [&](std::int64_t len) {
    std::vector<std::int64_t> f(static_cast<std::size_t>(len));
    std::iota(f.begin(), f.end(), std::int64_t{1000});
    const auto inv = invert_segment_frames(f);
    expect(invert_segment_frames(inv) == f);
    for (std::int64_t i = 0; i < len; ++i) expect(inv[i] == f[len - 1 - i]);

    const auto p = draw_shuffle_permutation(static_cast<int>(len), rng);
    expect(p.size() == f.size() && is_bijection(p) && not_trivial(p));
    expect(apply_permutation(apply_permutation(f, p), inverse_permutation(p)) == f);

    const auto eligible = eligible_dilations(len, kClipLength);
    for (int s : {2, 4}) {
      const bool ok = len >= static_cast<std::int64_t>(s) * kClipLength;
      expect(ok == (std::find(eligible.begin(), eligible.end(), s) != eligible.end()));
      if (!ok) {
        bool threw = false;
        try {
          dilate_segment(len, s, kClipLength);
        } catch (const NotSatisfiable&) {
          threw = true;
        }
        expect(threw);
        continue;
      }
      const auto d = dilate_segment(len, s, kClipLength);
      expect(static_cast<std::int64_t>(d.size()) == (len + s - 1) / s && d.front() == 0 && d.back() < len);
      for (std::size_t i = 1; i < d.size(); ++i) expect(d[i] - d[i - 1] == s);
    }
  };

  // Exhaustive over segment lengths around k = 16, every rotation angle,
  // and every admissible permutation of 3 items.
  for (std::int64_t len = 3; len <= 4 * kClipLength + 64; ++len) check_length(len);
  const Clip base = random_clip(24);
  for (int angle : {90, 180, 270}) {
    Clip r = base;
    for (int i = 0; i < 4; ++i) r = rotate_clip(r, angle);
    expect(same_frames(r, base));
    expect(same_frames(rotate_clip(rotate_clip(base, angle), 360 - angle), base));
  }
  std::set<std::vector<int>> seen;
  for (int i = 0; i < 400; ++i) seen.insert(draw_shuffle_permutation(3, rng));
  expect(seen.size() == 4u);

  // Sped-up samples only come from segments with L >= s k.
  std::vector<Segment> segs;
  for (int i = 0; i < 12; ++i) {
    const std::string v = "v" + std::to_string(i);
    segs.push_back({v + "_g", v, v + "_s", 0, 20 + 10 * i, ""});
  }
  const Manifest short_manifest({}, segs);

  // Randomised cases.
  for (int i = 0; i < 1000; ++i) {
    check_length(uniform_int(rng, 3, 2000));
    const Clip c = random_clip(static_cast<int>(uniform_int(rng, 1, 12)));
    Clip r = c;
    for (int j = 0; j < 4; ++j) r = rotate_clip(r, 90);
    expect(same_frames(r, c));
    try {
      const auto s = make_sample_for(short_manifest, Relation::SpedUpPattern, rng);
      const auto& seg = segs[*short_manifest.find(s.clip_b.segment_id)];
      const int step = s.clip_b.transform.interval;
      expect(seg.length() >= static_cast<std::int64_t>(step) * kClipLength);
      expect(testing::consecutive(s.clip_b.frames, step));
    } catch (const NotSatisfiable&) {
      // Anchors too short for any interval are refused.
    }
  }
  return {failures == 0, fmt("%d violated identities", failures)};
}

// 5. Softmax, loss and gradient identities, and finite differences.
Outcome numerics(Context&) {
  Rng rng(55);
  double sum_err = 0, shift_err = 0, uniform_err = 0, grad_err = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> z(7);
    const double scale = uniform_real(rng, 0.1, 50.0);
    for (auto& v : z) v = scale * standard_normal(rng);
    const auto p = nn::softmax(z);
    sum_err = std::max(sum_err, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));
    auto shifted = z;
    const double c = uniform_real(rng, -100.0, 100.0);
    for (auto& v : shifted) v += c;
    const auto q = nn::softmax(shifted);
    for (int j = 0; j < 7; ++j) shift_err = std::max(shift_err, std::abs(p[j] - q[j]));

    const std::vector<double> flat(7, uniform_real(rng, -20.0, 20.0));
    uniform_err = std::max(uniform_err, std::abs(nn::cross_entropy_with_logits(flat, 0) - std::log(7.0)));

    // Independent softmax in long double.
    const int label = static_cast<int>(uniform_int(rng, 0, 6));
    std::vector<double> g;
    nn::cross_entropy_with_logits(z, label, &g);
    const long double m = *std::max_element(z.begin(), z.end());
    long double denom = 0;
    for (double v : z) denom += std::exp(static_cast<long double>(v) - m);
    for (int j = 0; j < 7; ++j) {
      const long double pj = std::exp(static_cast<long double>(z[j]) - m) / denom;
      grad_err = std::max(grad_err, static_cast<double>(std::abs(g[j] - (pj - (j == label ? 1.0L : 0.0L)))));
    }
  }
  std::string detail = fmt("sum %.1e shift %.1e ln7 %.1e grad %.1e;", sum_err, shift_err, uniform_err, grad_err);
  bool pass = sum_err <= kSoftmaxSumTol && shift_err <= kShiftTol && uniform_err <= kUniformLossTol &&
              grad_err <= kLogitGradTol;
  for (auto kind : {nn::BackboneKind::C3D, nn::BackboneKind::R3D, nn::BackboneKind::R2plus1D}) {
    Rng r(56);
    nn::SiameseModel<double> model(nn::BackboneConfig::tiny(kind), kAll, r);
    nn::Tensor<double> a({2, 3, kClipLength, kCropSize, kCropSize}), b(a.shape());
    for (auto& v : a.storage()) v = standard_normal(r);
    for (auto& v : b.storage()) v = standard_normal(r);
    // Move the running statistics away from their initial values.
    model.forward_pair(a, b, nn::NormMode::Batch);
    const auto res = numeric_gradient_check(model, a, b, {2, 6}, 30, r, kFiniteDiffStep);
    pass = pass && res.checked == 30 && res.max_relative_error < kFiniteDiffTol;
    detail += fmt(" %s fd %.1e (%d checked, %d kink retries, %d redrawn)", std::string(to_string(kind)).c_str(),
                  res.max_relative_error, res.checked, res.kink_retries, res.skipped);
  }
  return {pass, detail};
}

// 6. Shared weights and single-stack export.
Outcome weight_sharing(Context& ctx) {
  Rng rng(66);
  nn::SiameseModel<float> model(nn::BackboneConfig::tiny(nn::BackboneKind::C3D), kAll, rng);
  std::vector<nn::Tensor<float>> batches;
  for (int i = 0; i < 10; ++i) {
    nn::Tensor<float> x({10, 3, kClipLength, kCropSize, kCropSize});
    for (auto& v : x.storage()) v = static_cast<float>(standard_normal(rng));
    batches.push_back(std::move(x));
  }
  auto stacks_agree = [&] {
    bool same = true;
    for (const auto& x : batches)
      for (auto mode : {nn::NormMode::Frozen, nn::NormMode::Batch})
        same = same && model.stack_features(1, x, mode) == model.stack_features(2, x, mode);
    return same;
  };
  const bool before = stacks_agree();

  nn::Sgd<float> sgd({0.01, 0.9, 5e-4});
  std::vector<MaterializedSample> samples(4);
  for (int step = 0; step < 50; ++step) {
    for (auto& s : samples) {
      s.a.frames.clear();
      s.b.frames.clear();
      for (int t = 0; t < kClipLength; ++t) {
        Image fa(kCropSize, kCropSize), fb(kCropSize, kCropSize);
        for (auto& p : fa.pixels) p = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
        for (auto& p : fb.pixels) p = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
        s.a.frames.push_back(std::move(fa));
        s.b.frames.push_back(std::move(fb));
      }
      s.label = static_cast<int>(uniform_int(rng, 0, 6));
      s.relation = kAll[static_cast<std::size_t>(s.label)];
    }
    std::vector<const MaterializedSample*> batch;
    for (const auto& s : samples) batch.push_back(&s);
    train_step(model, sgd, batch, 0.01);
  }
  const bool after = stacks_agree();

  nn::Archive ar;
  nn::write_siamese(ar, model);
  const auto path = ctx.work / "shared.ckpt";
  const auto single_path = ctx.work / "single.ckpt";
  ar.save(path);
  export_single_stack(nn::Archive::load(path)).save(single_path);
  auto single = nn::load_backbone<float>(nn::Archive::load(single_path));
  bool exported = true;
  for (const auto& x : batches) exported = exported && single.forward(x, nn::NormMode::Frozen) == model.stack_features(1, x);
  return {before && after && exported,
          fmt("100 clips: stacks equal before %s, after 50 steps %s; export bit-exact %s", before ? "yes" : "no",
              after ? "yes" : "no", exported ? "yes" : "no")};
}

// 7. Learnability on the easy corpus.
Outcome learnability(Context& ctx) {
  const auto t0 = Clock::now();
  const auto& res = ctx.pretrain_easy(t0, kBudgetSeconds.at(7));
  double train = 0, val = 0;
  for (const auto& m : res.history) {
    if (m.epoch != res.epochs_run) continue;
    if (m.split == "train_eval") train = m.accuracy;
    if (m.split == "val") val = m.accuracy;
  }
  return {train >= kTrainAccuracy && val >= kHeldOutAccuracy,
          fmt("epoch %d: train %.3f held-out %.3f (chance %.3f)", res.epochs_run, train, val, 1.0 / 7.0)};
}

// 8. Fine-tuning from pretrained and random initialisation, same seeds.
Outcome transfer(Context& ctx) {
  const auto t0 = Clock::now();
  const auto& pre = ctx.pretrain_easy(t0, kBudgetSeconds.at(8));
  const auto& ds = ctx.action_set();
  const auto train = ds.split("train"), test = ds.split("test");
  auto crossing = [&](nn::Backbone<float> backbone) {
    FinetuneConfig fc;
    fc.epochs = kFinetuneEpochCap;
    fc.seed = 5;
    fc.stop_test_accuracy = kFinetuneAccuracy;
    const auto r = finetune<float>(std::move(backbone), train, &test, fc, [&](const FinetuneEpoch&) {
      if (seconds_since(t0) > kBudgetSeconds.at(8)) throw Budget();
    });
    return std::pair{r.final_test_accuracy >= kFinetuneAccuracy ? r.epochs_run : -1, r.final_test_accuracy};
  };
  const auto [pre_epochs, pre_acc] = crossing(nn::load_backbone<float>(export_single_stack(pre.last)));
  Rng init(derive_seed(5, "init"));
  const auto [rand_epochs, rand_acc] = crossing(nn::Backbone<float>(nn::BackboneConfig::tiny(nn::BackboneKind::C3D), init));
  const bool pass = pre_epochs > 0 && (rand_epochs < 0 || pre_epochs <= rand_epochs);
  return {pass, fmt("pretrained init: %.3f after %d epochs; random init: %.3f after %s epochs", pre_acc, pre_epochs,
                    rand_acc, rand_epochs < 0 ? "no crossing in the cap" : std::to_string(rand_epochs).c_str())};
}

// 9. Retrieval metric.
Outcome retrieval(Context& ctx) {
  const auto t0 = Clock::now();
  const auto& ds = ctx.action_set();
  const auto train = ds.split("train"), test = ds.split("test");
  bool monotone = true;
  std::vector<std::pair<std::string, RetrievalResult>> rows;
  auto run = [&](const std::string& name, nn::Backbone<float> net) {
    const auto r = retrieve(extract_descriptors(net, test), extract_descriptors(net, train));
    double prev = 0.0;
    for (const auto& [k, acc] : r.top_k) {
      monotone = monotone && acc >= prev;
      prev = acc;
    }
    rows.emplace_back(name, r);
  };
  Rng init(9);
  run("random", nn::Backbone<float>(nn::BackboneConfig::tiny(nn::BackboneKind::C3D), init));
  if (ctx.pretrained) run("pretrained", nn::load_backbone<float>(export_single_stack(ctx.pretrained->last)));

  // Class-coded descriptors with small noise.
  Rng rng(99);
  std::vector<VideoDescriptor> gallery, queries;
  for (int i = 0; i < 200; ++i) {
    VideoDescriptor d;
    d.label = i % 10;
    d.vector.assign(10, 0.0);
    for (auto& v : d.vector) v = 0.05 * standard_normal(rng);
    d.vector[static_cast<std::size_t>(d.label)] += 1.0;
    d.clip_vectors = {d.vector};
    (i < 150 ? gallery : queries).push_back(std::move(d));
  }
  const double oracle = retrieve(queries, gallery).top_k.at(1);
  const std::string table = format_retrieval_table(rows);
  const bool layout = table.substr(0, table.find('\n')) == "method,top1,top5,top10,top20,top50";
  std::istringstream lines(table);
  std::string line;
  bool columns = true;
  while (std::getline(lines, line)) columns = columns && std::count(line.begin(), line.end(), ',') == 5;
  (void)t0;
  return {monotone && oracle == 1.0 && layout && columns,
          fmt("monotone %s, oracle top-1 %.3f, header %s", monotone ? "yes" : "no", oracle, layout && columns ? "ok" : "wrong")};
}

int run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && " + RELVID_CLI + " " + args + " >>cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 10. Two identical pipeline runs, each in its own directory with relative
// paths.
Outcome determinism(Context& ctx) {
  const std::vector<std::string> steps{
      "synth --out corpus --videos 3 --seed 11",
      "edit-shots --input corpus --output manifest.jsonl --seed 11",
      "build-samples --manifest manifest.jsonl --output samples.jsonl --count 96 --seed 11",
      "pretrain --manifest manifest.jsonl --samples samples.jsonl --out model.ckpt --preset tiny --epochs 5 --seed 11"};
  std::vector<fs::path> dirs{ctx.work / "run_a", ctx.work / "run_b"};
  for (const auto& d : dirs) {
    fs::create_directories(d);
    for (const auto& s : steps)
      if (const int rc = run_cli(d, s); rc != 0) return {false, fmt("'%s' exited with %d", s.c_str(), rc)};
  }
  auto losses = [](const fs::path& log) {
    std::vector<double> out;
    std::ifstream in(log);
    std::string line;
    while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line).at("loss").get<double>());
    return out;
  };
  const bool manifest = slurp(dirs[0] / "manifest.jsonl") == slurp(dirs[1] / "manifest.jsonl");
  const bool index = slurp(dirs[0] / "samples.jsonl") == slurp(dirs[1] / "samples.jsonl");
  const auto la = losses(dirs[0] / "model.ckpt.log.jsonl"), lb = losses(dirs[1] / "model.ckpt.log.jsonl");
  const bool curve = !la.empty() && la == lb;
  return {manifest && index && curve, fmt("manifest bytes %s, sample index bytes %s, %zu loss records %s",
                                          manifest ? "equal" : "differ", index ? "equal" : "differ", la.size(),
                                          curve ? "equal" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria{
      {"shot detection exactness", shot_detection},
      {"segmentation formula", segmentation},
      {"sampler label soundness", sampler_soundness},
      {"transform algebra", transform_algebra},
      {"numeric correctness", numerics},
      {"weight sharing and export", weight_sharing},
      {"learnability", learnability},
      {"downstream transfer", transfer},
      {"retrieval metric", retrieval},
      {"end-to-end determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  Context ctx;
  ctx.work = fs::current_path() / "acceptance_work";
  fs::remove_all(ctx.work);
  fs::create_directories(ctx.work);

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    const double budget = kBudgetSeconds.at(id);
    if (secs > budget) {
      o.pass = false;
      o.detail += fmt(" [over the %.0f s budget]", budget);
    }
    std::printf("%s criterion %2d  %-26s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
