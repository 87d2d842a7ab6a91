#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>

#include "label_verifier.hpp"
#include "relvid/error.hpp"
#include "relvid/image.hpp"
#include "relvid/relation_sampler.hpp"
#include "relvid/rng.hpp"
#include "relvid/video_ingest.hpp"

using namespace relvid;
namespace fs = std::filesystem;

namespace {

// Three videos with two shots each; one shot is long enough for two
// segments, lengths straddle the P_S eligibility limits.
Manifest toy_manifest() {
  std::vector<Segment> segs;
  const std::vector<std::vector<std::int64_t>> shot_lengths{{300, 80}, {70, 64}, {140, 50}};
  for (int v = 0; v < 3; ++v) {
    const std::string vid = "v" + std::to_string(v);
    std::int64_t begin = 0;
    for (std::size_t s = 0; s < shot_lengths[v].size(); ++s) {
      const std::string sid = vid + "_s" + std::to_string(s);
      const auto len = shot_lengths[v][s];
      if (len == 300) {
        segs.push_back({sid + "_g0", vid, sid, begin, begin + 150, ""});
        segs.push_back({sid + "_g1", vid, sid, begin + 150, begin + 300, ""});
      } else {
        segs.push_back({sid + "_g0", vid, sid, begin, begin + len, ""});
      }
      begin += len;
    }
  }
  return Manifest({}, segs);
}

Image coded_frame(int t) {
  Image img(kFrameHeight, kFrameWidth);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      img.at(y, x, 0) = static_cast<std::uint8_t>(t);
      img.at(y, x, 1) = static_cast<std::uint8_t>(x);
      img.at(y, x, 2) = static_cast<std::uint8_t>(y);
    }
  return img;
}

}  // namespace

TEST_SUITE("relation") {
  TEST_CASE("relation lists parse into canonical order") {
    CHECK(parse_relations("all").size() == 7u);
    const auto r = parse_relations("P_S,C_S,C_R");
    REQUIRE(r.size() == 3u);
    CHECK(r[0] == Relation::ShotCooccurrence);
    CHECK(r[1] == Relation::RotationCooccurrence);
    CHECK(r[2] == Relation::SpedUpPattern);
    CHECK(format_relations(r) == "C_S,C_R,P_S");
    CHECK(class_index(r, Relation::SpedUpPattern) == 2);
    CHECK_THROWS_AS(parse_relations("C_S,C_S"), InputError);
    CHECK_THROWS_AS(parse_relations("C_Q"), InputError);
    CHECK_THROWS_AS(parse_relations(""), InputError);
  }

  TEST_CASE("codes round-trip") {
    for (Relation r : kAllRelations) CHECK(relation_from_string(to_string(r)) == r);
    CHECK(is_cooccurrence(Relation::RotationCooccurrence));
    CHECK_FALSE(is_cooccurrence(Relation::InvertedPattern));
  }
}

TEST_SUITE("transforms") {
  TEST_CASE("rotating by 90 degrees four times is the identity") {
    Rng rng(1);
    Image img(8, 8);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
    Image r = img;
    for (int i = 0; i < 4; ++i) r = rotate_square(r, 90);
    CHECK(r == img);
    CHECK(rotate_square(rotate_square(img, 90), 270) == img);
    CHECK(rotate_square(rotate_square(img, 180), 180) == img);
  }

  TEST_CASE("90-degree rotation is counter-clockwise") {
    Image img(2, 2);
    img.at(0, 1, 0) = 9;  // top-right
    const auto r = rotate_square(img, 90);
    CHECK(r.at(0, 0, 0) == 9);  // moves to top-left
  }

  TEST_CASE("inverting twice restores the order") {
    std::vector<std::int64_t> f(37);
    std::iota(f.begin(), f.end(), 5);
    CHECK(invert_segment_frames(invert_segment_frames(f)) == f);
    CHECK(invert_segment_frames(f).front() == 41);
  }

  TEST_CASE("shuffle permutations are bijections other than identity and reversal") {
    Rng rng(9);
    for (int n : {3, 4, 16, 300}) {
      for (int i = 0; i < 50; ++i) {
        const auto p = draw_shuffle_permutation(n, rng);
        std::vector<int> sorted = p;
        std::sort(sorted.begin(), sorted.end());
        std::vector<int> iota(static_cast<std::size_t>(n));
        std::iota(iota.begin(), iota.end(), 0);
        CHECK(sorted == iota);
        CHECK(p != iota);
        CHECK(p != std::vector<int>(iota.rbegin(), iota.rend()));
        CHECK(apply_permutation(apply_permutation(iota, p), inverse_permutation(p)) == iota);
      }
    }
    CHECK_THROWS_AS(draw_shuffle_permutation(2, rng), InputError);
    CHECK_THROWS_AS(inverse_permutation({0, 0, 1}), InputError);
  }

  TEST_CASE("n = 3 reaches all four admissible permutations") {
    Rng rng(4);
    std::set<std::vector<int>> seen;
    for (int i = 0; i < 400; ++i) seen.insert(draw_shuffle_permutation(3, rng));
    CHECK(seen.size() == 4u);
  }

  TEST_CASE("dilation keeps every s-th frame and enforces L >= s k") {
    const auto d = dilate_segment(64, 4);
    CHECK(d.size() == 16u);
    for (std::size_t i = 1; i < d.size(); ++i) CHECK(d[i] - d[i - 1] == 4);
    CHECK_THROWS_AS(dilate_segment(63, 4), NotSatisfiable);
    CHECK_THROWS_AS(dilate_segment(100, 3), InputError);
    CHECK(eligible_dilations(31).empty());
    CHECK(eligible_dilations(32) == std::vector<int>{2});
    CHECK(eligible_dilations(64) == std::vector<int>{2, 4});
  }

  TEST_CASE("transform descriptors validate their payload") {
    CHECK(TransformDescriptor::rotate(90).valid());
    CHECK_FALSE(TransformDescriptor::rotate(45).valid());
    CHECK(TransformDescriptor::dilate(4).valid());
    CHECK_FALSE(TransformDescriptor::dilate(3).valid());
    CHECK(TransformDescriptor::shuffle({1, 0, 2}).valid());
    CHECK_FALSE(TransformDescriptor::shuffle({2, 1, 0}).valid());
    CHECK_FALSE(TransformDescriptor::shuffle({0, 1, 2}).valid());
    CHECK_FALSE(TransformDescriptor::shuffle({0, 0, 2}).valid());
  }
}

TEST_SUITE("sampler") {
  TEST_CASE("clip extraction stays inside the segment and frame") {
    Rng rng(2);
    const Segment seg{"s", "v", "v_s0", 100, 148, ""};
    for (int i = 0; i < 200; ++i) {
      const auto c = extract_clip(seg, rng);
      CHECK(c.frames.size() == 16u);
      CHECK(c.frames.front() >= 100);
      CHECK(c.frames.back() < 148);
      CHECK(testing::consecutive(c.frames, 1));
      CHECK(testing::crop_ok(c));
    }
    const Segment shorty{"t", "v", "v_s1", 0, 15, ""};
    CHECK_THROWS_AS(extract_clip(shorty, rng), NotSatisfiable);
  }

  TEST_CASE("excluded offsets are never drawn") {
    Rng rng(3);
    const Segment seg{"s", "v", "v_s0", 0, 18, ""};  // offsets 0..2
    std::map<std::int64_t, int> counts;
    for (int i = 0; i < 600; ++i) ++counts[extract_clip(seg, segment_indices(seg), rng, {}, 1).start_offset];
    CHECK(counts.count(1) == 0);
    CHECK(counts[0] > 200);
    CHECK(counts[2] > 200);
    const Segment exact{"e", "v", "v_s0", 0, 16, ""};
    CHECK_THROWS_AS(extract_clip(exact, segment_indices(exact), rng, {}, 0), NotSatisfiable);
  }

  TEST_CASE("every sampled label is recovered from provenance") {
    const auto m = toy_manifest();
    const std::vector<Relation> all(kAllRelations.begin(), kAllRelations.end());
    for (bool aligned : {false, true}) {
      SamplerOptions o;
      o.aligned = aligned;
      Rng rng(aligned ? 77 : 78);
      for (int i = 0; i < 1500; ++i) {
        const auto s = make_sample(m, all, rng, o);
        const auto got = testing::verify_relation(s, m);
        REQUIRE(got.has_value());
        CHECK(*got == s.label);
      }
    }
  }

  TEST_CASE("aligned pattern clips reuse the anchor crop") {
    const auto m = toy_manifest();
    SamplerOptions o;
    o.aligned = true;
    Rng rng(5);
    for (Relation r : {Relation::RotationCooccurrence, Relation::InvertedPattern, Relation::DisorderPattern,
                       Relation::SpedUpPattern}) {
      for (int i = 0; i < 50; ++i) {
        const auto s = make_sample_for(m, r, rng, o);
        CHECK(s.clip_b.crop_y == s.clip_a.crop_y);
        CHECK(s.clip_b.crop_x == s.clip_a.crop_x);
        if (r == Relation::RotationCooccurrence) CHECK(s.clip_b.frames == s.clip_a.frames);
        if (r == Relation::InvertedPattern) {
          // Same frames, reversed.
          CHECK(std::vector<std::int64_t>(s.clip_b.frames.rbegin(), s.clip_b.frames.rend()) == s.clip_a.frames);
        }
      }
    }
  }

  TEST_CASE("unsatisfiable categories fall back and are logged") {
    // One short video with one shot: C_V and C_D impossible, P_S impossible.
    Manifest m({}, {{"a_s0_g0", "a", "a_s0", 0, 20, ""}});
    Rng rng(1);
    CHECK_THROWS_AS(make_sample_for(m, Relation::DatasetCooccurrence, rng), NotSatisfiable);
    CHECK_THROWS_AS(make_sample_for(m, Relation::SpedUpPattern, rng), NotSatisfiable);
    std::vector<Relation> fallbacks;
    const std::vector<Relation> rel{Relation::DatasetCooccurrence, Relation::InvertedPattern};
    for (int i = 0; i < 20; ++i) {
      const auto s = make_sample(m, rel, rng, {}, &fallbacks);
      CHECK(s.label == Relation::InvertedPattern);
    }
    CHECK_FALSE(fallbacks.empty());
    for (Relation r : fallbacks) CHECK(r == Relation::DatasetCooccurrence);
    CHECK_THROWS_AS(make_sample(m, {Relation::DatasetCooccurrence}, rng), DegenerateCorpusError);
    CHECK_THROWS_AS(check_satisfiable(m, rel), ConfigError);
    CHECK_NOTHROW(check_satisfiable(m, {Relation::ShotCooccurrence, Relation::InvertedPattern}));
    CHECK_NOTHROW(check_satisfiable(toy_manifest(), std::vector<Relation>(kAllRelations.begin(), kAllRelations.end())));
  }

  TEST_CASE("sample index is seed-addressable and round-trips") {
    const auto m = toy_manifest();
    const std::vector<Relation> rel{Relation::ShotCooccurrence, Relation::DisorderPattern, Relation::SpedUpPattern};
    const auto idx = build_sample_index(m, rel, 60, 1234);
    const auto again = build_sample_index(m, rel, 60, 1234);
    CHECK(idx.serialize() == again.serialize());
    CHECK(idx.serialize() != build_sample_index(m, rel, 60, 1235).serialize());
    // Sample 17 regenerated on its own.
    Rng rng(derive_seed(1234, std::uint64_t{17}));
    const auto s17 = make_sample(m, rel, rng);
    CHECK(s17.clip_b.frames == idx.samples[17].clip_b.frames);
    CHECK(s17.label == idx.samples[17].label);

    const auto path = fs::temp_directory_path() / "relvid_test_index.jsonl";
    idx.save(path);
    const auto loaded = SampleIndex::load(path);
    CHECK(loaded.serialize() == idx.serialize());
    CHECK(loaded.header.relations == rel);
    fs::remove(path);
  }

  TEST_CASE("materialised clips carry the planned frames, crop and rotation") {
    const auto dir = fs::temp_directory_path() / "relvid_test_coded";
    fs::remove_all(dir);
    std::vector<Image> frames;
    for (int t = 0; t < 40; ++t) frames.push_back(coded_frame(t));
    write_frame_archive(dir, "coded", frames, 25.0);
    Manifest m({}, {{"coded_s0_g0", "coded", "coded_s0", 0, 40, dir.string()}});
    Rng rng(6);
    for (Relation r : {Relation::InvertedPattern, Relation::RotationCooccurrence}) {
      const auto s = make_sample_for(m, r, rng);
      const auto clip = materialize_clip(s.clip_b);
      REQUIRE(clip.frames.size() == 16u);
      for (int i = 0; i < 16; ++i) {
        Image expect = crop(frames[static_cast<std::size_t>(s.clip_b.frames[i])], s.clip_b.crop_y, s.clip_b.crop_x,
                            kCropSize, kCropSize);
        if (r == Relation::RotationCooccurrence) expect = rotate_square(expect, s.clip_b.transform.rotation_angle);
        CHECK(clip.frames[static_cast<std::size_t>(i)] == expect);
        CHECK(clip.frames[static_cast<std::size_t>(i)].at(5, 5, 0) == s.clip_b.frames[i]);
      }
    }
    fs::remove_all(dir);
  }
}
