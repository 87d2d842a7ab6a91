#pragma once

// Recovers a sample's relation from clip provenance alone: segment ids are
// resolved through the manifest and frame lists are checked against what
// each relation's construction implies.

#include <optional>

#include "relvid/relation.hpp"
#include "relvid/relation_sampler.hpp"
#include "relvid/shot_editing.hpp"

namespace relvid::testing {

inline bool consecutive(const std::vector<std::int64_t>& f, std::int64_t step) {
  for (std::size_t i = 1; i < f.size(); ++i)
    if (f[i] - f[i - 1] != step) return false;
  return true;
}

inline bool inside(const std::vector<std::int64_t>& f, const Segment& s) {
  for (auto v : f)
    if (v < s.start || v >= s.end) return false;
  return true;
}

inline bool crop_ok(const ClipPlan& c) {
  return c.crop_y >= 0 && c.crop_x >= 0 && c.crop_y + kCropSize <= kFrameHeight && c.crop_x + kCropSize <= kFrameWidth;
}

inline std::optional<Relation> verify_relation(const RelationSample& s, const Manifest& m, int k = kClipLength) {
  const auto ia = m.find(s.clip_a.segment_id);
  const auto ib = m.find(s.clip_b.segment_id);
  if (!ia || !ib) return std::nullopt;
  const Segment& a = m.segments()[*ia];
  const Segment& b = m.segments()[*ib];
  const auto& fa = s.clip_a.frames;
  const auto& fb = s.clip_b.frames;
  if (static_cast<int>(fa.size()) != k || static_cast<int>(fb.size()) != k) return std::nullopt;
  if (s.clip_a.transform.kind != TransformKind::None || !consecutive(fa, 1) || !inside(fa, a)) return std::nullopt;
  if (!crop_ok(s.clip_a) || !crop_ok(s.clip_b) || !inside(fb, b)) return std::nullopt;
  const auto& t = s.clip_b.transform;
  const bool same_segment = *ia == *ib;
  switch (t.kind) {
    case TransformKind::None:
      if (!consecutive(fb, 1)) return std::nullopt;
      if (b.shot_id == a.shot_id) {
        if (same_segment && fa == fb) return std::nullopt;
        return Relation::ShotCooccurrence;
      }
      if (b.video_id == a.video_id) return Relation::VideoCooccurrence;
      return Relation::DatasetCooccurrence;
    case TransformKind::Rotate:
      if (!same_segment || !consecutive(fb, 1)) return std::nullopt;
      if (t.rotation_angle != 90 && t.rotation_angle != 180 && t.rotation_angle != 270) return std::nullopt;
      return Relation::RotationCooccurrence;
    case TransformKind::Invert:
      if (!same_segment || !consecutive(fb, -1)) return std::nullopt;
      return Relation::InvertedPattern;
    case TransformKind::Shuffle: {
      if (!same_segment || static_cast<std::int64_t>(t.permutation.size()) != a.length()) return std::nullopt;
      std::vector<char> seen(t.permutation.size(), 0);
      bool identity = true, reversal = true;
      const int n = static_cast<int>(t.permutation.size());
      for (int i = 0; i < n; ++i) {
        const int p = t.permutation[i];
        if (p < 0 || p >= n || seen[p]) return std::nullopt;
        seen[p] = 1;
        identity = identity && p == i;
        reversal = reversal && p == n - 1 - i;
      }
      if (identity || reversal) return std::nullopt;
      const auto off = s.clip_b.start_offset;
      if (off < 0 || off + k > n) return std::nullopt;
      for (int i = 0; i < k; ++i)
        if (fb[i] != a.start + t.permutation[off + i]) return std::nullopt;
      return Relation::DisorderPattern;
    }
    case TransformKind::Dilate:
      if (!same_segment || (t.interval != 2 && t.interval != 4)) return std::nullopt;
      if (a.length() < static_cast<std::int64_t>(t.interval) * k) return std::nullopt;
      if (!consecutive(fb, t.interval) || (fb.front() - a.start) % t.interval != 0) return std::nullopt;
      return Relation::SpedUpPattern;
  }
  return std::nullopt;
}

}  // namespace relvid::testing
