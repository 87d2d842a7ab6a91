#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relvid/image.hpp"
#include "relvid/relation.hpp"
#include "relvid/rng.hpp"
#include "relvid/shot_editing.hpp"

namespace relvid {

inline constexpr int kClipLength = 16;
inline constexpr int kCropSize = 112;

enum class TransformKind { None, Rotate, Invert, Shuffle, Dilate };

std::string_view to_string(TransformKind k) noexcept;
TransformKind transform_kind_from_string(std::string_view s);

/// How a clip was derived from its segment. Only the fields of `kind` are
/// populated. Pattern transforms act on the whole segment, so a shuffle
/// permutation spans the segment length rather than the clip length.
struct TransformDescriptor {
  TransformKind kind = TransformKind::None;
  int rotation_angle = 0;        ///< Rotate: 90, 180 or 270 (counter-clockwise)
  std::vector<int> permutation;  ///< Shuffle: output position t shows input frame permutation[t]
  int interval = 0;              ///< Dilate: 2 or 4

  static TransformDescriptor none() { return {}; }
  static TransformDescriptor rotate(int angle);
  static TransformDescriptor invert();
  static TransformDescriptor shuffle(std::vector<int> permutation);
  static TransformDescriptor dilate(int interval);

  /// Checks the populated-fields rule and the per-kind value constraints.
  bool valid() const;
  friend bool operator==(const TransformDescriptor&, const TransformDescriptor&) = default;
};

/// Everything needed to materialise a clip: which frames, which crop, which
/// transform. Pixel data is produced later by `materialize_clip`.
struct ClipPlan {
  std::string segment_id;
  std::string shot_id;
  std::string video_id;
  std::string source_path;
  std::int64_t start_offset = 0;     ///< within the (transformed) segment index list
  std::vector<std::int64_t> frames;  ///< absolute source frame indices, length k
  int crop_y = 0;
  int crop_x = 0;
  TransformDescriptor transform;

  friend bool operator==(const ClipPlan&, const ClipPlan&) = default;
};

/// k frames at 112x112 plus provenance.
struct Clip {
  ClipPlan plan;
  std::vector<Image> frames;
};

struct RelationSample {
  ClipPlan clip_a;
  ClipPlan clip_b;
  Relation label = Relation::ShotCooccurrence;
  std::uint64_t rng_seed = 0;

  friend bool operator==(const RelationSample&, const RelationSample&) = default;
};

struct SamplerOptions {
  int clip_length = kClipLength;
  int crop_size = kCropSize;
  int frame_height = kFrameHeight;
  int frame_width = kFrameWidth;
  /// Pattern relations and C_R reuse clip_a's start offset and crop window
  /// for clip_b instead of drawing them independently.
  bool aligned = false;
  int max_retries = 16;
};

const Segment& sample_anchor(const Manifest& manifest, Rng& rng);

/// Uniform draw among the partners eligible for a cooccurrence relation.
/// C_S may return the anchor itself. Throws NotSatisfiable when none exist.
const Segment& sample_partner_cooccurrence(const Segment& anchor, Relation category, const Manifest& manifest,
                                           Rng& rng);

Clip rotate_clip(const Clip& clip, int angle);
/// Angle drawn uniformly from {90, 180, 270}.
Clip rotate_clip(const Clip& clip, Rng& rng);
int draw_rotation_angle(Rng& rng);

std::vector<std::int64_t> invert_segment_frames(std::vector<std::int64_t> frames);

/// Uniform permutation of n >= 3 items excluding the identity and the full
/// reversal.
std::vector<int> draw_shuffle_permutation(int n, Rng& rng);

/// Reorders frames: out[t] = in[permutation[t]].
template <typename V>
std::vector<V> apply_permutation(const std::vector<V>& items, const std::vector<int>& permutation);
std::vector<int> inverse_permutation(const std::vector<int>& permutation);

/// Shuffles the frames of a clip; the permutation is recorded in the
/// returned clip's transform.
Clip shuffle_frames(const Clip& clip, Rng& rng);

/// Relative indices {0, s, 2s, ...} below L. Throws NotSatisfiable unless
/// L >= s * k.
std::vector<std::int64_t> dilate_segment(std::int64_t length, int s, int k = kClipLength);

/// Intervals s in {2, 4} with L >= s * k.
std::vector<int> eligible_dilations(std::int64_t length, int k = kClipLength);

/// Plans k contiguous entries of `indices` (relative to the segment start)
/// from a uniform start offset, with one random crop window. An offset equal
/// to `exclude_offset` is never chosen. Throws NotSatisfiable when fewer
/// than k entries (or no admissible offset) exist.
ClipPlan extract_clip(const Segment& segment, const std::vector<std::int64_t>& indices, Rng& rng,
                      const SamplerOptions& options = {}, std::optional<std::int64_t> exclude_offset = {});
ClipPlan extract_clip(const Segment& segment, Rng& rng, const SamplerOptions& options = {});

/// Identity index list [0, L).
std::vector<std::int64_t> segment_indices(const Segment& segment);

/// Draws the category uniformly from `relations` and builds the pair. On
/// NotSatisfiable the category (and anchor) is redrawn, at most
/// `max_retries` times; each failed category is appended to `fallbacks`.
RelationSample make_sample(const Manifest& manifest, const std::vector<Relation>& relations, Rng& rng,
                           const SamplerOptions& options = {}, std::vector<Relation>* fallbacks = nullptr);

/// Builds the pair for a fixed category; throws NotSatisfiable.
RelationSample make_sample_for(const Manifest& manifest, Relation category, Rng& rng,
                               const SamplerOptions& options = {});

/// Throws ConfigError when some active relation cannot be produced by any
/// segment of the manifest.
void check_satisfiable(const Manifest& manifest, const std::vector<Relation>& relations,
                       const SamplerOptions& options = {});

/// Decodes, crops, and (for rotate transforms) rotates the clip's frames.
Clip materialize_clip(const ClipPlan& plan, const SamplerOptions& options = {});

/// A reproducible list of samples. Sample i is generated from
/// derive_seed(seed, i), so any sub-range can be regenerated independently.
struct SampleIndex {
  struct Header {
    std::string fingerprint;
    std::string manifest_fingerprint;
    std::vector<Relation> relations;
    std::uint64_t seed = 0;
    std::int64_t count = 0;
    bool aligned = false;
  };
  Header header;
  std::vector<RelationSample> samples;
  std::map<Relation, std::int64_t> fallbacks;  ///< failed draws per category

  void save(const std::filesystem::path& path) const;
  static SampleIndex load(const std::filesystem::path& path);
  std::string serialize() const;
};

SampleIndex build_sample_index(const Manifest& manifest, const std::vector<Relation>& relations, std::int64_t count,
                               std::uint64_t seed, const SamplerOptions& options = {});

template <typename V>
std::vector<V> apply_permutation(const std::vector<V>& items, const std::vector<int>& permutation) {
  std::vector<V> out;
  out.reserve(permutation.size());
  for (int p : permutation) out.push_back(items.at(static_cast<std::size_t>(p)));
  return out;
}

}  // namespace relvid
