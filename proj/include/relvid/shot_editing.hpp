#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relvid/hog.hpp"
#include "relvid/video_ingest.hpp"

namespace relvid {

struct Shot {
  std::string video_id;
  std::int64_t begin = 0;  ///< inclusive
  std::int64_t end = 0;    ///< exclusive
  std::string shot_id;

  std::int64_t length() const noexcept { return end - begin; }
  friend bool operator==(const Shot&, const Shot&) = default;
};

struct Segment {
  std::string segment_id;
  std::string video_id;
  std::string shot_id;
  std::int64_t start = 0;  ///< inclusive
  std::int64_t end = 0;    ///< exclusive
  std::string source_path;

  std::int64_t length() const noexcept { return end - start; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Shot-change threshold: a fixed value, or per-video mean + 3 stddev of the
/// adjacent-difference series when unset.
struct Threshold {
  std::optional<double> fixed;

  static Threshold adaptive() { return {}; }
  static Threshold value(double v) { return {v}; }
  static Threshold infinite() { return {std::numeric_limits<double>::infinity()}; }
  bool is_adaptive() const noexcept { return !fixed.has_value(); }
};

struct ShotEditingParams {
  std::int64_t k = 300;
  std::int64_t min_len = 48;
  Threshold threshold = Threshold::adaptive();
  HogParams hog;
  /// Frames decoded per batch while scanning a video.
  std::int64_t decode_chunk = 64;
};

std::string make_shot_id(const std::string& video_id, std::size_t shot_index);
std::string make_segment_id(const std::string& shot_id, std::size_t segment_index);

/// Adjacent-frame HOG differences: element t-1 holds diff(frame t-1, frame t).
std::vector<double> hog_difference_series(const RawVideo& video, const ShotEditingParams& params = {});

/// Threshold actually applied to a difference series.
double resolve_threshold(const std::vector<double>& diffs, const Threshold& threshold);

/// Cuts placed at every t where diff(t-1, t) exceeds the threshold.
std::vector<Shot> shots_from_differences(const std::string& video_id, std::int64_t frame_count,
                                         const std::vector<double>& diffs, const Threshold& threshold);

std::vector<Shot> detect_shot_changes(const RawVideo& video, const ShotEditingParams& params = {});

/// Full-K windows (b + iK, b + (i+1)K) while b + (i+1)K <= e, then the
/// remaining tail when it holds at least `min_len` frames.
std::vector<Segment> segment_shots(const std::vector<Shot>& shots, std::int64_t k = 300, std::int64_t min_len = 48,
                                   const std::string& source_path = {});

class Manifest {
 public:
  struct Header {
    std::string fingerprint;
    std::int64_t k = 300;
    std::int64_t min_len = 48;
    std::string threshold;  ///< "adaptive" or the fixed value
    std::optional<double> decode_fps;
    std::int64_t num_videos = 0;
    std::int64_t num_shots = 0;
    std::int64_t total_frames = 0;
  };

  Manifest() = default;
  Manifest(Header header, std::vector<Segment> segments);

  const Header& header() const noexcept { return header_; }
  Header& header() noexcept { return header_; }
  const std::vector<Segment>& segments() const noexcept { return segments_; }
  std::size_t size() const noexcept { return segments_.size(); }
  bool empty() const noexcept { return segments_.empty(); }

  /// Segment indices sharing a shot / a video.
  const std::vector<std::size_t>& by_shot(const std::string& shot_id) const;
  const std::vector<std::size_t>& by_video(const std::string& video_id) const;
  const std::map<std::string, std::vector<std::size_t>>& shot_index() const noexcept { return by_shot_; }
  const std::map<std::string, std::vector<std::size_t>>& video_index() const noexcept { return by_video_; }
  std::optional<std::size_t> find(const std::string& segment_id) const;

  /// Line-delimited JSON: one header record then one record per segment.
  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);
  std::string serialize() const;

  friend bool operator==(const Manifest& a, const Manifest& b) {
    return a.serialize() == b.serialize();
  }

 private:
  void rebuild_indices();

  Header header_;
  std::vector<Segment> segments_;
  std::map<std::string, std::vector<std::size_t>> by_shot_;
  std::map<std::string, std::vector<std::size_t>> by_video_;
  std::map<std::string, std::size_t> by_id_;
};

struct ManifestBuild {
  Manifest manifest;
  std::map<std::string, std::vector<Shot>> shots;  ///< per video_id
};

/// Detects shots per video (in parallel), segments them and merges in
/// video order.
ManifestBuild build_manifest(const std::vector<RawVideo>& corpus, const ShotEditingParams& params = {});

}  // namespace relvid
