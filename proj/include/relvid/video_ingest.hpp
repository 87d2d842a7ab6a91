#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "relvid/image.hpp"

namespace relvid {

inline constexpr int kFrameHeight = 128;
inline constexpr int kFrameWidth = 171;

enum class VideoFormat { FrameArchive, Container };

/// A decodable video. `frame_count` is the number of frames the decoder
/// actually yields (after optional frame-rate resampling).
struct RawVideo {
  std::string video_id;
  std::filesystem::path source_path;
  std::int64_t frame_count = 0;
  double fps = 0.0;
  int native_height = 0;
  int native_width = 0;
  VideoFormat format = VideoFormat::FrameArchive;
  /// Native rate of the source. Differs from `fps` only when resampling.
  double source_fps = 0.0;

  /// Source frame index backing output frame `i`.
  std::int64_t source_index(std::int64_t i) const;
};

struct FrameSequence {
  int height = 0;
  int width = 0;
  std::vector<Image> frames;
};

struct IngestOptions {
  /// Decode rate; native when unset.
  std::optional<double> target_fps;
};

/// Opens a frame archive directory (containing meta.json) or a container
/// file. Container frame counts are established by a full decode pass.
RawVideo open_video(const std::filesystem::path& path, const IngestOptions& opts = {});

/// All videos directly under `dir`, sorted by video_id. Archives are
/// subdirectories holding meta.json; containers are recognised by extension.
std::vector<RawVideo> scan_corpus(const std::filesystem::path& dir, const IngestOptions& opts = {});

/// Frames [start, end) in temporal order, resized to 128x171 unless
/// `resize` is false.
FrameSequence decode_frames(const RawVideo& video, std::int64_t start, std::int64_t end, bool resize = true);

/// Decodes an arbitrary set of frame indices (any order, duplicates allowed);
/// output order follows `indices`.
std::vector<Image> decode_indices(const RawVideo& video, const std::vector<std::int64_t>& indices,
                                  bool resize = true);

/// Canonical 128x171 bilinear resize.
Image resize_frame(const Image& frame);

/// Writes a lossless frame archive: `dir/meta.json` plus `dir/%06d.png`.
RawVideo write_frame_archive(const std::filesystem::path& dir, const std::string& video_id,
                             const std::vector<Image>& frames, double fps);

}  // namespace relvid
