#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "relvid/video_ingest.hpp"

namespace relvid {

struct LabeledVideo {
  RawVideo video;
  int label = 0;
  std::string split;  ///< "train" or "test"
};

struct LabeledVideoDataset {
  std::vector<LabeledVideo> videos;
  int class_count = 0;

  /// Videos of one split, in dataset order.
  LabeledVideoDataset split(const std::string& name) const;
};

/// Line-delimited JSON records {video_id, source_path, label, split};
/// relative source paths resolve against the file's directory.
void save_dataset(const std::filesystem::path& path, const LabeledVideoDataset& ds);
LabeledVideoDataset load_dataset(const std::filesystem::path& path, const IngestOptions& opts = {});

}  // namespace relvid
