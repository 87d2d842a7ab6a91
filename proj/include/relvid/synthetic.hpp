#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "relvid/dataset.hpp"
#include "relvid/image.hpp"
#include "relvid/shot_editing.hpp"
#include "relvid/video_ingest.hpp"

namespace relvid {

enum class MotionKind { Translating, Rotating, Static };

std::string to_string(MotionKind k);
MotionKind motion_kind_from_string(const std::string& s);

/// Parameters of a procedurally generated untrimmed corpus. Every shot is a
/// textured canvas (vertical brightness ramp plus random blobs) that either
/// slides, spins clockwise, or stays still.
struct SyntheticCorpusSpec {
  int num_videos = 1;
  int shots_min = 2;
  int shots_max = 2;
  int shot_len_min = 100;
  int shot_len_max = 100;
  std::vector<MotionKind> motion_kinds = {MotionKind::Translating, MotionKind::Rotating, MotionKind::Static};
  int height = kFrameHeight;
  int width = kFrameWidth;
  double fps = 25.0;
  int speed = 1;              ///< pixels per frame
  double spin = 0.5;          ///< degrees per frame
  bool canonical_motion = true;  ///< always slide rightwards; otherwise one of four directions
  double margin = 5.0;        ///< minimum cut / within-shot HOG difference ratio
  std::uint64_t seed = 0;
  std::string id_prefix = "synth";
};

struct ShotPlan {
  MotionKind motion = MotionKind::Static;
  int direction = 0;  ///< degrees: 0 right, 90 down, 180 left, 270 up
  int length = 0;
  std::uint64_t seed = 0;
};

struct RenderedVideo {
  std::string video_id;
  std::vector<Image> frames;
  std::vector<Shot> shots;  ///< ground truth
};

std::string synthetic_video_id(const SyntheticCorpusSpec& spec, int index);

/// Renders one shot. Pure function of its arguments.
std::vector<Image> render_shot(const ShotPlan& plan, int height, int width, int speed, double spin);

/// Renders video `index` of the corpus, re-drawing shots until the cut margin
/// holds. Pure function of (spec, index).
RenderedVideo render_synthetic_video(const SyntheticCorpusSpec& spec, int index);

struct SyntheticCorpus {
  std::vector<RawVideo> videos;
  std::vector<Shot> ground_truth;
};

/// Writes `out_dir/<video_id>/` frame archives, `ground_truth.jsonl` and
/// `corpus.json`.
SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec, const std::filesystem::path& out_dir);

void save_ground_truth(const std::filesystem::path& path, const std::vector<Shot>& shots);
std::vector<Shot> load_ground_truth(const std::filesystem::path& path);

/// Labelled single-shot clips for downstream evaluation. Class c uses motion
/// pattern c: 0 slide right, 1 slide down, 2 spin, 3 static.
struct ActionDatasetSpec {
  int classes = 4;
  int train_per_class = 8;
  int test_per_class = 4;
  int frames = 48;
  int speed = 3;      ///< pixels per frame
  double spin = 2.0;  ///< degrees per frame
  double fps = 25.0;
  std::uint64_t seed = 0;
};

/// Writes archives plus `dataset.jsonl` under `out_dir`.
LabeledVideoDataset generate_action_dataset(const ActionDatasetSpec& spec, const std::filesystem::path& out_dir);

}  // namespace relvid
