#include "relvid/video_ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include "relvid/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace relvid {
namespace {

constexpr const char* kMetaFile = "meta.json";

bool is_container_ext(const fs::path& p) {
  static const char* exts[] = {".mp4", ".avi", ".mkv", ".mov", ".webm", ".mpg", ".mpeg", ".m4v"};
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return std::any_of(std::begin(exts), std::end(exts), [&](const char* x) { return e == x; });
}

fs::path archive_frame_path(const fs::path& dir, std::int64_t index) {
  char name[32];
  std::snprintf(name, sizeof(name), "%06lld.png", static_cast<long long>(index));
  return dir / name;
}

Image from_bgr(const cv::Mat& bgr) {
  Image img(bgr.rows, bgr.cols);
  cv::Mat rgb(img.height, img.width, CV_8UC3, img.pixels.data());
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return img;
}

void apply_rate(RawVideo& v, std::int64_t source_count, const IngestOptions& opts) {
  v.source_fps = v.fps;
  if (opts.target_fps && *opts.target_fps > 0 && std::abs(*opts.target_fps - v.fps) > 1e-9) {
    v.frame_count = static_cast<std::int64_t>(std::floor(source_count * *opts.target_fps / v.source_fps + 1e-9));
    v.fps = *opts.target_fps;
  } else {
    v.frame_count = source_count;
  }
}

RawVideo open_archive(const fs::path& dir, const IngestOptions& opts) {
  std::ifstream in(dir / kMetaFile);
  if (!in) throw IoError((dir / kMetaFile).string(), "cannot open archive metadata");
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw IoError((dir / kMetaFile).string(), e.what());
  }
  RawVideo v;
  v.video_id = meta.at("video_id").get<std::string>();
  v.source_path = dir;
  v.fps = meta.at("fps").get<double>();
  v.native_height = meta.at("height").get<int>();
  v.native_width = meta.at("width").get<int>();
  v.format = VideoFormat::FrameArchive;
  const auto count = meta.at("frame_count").get<std::int64_t>();
  if (count > 0 && !fs::exists(archive_frame_path(dir, count - 1)))
    throw IoError(dir.string(), "archive is missing frames");
  apply_rate(v, count, opts);
  return v;
}

RawVideo open_container(const fs::path& path, const IngestOptions& opts) {
  cv::VideoCapture cap(path.string());
  if (!cap.isOpened()) throw IoError(path.string(), "cannot open video");
  RawVideo v;
  v.video_id = path.stem().string();
  v.source_path = path;
  v.format = VideoFormat::Container;
  v.fps = cap.get(cv::CAP_PROP_FPS);
  if (!(v.fps > 0)) v.fps = 25.0;
  std::int64_t count = 0;
  cv::Mat frame;
  while (cap.read(frame)) {
    if (count == 0) {
      v.native_height = frame.rows;
      v.native_width = frame.cols;
    }
    ++count;
  }
  if (count == 0) throw IoError(path.string(), "no decodable frames");
  apply_rate(v, count, opts);
  return v;
}

std::vector<Image> decode_container(const RawVideo& video, const std::vector<std::int64_t>& sources) {
  // Sequential decode; seeking is not frame-accurate across codecs.
  std::map<std::int64_t, Image> wanted;
  for (auto s : sources) wanted.emplace(s, Image{});
  cv::VideoCapture cap(video.source_path.string());
  if (!cap.isOpened()) throw IoError(video.source_path.string(), "cannot open video");
  const std::int64_t last = wanted.rbegin()->first;
  cv::Mat frame;
  for (std::int64_t i = 0; i <= last; ++i) {
    if (!cap.read(frame)) throw IoError(video.source_path.string(), "decode failed at frame " + std::to_string(i));
    auto it = wanted.find(i);
    if (it != wanted.end()) it->second = from_bgr(frame);
  }
  std::vector<Image> out;
  out.reserve(sources.size());
  for (auto s : sources) out.push_back(wanted.at(s));
  return out;
}

}  // namespace

std::int64_t RawVideo::source_index(std::int64_t i) const {
  if (source_fps <= 0 || std::abs(source_fps - fps) < 1e-9) return i;
  return static_cast<std::int64_t>(std::floor(i * source_fps / fps + 1e-9));
}

RawVideo open_video(const fs::path& path, const IngestOptions& opts) {
  if (fs::is_directory(path)) return open_archive(path, opts);
  if (!fs::exists(path)) throw IoError(path.string(), "no such file");
  return open_container(path, opts);
}

std::vector<RawVideo> scan_corpus(const fs::path& dir, const IngestOptions& opts) {
  if (!fs::is_directory(dir)) throw IoError(dir.string(), "not a directory");
  std::vector<RawVideo> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / kMetaFile)) {
      out.push_back(open_archive(entry.path(), opts));
    } else if (entry.is_regular_file() && is_container_ext(entry.path())) {
      out.push_back(open_container(entry.path(), opts));
    }
  }
  std::sort(out.begin(), out.end(), [](const RawVideo& a, const RawVideo& b) { return a.video_id < b.video_id; });
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i].video_id == out[i - 1].video_id)
      throw InputError("duplicate video_id in corpus: " + out[i].video_id);
  return out;
}

Image resize_frame(const Image& frame) {
  if (frame.empty()) throw InputError("resize_frame: empty frame");
  return resize_bilinear(frame, kFrameHeight, kFrameWidth);
}

std::vector<Image> decode_indices(const RawVideo& video, const std::vector<std::int64_t>& indices, bool resize) {
  for (auto i : indices)
    if (i < 0 || i >= video.frame_count)
      throw InputError("frame index " + std::to_string(i) + " out of range for " + video.video_id + " (" +
                       std::to_string(video.frame_count) + " frames)");
  std::vector<Image> frames;
  if (indices.empty()) return frames;
  std::vector<std::int64_t> sources(indices.size());
  std::transform(indices.begin(), indices.end(), sources.begin(), [&](auto i) { return video.source_index(i); });
  if (video.format == VideoFormat::FrameArchive) {
    frames.reserve(sources.size());
    for (auto s : sources) frames.push_back(read_png(archive_frame_path(video.source_path, s)));
  } else {
    frames = decode_container(video, sources);
  }
  if (resize)
    for (auto& f : frames) f = resize_frame(f);
  return frames;
}

FrameSequence decode_frames(const RawVideo& video, std::int64_t start, std::int64_t end, bool resize) {
  if (start < 0 || start >= end || end > video.frame_count)
    throw InputError("decode_frames: range [" + std::to_string(start) + ", " + std::to_string(end) +
                     ") invalid for " + video.video_id + " with " + std::to_string(video.frame_count) + " frames");
  std::vector<std::int64_t> idx(static_cast<std::size_t>(end - start));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + static_cast<std::int64_t>(i);
  FrameSequence seq;
  seq.frames = decode_indices(video, idx, resize);
  seq.height = seq.frames.front().height;
  seq.width = seq.frames.front().width;
  return seq;
}

RawVideo write_frame_archive(const fs::path& dir, const std::string& video_id, const std::vector<Image>& frames,
                             double fps) {
  if (frames.empty()) throw InputError("write_frame_archive: no frames");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), ec.message());
  for (std::size_t i = 0; i < frames.size(); ++i) write_png(archive_frame_path(dir, static_cast<std::int64_t>(i)), frames[i]);
  json meta = {{"video_id", video_id},
               {"frame_count", frames.size()},
               {"fps", fps},
               {"height", frames.front().height},
               {"width", frames.front().width},
               {"frame_format", "png"}};
  std::ofstream out(dir / kMetaFile);
  if (!out) throw IoError((dir / kMetaFile).string(), "cannot write archive metadata");
  out << meta.dump(2) << "\n";
  RawVideo v;
  v.video_id = video_id;
  v.source_path = dir;
  v.frame_count = static_cast<std::int64_t>(frames.size());
  v.fps = v.source_fps = fps;
  v.native_height = frames.front().height;
  v.native_width = frames.front().width;
  return v;
}

}  // namespace relvid
