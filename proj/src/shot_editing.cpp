#include "relvid/shot_editing.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "relvid/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace relvid {

std::string make_shot_id(const std::string& video_id, std::size_t shot_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_s%03zu", shot_index);
  return video_id + buf;
}

std::string make_segment_id(const std::string& shot_id, std::size_t segment_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_g%03zu", segment_index);
  return shot_id + buf;
}

std::vector<double> hog_difference_series(const RawVideo& video, const ShotEditingParams& params) {
  if (video.frame_count <= 0) throw InputError("detect_shot_changes: video " + video.video_id + " has no frames");
  std::vector<double> diffs;
  diffs.reserve(static_cast<std::size_t>(std::max<std::int64_t>(video.frame_count - 1, 0)));
  std::vector<float> prev;
  const std::int64_t chunk = std::max<std::int64_t>(params.decode_chunk, 1);
  for (std::int64_t start = 0; start < video.frame_count; start += chunk) {
    const std::int64_t end = std::min(video.frame_count, start + chunk);
    FrameSequence seq = decode_frames(video, start, end);
    std::vector<std::vector<float>> desc(seq.frames.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < seq.frames.size(); ++i) desc[i] = hog_descriptor(to_gray(seq.frames[i]), params.hog);
    for (auto& d : desc) {
      if (!prev.empty()) diffs.push_back(frame_difference(prev, d));
      prev = std::move(d);
    }
  }
  return diffs;
}

double resolve_threshold(const std::vector<double>& diffs, const Threshold& threshold) {
  if (threshold.fixed) return *threshold.fixed;
  if (diffs.empty()) return std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(diffs.size());
  const double mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / n;
  double var = 0.0;
  for (double d : diffs) var += (d - mean) * (d - mean);
  return mean + 3.0 * std::sqrt(var / n);
}

std::vector<Shot> shots_from_differences(const std::string& video_id, std::int64_t frame_count,
                                         const std::vector<double>& diffs, const Threshold& threshold) {
  if (frame_count <= 0) throw InputError("detect_shot_changes: video " + video_id + " has no frames");
  if (threshold.fixed && !(*threshold.fixed > 0))
    throw InputError("detect_shot_changes: threshold must be positive");
  const double thr = resolve_threshold(diffs, threshold);
  std::vector<Shot> shots;
  std::int64_t begin = 0;
  for (std::size_t i = 0; i < diffs.size(); ++i) {
    if (diffs[i] > thr) {
      const auto cut = static_cast<std::int64_t>(i) + 1;
      shots.push_back({video_id, begin, cut, make_shot_id(video_id, shots.size())});
      begin = cut;
    }
  }
  shots.push_back({video_id, begin, frame_count, make_shot_id(video_id, shots.size())});
  return shots;
}

std::vector<Shot> detect_shot_changes(const RawVideo& video, const ShotEditingParams& params) {
  return shots_from_differences(video.video_id, video.frame_count, hog_difference_series(video, params),
                                params.threshold);
}

std::vector<Segment> segment_shots(const std::vector<Shot>& shots, std::int64_t k, std::int64_t min_len,
                                   const std::string& source_path) {
  if (!(k > min_len && min_len > 0)) throw InputError("segment_shots: requires K > min_len > 0");
  std::vector<Segment> out;
  for (const Shot& s : shots) {
    std::size_t n = 0;
    std::int64_t i = 0;
    for (; s.begin + (i + 1) * k <= s.end; ++i, ++n)
      out.push_back({make_segment_id(s.shot_id, n), s.video_id, s.shot_id, s.begin + i * k, s.begin + (i + 1) * k,
                     source_path});
    const std::int64_t tail = s.begin + i * k;
    if (s.end - tail >= min_len)
      out.push_back({make_segment_id(s.shot_id, n), s.video_id, s.shot_id, tail, s.end, source_path});
  }
  return out;
}

// ---------------------------------------------------------------------------

Manifest::Manifest(Header header, std::vector<Segment> segments)
    : header_(std::move(header)), segments_(std::move(segments)) {
  rebuild_indices();
}

void Manifest::rebuild_indices() {
  by_shot_.clear();
  by_video_.clear();
  by_id_.clear();
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const Segment& s = segments_[i];
    if (!by_id_.emplace(s.segment_id, i).second) throw InputError("manifest: duplicate segment_id " + s.segment_id);
    by_shot_[s.shot_id].push_back(i);
    by_video_[s.video_id].push_back(i);
  }
}

const std::vector<std::size_t>& Manifest::by_shot(const std::string& shot_id) const {
  static const std::vector<std::size_t> none;
  auto it = by_shot_.find(shot_id);
  return it == by_shot_.end() ? none : it->second;
}

const std::vector<std::size_t>& Manifest::by_video(const std::string& video_id) const {
  static const std::vector<std::size_t> none;
  auto it = by_video_.find(video_id);
  return it == by_video_.end() ? none : it->second;
}

std::optional<std::size_t> Manifest::find(const std::string& segment_id) const {
  auto it = by_id_.find(segment_id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::string Manifest::serialize() const {
  std::ostringstream os;
  json h = {{"kind", "manifest_header"},
            {"fingerprint", header_.fingerprint},
            {"k", header_.k},
            {"min_len", header_.min_len},
            {"threshold", header_.threshold},
            {"decode_fps", header_.decode_fps ? json(*header_.decode_fps) : json(nullptr)},
            {"num_videos", header_.num_videos},
            {"num_shots", header_.num_shots},
            {"num_segments", segments_.size()},
            {"total_frames", header_.total_frames}};
  os << h.dump() << "\n";
  for (const Segment& s : segments_) {
    json r = {{"segment_id", s.segment_id}, {"video_id", s.video_id},   {"shot_id", s.shot_id},
              {"start_frame", s.start},     {"end_frame", s.end},       {"source_path", s.source_path}};
    os << r.dump() << "\n";
  }
  return os.str();
}

void Manifest::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot open manifest for writing");
  out << serialize();
  if (!out) throw IoError(path.string(), "write failed");
}

Manifest Manifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open manifest");
  Header header;
  std::vector<Segment> segs;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      json r = json::parse(line);
      if (r.value("kind", "") == "manifest_header") {
        header.fingerprint = r.at("fingerprint").get<std::string>();
        header.k = r.at("k").get<std::int64_t>();
        header.min_len = r.at("min_len").get<std::int64_t>();
        header.threshold = r.at("threshold").get<std::string>();
        if (!r.at("decode_fps").is_null()) header.decode_fps = r.at("decode_fps").get<double>();
        header.num_videos = r.at("num_videos").get<std::int64_t>();
        header.num_shots = r.at("num_shots").get<std::int64_t>();
        header.total_frames = r.at("total_frames").get<std::int64_t>();
        have_header = true;
        continue;
      }
      Segment s;
      s.segment_id = r.at("segment_id").get<std::string>();
      s.video_id = r.at("video_id").get<std::string>();
      s.shot_id = r.at("shot_id").get<std::string>();
      s.start = r.at("start_frame").get<std::int64_t>();
      s.end = r.at("end_frame").get<std::int64_t>();
      s.source_path = r.at("source_path").get<std::string>();
      if (s.end <= s.start) throw InputError("empty segment " + s.segment_id);
      segs.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw IoError(path.string(), "line " + std::to_string(lineno) + ": " + e.what());
  } catch (const InputError& e) {
    throw IoError(path.string(), "line " + std::to_string(lineno) + ": " + e.what());
  }
  if (!have_header) throw IoError(path.string(), "missing manifest header record");
  return Manifest(std::move(header), std::move(segs));
}

ManifestBuild build_manifest(const std::vector<RawVideo>& corpus, const ShotEditingParams& params) {
  if (corpus.empty()) throw InputError("build_manifest: empty corpus");
  std::vector<std::vector<Shot>> shots(corpus.size());
  std::vector<std::exception_ptr> errors(corpus.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    try {
      shots[i] = detect_shot_changes(corpus[i], params);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  ManifestBuild out;
  Manifest::Header header;
  header.k = params.k;
  header.min_len = params.min_len;
  if (params.threshold.fixed) {
    std::ostringstream os;
    os.precision(17);
    os << *params.threshold.fixed;
    header.threshold = os.str();
  } else {
    header.threshold = "adaptive";
  }
  header.num_videos = static_cast<std::int64_t>(corpus.size());
  std::vector<Segment> segments;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    header.num_shots += static_cast<std::int64_t>(shots[i].size());
    header.total_frames += corpus[i].frame_count;
    auto segs = segment_shots(shots[i], params.k, params.min_len, corpus[i].source_path.string());
    segments.insert(segments.end(), segs.begin(), segs.end());
    out.shots[corpus[i].video_id] = std::move(shots[i]);
  }
  out.manifest = Manifest(std::move(header), std::move(segments));
  return out;
}

}  // namespace relvid
