#include "relvid/dataset.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "relvid/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace relvid {

LabeledVideoDataset LabeledVideoDataset::split(const std::string& name) const {
  LabeledVideoDataset out;
  out.class_count = class_count;
  for (const auto& v : videos)
    if (v.split == name) out.videos.push_back(v);
  return out;
}

void save_dataset(const fs::path& path, const LabeledVideoDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot write dataset");
  const fs::path base = path.parent_path();
  for (const auto& v : ds.videos) {
    std::error_code ec;
    fs::path rel = fs::relative(v.video.source_path, base.empty() ? fs::path(".") : base, ec);
    if (ec || rel.empty()) rel = v.video.source_path;
    out << json{{"video_id", v.video.video_id},
                {"source_path", rel.generic_string()},
                {"label", v.label},
                {"split", v.split},
                {"class_count", ds.class_count}}
               .dump()
        << "\n";
  }
}

LabeledVideoDataset load_dataset(const fs::path& path, const IngestOptions& opts) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open dataset");
  LabeledVideoDataset ds;
  std::string line;
  int max_label = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json r;
    try {
      r = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(path.string(), e.what());
    }
    fs::path src = r.at("source_path").get<std::string>();
    if (src.is_relative()) src = path.parent_path() / src;
    LabeledVideo lv;
    lv.video = open_video(src, opts);
    lv.video.video_id = r.at("video_id").get<std::string>();
    lv.label = r.at("label").get<int>();
    lv.split = r.at("split").get<std::string>();
    if (r.contains("class_count")) ds.class_count = std::max(ds.class_count, r.at("class_count").get<int>());
    if (lv.label < 0) throw InputError("dataset: negative label for " + lv.video.video_id);
    max_label = std::max(max_label, lv.label);
    ds.videos.push_back(std::move(lv));
  }
  ds.class_count = std::max(ds.class_count, max_label + 1);
  return ds;
}

}  // namespace relvid
