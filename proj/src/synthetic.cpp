#include "relvid/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "relvid/error.hpp"
#include "relvid/hog.hpp"
#include "relvid/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace relvid {
namespace {

constexpr int kMaxRedraws = 64;

struct Rgb {
  float r, g, b;
};

Rgb random_color(Rng& rng, float lo, float hi) {
  return {static_cast<float>(uniform_real(rng, lo, hi)), static_cast<float>(uniform_real(rng, lo, hi)),
          static_cast<float>(uniform_real(rng, lo, hi))};
}

/// Float RGB canvas the frames are cut from.
struct Canvas {
  int height = 0, width = 0;
  std::vector<Rgb> px;
  Rgb& at(int y, int x) { return px[static_cast<std::size_t>(y) * width + x]; }
  const Rgb& at(int y, int x) const { return px[static_cast<std::size_t>(y) * width + x]; }
};

Canvas paint_canvas(int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  Canvas c{height, width, std::vector<Rgb>(static_cast<std::size_t>(height) * width)};
  const Rgb top = random_color(rng, 150.0, 255.0);
  const float dark = static_cast<float>(uniform_real(rng, 0.2, 0.4));
  for (int y = 0; y < height; ++y) {
    const float f = 1.0f - (1.0f - dark) * static_cast<float>(y) / static_cast<float>(std::max(height - 1, 1));
    for (int x = 0; x < width; ++x) c.at(y, x) = {top.r * f, top.g * f, top.b * f};
  }
  // Blob scale varies per shot so that textures of adjacent shots differ in
  // gradient structure, not only in colour.
  const double scale = uniform_real(rng, 5.0, 18.0);
  const double density = uniform_real(rng, 0.6, 1.4);
  const int count = static_cast<int>(density * height * width / (scale * scale * 6.0));
  for (int i = 0; i < count; ++i) {
    const double cy = uniform_real(rng, 0, height), cx = uniform_real(rng, 0, width);
    const double a = scale * uniform_real(rng, 0.5, 1.6), b = scale * uniform_real(rng, 0.5, 1.6);
    const double th = uniform_real(rng, 0, std::numbers::pi);
    const bool rect = uniform_int(rng, 0, 2) == 0;
    const Rgb col = random_color(rng, 0.0, 255.0);
    const double ct = std::cos(th), st = std::sin(th);
    const double rad = std::max(a, b) * 1.5;
    const int y0 = std::max(0, static_cast<int>(cy - rad)), y1 = std::min(height - 1, static_cast<int>(cy + rad));
    const int x0 = std::max(0, static_cast<int>(cx - rad)), x1 = std::min(width - 1, static_cast<int>(cx + rad));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        const double u = (dx * ct + dy * st) / a, v = (-dx * st + dy * ct) / b;
        const bool inside = rect ? (std::abs(u) <= 1.0 && std::abs(v) <= 1.0) : (u * u + v * v <= 1.0);
        if (inside) c.at(y, x) = col;
      }
  }
  return c;
}

Rgb sample_bilinear(const Canvas& c, double y, double x) {
  y = std::clamp(y, 0.0, c.height - 1.0);
  x = std::clamp(x, 0.0, c.width - 1.0);
  const int y0 = std::min(static_cast<int>(y), c.height - 2), x0 = std::min(static_cast<int>(x), c.width - 2);
  const float fy = static_cast<float>(y - y0), fx = static_cast<float>(x - x0);
  const Rgb& a = c.at(y0, x0);
  const Rgb& b = c.at(y0, x0 + 1);
  const Rgb& d = c.at(y0 + 1, x0);
  const Rgb& e = c.at(y0 + 1, x0 + 1);
  auto mix = [&](float p, float q, float r, float s) {
    return (1 - fy) * ((1 - fx) * p + fx * q) + fy * ((1 - fx) * r + fx * s);
  };
  return {mix(a.r, b.r, d.r, e.r), mix(a.g, b.g, d.g, e.g), mix(a.b, b.b, d.b, e.b)};
}

std::uint8_t to_u8(float v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void put(Image& img, int y, int x, const Rgb& c) {
  img.at(y, x, 0) = to_u8(c.r);
  img.at(y, x, 1) = to_u8(c.g);
  img.at(y, x, 2) = to_u8(c.b);
}

Image cut(const Canvas& c, int y0, int x0, int height, int width) {
  Image img(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) put(img, y, x, c.at(y0 + y, x0 + x));
  return img;
}

std::vector<float> descriptor_of(const Image& frame) {
  return hog_descriptor(to_gray(resize_frame(frame)));
}

ShotPlan plan_shot(const SyntheticCorpusSpec& spec, Rng& rng, std::uint64_t shot_seed) {
  ShotPlan p;
  p.motion = spec.motion_kinds[static_cast<std::size_t>(
      uniform_int(rng, 0, static_cast<std::int64_t>(spec.motion_kinds.size()) - 1))];
  p.direction = spec.canonical_motion ? 0 : static_cast<int>(uniform_int(rng, 0, 3)) * 90;
  p.length = static_cast<int>(uniform_int(rng, spec.shot_len_min, spec.shot_len_max));
  p.seed = shot_seed;
  return p;
}

void validate(const SyntheticCorpusSpec& s) {
  if (s.num_videos <= 0) throw InputError("synthetic: num_videos must be positive");
  if (s.shots_min <= 0 || s.shots_max < s.shots_min) throw InputError("synthetic: empty shots_per_video range");
  if (s.shot_len_min <= 1 || s.shot_len_max < s.shot_len_min) throw InputError("synthetic: empty shot length range");
  if (s.motion_kinds.empty()) throw InputError("synthetic: no motion kinds");
  if (s.height <= 0 || s.width <= 0) throw InputError("synthetic: bad frame size");
  if (s.speed < 0) throw InputError("synthetic: negative speed");
}

}  // namespace

std::string to_string(MotionKind k) {
  switch (k) {
    case MotionKind::Translating: return "translating";
    case MotionKind::Rotating: return "rotating";
    case MotionKind::Static: return "static";
  }
  return "?";
}

MotionKind motion_kind_from_string(const std::string& s) {
  if (s == "translating") return MotionKind::Translating;
  if (s == "rotating") return MotionKind::Rotating;
  if (s == "static") return MotionKind::Static;
  throw InputError("unknown motion kind: " + s);
}

std::string synthetic_video_id(const SyntheticCorpusSpec& spec, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", index);
  return spec.id_prefix + buf;
}

std::vector<Image> render_shot(const ShotPlan& plan, int height, int width, int speed, double spin) {
  std::vector<Image> frames;
  frames.reserve(static_cast<std::size_t>(plan.length));
  switch (plan.motion) {
    case MotionKind::Static: {
      const Canvas c = paint_canvas(height, width, plan.seed);
      const Image f = cut(c, 0, 0, height, width);
      frames.assign(static_cast<std::size_t>(plan.length), f);
      break;
    }
    case MotionKind::Translating: {
      const int travel = speed * plan.length + 1;
      const bool horizontal = plan.direction == 0 || plan.direction == 180;
      const Canvas c = paint_canvas(height + (horizontal ? 0 : travel), width + (horizontal ? travel : 0), plan.seed);
      for (int t = 0; t < plan.length; ++t) {
        // Content moving in +direction means the window moves the other way.
        int y0 = 0, x0 = 0;
        switch (plan.direction) {
          case 0: x0 = travel - speed * t; break;
          case 90: y0 = travel - speed * t; break;
          case 180: x0 = speed * t; break;
          default: y0 = speed * t; break;
        }
        frames.push_back(cut(c, y0, x0, height, width));
      }
      break;
    }
    case MotionKind::Rotating: {
      const int side = static_cast<int>(std::ceil(std::hypot(height, width))) + 2;
      const Canvas c = paint_canvas(side, side, plan.seed);
      const double cy = side / 2.0, cx = side / 2.0;
      for (int t = 0; t < plan.length; ++t) {
        // Clockwise on screen (y grows downwards): sample the source at -angle.
        const double ang = (spin * t + 7.3) * std::numbers::pi / 180.0;
        const double ca = std::cos(ang), sa = std::sin(ang);
        Image img(height, width);
        for (int y = 0; y < height; ++y)
          for (int x = 0; x < width; ++x) {
            const double dy = y + 0.5 - height / 2.0, dx = x + 0.5 - width / 2.0;
            const double sx = ca * dx + sa * dy, sy = -sa * dx + ca * dy;
            put(img, y, x, sample_bilinear(c, cy + sy - 0.5, cx + sx - 0.5));
          }
        frames.push_back(std::move(img));
      }
      break;
    }
  }
  return frames;
}

RenderedVideo render_synthetic_video(const SyntheticCorpusSpec& spec, int index) {
  validate(spec);
  RenderedVideo out;
  out.video_id = synthetic_video_id(spec, index);
  const std::uint64_t video_seed = derive_seed(derive_seed(spec.seed, "synthetic"), static_cast<std::uint64_t>(index));
  Rng rng(video_seed);
  const int num_shots = static_cast<int>(uniform_int(rng, spec.shots_min, spec.shots_max));
  std::vector<ShotPlan> plans;
  for (int j = 0; j < num_shots; ++j) plans.push_back(plan_shot(spec, rng, derive_seed(video_seed, static_cast<std::uint64_t>(j))));

  std::vector<int> attempt(plans.size(), 0);
  std::vector<std::vector<Image>> shot_frames(plans.size());
  std::vector<std::vector<std::vector<float>>> shot_desc(plans.size());
  auto render = [&](std::size_t j) {
    ShotPlan p = plans[j];
    if (attempt[j] > 0) p.seed = derive_seed(p.seed, static_cast<std::uint64_t>(attempt[j]) + 0x5eedULL);
    shot_frames[j] = render_shot(p, spec.height, spec.width, spec.speed, spec.spin);
    shot_desc[j].clear();
    for (const Image& f : shot_frames[j]) shot_desc[j].push_back(descriptor_of(f));
  };
  for (std::size_t j = 0; j < plans.size(); ++j) render(j);

  for (int round = 0;; ++round) {
    double within_max = 0.0;
    std::size_t worst_within = 0;
    for (std::size_t j = 0; j < plans.size(); ++j)
      for (std::size_t t = 1; t < shot_desc[j].size(); ++t) {
        const double d = frame_difference(shot_desc[j][t - 1], shot_desc[j][t]);
        if (d > within_max) {
          within_max = d;
          worst_within = j;
        }
      }
    std::optional<std::size_t> weak_cut;
    double weakest = std::numeric_limits<double>::infinity();
    for (std::size_t j = 1; j < plans.size(); ++j) {
      const double d = frame_difference(shot_desc[j - 1].back(), shot_desc[j].front());
      if (d < spec.margin * within_max && d < weakest) {
        weakest = d;
        weak_cut = j;
      }
    }
    if (!weak_cut) break;
    if (round >= kMaxRedraws)
      throw std::runtime_error("synthetic: cannot satisfy cut margin for " + out.video_id);
    // Alternate between redrawing the later shot of the weak cut and the
    // shot with the largest internal change.
    const std::size_t j = (round % 2 == 0) ? *weak_cut : worst_within;
    ++attempt[j];
    render(j);
  }

  std::int64_t begin = 0;
  for (std::size_t j = 0; j < plans.size(); ++j) {
    const auto len = static_cast<std::int64_t>(shot_frames[j].size());
    out.shots.push_back({out.video_id, begin, begin + len, make_shot_id(out.video_id, j)});
    begin += len;
    for (auto& f : shot_frames[j]) out.frames.push_back(std::move(f));
  }
  return out;
}

void save_ground_truth(const fs::path& path, const std::vector<Shot>& shots) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot write ground truth");
  for (const Shot& s : shots)
    out << json{{"video_id", s.video_id}, {"begin_frame", s.begin}, {"end_frame", s.end}}.dump() << "\n";
}

std::vector<Shot> load_ground_truth(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open ground truth");
  std::vector<Shot> shots;
  std::string line;
  std::map<std::string, std::size_t> per_video;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      json r = json::parse(line);
      Shot s;
      s.video_id = r.at("video_id").get<std::string>();
      s.begin = r.at("begin_frame").get<std::int64_t>();
      s.end = r.at("end_frame").get<std::int64_t>();
      s.shot_id = make_shot_id(s.video_id, per_video[s.video_id]++);
      shots.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw IoError(path.string(), e.what());
    }
  }
  return shots;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec, const fs::path& out_dir) {
  validate(spec);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError(out_dir.string(), "cannot create output directory");
  SyntheticCorpus corpus;
  for (int i = 0; i < spec.num_videos; ++i) {
    RenderedVideo v = render_synthetic_video(spec, i);
    corpus.videos.push_back(write_frame_archive(out_dir / v.video_id, v.video_id, v.frames, spec.fps));
    corpus.ground_truth.insert(corpus.ground_truth.end(), v.shots.begin(), v.shots.end());
  }
  save_ground_truth(out_dir / "ground_truth.jsonl", corpus.ground_truth);
  json kinds = json::array();
  for (auto k : spec.motion_kinds) kinds.push_back(to_string(k));
  json meta = {{"num_videos", spec.num_videos},   {"shots_min", spec.shots_min},
               {"shots_max", spec.shots_max},     {"shot_len_min", spec.shot_len_min},
               {"shot_len_max", spec.shot_len_max}, {"motion_kinds", kinds},
               {"height", spec.height},           {"width", spec.width},
               {"fps", spec.fps},                 {"speed", spec.speed},
               {"spin", spec.spin},               {"canonical_motion", spec.canonical_motion},
               {"margin", spec.margin},           {"seed", spec.seed},
               {"id_prefix", spec.id_prefix}};
  std::ofstream out(out_dir / "corpus.json");
  if (!out) throw IoError((out_dir / "corpus.json").string(), "cannot write corpus metadata");
  out << meta.dump(2) << "\n";
  return corpus;
}

LabeledVideoDataset generate_action_dataset(const ActionDatasetSpec& spec, const fs::path& out_dir) {
  if (spec.classes < 2 || spec.classes > 4) throw InputError("action dataset: classes must be in [2, 4]");
  if (spec.frames < 16) throw InputError("action dataset: videos need at least 16 frames");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir.string(), ec.message());
  LabeledVideoDataset ds;
  ds.class_count = spec.classes;
  static constexpr std::array<std::pair<MotionKind, int>, 4> kClassMotion = {{
      {MotionKind::Translating, 0}, {MotionKind::Translating, 90}, {MotionKind::Rotating, 0}, {MotionKind::Static, 0}}};
  const std::uint64_t base = derive_seed(spec.seed, "actions");
  int serial = 0;
  for (const char* split : {"train", "test"}) {
    const int per_class = std::string(split) == "train" ? spec.train_per_class : spec.test_per_class;
    for (int c = 0; c < spec.classes; ++c)
      for (int i = 0; i < per_class; ++i, ++serial) {
        ShotPlan p;
        p.motion = kClassMotion[static_cast<std::size_t>(c)].first;
        p.direction = kClassMotion[static_cast<std::size_t>(c)].second;
        p.length = spec.frames;
        p.seed = derive_seed(base, static_cast<std::uint64_t>(serial));
        char id[64];
        std::snprintf(id, sizeof(id), "act_%s_c%d_%03d", split, c, i);
        auto frames = render_shot(p, kFrameHeight, kFrameWidth, spec.speed, spec.spin);
        LabeledVideo lv;
        lv.video = write_frame_archive(out_dir / id, id, frames, spec.fps);
        lv.label = c;
        lv.split = split;
        ds.videos.push_back(std::move(lv));
      }
  }
  save_dataset(out_dir / "dataset.jsonl", ds);
  return ds;
}

}  // namespace relvid
