#include "relvid/relation_sampler.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "relvid/error.hpp"
#include "relvid/video_ingest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace relvid {

namespace {

constexpr std::array<std::string_view, 5> kTransformNames = {"none", "rotate", "invert", "shuffle", "dilate"};

bool is_identity(const std::vector<int>& p) {
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] != static_cast<int>(i)) return false;
  return true;
}

bool is_reversal(const std::vector<int>& p) {
  const int n = static_cast<int>(p.size());
  for (int i = 0; i < n; ++i)
    if (p[i] != n - 1 - i) return false;
  return true;
}

}  // namespace

std::string_view to_string(TransformKind k) noexcept { return kTransformNames[static_cast<std::size_t>(k)]; }

TransformKind transform_kind_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kTransformNames.size(); ++i)
    if (kTransformNames[i] == s) return static_cast<TransformKind>(i);
  throw InputError("unknown transform kind '" + std::string(s) + "'");
}

TransformDescriptor TransformDescriptor::rotate(int angle) {
  TransformDescriptor t;
  t.kind = TransformKind::Rotate;
  t.rotation_angle = angle;
  return t;
}

TransformDescriptor TransformDescriptor::invert() {
  TransformDescriptor t;
  t.kind = TransformKind::Invert;
  return t;
}

TransformDescriptor TransformDescriptor::shuffle(std::vector<int> permutation) {
  TransformDescriptor t;
  t.kind = TransformKind::Shuffle;
  t.permutation = std::move(permutation);
  return t;
}

TransformDescriptor TransformDescriptor::dilate(int interval) {
  TransformDescriptor t;
  t.kind = TransformKind::Dilate;
  t.interval = interval;
  return t;
}

bool TransformDescriptor::valid() const {
  const bool has_angle = rotation_angle != 0;
  const bool has_perm = !permutation.empty();
  const bool has_interval = interval != 0;
  switch (kind) {
    case TransformKind::None:
    case TransformKind::Invert:
      return !has_angle && !has_perm && !has_interval;
    case TransformKind::Rotate:
      return (rotation_angle == 90 || rotation_angle == 180 || rotation_angle == 270) && !has_perm && !has_interval;
    case TransformKind::Dilate:
      return (interval == 2 || interval == 4) && !has_angle && !has_perm;
    case TransformKind::Shuffle: {
      if (has_angle || has_interval || permutation.size() < 3) return false;
      std::vector<char> seen(permutation.size(), 0);
      for (int p : permutation) {
        if (p < 0 || p >= static_cast<int>(permutation.size()) || seen[p]) return false;
        seen[p] = 1;
      }
      return !is_identity(permutation) && !is_reversal(permutation);
    }
  }
  return false;
}

const Segment& sample_anchor(const Manifest& manifest, Rng& rng) {
  if (manifest.empty()) throw InputError("sample_anchor: empty manifest");
  const auto i = uniform_int(rng, 0, static_cast<std::int64_t>(manifest.size()) - 1);
  return manifest.segments()[static_cast<std::size_t>(i)];
}

const Segment& sample_partner_cooccurrence(const Segment& anchor, Relation category, const Manifest& manifest,
                                           Rng& rng) {
  std::vector<std::size_t> pool;
  switch (category) {
    case Relation::ShotCooccurrence:
      pool = manifest.by_shot(anchor.shot_id);
      break;
    case Relation::VideoCooccurrence:
      for (std::size_t i : manifest.by_video(anchor.video_id))
        if (manifest.segments()[i].shot_id != anchor.shot_id) pool.push_back(i);
      break;
    case Relation::DatasetCooccurrence:
      for (const auto& [video, idx] : manifest.video_index())
        if (video != anchor.video_id) pool.insert(pool.end(), idx.begin(), idx.end());
      break;
    default:
      throw InputError("sample_partner_cooccurrence: " + std::string(to_string(category)) +
                       " is not a cooccurrence relation");
  }
  if (pool.empty())
    throw NotSatisfiable(std::string(to_string(category)) + ": no eligible partner for " + anchor.segment_id);
  const auto j = uniform_int(rng, 0, static_cast<std::int64_t>(pool.size()) - 1);
  return manifest.segments()[pool[static_cast<std::size_t>(j)]];
}

Clip rotate_clip(const Clip& clip, int angle) {
  if (angle != 90 && angle != 180 && angle != 270) throw InputError("rotate_clip: angle must be 90, 180 or 270");
  Clip out;
  out.plan = clip.plan;
  out.plan.transform = TransformDescriptor::rotate(angle);
  out.frames.reserve(clip.frames.size());
  for (const Image& f : clip.frames) {
    if (f.height != f.width) throw InputError("rotate_clip: frames must be square");
    out.frames.push_back(rotate_square(f, angle));
  }
  return out;
}

int draw_rotation_angle(Rng& rng) { return 90 * static_cast<int>(uniform_int(rng, 1, 3)); }

Clip rotate_clip(const Clip& clip, Rng& rng) { return rotate_clip(clip, draw_rotation_angle(rng)); }

std::vector<std::int64_t> invert_segment_frames(std::vector<std::int64_t> frames) {
  std::reverse(frames.begin(), frames.end());
  return frames;
}

std::vector<int> draw_shuffle_permutation(int n, Rng& rng) {
  if (n < 3) throw InputError("shuffle: need at least 3 frames");
  std::vector<int> p(static_cast<std::size_t>(n));
  for (;;) {
    std::iota(p.begin(), p.end(), 0);
    // Fisher-Yates on the portable integer source.
    for (int i = n - 1; i > 0; --i) std::swap(p[i], p[static_cast<std::size_t>(uniform_int(rng, 0, i))]);
    if (!is_identity(p) && !is_reversal(p)) return p;
  }
}

std::vector<int> inverse_permutation(const std::vector<int>& permutation) {
  std::vector<int> inv(permutation.size(), -1);
  for (std::size_t i = 0; i < permutation.size(); ++i) {
    const int p = permutation[i];
    if (p < 0 || p >= static_cast<int>(permutation.size()) || inv[p] != -1)
      throw InputError("inverse_permutation: not a bijection");
    inv[p] = static_cast<int>(i);
  }
  return inv;
}

Clip shuffle_frames(const Clip& clip, Rng& rng) {
  auto perm = draw_shuffle_permutation(static_cast<int>(clip.frames.size()), rng);
  Clip out;
  out.plan = clip.plan;
  if (clip.plan.frames.size() == clip.frames.size()) out.plan.frames = apply_permutation(clip.plan.frames, perm);
  out.frames = apply_permutation(clip.frames, perm);
  out.plan.transform = TransformDescriptor::shuffle(std::move(perm));
  return out;
}

std::vector<std::int64_t> dilate_segment(std::int64_t length, int s, int k) {
  if (s != 2 && s != 4) throw InputError("dilate_segment: interval must be 2 or 4");
  if (length < static_cast<std::int64_t>(s) * k)
    throw NotSatisfiable("dilate_segment: " + std::to_string(length) + " frames < " + std::to_string(s) + "*" +
                         std::to_string(k));
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>((length + s - 1) / s));
  for (std::int64_t i = 0; i < length; i += s) out.push_back(i);
  return out;
}

std::vector<int> eligible_dilations(std::int64_t length, int k) {
  std::vector<int> out;
  for (int s : {2, 4})
    if (length >= static_cast<std::int64_t>(s) * k) out.push_back(s);
  return out;
}

std::vector<std::int64_t> segment_indices(const Segment& segment) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(std::max<std::int64_t>(segment.length(), 0)));
  std::iota(idx.begin(), idx.end(), std::int64_t{0});
  return idx;
}

namespace {

ClipPlan plan_at(const Segment& segment, const std::vector<std::int64_t>& indices, std::int64_t offset, int crop_y,
                 int crop_x, int k) {
  ClipPlan plan;
  plan.segment_id = segment.segment_id;
  plan.shot_id = segment.shot_id;
  plan.video_id = segment.video_id;
  plan.source_path = segment.source_path;
  plan.start_offset = offset;
  plan.crop_y = crop_y;
  plan.crop_x = crop_x;
  plan.frames.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) plan.frames.push_back(segment.start + indices[static_cast<std::size_t>(offset + i)]);
  return plan;
}

void check_crop(const SamplerOptions& o) {
  if (o.clip_length <= 0) throw InputError("clip length must be positive");
  if (o.crop_size <= 0 || o.crop_size > o.frame_height || o.crop_size > o.frame_width)
    throw InputError("crop size must fit inside the frame");
}

}  // namespace

ClipPlan extract_clip(const Segment& segment, const std::vector<std::int64_t>& indices, Rng& rng,
                      const SamplerOptions& options, std::optional<std::int64_t> exclude_offset) {
  check_crop(options);
  const int k = options.clip_length;
  const auto n = static_cast<std::int64_t>(indices.size());
  if (n < k)
    throw NotSatisfiable("extract_clip: " + segment.segment_id + " offers " + std::to_string(n) + " < " +
                         std::to_string(k) + " frames");
  const std::int64_t last = n - k;
  std::int64_t offset;
  if (exclude_offset && *exclude_offset >= 0 && *exclude_offset <= last) {
    if (last == 0) throw NotSatisfiable("extract_clip: no second offset in " + segment.segment_id);
    offset = uniform_int(rng, 0, last - 1);
    if (offset >= *exclude_offset) ++offset;
  } else {
    offset = uniform_int(rng, 0, last);
  }
  const int y = static_cast<int>(uniform_int(rng, 0, options.frame_height - options.crop_size));
  const int x = static_cast<int>(uniform_int(rng, 0, options.frame_width - options.crop_size));
  return plan_at(segment, indices, offset, y, x, k);
}

ClipPlan extract_clip(const Segment& segment, Rng& rng, const SamplerOptions& options) {
  return extract_clip(segment, segment_indices(segment), rng, options);
}

RelationSample make_sample_for(const Manifest& manifest, Relation category, Rng& rng,
                               const SamplerOptions& options) {
  check_crop(options);
  const int k = options.clip_length;
  const Segment& anchor = sample_anchor(manifest, rng);
  RelationSample s;
  s.label = category;
  s.clip_a = extract_clip(anchor, rng, options);
  const ClipPlan& a = s.clip_a;

  // Pattern relations and C_R derive clip_b from the anchor; the aligned
  // variant reuses clip_a's crop and maps its offset into the new list.
  auto derived = [&](const std::vector<std::int64_t>& indices, std::int64_t aligned_offset) {
    if (!options.aligned) return extract_clip(anchor, indices, rng, options);
    const auto n = static_cast<std::int64_t>(indices.size());
    if (n < k) throw NotSatisfiable("aligned clip: too few frames in " + anchor.segment_id);
    return plan_at(anchor, indices, std::clamp<std::int64_t>(aligned_offset, 0, n - k), a.crop_y, a.crop_x, k);
  };

  switch (category) {
    case Relation::ShotCooccurrence:
    case Relation::VideoCooccurrence:
    case Relation::DatasetCooccurrence: {
      const Segment& partner = sample_partner_cooccurrence(anchor, category, manifest, rng);
      std::optional<std::int64_t> exclude;
      if (partner.segment_id == anchor.segment_id) exclude = a.start_offset;
      s.clip_b = extract_clip(partner, segment_indices(partner), rng, options, exclude);
      break;
    }
    case Relation::RotationCooccurrence: {
      s.clip_b = derived(segment_indices(anchor), a.start_offset);
      s.clip_b.transform = TransformDescriptor::rotate(draw_rotation_angle(rng));
      break;
    }
    case Relation::InvertedPattern: {
      const auto idx = invert_segment_frames(segment_indices(anchor));
      s.clip_b = derived(idx, static_cast<std::int64_t>(idx.size()) - k - a.start_offset);
      s.clip_b.transform = TransformDescriptor::invert();
      break;
    }
    case Relation::DisorderPattern: {
      const auto base = segment_indices(anchor);
      auto perm = draw_shuffle_permutation(static_cast<int>(base.size()), rng);
      const auto idx = apply_permutation(base, perm);
      s.clip_b = derived(idx, a.start_offset);
      s.clip_b.transform = TransformDescriptor::shuffle(std::move(perm));
      break;
    }
    case Relation::SpedUpPattern: {
      const auto choices = eligible_dilations(anchor.length(), k);
      if (choices.empty())
        throw NotSatisfiable("P_S: " + anchor.segment_id + " has " + std::to_string(anchor.length()) +
                             " frames < 2*" + std::to_string(k));
      const int step = choices[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(choices.size()) - 1))];
      const auto idx = dilate_segment(anchor.length(), step, k);
      s.clip_b = derived(idx, (a.start_offset + step - 1) / step);
      s.clip_b.transform = TransformDescriptor::dilate(step);
      break;
    }
  }
  return s;
}

RelationSample make_sample(const Manifest& manifest, const std::vector<Relation>& relations, Rng& rng,
                           const SamplerOptions& options, std::vector<Relation>* fallbacks) {
  if (relations.empty()) throw InputError("make_sample: no active relations");
  if (manifest.empty()) throw InputError("make_sample: empty manifest");
  std::vector<Relation> failed;
  for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
    const auto c = uniform_int(rng, 0, static_cast<std::int64_t>(relations.size()) - 1);
    const Relation category = relations[static_cast<std::size_t>(c)];
    try {
      RelationSample s = make_sample_for(manifest, category, rng, options);
      if (fallbacks) fallbacks->insert(fallbacks->end(), failed.begin(), failed.end());
      return s;
    } catch (const NotSatisfiable&) {
      failed.push_back(category);
    }
  }
  std::vector<Relation> distinct = failed;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  throw DegenerateCorpusError("make_sample: " + std::to_string(failed.size()) +
                              " draws unsatisfiable; failing categories: " + format_relations(distinct));
}

void check_satisfiable(const Manifest& manifest, const std::vector<Relation>& relations,
                       const SamplerOptions& options) {
  if (manifest.empty()) throw ConfigError("manifest has no segments");
  const std::int64_t k = options.clip_length;
  std::int64_t longest = 0;
  for (const Segment& s : manifest.segments()) longest = std::max(longest, s.length());
  bool multi_shot_video = false;
  for (const auto& [video, idx] : manifest.video_index()) {
    for (std::size_t i : idx)
      if (manifest.segments()[i].shot_id != manifest.segments()[idx.front()].shot_id) multi_shot_video = true;
  }
  const bool multi_video = manifest.video_index().size() >= 2;
  std::vector<Relation> bad;
  for (Relation r : relations) {
    bool ok = longest >= k;
    if (r == Relation::ShotCooccurrence) ok = longest > k || (ok && manifest.shot_index().size() < manifest.size());
    if (r == Relation::VideoCooccurrence) ok = ok && multi_shot_video;
    if (r == Relation::DatasetCooccurrence) ok = ok && multi_video;
    if (r == Relation::DisorderPattern) ok = ok && longest >= 3;
    if (r == Relation::SpedUpPattern) ok = longest >= 2 * k;
    if (!ok) bad.push_back(r);
  }
  if (!bad.empty()) throw ConfigError("relations not satisfiable on this manifest: " + format_relations(bad));
}

namespace {

RawVideo cached_video(const std::string& path) {
  static std::mutex mu;
  static std::map<std::string, RawVideo> cache;
  {
    std::lock_guard lock(mu);
    auto it = cache.find(path);
    if (it != cache.end()) return it->second;
  }
  RawVideo v = open_video(path);
  std::lock_guard lock(mu);
  return cache.emplace(path, std::move(v)).first->second;
}

}  // namespace

Clip materialize_clip(const ClipPlan& plan, const SamplerOptions& options) {
  check_crop(options);
  const RawVideo video = cached_video(plan.source_path);
  Clip clip;
  clip.plan = plan;
  clip.frames.reserve(plan.frames.size());
  for (Image& f : decode_indices(video, plan.frames)) {
    Image c = crop(f, plan.crop_y, plan.crop_x, options.crop_size, options.crop_size);
    if (plan.transform.kind == TransformKind::Rotate) c = rotate_square(c, plan.transform.rotation_angle);
    clip.frames.push_back(std::move(c));
  }
  return clip;
}

// ---------------------------------------------------------------------------

namespace {

json transform_to_json(const TransformDescriptor& t) {
  json j = {{"kind", std::string(to_string(t.kind))}};
  switch (t.kind) {
    case TransformKind::Rotate:
      j["angle"] = t.rotation_angle;
      break;
    case TransformKind::Shuffle:
      j["permutation"] = t.permutation;
      break;
    case TransformKind::Dilate:
      j["interval"] = t.interval;
      break;
    default:
      break;
  }
  return j;
}

TransformDescriptor transform_from_json(const json& j) {
  TransformDescriptor t;
  t.kind = transform_kind_from_string(j.at("kind").get<std::string>());
  if (t.kind == TransformKind::Rotate) t.rotation_angle = j.at("angle").get<int>();
  if (t.kind == TransformKind::Shuffle) t.permutation = j.at("permutation").get<std::vector<int>>();
  if (t.kind == TransformKind::Dilate) t.interval = j.at("interval").get<int>();
  if (!t.valid()) throw InputError("invalid transform descriptor");
  return t;
}

json clip_to_json(const ClipPlan& c) {
  return {{"segment_id", c.segment_id}, {"shot_id", c.shot_id},   {"video_id", c.video_id},
          {"source_path", c.source_path}, {"offset", c.start_offset}, {"frames", c.frames},
          {"crop", {c.crop_y, c.crop_x}}, {"transform", transform_to_json(c.transform)}};
}

ClipPlan clip_from_json(const json& j) {
  ClipPlan c;
  c.segment_id = j.at("segment_id").get<std::string>();
  c.shot_id = j.at("shot_id").get<std::string>();
  c.video_id = j.at("video_id").get<std::string>();
  c.source_path = j.at("source_path").get<std::string>();
  c.start_offset = j.at("offset").get<std::int64_t>();
  c.frames = j.at("frames").get<std::vector<std::int64_t>>();
  c.crop_y = j.at("crop").at(0).get<int>();
  c.crop_x = j.at("crop").at(1).get<int>();
  c.transform = transform_from_json(j.at("transform"));
  return c;
}

}  // namespace

std::string SampleIndex::serialize() const {
  std::ostringstream os;
  json fb = json::object();
  for (const auto& [r, n] : fallbacks) fb[std::string(to_string(r))] = n;
  json h = {{"kind", "sample_index_header"},
            {"fingerprint", header.fingerprint},
            {"manifest_fingerprint", header.manifest_fingerprint},
            {"relations", format_relations(header.relations)},
            {"seed", header.seed},
            {"count", header.count},
            {"aligned", header.aligned},
            {"fallbacks", fb}};
  os << h.dump() << "\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const RelationSample& s = samples[i];
    json r = {{"index", i},
              {"label", std::string(to_string(s.label))},
              {"seed", s.rng_seed},
              {"clip_a", clip_to_json(s.clip_a)},
              {"clip_b", clip_to_json(s.clip_b)}};
    os << r.dump() << "\n";
  }
  return os.str();
}

void SampleIndex::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot open sample index for writing");
  out << serialize();
  if (!out) throw IoError(path.string(), "write failed");
}

SampleIndex SampleIndex::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open sample index");
  SampleIndex idx;
  bool have_header = false;
  std::string line;
  std::size_t lineno = 0;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      json r = json::parse(line);
      if (r.value("kind", "") == "sample_index_header") {
        idx.header.fingerprint = r.at("fingerprint").get<std::string>();
        idx.header.manifest_fingerprint = r.at("manifest_fingerprint").get<std::string>();
        idx.header.relations = parse_relations(r.at("relations").get<std::string>());
        idx.header.seed = r.at("seed").get<std::uint64_t>();
        idx.header.count = r.at("count").get<std::int64_t>();
        idx.header.aligned = r.at("aligned").get<bool>();
        for (const auto& [code, n] : r.at("fallbacks").items())
          idx.fallbacks[relation_from_string(code)] = n.get<std::int64_t>();
        have_header = true;
        continue;
      }
      RelationSample s;
      s.label = relation_from_string(r.at("label").get<std::string>());
      s.rng_seed = r.at("seed").get<std::uint64_t>();
      s.clip_a = clip_from_json(r.at("clip_a"));
      s.clip_b = clip_from_json(r.at("clip_b"));
      idx.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw IoError(path.string(), "line " + std::to_string(lineno) + ": " + e.what());
  } catch (const InputError& e) {
    throw IoError(path.string(), "line " + std::to_string(lineno) + ": " + e.what());
  }
  if (!have_header) throw IoError(path.string(), "missing sample index header record");
  if (static_cast<std::int64_t>(idx.samples.size()) != idx.header.count)
    throw IoError(path.string(), "sample count does not match header");
  return idx;
}

SampleIndex build_sample_index(const Manifest& manifest, const std::vector<Relation>& relations, std::int64_t count,
                               std::uint64_t seed, const SamplerOptions& options) {
  if (count < 0) throw InputError("build_sample_index: negative count");
  SampleIndex idx;
  idx.header.manifest_fingerprint = manifest.header().fingerprint;
  idx.header.relations = relations;
  idx.header.seed = seed;
  idx.header.count = count;
  idx.header.aligned = options.aligned;
  idx.samples.resize(static_cast<std::size_t>(count));
  std::vector<std::vector<Relation>> failed(static_cast<std::size_t>(count));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
      Rng rng(s);
      idx.samples[i] = make_sample(manifest, relations, rng, options, &failed[i]);
      idx.samples[i].rng_seed = s;
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const auto& f : failed)
    for (Relation r : f) ++idx.fallbacks[r];
  return idx;
}

}  // namespace relvid
