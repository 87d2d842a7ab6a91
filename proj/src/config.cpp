#include "relvid/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "relvid/error.hpp"
#include "relvid/rng.hpp"

namespace relvid {

using nlohmann::json;

namespace {

json build_defaults() {
  return json::parse(R"({
    "seed": 0,
    "ingest": {"target_fps": null},
    "synth": {
      "num_videos": 6,
      "shots_min": 2,
      "shots_max": 4,
      "shot_len_min": 60,
      "shot_len_max": 160,
      "motions": ["translating", "rotating", "static"],
      "speed": 1,
      "spin": 0.5,
      "canonical_motion": true,
      "fps": 25.0
    },
    "actions": {
      "classes": 4,
      "train_per_class": 8,
      "test_per_class": 4,
      "frames": 48,
      "speed": 3,
      "spin": 2.0
    },
    "shot_editing": {
      "k": 300,
      "min_len": 48,
      "threshold": "adaptive",
      "hog": {"cell_size": 16, "orientation_bins": 9, "block_cells": 2, "clip": 0.2}
    },
    "sampler": {"relations": "all", "count": 1000, "aligned": false, "max_retries": 16},
    "backbone": {"kind": "c3d", "preset": "full", "widths": null},
    "train": {
      "epochs": 300,
      "batch_size": 8,
      "learning_rate": 0.01,
      "momentum": 0.9,
      "weight_decay": 0.0005,
      "lr_milestones": [100, 200],
      "lr_gamma": 0.1,
      "train_samples": 1000,
      "validation_samples": 0,
      "resample_each_epoch": false,
      "stop_train_accuracy": null,
      "stop_validation_accuracy": null
    },
    "finetune": {
      "epochs": 150,
      "batch_size": 8,
      "learning_rate": 0.01,
      "momentum": 0.9,
      "weight_decay": 0.0005,
      "lr_milestones": [],
      "lr_gamma": 0.1,
      "stop_test_accuracy": null
    },
    "retrieval": {"topk": [1, 5, 10, 20, 50], "mode": "video", "metric": "cosine"}
  })");
}

bool is_number(const json& j) { return j.is_number(); }

template <typename T>
T get(const json& doc, const char* pointer) {
  try {
    return doc.at(json::json_pointer(pointer)).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(pointer) + ": " + e.what());
  }
}

std::optional<double> get_optional(const json& doc, const char* pointer) {
  const auto& v = doc.at(json::json_pointer(pointer));
  if (v.is_null()) return std::nullopt;
  if (!v.is_number()) throw ConfigError(std::string(pointer) + ": expected a number or null");
  return v.get<double>();
}

nn::SgdConfig sgd_from(const json& section) {
  nn::SgdConfig s;
  s.learning_rate = section.at("learning_rate").get<double>();
  s.momentum = section.at("momentum").get<double>();
  s.weight_decay = section.at("weight_decay").get<double>();
  if (!(s.learning_rate > 0.0) || s.momentum < 0.0 || s.momentum >= 1.0 || s.weight_decay < 0.0)
    throw ConfigError("optimizer: need learning_rate > 0, momentum in [0, 1), weight_decay >= 0");
  return s;
}

}  // namespace

const json& RunConfig::defaults() {
  static const json d = build_defaults();
  return d;
}

RunConfig::RunConfig() : doc_(defaults()) {}

void RunConfig::validate(const json& value, const json& schema, const std::string& where) {
  if (schema.is_object()) {
    if (!value.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, v] : value.items()) {
      if (!schema.contains(key)) throw ConfigError("unknown key: " + where + "/" + key);
      validate(v, schema.at(key), where + "/" + key);
    }
    return;
  }
  if (schema.is_null()) {
    if (!value.is_null() && !value.is_primitive() && !value.is_array())
      throw ConfigError(where + ": expected a scalar, array or null");
    return;
  }
  if (schema.is_array()) {
    if (!value.is_array()) throw ConfigError(where + ": expected an array");
    return;
  }
  if (schema.is_boolean() && !value.is_boolean()) throw ConfigError(where + ": expected a boolean");
  if (is_number(schema) && !is_number(value)) throw ConfigError(where + ": expected a number");
  if (schema.is_number_integer() && !value.is_number_integer())
    throw ConfigError(where + ": expected an integer");
  // Strings also accept numbers (a fixed shot threshold, say).
  if (schema.is_string() && !value.is_string() && !value.is_number())
    throw ConfigError(where + ": expected a string");
}

RunConfig RunConfig::from_json(const json& doc) {
  validate(doc, defaults(), "");
  RunConfig c;
  c.doc_.merge_patch(doc);
  // merge_patch drops keys set to null; restore the optional slots.
  for (const auto& [section, body] : defaults().items()) {
    if (!body.is_object()) continue;
    for (const auto& [key, v] : body.items())
      if (!c.doc_[section].contains(key)) c.doc_[section][key] = v;
  }
  // Touch every typed view once so bad values fail at load time.
  (void)c.seed();
  (void)c.ingest();
  (void)c.synth_corpus();
  (void)c.synth_actions();
  (void)c.shot_editing();
  (void)c.relations();
  (void)c.backbone();
  (void)c.train();
  (void)c.finetune();
  (void)c.retrieval();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open config");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(doc);
}

void RunConfig::set(const std::string& pointer, const json& value) {
  json patch = json::object();
  patch[json::json_pointer(pointer)] = value;
  validate(patch, defaults(), "");
  doc_[json::json_pointer(pointer)] = value;
}

void RunConfig::set(const std::string& pointer, const std::string& text) {
  const json::json_pointer ptr(pointer);
  if (!defaults().contains(ptr)) throw ConfigError("unknown key: " + pointer);
  const json& schema = defaults().at(ptr);
  json value;
  try {
    if (schema.is_string()) {
      value = text;
    } else if (schema.is_boolean()) {
      if (text == "true" || text == "1") value = true;
      else if (text == "false" || text == "0") value = false;
      else throw ConfigError(pointer + ": expected true or false, got '" + text + "'");
    } else if (schema.is_array() || schema.is_null()) {
      // Comma lists become arrays of numbers or strings.
      if (text == "null") {
        value = nullptr;
      } else if (schema.is_null() && text.find(',') == std::string::npos) {
        value = json::parse(text);
      } else {
        value = json::array();
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
          try {
            value.push_back(json::parse(item));
          } catch (const json::parse_error&) {
            value.push_back(item);
          }
        }
      }
    } else {
      value = json::parse(text);
    }
  } catch (const json::parse_error&) {
    throw ConfigError(pointer + ": cannot parse '" + text + "'");
  }
  set(pointer, value);
}

std::uint64_t RunConfig::seed() const {
  const auto& s = doc_.at("seed");
  if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() && s.get<std::int64_t>() < 0))
    throw ConfigError("seed: expected a non-negative integer");
  return s.get<std::uint64_t>();
}

std::uint64_t RunConfig::stage_seed(const std::string& stage) const { return derive_seed(seed(), stage); }

IngestOptions RunConfig::ingest() const {
  IngestOptions o;
  o.target_fps = get_optional(doc_, "/ingest/target_fps");
  if (o.target_fps && !(*o.target_fps > 0.0)) throw ConfigError("ingest/target_fps must be positive");
  return o;
}

SyntheticCorpusSpec RunConfig::synth_corpus() const {
  SyntheticCorpusSpec s;
  s.num_videos = get<int>(doc_, "/synth/num_videos");
  s.shots_min = get<int>(doc_, "/synth/shots_min");
  s.shots_max = get<int>(doc_, "/synth/shots_max");
  s.shot_len_min = get<int>(doc_, "/synth/shot_len_min");
  s.shot_len_max = get<int>(doc_, "/synth/shot_len_max");
  s.motion_kinds.clear();
  try {
    for (const auto& m : get<std::vector<std::string>>(doc_, "/synth/motions"))
      s.motion_kinds.push_back(motion_kind_from_string(m));
  } catch (const InputError& e) {
    throw ConfigError(std::string("synth/motions: ") + e.what());
  }
  s.speed = get<int>(doc_, "/synth/speed");
  s.spin = get<double>(doc_, "/synth/spin");
  s.canonical_motion = get<bool>(doc_, "/synth/canonical_motion");
  s.fps = get<double>(doc_, "/synth/fps");
  s.seed = stage_seed("synth");
  if (s.num_videos < 1 || s.shots_min < 1 || s.shots_max < s.shots_min || s.shot_len_min < 2 ||
      s.shot_len_max < s.shot_len_min || s.motion_kinds.empty() || !(s.fps > 0.0))
    throw ConfigError("synth: inconsistent corpus parameters");
  return s;
}

ActionDatasetSpec RunConfig::synth_actions() const {
  ActionDatasetSpec s;
  s.classes = get<int>(doc_, "/actions/classes");
  s.train_per_class = get<int>(doc_, "/actions/train_per_class");
  s.test_per_class = get<int>(doc_, "/actions/test_per_class");
  s.frames = get<int>(doc_, "/actions/frames");
  s.speed = get<int>(doc_, "/actions/speed");
  s.spin = get<double>(doc_, "/actions/spin");
  s.fps = get<double>(doc_, "/synth/fps");
  s.seed = stage_seed("actions");
  if (s.classes < 2 || s.classes > 4 || s.train_per_class < 1 || s.test_per_class < 1 || s.frames < kClipLength)
    throw ConfigError("actions: need 2-4 classes, at least one video per split and class, frames >= 16");
  return s;
}

Threshold parse_threshold(const std::string& text) {
  if (text == "adaptive") return Threshold::adaptive();
  if (text == "inf") return Threshold::infinite();
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end || !(v >= 0.0))
    throw ConfigError("threshold: expected 'adaptive' or a non-negative number, got '" + text + "'");
  return Threshold::value(v);
}

std::string format_threshold(const Threshold& t) {
  if (t.is_adaptive()) return "adaptive";
  std::ostringstream os;
  os.precision(17);
  os << *t.fixed;
  return os.str();
}

ShotEditingParams RunConfig::shot_editing() const {
  ShotEditingParams p;
  p.k = get<std::int64_t>(doc_, "/shot_editing/k");
  p.min_len = get<std::int64_t>(doc_, "/shot_editing/min_len");
  const auto& th = doc_.at("shot_editing").at("threshold");
  p.threshold = th.is_number() ? Threshold::value(th.get<double>()) : parse_threshold(th.get<std::string>());
  p.hog.cell_size = get<int>(doc_, "/shot_editing/hog/cell_size");
  p.hog.orientation_bins = get<int>(doc_, "/shot_editing/hog/orientation_bins");
  p.hog.block_cells = get<int>(doc_, "/shot_editing/hog/block_cells");
  p.hog.clip = get<float>(doc_, "/shot_editing/hog/clip");
  if (p.min_len < 1 || p.min_len >= p.k) throw ConfigError("shot_editing: need 0 < min_len < k");
  if (p.hog.cell_size < 1 || p.hog.orientation_bins < 1 || p.hog.block_cells < 1 || !(p.hog.clip > 0.0f))
    throw ConfigError("shot_editing/hog: parameters must be positive");
  return p;
}

std::vector<Relation> RunConfig::relations() const {
  const auto& r = doc_.at("sampler").at("relations");
  std::string text;
  if (r.is_string()) {
    text = r.get<std::string>();
  } else if (r.is_array()) {
    for (const auto& item : r) {
      if (!item.is_string()) throw ConfigError("sampler/relations: expected relation codes");
      text += (text.empty() ? "" : ",") + item.get<std::string>();
    }
  } else {
    throw ConfigError("sampler/relations: expected a string or list");
  }
  try {
    return parse_relations(text);
  } catch (const InputError& e) {
    throw ConfigError(std::string("sampler/relations: ") + e.what());
  }
}

SamplerOptions RunConfig::sampler() const {
  SamplerOptions o;
  o.aligned = get<bool>(doc_, "/sampler/aligned");
  o.max_retries = get<int>(doc_, "/sampler/max_retries");
  if (o.max_retries < 1) throw ConfigError("sampler/max_retries must be >= 1");
  return o;
}

std::int64_t RunConfig::sample_count() const {
  const auto n = get<std::int64_t>(doc_, "/sampler/count");
  if (n < 1) throw ConfigError("sampler/count must be >= 1");
  return n;
}

nn::BackboneConfig RunConfig::backbone() const {
  nn::BackboneKind kind;
  try {
    kind = nn::backbone_kind_from_string(get<std::string>(doc_, "/backbone/kind"));
  } catch (const InputError& e) {
    throw ConfigError(std::string("backbone/kind: ") + e.what());
  }
  const auto preset = get<std::string>(doc_, "/backbone/preset");
  nn::BackboneConfig c;
  if (preset == "tiny") c = nn::BackboneConfig::tiny(kind);
  else if (preset == "full") c = nn::BackboneConfig::full(kind);
  else throw ConfigError("backbone/preset: expected tiny or full, got '" + preset + "'");
  const auto& w = doc_.at("backbone").at("widths");
  if (!w.is_null()) {
    const auto widths = w.get<std::vector<int>>();
    if (widths.size() != 5) throw ConfigError("backbone/widths: expected 5 stage widths");
    std::copy(widths.begin(), widths.end(), c.widths.begin());
  }
  c.validate();
  return c;
}

TrainConfig RunConfig::train() const {
  const auto& t = doc_.at("train");
  TrainConfig c;
  try {
    c.sgd = sgd_from(t);
    c.epochs = t.at("epochs").get<int>();
    c.batch_size = t.at("batch_size").get<int>();
    c.lr_milestones = t.at("lr_milestones").get<std::vector<int>>();
    c.lr_gamma = t.at("lr_gamma").get<double>();
    c.train_samples = t.at("train_samples").get<std::int64_t>();
    c.validation_samples = t.at("validation_samples").get<std::int64_t>();
    c.resample_each_epoch = t.at("resample_each_epoch").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  c.stop_train_accuracy = get_optional(doc_, "/train/stop_train_accuracy");
  c.stop_validation_accuracy = get_optional(doc_, "/train/stop_validation_accuracy");
  c.seed = stage_seed("pretrain");
  c.sampler = sampler();
  if (c.epochs < 1 || c.batch_size < 1 || c.train_samples < 1 || c.validation_samples < 0 || !(c.lr_gamma > 0.0))
    throw ConfigError("train: epochs, batch_size, train_samples must be >= 1 and lr_gamma > 0");
  return c;
}

FinetuneConfig RunConfig::finetune() const {
  const auto& t = doc_.at("finetune");
  FinetuneConfig c;
  try {
    c.sgd = sgd_from(t);
    c.epochs = t.at("epochs").get<int>();
    c.batch_size = t.at("batch_size").get<int>();
    c.lr_milestones = t.at("lr_milestones").get<std::vector<int>>();
    c.lr_gamma = t.at("lr_gamma").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("finetune: ") + e.what());
  }
  c.stop_test_accuracy = get_optional(doc_, "/finetune/stop_test_accuracy");
  c.seed = stage_seed("finetune");
  if (c.epochs < 1 || c.batch_size < 1 || !(c.lr_gamma > 0.0))
    throw ConfigError("finetune: epochs and batch_size must be >= 1, lr_gamma > 0");
  return c;
}

RetrievalOptions RunConfig::retrieval() const {
  RetrievalOptions o;
  try {
    o.ks = doc_.at("retrieval").at("topk").get<std::vector<int>>();
  } catch (const json::exception&) {
    throw ConfigError("retrieval/topk: expected a list of integers");
  }
  if (o.ks.empty()) throw ConfigError("retrieval/topk: empty");
  for (int k : o.ks)
    if (k < 1) throw ConfigError("retrieval/topk: k must be >= 1");
  const auto mode = get<std::string>(doc_, "/retrieval/mode");
  if (mode == "video") o.mode = RetrievalMode::Video;
  else if (mode == "clip") o.mode = RetrievalMode::Clip;
  else throw ConfigError("retrieval/mode: expected video or clip");
  const auto metric = get<std::string>(doc_, "/retrieval/metric");
  if (metric == "cosine") o.metric = DistanceMetric::Cosine;
  else if (metric == "euclidean") o.metric = DistanceMetric::Euclidean;
  else throw ConfigError("retrieval/metric: expected cosine or euclidean");
  return o;
}

std::string RunConfig::fingerprint(const std::vector<std::string>& sections, const std::string& upstream) const {
  json subset = json::object();
  subset["seed"] = doc_.at("seed");
  for (const auto& s : sections) subset[s] = doc_.at(s);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(subset.dump() + "|" + upstream)));
  return buf;
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot write resolved config");
  out << doc_.dump(2) << "\n";
}

}  // namespace relvid
