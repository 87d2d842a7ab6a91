#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relvid/backbone.hpp"
#include "relvid/downstream.hpp"
#include "relvid/relation.hpp"
#include "relvid/shot_editing.hpp"
#include "relvid/synthetic.hpp"
#include "relvid/trainer.hpp"
#include "relvid/video_ingest.hpp"

namespace relvid {

/// Run configuration: a JSON document validated against the built-in
/// defaults. Keys absent from the defaults are rejected, and so are values
/// whose type differs from the default's.
class RunConfig {
 public:
  RunConfig();

  static const nlohmann::json& defaults();
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::filesystem::path& path);

  /// Sets one value by JSON pointer ("/train/epochs") from its text form,
  /// parsed according to the default's type.
  void set(const std::string& pointer, const std::string& text);
  void set(const std::string& pointer, const nlohmann::json& value);

  const nlohmann::json& doc() const noexcept { return doc_; }
  std::uint64_t seed() const;
  /// Seed of one pipeline stage, derived from the global seed.
  std::uint64_t stage_seed(const std::string& stage) const;

  IngestOptions ingest() const;
  SyntheticCorpusSpec synth_corpus() const;
  ActionDatasetSpec synth_actions() const;
  ShotEditingParams shot_editing() const;
  std::vector<Relation> relations() const;
  SamplerOptions sampler() const;
  std::int64_t sample_count() const;
  nn::BackboneConfig backbone() const;
  TrainConfig train() const;
  FinetuneConfig finetune() const;
  RetrievalOptions retrieval() const;

  /// Hash of the named sections (canonical dump) chained onto `upstream`.
  std::string fingerprint(const std::vector<std::string>& sections, const std::string& upstream = {}) const;

  void save(const std::filesystem::path& path) const;

 private:
  static void validate(const nlohmann::json& value, const nlohmann::json& schema, const std::string& where);
  nlohmann::json doc_;
};

Threshold parse_threshold(const std::string& text);
std::string format_threshold(const Threshold& t);

}  // namespace relvid
