// Command-line front end: one subcommand per pipeline stage.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "relvid/checkpoint.hpp"
#include "relvid/config.hpp"
#include "relvid/dataset.hpp"
#include "relvid/downstream.hpp"
#include "relvid/error.hpp"
#include "relvid/relation_sampler.hpp"
#include "relvid/rng.hpp"
#include "relvid/shot_editing.hpp"
#include "relvid/synthetic.hpp"
#include "relvid/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace relvid;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Options shared by every subcommand, plus flag -> config pointer overrides.
struct Command {
  CLI::App* app = nullptr;
  std::string config_path;
  std::string run_dir;
  bool force = false;
  std::vector<std::pair<CLI::Option*, std::string>> overrides;
  std::map<std::string, std::string> values;

  void bind(const std::string& flag, const std::string& pointer, const std::string& help) {
    auto* opt = app->add_option(flag, values[pointer], help);
    overrides.emplace_back(opt, pointer);
  }

  RunConfig resolve() {
    try {
      RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::load(config_path);
      for (const auto& [opt, pointer] : overrides)
        if (opt->count() > 0) cfg.set(pointer, values.at(pointer));
      return RunConfig::from_json(cfg.doc());
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
};

Command add_command(CLI::App& root, const std::string& name, const std::string& help) {
  Command c;
  c.app = root.add_subcommand(name, help);
  c.app->add_option("--config", c.config_path, "JSON run configuration (defaults when omitted)")->check(CLI::ExistingFile);
  c.app->add_option("--run-dir", c.run_dir, "Where resolved_config.json is written (default: next to the output)");
  c.app->add_flag("--force", c.force, "Accept inputs whose lineage does not match");
  return c;
}

void echo_config(const Command& c, const RunConfig& cfg, const fs::path& output, const std::string& fingerprint) {
  fs::path dir = c.run_dir.empty() ? output.parent_path() : fs::path(c.run_dir);
  if (dir.empty()) dir = ".";
  fs::create_directories(dir);
  json doc = {{"command", c.app->get_name()}, {"fingerprint", fingerprint}, {"config", cfg.doc()}};
  std::ofstream out(dir / "resolved_config.json");
  if (!out) throw IoError((dir / "resolved_config.json").string(), "cannot write");
  out << doc.dump(2) << "\n";
}

void check_lineage(const std::string& what, const std::string& expected, const std::string& actual, bool force) {
  if (expected == actual) return;
  const std::string msg = what + " lineage mismatch (expected " + (expected.empty() ? "<none>" : expected) +
                          ", found " + (actual.empty() ? "<none>" : actual) + ")";
  if (!force) throw ConfigError(msg + "; rerun with --force to accept");
  std::cerr << "warning: " << msg << "\n";
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError(p.string(), "cannot open");
  return json::parse(in);
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw IoError(p.string(), "cannot write");
  out << j.dump(2) << "\n";
}

std::string corpus_fingerprint(const fs::path& dir) {
  const auto meta = dir / "corpus.json";
  if (!fs::exists(meta)) return {};
  const auto j = read_json(meta);
  return j.value("fingerprint", std::string{});
}

std::string checkpoint_fingerprint(const nn::Archive& ar) { return ar.meta.value("fingerprint", std::string{}); }

// A backbone pinned in the config must agree with the checkpoint's.
void check_backbone(const RunConfig& cfg, const nn::Archive& ar, bool force) {
  if (cfg.doc().at("backbone") == RunConfig::defaults().at("backbone")) return;
  const auto stored = nn::backbone_config_from_json(ar.meta.at("backbone"));
  if (stored == cfg.backbone()) return;
  const std::string msg = "checkpoint backbone " + nn::to_json(stored).dump() + " differs from configured " +
                          nn::to_json(cfg.backbone()).dump();
  if (!force) throw ConfigError(msg + "; rerun with --force to use the checkpoint's");
  std::cerr << "warning: " << msg << "\n";
}

LabeledVideoDataset load_split(const std::string& path, const std::string& split, const IngestOptions& ingest) {
  auto ds = load_dataset(path, ingest);
  auto part = ds.split(split);
  return part.videos.empty() ? ds : part;
}

class JsonlLog {
 public:
  explicit JsonlLog(const fs::path& p) : out_(p) {
    if (!out_) throw IoError(p.string(), "cannot write log");
  }
  void write(const json& j) { out_ << j.dump() << "\n" << std::flush; }

 private:
  std::ofstream out_;
};

int run_synth(Command& c, const std::string& kind, const std::string& out) {
  auto cfg = c.resolve();
  const fs::path dir(out);
  if (kind == "corpus") {
    const auto spec = cfg.synth_corpus();
    const auto corpus = generate_synthetic_corpus(spec, dir);
    const auto fp = cfg.fingerprint({"synth"});
    auto meta = read_json(dir / "corpus.json");
    meta["fingerprint"] = fp;
    write_json(dir / "corpus.json", meta);
    echo_config(c, cfg, dir / "x", fp);
    std::printf("synth: %zu videos, %zu shots -> %s\n", corpus.videos.size(), corpus.ground_truth.size(),
                dir.string().c_str());
  } else if (kind == "actions") {
    const auto spec = cfg.synth_actions();
    const auto ds = generate_action_dataset(spec, dir);
    const auto fp = cfg.fingerprint({"actions", "synth"});
    write_json(dir / "actions.json", {{"fingerprint", fp}, {"classes", ds.class_count}});
    echo_config(c, cfg, dir / "x", fp);
    std::printf("synth: %zu labelled videos, %d classes -> %s\n", ds.videos.size(), ds.class_count,
                (dir / "dataset.jsonl").string().c_str());
  } else {
    throw UsageError("--kind must be corpus or actions");
  }
  return 0;
}

int run_edit_shots(Command& c, const std::string& input, const std::string& output) {
  auto cfg = c.resolve();
  const auto params = cfg.shot_editing();
  const auto videos = scan_corpus(input, cfg.ingest());
  auto build = build_manifest(videos, params);
  const auto fp = cfg.fingerprint({"ingest", "shot_editing"}, corpus_fingerprint(input));
  build.manifest.header().fingerprint = fp;
  ensure_parent(output);
  build.manifest.save(output);
  echo_config(c, cfg, output, fp);
  std::printf("edit-shots: %lld videos, %lld shots, %zu segments -> %s\n",
              static_cast<long long>(build.manifest.header().num_videos),
              static_cast<long long>(build.manifest.header().num_shots), build.manifest.size(), output.c_str());
  return 0;
}

int run_build_samples(Command& c, const std::string& manifest_path, const std::string& output) {
  auto cfg = c.resolve();
  const auto manifest = Manifest::load(manifest_path);
  const auto relations = cfg.relations();
  auto index = build_sample_index(manifest, relations, cfg.sample_count(), cfg.stage_seed("samples"), cfg.sampler());
  index.header.manifest_fingerprint = manifest.header().fingerprint;
  index.header.fingerprint = cfg.fingerprint({"sampler"}, manifest.header().fingerprint);
  ensure_parent(output);
  index.save(output);
  echo_config(c, cfg, output, index.header.fingerprint);
  std::printf("build-samples: %zu samples over %s -> %s\n", index.samples.size(),
              format_relations(relations).c_str(), output.c_str());
  for (const auto& [rel, n] : index.fallbacks)
    if (n > 0) std::printf("  fallback %s: %lld\n", std::string(to_string(rel)).c_str(), static_cast<long long>(n));
  return 0;
}

int run_pretrain(Command& c, const std::string& manifest_path, const std::string& samples_path,
                 const std::string& out, std::string log_path) {
  auto cfg = c.resolve();
  const auto manifest = Manifest::load(manifest_path);
  std::optional<SampleIndex> index;
  std::string upstream = manifest.header().fingerprint;
  if (!samples_path.empty()) {
    index = SampleIndex::load(samples_path);
    check_lineage("sample index", manifest.header().fingerprint, index->header.manifest_fingerprint, c.force);
    cfg.set("/sampler/relations", json(format_relations(index->header.relations)));
    upstream += "|" + index->header.fingerprint;
  }
  const auto relations = cfg.relations();
  const auto backbone = cfg.backbone();
  const auto train = cfg.train();
  const auto fp = cfg.fingerprint({"backbone", "train", "sampler"}, upstream);
  if (log_path.empty()) log_path = out + ".log.jsonl";
  ensure_parent(out);
  ensure_parent(log_path);
  echo_config(c, cfg, out, fp);
  JsonlLog log(log_path);
  auto result = pretrain<float>(manifest, relations, backbone, train, index ? &*index : nullptr,
                                [&](const EpochMetrics& m) {
                                  log.write(to_json(m));
                                  if (m.split != "train")
                                    std::printf("epoch %d %-10s loss %.4f acc %.4f\n", m.epoch, m.split.c_str(),
                                                m.loss, m.accuracy);
                                  std::fflush(stdout);
                                });
  for (auto* ar : {&result.last, &result.best}) {
    ar->meta["fingerprint"] = fp;
    ar->meta["manifest_fingerprint"] = manifest.header().fingerprint;
  }
  result.last.save(out);
  result.best.save(out + ".best");
  auto single = export_single_stack(result.last);
  single.save(out + ".backbone");
  std::printf("pretrain: %d epochs, best validation accuracy %.4f (epoch %d) -> %s\n", result.epochs_run,
              result.best_validation_accuracy, result.best_epoch, out.c_str());
  return 0;
}

int run_finetune(Command& c, const std::string& ckpt, const std::string& dataset, const std::string& out,
                 std::string log_path) {
  auto cfg = c.resolve();
  const auto config = cfg.finetune();
  std::string upstream;
  nn::Backbone<float> backbone;
  if (!ckpt.empty()) {
    const auto ar = nn::Archive::load(ckpt);
    check_backbone(cfg, ar, c.force);
    backbone = nn::load_backbone<float>(ar);
    upstream = checkpoint_fingerprint(ar);
  } else {
    Rng rng(cfg.stage_seed("init"));
    backbone = nn::Backbone<float>(cfg.backbone(), rng);
  }
  const auto ds = load_dataset(dataset, cfg.ingest());
  const auto train = ds.split("train");
  const auto test = ds.split("test");
  if (train.videos.empty()) throw InputError(dataset + ": no training videos");
  const auto fp = cfg.fingerprint({"finetune"}, upstream);
  if (log_path.empty()) log_path = out + ".log.jsonl";
  ensure_parent(out);
  ensure_parent(log_path);
  echo_config(c, cfg, out, fp);
  JsonlLog log(log_path);
  auto result = finetune<float>(std::move(backbone), train, test.videos.empty() ? nullptr : &test, config,
                                [&](const FinetuneEpoch& e) {
                                  json j = {{"epoch", e.epoch}, {"loss", e.loss}, {"train_acc", e.train_accuracy}};
                                  if (e.test_accuracy) j["test_acc"] = *e.test_accuracy;
                                  log.write(j);
                                });
  result.checkpoint.meta["fingerprint"] = fp;
  result.checkpoint.meta["upstream_fingerprint"] = upstream;
  result.checkpoint.save(out);
  std::printf("finetune: %d epochs, test accuracy %.4f -> %s\n", result.epochs_run, result.final_test_accuracy,
              out.c_str());
  return 0;
}

int run_retrieve(Command& c, const std::string& ckpt, const std::string& train_path, const std::string& test_path,
                 const std::string& out) {
  auto cfg = c.resolve();
  const auto options = cfg.retrieval();
  const auto ar = nn::Archive::load(ckpt);
  check_backbone(cfg, ar, c.force);
  auto backbone = nn::load_backbone<float>(ar);
  const auto train = load_split(train_path, "train", cfg.ingest());
  const auto test = load_split(test_path, "test", cfg.ingest());
  const auto train_desc = extract_descriptors(backbone, train);
  const auto test_desc = extract_descriptors(backbone, test);
  const auto result = retrieve(test_desc, train_desc, options);
  const auto table = format_retrieval_table({{fs::path(ckpt).stem().string(), result}});
  ensure_parent(out);
  std::ofstream f(out);
  if (!f) throw IoError(out, "cannot write table");
  f << table;
  echo_config(c, cfg, out, cfg.fingerprint({"retrieval"}, checkpoint_fingerprint(ar)));
  std::printf("%s", table.c_str());
  return 0;
}

int run_embed(Command& c, const std::string& ckpt, const std::string& videos, const std::string& out) {
  auto cfg = c.resolve();
  const auto ar = nn::Archive::load(ckpt);
  check_backbone(cfg, ar, c.force);
  auto backbone = nn::load_backbone<float>(ar);
  const auto ds = load_dataset(videos, cfg.ingest());
  if (ds.videos.size() < 2) throw InputError(videos + ": need at least two videos to embed");
  const auto desc = extract_descriptors(backbone, ds);
  Eigen::MatrixXd features(static_cast<Eigen::Index>(desc.size()), static_cast<Eigen::Index>(desc[0].vector.size()));
  std::vector<int> labels;
  for (std::size_t i = 0; i < desc.size(); ++i) {
    for (std::size_t j = 0; j < desc[i].vector.size(); ++j) features(i, j) = desc[i].vector[j];
    labels.push_back(desc[i].label);
  }
  const auto pca = pca_embed(features, 2);
  ensure_parent(out);
  write_embedding_svg(out, pca.coordinates, labels);
  fs::path csv(out);
  csv.replace_extension(".csv");
  std::ofstream f(csv);
  if (!f) throw IoError(csv.string(), "cannot write coordinates");
  f << "video_id,label,pc1,pc2\n";
  for (std::size_t i = 0; i < desc.size(); ++i)
    f << desc[i].video_id << "," << labels[i] << "," << pca.coordinates(i, 0) << "," << pca.coordinates(i, 1) << "\n";
  echo_config(c, cfg, out, cfg.fingerprint({}, checkpoint_fingerprint(ar)));
  std::printf("embed: %zu videos, explained variance ratio %.4f / %.4f -> %s\n", desc.size(), pca.explained_ratio(0),
              pca.explained_ratio(1), out.c_str());
  return 0;
}

int run_attn(Command& c, const std::string& ckpt, const std::string& video_path, int stage, std::int64_t start,
             const std::string& out) {
  auto cfg = c.resolve();
  if (stage < 1 || stage > 5) throw UsageError("--stage must be in [1, 5]");
  const auto ar = nn::Archive::load(ckpt);
  check_backbone(cfg, ar, c.force);
  auto backbone = nn::load_backbone<float>(ar);
  const auto video = open_video(video_path, cfg.ingest());
  if (video.frame_count < kClipLength) throw InputError(video_path + ": shorter than one clip");
  if (start < 0) start = (video.frame_count - kClipLength) / 2;
  if (start + kClipLength > video.frame_count) throw InputError("--start leaves fewer than 16 frames");
  const auto clip = center_clip(video, start);
  const auto outputs = backbone.stage_outputs(clips_to_tensor<float>({&clip}));
  const auto& act = outputs.at(static_cast<std::size_t>(stage - 1));
  nn::Tensor<float> single({act.dim(1), act.dim(2), act.dim(3), act.dim(4)});
  std::copy(act.data(), act.data() + single.size(), single.data());
  const auto maps = attention_map(single);
  fs::create_directories(out);
  const int t_out = maps.dim(0);
  for (int f = 0; f < kClipLength; ++f) {
    const int t = std::min(t_out - 1, f * t_out / kClipLength);
    char name[32];
    std::snprintf(name, sizeof name, "frame_%02d.png", f);
    write_png(fs::path(out) / name, attention_overlay(clip.frames[static_cast<std::size_t>(f)], maps, t));
  }
  echo_config(c, cfg, fs::path(out) / "x", cfg.fingerprint({}, checkpoint_fingerprint(ar)));
  std::printf("attn: stage %d maps (%d x %d x %d) -> %s\n", stage, maps.dim(0), maps.dim(1), maps.dim(2), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relvid: relation-based self-supervised video representation pipeline"};
  app.require_subcommand(1);

  auto synth = add_command(app, "synth", "Generate a synthetic untrimmed corpus or labelled action set");
  std::string synth_kind = "corpus", synth_out;
  synth.app->add_option("--kind", synth_kind, "corpus or actions")->check(CLI::IsMember({"corpus", "actions"}));
  synth.app->add_option("--out", synth_out, "Output directory")->required();
  synth.bind("--seed", "/seed", "Global seed");
  synth.bind("--videos", "/synth/num_videos", "Number of untrimmed videos");
  synth.bind("--motions", "/synth/motions", "Comma list of translating, rotating, static");

  auto edit = add_command(app, "edit-shots", "Detect shot changes and cut single-shot segments");
  std::string edit_in, edit_out;
  edit.app->add_option("--input", edit_in, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  edit.app->add_option("--output", edit_out, "Manifest path")->required();
  edit.bind("--seed", "/seed", "Global seed");
  edit.bind("--k", "/shot_editing/k", "Segment length K");
  edit.bind("--min-len", "/shot_editing/min_len", "Shortest kept tail segment");
  edit.bind("--threshold", "/shot_editing/threshold", "HOG difference threshold, or 'adaptive'");
  edit.bind("--target-fps", "/ingest/target_fps", "Resample videos to this frame rate");

  auto samples = add_command(app, "build-samples", "Write a reproducible relation sample index");
  std::string samples_manifest, samples_out;
  samples.app->add_option("--manifest", samples_manifest, "Manifest path")->required()->check(CLI::ExistingFile);
  samples.app->add_option("--output", samples_out, "Sample index path")->required();
  samples.bind("--seed", "/seed", "Global seed");
  samples.bind("--relations", "/sampler/relations", "'all' or a comma list of C_S,C_V,C_D,C_R,P_I,P_D,P_S");
  samples.bind("--count", "/sampler/count", "Number of samples");
  samples.bind("--aligned", "/sampler/aligned", "Reuse clip_a's offset and crop for clip_b (true/false)");

  auto pre = add_command(app, "pretrain", "Train the siamese relation classifier");
  std::string pre_manifest, pre_samples, pre_out, pre_log;
  pre.app->add_option("--manifest", pre_manifest, "Manifest path")->required()->check(CLI::ExistingFile);
  pre.app->add_option("--samples", pre_samples, "Fixed training sample index")->check(CLI::ExistingFile);
  pre.app->add_option("--out", pre_out, "Checkpoint path")->required();
  pre.app->add_option("--log", pre_log, "Training log (default <out>.log.jsonl)");
  pre.bind("--seed", "/seed", "Global seed");
  pre.bind("--relations", "/sampler/relations", "'all' or a comma list of relation codes");
  pre.bind("--backbone", "/backbone/kind", "c3d, r3d or r2plus1d");
  pre.bind("--preset", "/backbone/preset", "tiny or full");
  pre.bind("--epochs", "/train/epochs", "Training epochs");
  pre.bind("--batch-size", "/train/batch_size", "Pairs per step");
  pre.bind("--lr", "/train/learning_rate", "Initial learning rate");
  pre.bind("--train-samples", "/train/train_samples", "Training set size when no index is given");

  auto fine = add_command(app, "finetune", "Fine-tune a backbone on a labelled dataset");
  std::string fine_ckpt, fine_dataset, fine_out, fine_log;
  fine.app->add_option("--ckpt", fine_ckpt, "Pretrained checkpoint (random init when omitted)")
      ->check(CLI::ExistingFile);
  fine.app->add_option("--dataset", fine_dataset, "Dataset file (dataset.jsonl)")->required()->check(CLI::ExistingFile);
  fine.app->add_option("--out", fine_out, "Classifier checkpoint path")->required();
  fine.app->add_option("--log", fine_log, "Training log (default <out>.log.jsonl)");
  fine.bind("--seed", "/seed", "Global seed");
  fine.bind("--epochs", "/finetune/epochs", "Fine-tuning epochs");
  fine.bind("--lr", "/finetune/learning_rate", "Learning rate");
  fine.bind("--backbone", "/backbone/kind", "Backbone for random init");
  fine.bind("--preset", "/backbone/preset", "Preset for random init");

  auto ret = add_command(app, "retrieve", "Nearest-neighbour retrieval of test videos against training videos");
  std::string ret_ckpt, ret_train, ret_test, ret_out;
  ret.app->add_option("--ckpt", ret_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ret.app->add_option("--train-split", ret_train, "Dataset file for the gallery")->required()->check(CLI::ExistingFile);
  ret.app->add_option("--test-split", ret_test, "Dataset file for the queries")->required()->check(CLI::ExistingFile);
  ret.app->add_option("--out", ret_out, "Result table (CSV)")->required();
  ret.bind("--topk", "/retrieval/topk", "Comma list of k");
  ret.bind("--mode", "/retrieval/mode", "video or clip");
  ret.bind("--metric", "/retrieval/metric", "cosine or euclidean");

  auto emb = add_command(app, "embed", "2-D PCA embedding of video features");
  std::string emb_ckpt, emb_videos, emb_out;
  emb.app->add_option("--ckpt", emb_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  emb.app->add_option("--videos", emb_videos, "Dataset file")->required()->check(CLI::ExistingFile);
  emb.app->add_option("--out", emb_out, "SVG plot path (coordinates go to a .csv beside it)")->required();

  auto att = add_command(app, "attn", "Activation-based attention maps for one clip");
  std::string att_ckpt, att_video, att_out;
  int att_stage = 5;
  std::int64_t att_start = -1;
  att.app->add_option("--ckpt", att_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  att.app->add_option("--video", att_video, "Video file or frame archive")->required()->check(CLI::ExistingPath);
  att.app->add_option("--stage", att_stage, "Backbone stage 1-5");
  att.app->add_option("--start", att_start, "First frame of the clip (default: centred)");
  att.app->add_option("--out", att_out, "Output directory for overlay frames")->required();

  CLI::App* active = &app;
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    for (auto* sub : app.get_subcommands()) active = sub;
    std::cerr << "error: " << e.what() << "\n\n" << active->help();
    return 2;
  }
  active = app.get_subcommands().front();
  const std::string name = active->get_name();

  try {
    if (name == "synth") return run_synth(synth, synth_kind, synth_out);
    if (name == "edit-shots") return run_edit_shots(edit, edit_in, edit_out);
    if (name == "build-samples") return run_build_samples(samples, samples_manifest, samples_out);
    if (name == "pretrain") return run_pretrain(pre, pre_manifest, pre_samples, pre_out, pre_log);
    if (name == "finetune") return run_finetune(fine, fine_ckpt, fine_dataset, fine_out, fine_log);
    if (name == "retrieve") return run_retrieve(ret, ret_ckpt, ret_train, ret_test, ret_out);
    if (name == "embed") return run_embed(emb, emb_ckpt, emb_videos, emb_out);
    if (name == "attn") return run_attn(att, att_ckpt, att_video, att_stage, att_start, att_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << active->help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "relvid " << name << ": error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
