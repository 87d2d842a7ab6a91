#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "relvid/checkpoint.hpp"
#include "relvid/dataset.hpp"
#include "relvid/relation_sampler.hpp"

namespace relvid {

inline constexpr int kTestClips = 10;

/// start_i = floor(i * (T - k) / (n - 1)) for i in [0, n). Throws InputError
/// when T < k.
std::vector<std::int64_t> uniform_clip_starts(std::int64_t frame_count, int clips = kTestClips, int k = kClipLength);

/// Frames [start, start + k) with the centred crop.
Clip center_clip(const RawVideo& video, std::int64_t start, const SamplerOptions& options = {});

/// The evaluation clips of a video (uniform starts, centred crop).
std::vector<Clip> test_clips(const RawVideo& video, const SamplerOptions& options = {});

/// Backbone plus a linear head over its features.
template <typename T>
class Classifier {
 public:
  struct Tape {
    typename nn::Backbone<T>::Tape stack;
    nn::Tensor<T> features;
  };

  Classifier() = default;
  Classifier(nn::Backbone<T> backbone, int classes, Rng& rng);

  nn::Backbone<T>& backbone() noexcept { return backbone_; }
  const nn::Backbone<T>& backbone() const noexcept { return backbone_; }
  nn::Linear<T>& head() noexcept { return head_; }
  const nn::Linear<T>& head() const noexcept { return head_; }
  int class_count() const noexcept { return head_.out_features; }

  nn::Tensor<T> forward(const nn::Tensor<T>& clips, nn::NormMode mode, Tape* tape = nullptr);
  void backward(const nn::Tensor<T>& d_logits, Tape& tape);
  std::vector<nn::Param<T>*> parameters();
  void zero_grad();

 private:
  nn::Backbone<T> backbone_;
  nn::Linear<T> head_;
};

template <typename T>
void write_classifier(nn::Archive& ar, const Classifier<T>& model);
template <typename T>
Classifier<T> load_classifier(const nn::Archive& ar);

struct FinetuneConfig {
  nn::SgdConfig sgd;
  int epochs = 150;
  int batch_size = 8;
  std::uint64_t seed = 0;
  std::vector<int> lr_milestones;
  double lr_gamma = 0.1;
  /// Score the test split after every epoch (needed for threshold crossing).
  bool evaluate_each_epoch = true;
  /// Stop after the first epoch whose test accuracy reaches this value.
  std::optional<double> stop_test_accuracy;
  SamplerOptions sampler;
};

struct FinetuneEpoch {
  int epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;  ///< running, batch statistics
  std::optional<double> test_accuracy;
};

struct FinetuneResult {
  nn::Archive checkpoint;
  std::vector<FinetuneEpoch> history;
  double final_test_accuracy = 0.0;
  int epochs_run = 0;
};

/// Trains a fresh head jointly with the backbone on one random clip (random
/// offset and crop) per training video per epoch.
template <typename T>
FinetuneResult finetune(nn::Backbone<T> backbone, const LabeledVideoDataset& train, const LabeledVideoDataset* test,
                        const FinetuneConfig& config, const std::function<void(const FinetuneEpoch&)>& on_epoch = {});

/// Softmax averaged over the ten evaluation clips.
template <typename T>
std::vector<double> predict_probabilities(Classifier<T>& model, const RawVideo& video,
                                          const SamplerOptions& options = {});
template <typename T>
int predict_video(Classifier<T>& model, const RawVideo& video, const SamplerOptions& options = {});
/// Fraction of videos whose predicted class equals the label.
template <typename T>
double evaluate_classifier(Classifier<T>& model, const LabeledVideoDataset& dataset, const SamplerOptions& options = {});

struct VideoDescriptor {
  std::string video_id;
  int label = -1;
  std::vector<double> vector;                    ///< mean of clip_vectors
  std::vector<std::vector<double>> clip_vectors;  ///< one per evaluation clip
};

template <typename T>
VideoDescriptor extract_descriptor(nn::Backbone<T>& backbone, const RawVideo& video, int label = -1,
                                   const SamplerOptions& options = {});

/// Descriptors for a whole dataset split, one worker per video.
template <typename T>
std::vector<VideoDescriptor> extract_descriptors(nn::Backbone<T>& backbone, const LabeledVideoDataset& dataset,
                                                 const SamplerOptions& options = {});

enum class RetrievalMode { Video, Clip };
enum class DistanceMetric { Cosine, Euclidean };

struct RetrievalOptions {
  std::vector<int> ks{1, 5, 10, 20, 50};
  RetrievalMode mode = RetrievalMode::Video;
  DistanceMetric metric = DistanceMetric::Cosine;
};

struct RetrievalResult {
  std::map<int, double> top_k;  ///< k -> fraction of correct queries
  std::int64_t queries = 0;
};

/// A query is correct at k when any of its k nearest training items shares
/// its class. Ties in distance keep training order.
RetrievalResult retrieve(const std::vector<VideoDescriptor>& test, const std::vector<VideoDescriptor>& train,
                         const RetrievalOptions& options = {});

/// CSV with a header row "method,top1,top5,..." and one row per method.
std::string format_retrieval_table(const std::vector<std::pair<std::string, RetrievalResult>>& rows);

struct PcaResult {
  Eigen::MatrixXd coordinates;          ///< N x d
  Eigen::MatrixXd components;           ///< d x F, rows are unit axes
  Eigen::VectorXd mean;                 ///< F
  Eigen::VectorXd explained_variance;   ///< d, non-increasing
  Eigen::VectorXd explained_ratio;      ///< d, fraction of total variance
};

/// Projection of the centred rows onto the top-d principal axes. Each axis
/// is signed so that its largest-magnitude loading is positive.
PcaResult pca_embed(const Eigen::MatrixXd& features, int target_dim = 2);

/// Per position: sum over channels of |activation|, then per-frame min-max
/// scaling to [0, 1]. Frames with (near) zero range map to all zeros.
/// Input (C, T, H, W); output (T, H, W).
nn::Tensor<double> attention_map(const nn::Tensor<float>& activations);
nn::Tensor<double> attention_map(const nn::Tensor<double>& activations);

/// Heat overlay of one map (upsampled bilinearly) onto a frame.
Image attention_overlay(const Image& frame, const nn::Tensor<double>& maps, int t);

/// Scatter plot of 2-D coordinates coloured by label.
void write_embedding_svg(const std::filesystem::path& path, const Eigen::MatrixXd& coords,
                         const std::vector<int>& labels, const std::vector<std::string>& names = {});

}  // namespace relvid
