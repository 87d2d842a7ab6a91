#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relvid/checkpoint.hpp"
#include "relvid/relation_sampler.hpp"
#include "relvid/siamese.hpp"

namespace relvid {

/// Clip frames as a (B, 3, T, H, W) tensor scaled to [-1, 1] (x / 127.5 - 1).
template <typename T>
nn::Tensor<T> clips_to_tensor(const std::vector<const Clip*>& clips);

struct MaterializedSample {
  Clip a;
  Clip b;
  Relation relation = Relation::ShotCooccurrence;
  int label = 0;  ///< class index within the active relation set
};

std::vector<MaterializedSample> materialize_samples(const std::vector<RelationSample>& samples,
                                                    const std::vector<Relation>& relations,
                                                    const SamplerOptions& options = {});

struct TrainConfig {
  nn::SgdConfig sgd;
  int epochs = 300;
  int batch_size = 8;
  std::uint64_t seed = 0;
  /// Learning rate is multiplied by lr_gamma once per milestone reached
  /// (0-based epoch index >= milestone).
  std::vector<int> lr_milestones{100, 200};
  double lr_gamma = 0.1;
  /// Size of the training sample set drawn when no sample index is given.
  std::int64_t train_samples = 1000;
  /// Held-out stream size; 0 means 10% of the training set (at least 1).
  std::int64_t validation_samples = 0;
  /// Draw a fresh training set every epoch instead of reusing one.
  bool resample_each_epoch = false;
  /// Also score the training set with frozen statistics after each epoch.
  bool evaluate_train = true;
  /// Stop once both accuracies (evaluated train, validation) reach these.
  std::optional<double> stop_train_accuracy;
  std::optional<double> stop_validation_accuracy;
  SamplerOptions sampler;
};

double learning_rate_at(const TrainConfig& config, int epoch);

struct EpochMetrics {
  int epoch = 0;
  std::string split;  ///< "train" (running, batch statistics), "train_eval" or "val"
  double loss = 0.0;
  double accuracy = 0.0;
  std::map<Relation, double> per_relation;
  std::int64_t count = 0;
};

nlohmann::json to_json(const EpochMetrics& m);

struct StepResult {
  double loss = 0.0;  ///< batch mean
  double accuracy = 0.0;
  std::vector<int> predictions;  ///< argmax class per sample
  std::vector<double> losses;    ///< per-sample cross-entropy
};

/// One momentum-SGD step on a batch, both stacks in batch-statistics mode.
/// Throws NumericError on a non-finite loss.
template <typename T>
StepResult train_step(nn::SiameseModel<T>& model, nn::Sgd<T>& sgd, const std::vector<const MaterializedSample*>& batch,
                      double learning_rate);

/// Frozen-statistics scoring of a sample set.
template <typename T>
EpochMetrics evaluate_samples(nn::SiameseModel<T>& model, const std::vector<MaterializedSample>& samples,
                              int batch_size);

struct PretrainResult {
  nn::Archive last;
  nn::Archive best;  ///< highest validation accuracy (earliest on ties)
  int best_epoch = -1;
  double best_validation_accuracy = -1.0;
  int epochs_run = 0;
  std::vector<EpochMetrics> history;
  std::map<Relation, std::int64_t> fallbacks;
};

/// Trains a siamese model on relation samples. `train_index` supplies the
/// training set when given; otherwise `train_samples` are drawn from the
/// manifest. The held-out stream uses a seed derived from `config.seed`.
/// Throws ConfigError when a relation is unsatisfiable on the manifest.
template <typename T>
PretrainResult pretrain(const Manifest& manifest, const std::vector<Relation>& relations,
                        const nn::BackboneConfig& backbone, const TrainConfig& config,
                        const SampleIndex* train_index = nullptr,
                        const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// Backbone-only archive (no head) from a siamese checkpoint.
nn::Archive export_single_stack(const nn::Archive& siamese_checkpoint);

struct GradientCheckResult {
  double max_relative_error = 0.0;
  int checked = 0;
  std::string worst_parameter;
  int kink_retries = 0;  ///< differences retried at step / 10
  int skipped = 0;       ///< draws abandoned because both steps crossed a kink
};

/// Central finite differences on randomly chosen parameters (a tensor is
/// picked uniformly, then an element) against the analytic gradient of the
/// mean cross-entropy, with frozen normalisation. Relative error is
/// |g_a - g_n| / max(|g_a|, |g_n|, floor).
///
/// A difference is only taken when every ReLU has the same on/off state at
/// theta + h and theta - h. Otherwise it is retried with h / 10, and if that
/// still straddles a kink the draw is replaced by a fresh one (at most
/// 20 * num_parameters draws in total).
GradientCheckResult numeric_gradient_check(nn::SiameseModel<double>& model, const nn::Tensor<double>& a,
                                           const nn::Tensor<double>& b, const std::vector<int>& labels,
                                           int num_parameters, Rng& rng, double step = 1e-5, double floor = 1e-8);

/// Mean cross-entropy of a batch in frozen mode. `relu_state`, when given,
/// receives the on/off state of every ReLU in both stacks.
double pair_loss(nn::SiameseModel<double>& model, const nn::Tensor<double>& a, const nn::Tensor<double>& b,
                 const std::vector<int>& labels, std::vector<bool>* relu_state = nullptr);

}  // namespace relvid
