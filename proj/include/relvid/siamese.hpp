#pragma once

#include <span>
#include <vector>

#include "relvid/backbone.hpp"
#include "relvid/relation.hpp"

namespace relvid::nn {

/// p_i = exp(a_i - max a) / sum_j exp(a_j - max a). Throws NumericError on
/// non-finite input.
std::vector<double> softmax(std::span<const double> logits);

double log_sum_exp(std::span<const double> logits);

/// -log p[label], with p[label] clamped to the smallest normal double.
double cross_entropy(std::span<const double> probabilities, int label);

/// Fused log-softmax cross-entropy: logsumexp(a) - a[label]. When `grad` is
/// given it receives softmax(a) - onehot(label).
double cross_entropy_with_logits(std::span<const double> logits, int label, std::vector<double>* grad = nullptr);

/// Two stacks sharing one backbone, followed by a linear classifier on the
/// concatenation [features(a), features(b)].
template <typename T>
class SiameseModel {
 public:
  struct Tape {
    typename Backbone<T>::Tape a, b;
    Tensor<T> joint;
  };

  SiameseModel() = default;
  SiameseModel(const BackboneConfig& config, std::vector<Relation> relations, Rng& rng);
  /// Wraps an existing backbone with a freshly initialised head.
  SiameseModel(Backbone<T> backbone, std::vector<Relation> relations, Rng& rng);

  Backbone<T>& backbone() noexcept { return backbone_; }
  const Backbone<T>& backbone() const noexcept { return backbone_; }
  Linear<T>& head() noexcept { return head_; }
  const Linear<T>& head() const noexcept { return head_; }
  const std::vector<Relation>& relations() const noexcept { return relations_; }
  int num_classes() const noexcept { return static_cast<int>(relations_.size()); }

  /// Features of stack 1 or 2. Both read the same parameter set.
  Tensor<T> stack_features(int stack, const Tensor<T>& clips, NormMode mode = NormMode::Frozen);

  /// (B, c) logits.
  Tensor<T> forward_pair(const Tensor<T>& a, const Tensor<T>& b, NormMode mode, Tape* tape = nullptr);
  /// Accumulates gradients of every parameter from d(loss)/d(logits).
  void backward(const Tensor<T>& d_logits, Tape& tape);

  std::vector<Param<T>*> parameters();
  void zero_grad();

 private:
  Backbone<T> backbone_;
  Linear<T> head_;
  std::vector<Relation> relations_;
};

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Momentum SGD with decoupled-from-loss L2 decay:
/// v = mu * v + (g + wd * w), w -= lr * v.
template <typename T>
class Sgd {
 public:
  Sgd() = default;
  explicit Sgd(SgdConfig config) : config_(config) {}

  void step(const std::vector<Param<T>*>& params, double learning_rate);

  const SgdConfig& config() const noexcept { return config_; }
  /// Momentum buffers, parallel to the parameter list of the last step.
  std::vector<Tensor<T>>& velocity() noexcept { return velocity_; }
  const std::vector<Tensor<T>>& velocity() const noexcept { return velocity_; }

 private:
  SgdConfig config_;
  std::vector<Tensor<T>> velocity_;
};

}  // namespace relvid::nn
