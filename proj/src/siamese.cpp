#include "relvid/siamese.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "relvid/error.hpp"

namespace relvid::nn {

namespace {

void check_finite(std::span<const double> a, const char* who) {
  if (a.empty()) throw InputError(std::string(who) + ": empty logits");
  for (double v : a)
    if (!std::isfinite(v)) throw NumericError(std::string(who) + ": non-finite logit");
}

}  // namespace

double log_sum_exp(std::span<const double> logits) {
  check_finite(logits, "log_sum_exp");
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits) {
  check_finite(logits, "softmax");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] = std::exp(logits[i] - m);
  for (double& v : p) v /= s;
  return p;
}

double cross_entropy(std::span<const double> probabilities, int label) {
  if (label < 0 || label >= static_cast<int>(probabilities.size())) throw InputError("cross_entropy: label out of range");
  const double p = std::max(probabilities[label], std::numeric_limits<double>::min());
  return -std::log(p);
}

double cross_entropy_with_logits(std::span<const double> logits, int label, std::vector<double>* grad) {
  if (label < 0 || label >= static_cast<int>(logits.size())) throw InputError("cross_entropy: label out of range");
  const double lse = log_sum_exp(logits);
  if (grad) {
    grad->resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) (*grad)[i] = std::exp(logits[i] - lse);
    (*grad)[label] -= 1.0;
  }
  return lse - logits[label];
}

// ---------------------------------------------------------------------------

template <typename T>
SiameseModel<T>::SiameseModel(const BackboneConfig& config, std::vector<Relation> relations, Rng& rng)
    : backbone_(config, rng), relations_(std::move(relations)) {
  if (relations_.empty()) throw ConfigError("siamese model: no relations");
  head_ = Linear<T>("head", 2 * config.feature_dim(), num_classes());
  head_.init(rng);
}

template <typename T>
SiameseModel<T>::SiameseModel(Backbone<T> backbone, std::vector<Relation> relations, Rng& rng)
    : backbone_(std::move(backbone)), relations_(std::move(relations)) {
  if (relations_.empty()) throw ConfigError("siamese model: no relations");
  head_ = Linear<T>("head", 2 * backbone_.config().feature_dim(), num_classes());
  head_.init(rng);
}

template <typename T>
Tensor<T> SiameseModel<T>::stack_features(int stack, const Tensor<T>& clips, NormMode mode) {
  if (stack != 1 && stack != 2) throw InputError("stack index must be 1 or 2");
  return backbone_.forward(clips, mode, nullptr);
}

template <typename T>
Tensor<T> SiameseModel<T>::forward_pair(const Tensor<T>& a, const Tensor<T>& b, NormMode mode, Tape* tape) {
  if (a.shape() != b.shape())
    throw InputError("forward_pair: clip shapes differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const Tensor<T> fa = backbone_.forward(a, mode, tape ? &tape->a : nullptr);
  const Tensor<T> fb = backbone_.forward(b, mode, tape ? &tape->b : nullptr);
  const int n = fa.dim(0), f = fa.dim(1);
  Tensor<T> joint({n, 2 * f});
  for (int i = 0; i < n; ++i) {
    std::copy_n(fa.data() + static_cast<std::size_t>(i) * f, f, joint.data() + static_cast<std::size_t>(i) * 2 * f);
    std::copy_n(fb.data() + static_cast<std::size_t>(i) * f, f, joint.data() + static_cast<std::size_t>(i) * 2 * f + f);
  }
  Tensor<T> logits = head_.forward(joint);
  if (tape) tape->joint = std::move(joint);
  return logits;
}

template <typename T>
void SiameseModel<T>::backward(const Tensor<T>& d_logits, Tape& tape) {
  const Tensor<T> dj = head_.backward(tape.joint, d_logits, true);
  const int n = dj.dim(0), f = dj.dim(1) / 2;
  Tensor<T> da({n, f}), db({n, f});
  for (int i = 0; i < n; ++i) {
    std::copy_n(dj.data() + static_cast<std::size_t>(i) * 2 * f, f, da.data() + static_cast<std::size_t>(i) * f);
    std::copy_n(dj.data() + static_cast<std::size_t>(i) * 2 * f + f, f, db.data() + static_cast<std::size_t>(i) * f);
  }
  backbone_.backward(da, tape.a);
  backbone_.backward(db, tape.b);
}

template <typename T>
std::vector<Param<T>*> SiameseModel<T>::parameters() {
  auto p = backbone_.parameters();
  p.push_back(&head_.weight);
  p.push_back(&head_.bias);
  return p;
}

template <typename T>
void SiameseModel<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

// ---------------------------------------------------------------------------

template <typename T>
void Sgd<T>::step(const std::vector<Param<T>*>& params, double learning_rate) {
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (auto* p : params) velocity_.emplace_back(p->value.shape());
  }
  const T lr = static_cast<T>(learning_rate);
  const T mu = static_cast<T>(config_.momentum);
  const T wd = static_cast<T>(config_.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<T>& p = *params[i];
    if (velocity_[i].shape() != p.value.shape()) throw InputError("sgd: parameter list changed shape");
    T* w = p.value.data();
    const T* g = p.grad.data();
    T* v = velocity_[i].data();
    const T decay = p.decay ? wd : T(0);
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      v[j] = mu * v[j] + (g[j] + decay * w[j]);
      w[j] -= lr * v[j];
    }
  }
}

template class SiameseModel<float>;
template class SiameseModel<double>;
template class Sgd<float>;
template class Sgd<double>;

}  // namespace relvid::nn
