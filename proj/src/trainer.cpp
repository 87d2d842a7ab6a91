#include "relvid/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "relvid/error.hpp"

namespace relvid {

template <typename T>
nn::Tensor<T> clips_to_tensor(const std::vector<const Clip*>& clips) {
  if (clips.empty()) throw InputError("clips_to_tensor: empty batch");
  const int t_n = static_cast<int>(clips.front()->frames.size());
  if (t_n == 0) throw InputError("clips_to_tensor: clip without frames");
  const int h = clips.front()->frames.front().height, w = clips.front()->frames.front().width;
  nn::Tensor<T> out({static_cast<int>(clips.size()), 3, t_n, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t b = 0; b < clips.size(); ++b) {
    const Clip& clip = *clips[b];
    if (static_cast<int>(clip.frames.size()) != t_n) throw InputError("clips_to_tensor: clip lengths differ");
    for (int t = 0; t < t_n; ++t) {
      const Image& f = clip.frames[static_cast<std::size_t>(t)];
      if (f.height != h || f.width != w) throw InputError("clips_to_tensor: frame sizes differ");
      for (int c = 0; c < 3; ++c) {
        T* dst = out.data() + ((b * 3 + c) * static_cast<std::size_t>(t_n) + t) * plane;
        const std::uint8_t* src = f.pixels.data() + c;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>(src[3 * i] / 127.5 - 1.0);
      }
    }
  }
  return out;
}

std::vector<MaterializedSample> materialize_samples(const std::vector<RelationSample>& samples,
                                                    const std::vector<Relation>& relations,
                                                    const SamplerOptions& options) {
  std::vector<MaterializedSample> out(samples.size());
  std::vector<std::exception_ptr> errors(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < samples.size(); ++i) {
    try {
      out[i].a = materialize_clip(samples[i].clip_a, options);
      out[i].b = materialize_clip(samples[i].clip_b, options);
      out[i].relation = samples[i].label;
      out[i].label = class_index(relations, samples[i].label);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

double learning_rate_at(const TrainConfig& config, int epoch) {
  double lr = config.sgd.learning_rate;
  for (int m : config.lr_milestones)
    if (epoch >= m) lr *= config.lr_gamma;
  return lr;
}

nlohmann::json to_json(const EpochMetrics& m) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [r, acc] : m.per_relation) per[std::string(to_string(r))] = acc;
  return {{"epoch", m.epoch},       {"split", m.split}, {"loss", m.loss}, {"overall_acc", m.accuracy},
          {"per_relation_acc", per}, {"count", m.count}};
}

namespace {

struct Tally {
  double loss = 0.0;
  std::int64_t correct = 0, count = 0;
  std::map<Relation, std::pair<std::int64_t, std::int64_t>> per;  // correct, total

  void add(Relation r, double l, bool ok) {
    loss += l;
    correct += ok;
    ++count;
    auto& p = per[r];
    p.first += ok;
    ++p.second;
  }

  EpochMetrics finish(int epoch, std::string split) const {
    EpochMetrics m;
    m.epoch = epoch;
    m.split = std::move(split);
    m.count = count;
    if (count) {
      m.loss = loss / static_cast<double>(count);
      m.accuracy = static_cast<double>(correct) / static_cast<double>(count);
    }
    for (const auto& [r, p] : per) m.per_relation[r] = static_cast<double>(p.first) / static_cast<double>(p.second);
    return m;
  }
};

template <typename T>
std::vector<double> row(const nn::Tensor<T>& logits, int i) {
  const int c = logits.dim(1);
  const T* p = logits.data() + static_cast<std::size_t>(i) * c;
  return {p, p + c};
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <typename T>
nn::Archive snapshot(const nn::SiameseModel<T>& model, nn::SiameseModel<T>& mutable_model, const nn::Sgd<T>& sgd,
                     int epochs_done, double val_acc, double train_acc) {
  nn::Archive ar;
  ar.meta["kind"] = "siamese";
  ar.meta["epoch"] = epochs_done;
  ar.meta["validation_accuracy"] = val_acc;
  ar.meta["train_accuracy"] = train_acc;
  nn::write_siamese(ar, model);
  nn::write_optimizer(ar, mutable_model.parameters(), sgd);
  return ar;
}

}  // namespace

template <typename T>
StepResult train_step(nn::SiameseModel<T>& model, nn::Sgd<T>& sgd, const std::vector<const MaterializedSample*>& batch,
                      double learning_rate) {
  if (batch.empty()) throw InputError("train_step: empty batch");
  std::vector<const Clip*> ca, cb;
  for (const auto* s : batch) {
    ca.push_back(&s->a);
    cb.push_back(&s->b);
  }
  const auto a = clips_to_tensor<T>(ca);
  const auto b = clips_to_tensor<T>(cb);
  model.zero_grad();
  typename nn::SiameseModel<T>::Tape tape;
  const auto logits = model.forward_pair(a, b, nn::NormMode::Batch, &tape);
  const int n = static_cast<int>(batch.size()), c = model.num_classes();
  nn::Tensor<T> d_logits({n, c});
  StepResult r;
  std::vector<double> grad;
  for (int i = 0; i < n; ++i) {
    const auto lg = row(logits, i);
    for (double v : lg)
      if (!std::isfinite(v)) throw NumericError("train_step: non-finite logits");
    r.losses.push_back(nn::cross_entropy_with_logits(lg, batch[i]->label, &grad));
    r.predictions.push_back(argmax(lg));
    r.loss += r.losses.back();
    r.accuracy += r.predictions.back() == batch[i]->label;
    for (int j = 0; j < c; ++j) d_logits[static_cast<std::size_t>(i) * c + j] = static_cast<T>(grad[j] / n);
  }
  r.loss /= n;
  r.accuracy /= n;
  if (!std::isfinite(r.loss)) throw NumericError("train_step: non-finite loss");
  model.backward(d_logits, tape);
  sgd.step(model.parameters(), learning_rate);
  return r;
}

template <typename T>
EpochMetrics evaluate_samples(nn::SiameseModel<T>& model, const std::vector<MaterializedSample>& samples,
                              int batch_size) {
  Tally tally;
  const std::size_t bs = static_cast<std::size_t>(std::max(batch_size, 1));
  for (std::size_t s = 0; s < samples.size(); s += bs) {
    const std::size_t e = std::min(samples.size(), s + bs);
    std::vector<const Clip*> ca, cb;
    for (std::size_t i = s; i < e; ++i) {
      ca.push_back(&samples[i].a);
      cb.push_back(&samples[i].b);
    }
    const auto logits =
        model.forward_pair(clips_to_tensor<T>(ca), clips_to_tensor<T>(cb), nn::NormMode::Frozen, nullptr);
    for (std::size_t i = s; i < e; ++i) {
      const auto lg = row(logits, static_cast<int>(i - s));
      const double l = nn::cross_entropy_with_logits(lg, samples[i].label);
      tally.add(samples[i].relation, l, argmax(lg) == samples[i].label);
    }
  }
  return tally.finish(0, "eval");
}

template <typename T>
PretrainResult pretrain(const Manifest& manifest, const std::vector<Relation>& relations,
                        const nn::BackboneConfig& backbone, const TrainConfig& config, const SampleIndex* train_index,
                        const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (config.epochs <= 0) throw ConfigError("pretrain: epochs must be positive");
  if (config.batch_size <= 0) throw ConfigError("pretrain: batch size must be positive");
  if (!(config.sgd.learning_rate >= 0) || !(config.sgd.momentum >= 0) || !(config.sgd.weight_decay >= 0))
    throw ConfigError("pretrain: optimizer settings must be non-negative");
  if (relations.empty()) throw ConfigError("pretrain: no relations");
  check_satisfiable(manifest, relations, config.sampler);
  if (train_index && train_index->header.relations != relations)
    throw ConfigError("pretrain: sample index relations " + format_relations(train_index->header.relations) +
                      " differ from " + format_relations(relations));
  if (!train_index && config.train_samples <= 0) throw ConfigError("pretrain: train_samples must be positive");

  PretrainResult result;
  Rng init(derive_seed(config.seed, "init"));
  nn::SiameseModel<T> model(backbone, relations, init);
  nn::Sgd<T> sgd(config.sgd);

  auto draw = [&](std::int64_t count, std::uint64_t seed) {
    SampleIndex idx = build_sample_index(manifest, relations, count, seed, config.sampler);
    for (const auto& [r, n] : idx.fallbacks) result.fallbacks[r] += n;
    return idx.samples;
  };

  const std::int64_t n_train =
      train_index ? static_cast<std::int64_t>(train_index->samples.size()) : config.train_samples;
  if (n_train <= 0) throw ConfigError("pretrain: empty training set");
  const std::int64_t n_val =
      config.validation_samples > 0 ? config.validation_samples : std::max<std::int64_t>(1, (n_train + 9) / 10);
  std::vector<MaterializedSample> train = materialize_samples(
      train_index ? train_index->samples : draw(n_train, derive_seed(config.seed, "train")), relations, config.sampler);
  const std::vector<MaterializedSample> val =
      materialize_samples(draw(n_val, derive_seed(config.seed, "validation")), relations, config.sampler);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.resample_each_epoch && epoch > 0)
      train = materialize_samples(draw(n_train, derive_seed(derive_seed(config.seed, "train"), epoch)), relations,
                                  config.sampler);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(derive_seed(config.seed, "order"), static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i-- > 1;)
      std::swap(order[i], order[static_cast<std::size_t>(uniform_int(shuffle, 0, static_cast<std::int64_t>(i)))]);

    const double lr = learning_rate_at(config, epoch);
    Tally running;
    const std::size_t bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t s = 0, batch = 0; s < order.size(); s += bs, ++batch) {
      std::vector<const MaterializedSample*> items;
      for (std::size_t i = s; i < std::min(order.size(), s + bs); ++i) items.push_back(&train[order[i]]);
      StepResult r;
      try {
        r = train_step(model, sgd, items, lr);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batch) + ", lr " + std::to_string(lr) + ")");
      }
      for (std::size_t i = 0; i < items.size(); ++i)
        running.add(items[i]->relation, r.losses[i], r.predictions[i] == items[i]->label);
    }
    std::vector<EpochMetrics> epoch_metrics;
    epoch_metrics.push_back(running.finish(epoch + 1, "train"));
    double train_acc = epoch_metrics.back().accuracy;
    if (config.evaluate_train) {
      EpochMetrics te = evaluate_samples(model, train, config.batch_size);
      te.epoch = epoch + 1;
      te.split = "train_eval";
      train_acc = te.accuracy;
      epoch_metrics.push_back(te);
    }
    EpochMetrics vm = evaluate_samples(model, val, config.batch_size);
    vm.epoch = epoch + 1;
    vm.split = "val";
    epoch_metrics.push_back(vm);
    for (const auto& m : epoch_metrics) {
      result.history.push_back(m);
      if (on_epoch) on_epoch(m);
    }
    result.epochs_run = epoch + 1;
    if (vm.accuracy > result.best_validation_accuracy) {
      result.best_validation_accuracy = vm.accuracy;
      result.best_epoch = epoch + 1;
      result.best = snapshot(model, model, sgd, epoch + 1, vm.accuracy, train_acc);
    }
    const bool stop = config.stop_train_accuracy && config.stop_validation_accuracy &&
                      train_acc >= *config.stop_train_accuracy && vm.accuracy >= *config.stop_validation_accuracy;
    if (stop || epoch + 1 == config.epochs) {
      result.last = snapshot(model, model, sgd, epoch + 1, vm.accuracy, train_acc);
      break;
    }
  }
  return result;
}

nn::Archive export_single_stack(const nn::Archive& ckpt) {
  if (!ckpt.meta.contains("backbone")) throw InputError("export: checkpoint has no backbone record");
  nn::Archive out;
  for (const auto& [key, value] : ckpt.meta.items())
    if (key != "relations" && key != "optimizer") out.meta[key] = value;
  out.meta["kind"] = "backbone";
  for (const auto& e : ckpt.entries())
    if (e.name.rfind("backbone.", 0) == 0) out.put(e.name, e.shape, e.values);
  return out;
}

namespace {

void append_state(const nn::Tensor<double>& t, std::vector<bool>& out) {
  for (double v : t.storage()) out.push_back(v > 0.0);
}

void append_state(const nn::Backbone<double>::Tape& tape, std::vector<bool>& out) {
  for (const auto& blk : tape.blocks) {
    append_state(blk.c1.mid, out);
    append_state(blk.c2.mid, out);
    append_state(blk.h, out);
    append_state(blk.out, out);
  }
}

}  // namespace

double pair_loss(nn::SiameseModel<double>& model, const nn::Tensor<double>& a, const nn::Tensor<double>& b,
                 const std::vector<int>& labels, std::vector<bool>* relu_state) {
  nn::SiameseModel<double>::Tape tape;
  const auto logits = model.forward_pair(a, b, nn::NormMode::Frozen, relu_state ? &tape : nullptr);
  if (relu_state) {
    relu_state->clear();
    append_state(tape.a, *relu_state);
    append_state(tape.b, *relu_state);
  }
  double loss = 0.0;
  for (int i = 0; i < logits.dim(0); ++i) loss += nn::cross_entropy_with_logits(row(logits, i), labels.at(i));
  return loss / logits.dim(0);
}

GradientCheckResult numeric_gradient_check(nn::SiameseModel<double>& model, const nn::Tensor<double>& a,
                                           const nn::Tensor<double>& b, const std::vector<int>& labels,
                                           int num_parameters, Rng& rng, double step, double floor) {
  if (static_cast<int>(labels.size()) != a.dim(0)) throw InputError("gradient check: one label per pair required");
  model.zero_grad();
  nn::SiameseModel<double>::Tape tape;
  const auto logits = model.forward_pair(a, b, nn::NormMode::Frozen, &tape);
  const int n = logits.dim(0), c = logits.dim(1);
  nn::Tensor<double> d_logits({n, c});
  std::vector<double> grad;
  for (int i = 0; i < n; ++i) {
    nn::cross_entropy_with_logits(row(logits, i), labels[i], &grad);
    for (int j = 0; j < c; ++j) d_logits[static_cast<std::size_t>(i) * c + j] = grad[j] / n;
  }
  model.backward(d_logits, tape);
  tape = {};

  GradientCheckResult res;
  auto params = model.parameters();
  std::vector<bool> state_up, state_down;
  for (int draw = 0; res.checked < num_parameters && draw < 20 * num_parameters; ++draw) {
    auto* p = params[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(params.size()) - 1))];
    const auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(p->value.size()) - 1));
    const double saved = p->value[i];
    std::optional<double> numeric;
    for (double h : {step, step / 10}) {
      p->value[i] = saved + h;
      const double up = pair_loss(model, a, b, labels, &state_up);
      p->value[i] = saved - h;
      const double down = pair_loss(model, a, b, labels, &state_down);
      p->value[i] = saved;
      if (state_up == state_down) {
        numeric = (up - down) / (2 * h);
        break;
      }
      if (h == step) ++res.kink_retries;
    }
    if (!numeric) {
      ++res.skipped;
      continue;
    }
    const double analytic = p->grad[i];
    const double rel = std::abs(analytic - *numeric) / std::max({std::abs(analytic), std::abs(*numeric), floor});
    ++res.checked;
    if (rel > res.max_relative_error || res.worst_parameter.empty()) {
      res.max_relative_error = std::max(res.max_relative_error, rel);
      res.worst_parameter = p->name + "[" + std::to_string(i) + "]";
    }
  }
  return res;
}

#define RELVID_INSTANTIATE(T)                                                                                  \
  template nn::Tensor<T> clips_to_tensor<T>(const std::vector<const Clip*>&);                                  \
  template StepResult train_step<T>(nn::SiameseModel<T>&, nn::Sgd<T>&,                                         \
                                    const std::vector<const MaterializedSample*>&, double);                    \
  template EpochMetrics evaluate_samples<T>(nn::SiameseModel<T>&, const std::vector<MaterializedSample>&, int); \
  template PretrainResult pretrain<T>(const Manifest&, const std::vector<Relation>&, const nn::BackboneConfig&, \
                                      const TrainConfig&, const SampleIndex*,                                  \
                                      const std::function<void(const EpochMetrics&)>&);
RELVID_INSTANTIATE(float)
RELVID_INSTANTIATE(double)
#undef RELVID_INSTANTIATE

}  // namespace relvid
