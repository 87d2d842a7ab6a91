#include "relvid/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "relvid/error.hpp"
#include "relvid/trainer.hpp"

namespace relvid {

std::vector<std::int64_t> uniform_clip_starts(std::int64_t frame_count, int clips, int k) {
  if (clips <= 0 || k <= 0) throw InputError("uniform_clip_starts: clip count and length must be positive");
  if (frame_count < k)
    throw InputError("video has " + std::to_string(frame_count) + " frames, fewer than " + std::to_string(k));
  std::vector<std::int64_t> starts;
  for (int i = 0; i < clips; ++i)
    starts.push_back(clips == 1 ? 0 : static_cast<std::int64_t>(i) * (frame_count - k) / (clips - 1));
  return starts;
}

namespace {

Clip clip_at(const RawVideo& video, std::int64_t start, int crop_y, int crop_x, const SamplerOptions& o) {
  Clip clip;
  clip.plan.video_id = video.video_id;
  clip.plan.source_path = video.source_path.string();
  clip.plan.start_offset = start;
  clip.plan.crop_y = crop_y;
  clip.plan.crop_x = crop_x;
  FrameSequence seq = decode_frames(video, start, start + o.clip_length);
  for (std::int64_t i = 0; i < o.clip_length; ++i) clip.plan.frames.push_back(start + i);
  for (const Image& f : seq.frames) clip.frames.push_back(crop(f, crop_y, crop_x, o.crop_size, o.crop_size));
  return clip;
}

}  // namespace

Clip center_clip(const RawVideo& video, std::int64_t start, const SamplerOptions& o) {
  return clip_at(video, start, (o.frame_height - o.crop_size) / 2, (o.frame_width - o.crop_size) / 2, o);
}

std::vector<Clip> test_clips(const RawVideo& video, const SamplerOptions& o) {
  std::vector<Clip> out;
  for (std::int64_t s : uniform_clip_starts(video.frame_count, kTestClips, o.clip_length))
    out.push_back(center_clip(video, s, o));
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Classifier<T>::Classifier(nn::Backbone<T> backbone, int classes, Rng& rng) : backbone_(std::move(backbone)) {
  if (classes < 2) throw InputError("classifier: need at least 2 classes");
  head_ = nn::Linear<T>("classifier", backbone_.config().feature_dim(), classes);
  head_.init(rng);
}

template <typename T>
nn::Tensor<T> Classifier<T>::forward(const nn::Tensor<T>& clips, nn::NormMode mode, Tape* tape) {
  nn::Tensor<T> f = backbone_.forward(clips, mode, tape ? &tape->stack : nullptr);
  nn::Tensor<T> logits = head_.forward(f);
  if (tape) tape->features = std::move(f);
  return logits;
}

template <typename T>
void Classifier<T>::backward(const nn::Tensor<T>& d_logits, Tape& tape) {
  backbone_.backward(head_.backward(tape.features, d_logits, true), tape.stack);
}

template <typename T>
std::vector<nn::Param<T>*> Classifier<T>::parameters() {
  auto p = backbone_.parameters();
  p.push_back(&head_.weight);
  p.push_back(&head_.bias);
  return p;
}

template <typename T>
void Classifier<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
void write_classifier(nn::Archive& ar, const Classifier<T>& model) {
  nn::write_backbone(ar, model.backbone());
  ar.meta["class_count"] = model.class_count();
  ar.put("classifier.weight", model.head().weight.value);
  ar.put("classifier.bias", model.head().bias.value);
}

template <typename T>
Classifier<T> load_classifier(const nn::Archive& ar) {
  if (!ar.meta.contains("class_count")) throw InputError("checkpoint has no classifier head");
  Rng rng(0);
  Classifier<T> m(nn::load_backbone<T>(ar), ar.meta.at("class_count").get<int>(), rng);
  ar.get_into("classifier.weight", m.head().weight.value);
  ar.get_into("classifier.bias", m.head().bias.value);
  return m;
}

// ---------------------------------------------------------------------------

template <typename T>
FinetuneResult finetune(nn::Backbone<T> backbone, const LabeledVideoDataset& train, const LabeledVideoDataset* test,
                        const FinetuneConfig& config, const std::function<void(const FinetuneEpoch&)>& on_epoch) {
  if (train.videos.empty()) throw InputError("finetune: empty training set");
  if (train.class_count < 2) throw InputError("finetune: class_count must be at least 2");
  if (config.epochs <= 0 || config.batch_size <= 0) throw ConfigError("finetune: epochs and batch size must be positive");
  for (const auto& v : train.videos)
    if (v.label < 0 || v.label >= train.class_count) throw InputError("finetune: label out of range for " + v.video.video_id);

  Rng init(derive_seed(config.seed, "head"));
  Classifier<T> model(std::move(backbone), train.class_count, init);
  nn::Sgd<T> sgd(config.sgd);
  const SamplerOptions& o = config.sampler;
  FinetuneResult result;
  const std::size_t n = train.videos.size();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double lr = config.sgd.learning_rate;
    for (int m : config.lr_milestones)
      if (epoch >= m) lr *= config.lr_gamma;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(derive_seed(config.seed, "order"), static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i-- > 1;)
      std::swap(order[i], order[static_cast<std::size_t>(uniform_int(shuffle, 0, static_cast<std::int64_t>(i)))]);

    std::vector<Clip> clips(n);
    for (std::size_t i = 0; i < n; ++i) {
      const RawVideo& v = train.videos[i].video;
      if (v.frame_count < o.clip_length) throw InputError("finetune: video " + v.video_id + " is shorter than a clip");
      Rng r(derive_seed(derive_seed(config.seed, "clip"), static_cast<std::uint64_t>(epoch) * n + i));
      const auto start = uniform_int(r, 0, v.frame_count - o.clip_length);
      const int y = static_cast<int>(uniform_int(r, 0, o.frame_height - o.crop_size));
      const int x = static_cast<int>(uniform_int(r, 0, o.frame_width - o.crop_size));
      clips[i] = clip_at(v, start, y, x, o);
    }

    FinetuneEpoch ep;
    ep.epoch = epoch + 1;
    std::int64_t correct = 0;
    for (std::size_t s = 0; s < n; s += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t e = std::min(n, s + static_cast<std::size_t>(config.batch_size));
      std::vector<const Clip*> batch;
      for (std::size_t i = s; i < e; ++i) batch.push_back(&clips[order[i]]);
      const int b = static_cast<int>(batch.size()), c = model.class_count();
      model.zero_grad();
      typename Classifier<T>::Tape tape;
      const auto logits = model.forward(clips_to_tensor<T>(batch), nn::NormMode::Batch, &tape);
      nn::Tensor<T> d({b, c});
      std::vector<double> grad;
      for (int i = 0; i < b; ++i) {
        const int label = train.videos[order[s + static_cast<std::size_t>(i)]].label;
        const T* row = logits.data() + static_cast<std::size_t>(i) * c;
        const std::vector<double> lg(row, row + c);
        const double l = nn::cross_entropy_with_logits(lg, label, &grad);
        if (!std::isfinite(l))
          throw NumericError("finetune: non-finite loss (epoch " + std::to_string(epoch + 1) + ", lr " +
                             std::to_string(lr) + ")");
        ep.loss += l;
        correct += std::max_element(lg.begin(), lg.end()) - lg.begin() == label;
        for (int j = 0; j < c; ++j) d[static_cast<std::size_t>(i) * c + j] = static_cast<T>(grad[j] / b);
      }
      model.backward(d, tape);
      sgd.step(model.parameters(), lr);
    }
    ep.loss /= static_cast<double>(n);
    ep.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (test && config.evaluate_each_epoch) ep.test_accuracy = evaluate_classifier(model, *test, o);
    result.history.push_back(ep);
    result.epochs_run = epoch + 1;
    if (on_epoch) on_epoch(ep);
    if (config.stop_test_accuracy && ep.test_accuracy && *ep.test_accuracy >= *config.stop_test_accuracy) break;
  }
  if (test) {
    result.final_test_accuracy = result.history.back().test_accuracy ? *result.history.back().test_accuracy
                                                                     : evaluate_classifier(model, *test, o);
  }
  result.checkpoint.meta["kind"] = "classifier";
  result.checkpoint.meta["epoch"] = result.epochs_run;
  result.checkpoint.meta["test_accuracy"] = result.final_test_accuracy;
  write_classifier(result.checkpoint, model);
  return result;
}

template <typename T>
std::vector<double> predict_probabilities(Classifier<T>& model, const RawVideo& video, const SamplerOptions& options) {
  const auto clips = test_clips(video, options);
  std::vector<const Clip*> ptrs;
  for (const auto& c : clips) ptrs.push_back(&c);
  const auto logits = model.forward(clips_to_tensor<T>(ptrs), nn::NormMode::Frozen);
  const int c = model.class_count();
  std::vector<double> avg(static_cast<std::size_t>(c), 0.0);
  for (int i = 0; i < logits.dim(0); ++i) {
    const T* row = logits.data() + static_cast<std::size_t>(i) * c;
    const auto p = nn::softmax(std::vector<double>(row, row + c));
    for (int j = 0; j < c; ++j) avg[j] += p[j] / logits.dim(0);
  }
  return avg;
}

template <typename T>
int predict_video(Classifier<T>& model, const RawVideo& video, const SamplerOptions& options) {
  const auto p = predict_probabilities(model, video, options);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

template <typename T>
double evaluate_classifier(Classifier<T>& model, const LabeledVideoDataset& dataset, const SamplerOptions& options) {
  if (dataset.videos.empty()) throw InputError("evaluate_classifier: empty dataset");
  std::int64_t correct = 0;
  for (const auto& v : dataset.videos) correct += predict_video(model, v.video, options) == v.label;
  return static_cast<double>(correct) / static_cast<double>(dataset.videos.size());
}

// ---------------------------------------------------------------------------

template <typename T>
VideoDescriptor extract_descriptor(nn::Backbone<T>& backbone, const RawVideo& video, int label,
                                   const SamplerOptions& options) {
  const auto clips = test_clips(video, options);
  std::vector<const Clip*> ptrs;
  for (const auto& c : clips) ptrs.push_back(&c);
  const auto f = backbone.forward(clips_to_tensor<T>(ptrs), nn::NormMode::Frozen);
  VideoDescriptor d;
  d.video_id = video.video_id;
  d.label = label;
  const int dim = f.dim(1);
  d.vector.assign(static_cast<std::size_t>(dim), 0.0);
  for (int i = 0; i < f.dim(0); ++i) {
    const T* row = f.data() + static_cast<std::size_t>(i) * dim;
    d.clip_vectors.emplace_back(row, row + dim);
    for (int j = 0; j < dim; ++j) d.vector[j] += row[j];
  }
  for (double& v : d.vector) v /= f.dim(0);
  return d;
}

template <typename T>
std::vector<VideoDescriptor> extract_descriptors(nn::Backbone<T>& backbone, const LabeledVideoDataset& dataset,
                                                 const SamplerOptions& options) {
  std::vector<VideoDescriptor> out;
  out.reserve(dataset.videos.size());
  for (const auto& v : dataset.videos) out.push_back(extract_descriptor(backbone, v.video, v.label, options));
  return out;
}

namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b, DistanceMetric metric) {
  if (metric == DistanceMetric::Euclidean) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / std::sqrt(na * nb);
}

struct Item {
  const std::vector<double>* v;
  int label;
};

std::vector<Item> items(const std::vector<VideoDescriptor>& ds, RetrievalMode mode) {
  std::vector<Item> out;
  for (const auto& d : ds) {
    if (mode == RetrievalMode::Video) {
      out.push_back({&d.vector, d.label});
    } else {
      for (const auto& c : d.clip_vectors) out.push_back({&c, d.label});
    }
  }
  return out;
}

}  // namespace

RetrievalResult retrieve(const std::vector<VideoDescriptor>& test, const std::vector<VideoDescriptor>& train,
                         const RetrievalOptions& options) {
  if (test.empty() || train.empty()) throw InputError("retrieve: empty descriptor set");
  if (options.ks.empty()) throw InputError("retrieve: no k values");
  for (int k : options.ks)
    if (k <= 0) throw InputError("retrieve: k must be positive");
  const std::size_t dim = train.front().vector.size();
  for (const auto* set : {&test, &train})
    for (const auto& d : *set) {
      if (d.vector.size() != dim) throw InputError("retrieve: descriptor dimension mismatch for " + d.video_id);
      for (const auto& c : d.clip_vectors)
        if (c.size() != dim) throw InputError("retrieve: clip descriptor dimension mismatch for " + d.video_id);
    }
  const auto queries = items(test, options.mode);
  const auto base = items(train, options.mode);
  if (queries.empty() || base.empty()) throw InputError("retrieve: no clip descriptors");

  std::map<int, std::int64_t> hits;
  std::vector<double> dist(base.size());
  std::vector<std::size_t> order(base.size());
  for (const Item& q : queries) {
    for (std::size_t j = 0; j < base.size(); ++j) dist[j] = distance(*q.v, *base[j].v, options.metric);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    // Rank of the first same-class neighbour decides every k at once.
    std::size_t first = base.size();
    for (std::size_t r = 0; r < order.size(); ++r)
      if (base[order[r]].label == q.label) {
        first = r;
        break;
      }
    for (int k : options.ks) hits[k] += first < static_cast<std::size_t>(k);
  }
  RetrievalResult res;
  res.queries = static_cast<std::int64_t>(queries.size());
  for (int k : options.ks) res.top_k[k] = static_cast<double>(hits[k]) / static_cast<double>(queries.size());
  return res;
}

std::string format_retrieval_table(const std::vector<std::pair<std::string, RetrievalResult>>& rows) {
  std::ostringstream os;
  if (rows.empty()) return "method\n";
  os << "method";
  for (const auto& [k, acc] : rows.front().second.top_k) os << ",top" << k;
  os << "\n";
  os.setf(std::ios::fixed);
  os.precision(4);
  for (const auto& [name, r] : rows) {
    os << name;
    for (const auto& [k, acc] : r.top_k) os << "," << acc;
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------

PcaResult pca_embed(const Eigen::MatrixXd& features, int target_dim) {
  const auto n = features.rows();
  const auto f = features.cols();
  if (n < 2) throw InputError("pca_embed: need at least 2 samples");
  if (target_dim <= 0 || target_dim > f) throw InputError("pca_embed: target dimension out of range");
  if (!features.allFinite()) throw InputError("pca_embed: non-finite features");
  PcaResult r;
  r.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centred = features.rowwise() - r.mean.transpose();
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericError("pca_embed: eigen decomposition failed");
  const double total = std::max(es.eigenvalues().sum(), 0.0);
  r.components.resize(target_dim, f);
  r.explained_variance.resize(target_dim);
  r.explained_ratio.resize(target_dim);
  for (int i = 0; i < target_dim; ++i) {
    const auto col = f - 1 - i;  // eigenvalues ascend
    Eigen::VectorXd axis = es.eigenvectors().col(col);
    Eigen::Index arg;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0) axis = -axis;
    r.components.row(i) = axis.transpose();
    r.explained_variance(i) = std::max(es.eigenvalues()(col), 0.0);
    r.explained_ratio(i) = total > 0 ? r.explained_variance(i) / total : 0.0;
  }
  r.coordinates = centred * r.components.transpose();
  return r;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
nn::Tensor<double> attention_impl(const nn::Tensor<T>& a) {
  if (a.rank() != 4 || a.empty()) throw InputError("attention_map: expected non-empty (C, T, H, W) activations");
  const int c_n = a.dim(0), t_n = a.dim(1), h = a.dim(2), w = a.dim(3);
  const std::size_t frame = static_cast<std::size_t>(h) * w;
  nn::Tensor<double> m({t_n, h, w});
  for (int c = 0; c < c_n; ++c) {
    const T* p = a.data() + static_cast<std::size_t>(c) * t_n * frame;
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += std::abs(static_cast<double>(p[i]));
  }
  for (int t = 0; t < t_n; ++t) {
    double* f = m.data() + static_cast<std::size_t>(t) * frame;
    const auto [lo, hi] = std::minmax_element(f, f + frame);
    const double lo_v = *lo, range = *hi - *lo;
    if (!(range > 1e-12 * std::max(1.0, std::abs(*hi)))) {
      std::fill(f, f + frame, 0.0);
      continue;
    }
    for (std::size_t i = 0; i < frame; ++i) f[i] = std::clamp((f[i] - lo_v) / range, 0.0, 1.0);
  }
  return m;
}

}  // namespace

nn::Tensor<double> attention_map(const nn::Tensor<float>& a) { return attention_impl(a); }
nn::Tensor<double> attention_map(const nn::Tensor<double>& a) { return attention_impl(a); }

Image attention_overlay(const Image& frame, const nn::Tensor<double>& maps, int t) {
  if (maps.rank() != 3 || t < 0 || t >= maps.dim(0)) throw InputError("attention_overlay: frame index out of range");
  const int h = maps.dim(1), w = maps.dim(2);
  cv::Mat small(h, w, CV_64F, const_cast<double*>(maps.data() + static_cast<std::size_t>(t) * h * w));
  cv::Mat big;
  cv::resize(small, big, cv::Size(frame.width, frame.height), 0, 0, cv::INTER_LINEAR);
  Image out = frame;
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x) {
      const double v = std::clamp(big.at<double>(y, x), 0.0, 1.0);
      const double heat[3] = {v, 1.0 - std::abs(2.0 * v - 1.0), 1.0 - v};
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(0.5 * frame.at(y, x, c) + 0.5 * 255.0 * heat[c]));
    }
  return out;
}

void write_embedding_svg(const std::filesystem::path& path, const Eigen::MatrixXd& coords,
                         const std::vector<int>& labels, const std::vector<std::string>& names) {
  if (coords.cols() < 2) throw InputError("write_embedding_svg: need 2-D coordinates");
  if (static_cast<Eigen::Index>(labels.size()) != coords.rows()) throw InputError("write_embedding_svg: one label per point");
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  const double size = 480, margin = 40;
  const double x0 = coords.col(0).minCoeff(), x1 = coords.col(0).maxCoeff();
  const double y0 = coords.col(1).minCoeff(), y1 = coords.col(1).maxCoeff();
  const double sx = x1 > x0 ? (size - 2 * margin) / (x1 - x0) : 0, sy = y1 > y0 ? (size - 2 * margin) / (y1 - y0) : 0;
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot open plot for writing");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    const double x = margin + (coords(i, 0) - x0) * sx, y = size - margin - (coords(i, 1) - y0) * sy;
    const int l = labels[static_cast<std::size_t>(i)];
    out << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"4\" fill=\"" << palette[((l % 10) + 10) % 10]
        << "\"><title>" << (static_cast<std::size_t>(i) < names.size() ? names[i] : std::to_string(i)) << " (" << l
        << ")</title></circle>\n";
  }
  out << "<text x=\"" << margin << "\" y=\"" << size - 10 << "\" font-size=\"12\">PC1</text>\n"
      << "<text x=\"8\" y=\"" << margin << "\" font-size=\"12\">PC2</text>\n</svg>\n";
  if (!out) throw IoError(path.string(), "write failed");
}

#define RELVID_INSTANTIATE(T)                                                                                      \
  template class Classifier<T>;                                                                                    \
  template void write_classifier<T>(nn::Archive&, const Classifier<T>&);                                           \
  template Classifier<T> load_classifier<T>(const nn::Archive&);                                                   \
  template FinetuneResult finetune<T>(nn::Backbone<T>, const LabeledVideoDataset&, const LabeledVideoDataset*,     \
                                      const FinetuneConfig&, const std::function<void(const FinetuneEpoch&)>&);    \
  template std::vector<double> predict_probabilities<T>(Classifier<T>&, const RawVideo&, const SamplerOptions&);   \
  template int predict_video<T>(Classifier<T>&, const RawVideo&, const SamplerOptions&);                           \
  template double evaluate_classifier<T>(Classifier<T>&, const LabeledVideoDataset&, const SamplerOptions&);       \
  template VideoDescriptor extract_descriptor<T>(nn::Backbone<T>&, const RawVideo&, int, const SamplerOptions&);   \
  template std::vector<VideoDescriptor> extract_descriptors<T>(nn::Backbone<T>&, const LabeledVideoDataset&,      \
                                                               const SamplerOptions&);
RELVID_INSTANTIATE(float)
RELVID_INSTANTIATE(double)
#undef RELVID_INSTANTIATE

}  // namespace relvid
