#include "relvid/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "relvid/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace relvid::nn {

namespace {

constexpr char kMagic[8] = {'R', 'L', 'V', 'D', 'C', 'K', 'P', '1'};

static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");

template <typename T>
std::vector<double> widen(const Tensor<T>& t) {
  return {t.storage().begin(), t.storage().end()};
}

}  // namespace

void Archive::put(std::string name, std::vector<int> shape, std::vector<double> values) {
  if (Tensor<double>::count(shape) != values.size()) throw InputError("archive: shape does not match data for " + name);
  if (contains(name)) throw InputError("archive: duplicate entry " + name);
  entries_.push_back({std::move(name), std::move(shape), std::move(values)});
}

template <typename T>
void Archive::put(const std::string& name, const Tensor<T>& t) {
  put(name, t.shape(), widen(t));
}

bool Archive::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const Archive::Entry& Archive::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw InputError("archive: missing entry " + name);
}

template <typename T>
void Archive::get_into(const std::string& name, Tensor<T>& t) const {
  const Entry& e = get(name);
  if (e.shape != t.shape())
    throw InputError("archive: entry " + name + " has shape " + shape_string(e.shape) + ", expected " +
                     shape_string(t.shape()));
  for (std::size_t i = 0; i < e.values.size(); ++i) t[i] = static_cast<T>(e.values[i]);
}

void Archive::save(const fs::path& path) const {
  json header = {{"meta", meta}, {"tensors", json::array()}};
  for (const auto& e : entries_) header["tensors"].push_back({{"name", e.name}, {"shape", e.shape}});
  const std::string h = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot open checkpoint for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = h.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& e : entries_)
    out.write(reinterpret_cast<const char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * 8));
  if (!out) throw IoError(path.string(), "write failed");
}

Archive Archive::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open checkpoint");
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw IoError(path.string(), "not a checkpoint");
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1u << 30))
    throw IoError(path.string(), "corrupt checkpoint header");
  std::string h(len, '\0');
  if (!in.read(h.data(), static_cast<std::streamsize>(len))) throw IoError(path.string(), "truncated checkpoint header");
  Archive ar;
  try {
    const json header = json::parse(h);
    ar.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
      Entry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<std::vector<int>>();
      e.values.resize(Tensor<double>::count(e.shape));
      if (!in.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * 8)))
        throw IoError(path.string(), "truncated tensor data for " + e.name);
      ar.entries_.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw IoError(path.string(), std::string("corrupt checkpoint header: ") + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(path.string(), "trailing bytes after tensor data");
  return ar;
}

json to_json(const BackboneConfig& c) {
  return {{"kind", std::string(to_string(c.kind))},
          {"widths", c.widths},
          {"in_channels", c.in_channels},
          {"input", c.input}};
}

BackboneConfig backbone_config_from_json(const json& j) {
  BackboneConfig c;
  c.kind = backbone_kind_from_string(j.at("kind").get<std::string>());
  c.widths = j.at("widths").get<std::array<int, 5>>();
  c.in_channels = j.at("in_channels").get<int>();
  c.input = j.at("input").get<std::array<int, 3>>();
  c.validate();
  return c;
}

template <typename T>
void write_backbone(Archive& ar, const Backbone<T>& backbone) {
  ar.meta["backbone"] = to_json(backbone.config());
  for (const auto* p : backbone.parameters()) ar.put("backbone." + p->name, p->value);
  for (const auto* n : backbone.norms()) {
    ar.put("backbone." + n->name + ".running_mean", n->running_mean);
    ar.put("backbone." + n->name + ".running_var", n->running_var);
  }
}

template <typename T>
void read_backbone(const Archive& ar, Backbone<T>& backbone) {
  if (!ar.meta.contains("backbone")) throw InputError("checkpoint has no backbone record");
  const BackboneConfig stored = backbone_config_from_json(ar.meta.at("backbone"));
  if (!(stored == backbone.config()))
    throw ConfigError("checkpoint backbone config " + ar.meta.at("backbone").dump() + " differs from model config " +
                      to_json(backbone.config()).dump());
  for (auto* p : backbone.parameters()) ar.get_into("backbone." + p->name, p->value);
  for (auto* n : backbone.norms()) {
    ar.get_into("backbone." + n->name + ".running_mean", n->running_mean);
    ar.get_into("backbone." + n->name + ".running_var", n->running_var);
  }
}

template <typename T>
Backbone<T> load_backbone(const Archive& ar) {
  if (!ar.meta.contains("backbone")) throw InputError("checkpoint has no backbone record");
  Rng rng(0);
  Backbone<T> b(backbone_config_from_json(ar.meta.at("backbone")), rng);
  read_backbone(ar, b);
  return b;
}

template <typename T>
void write_siamese(Archive& ar, const SiameseModel<T>& model) {
  write_backbone(ar, model.backbone());
  ar.meta["relations"] = format_relations(model.relations());
  ar.put("head.weight", model.head().weight.value);
  ar.put("head.bias", model.head().bias.value);
}

template <typename T>
SiameseModel<T> load_siamese(const Archive& ar) {
  if (!ar.meta.contains("relations")) throw InputError("checkpoint has no relation index");
  Rng rng(0);
  SiameseModel<T> m(load_backbone<T>(ar), parse_relations(ar.meta.at("relations").get<std::string>()), rng);
  ar.get_into("head.weight", m.head().weight.value);
  ar.get_into("head.bias", m.head().bias.value);
  return m;
}

template <typename T>
void write_optimizer(Archive& ar, const std::vector<Param<T>*>& params, const Sgd<T>& sgd) {
  ar.meta["optimizer"] = {{"learning_rate", sgd.config().learning_rate},
                          {"momentum", sgd.config().momentum},
                          {"weight_decay", sgd.config().weight_decay}};
  const auto& v = sgd.velocity();
  if (v.empty()) return;
  if (v.size() != params.size()) throw InputError("optimizer state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) ar.put("optim." + params[i]->name, v[i]);
}

template <typename T>
void read_optimizer(const Archive& ar, const std::vector<Param<T>*>& params, Sgd<T>& sgd) {
  if (params.empty() || !ar.contains("optim." + params.front()->name)) return;
  auto& v = sgd.velocity();
  v.clear();
  for (auto* p : params) {
    v.emplace_back(p->value.shape());
    ar.get_into("optim." + p->name, v.back());
  }
}

#define RELVID_INSTANTIATE(T)                                                                  \
  template void Archive::put<T>(const std::string&, const Tensor<T>&);                         \
  template void Archive::get_into<T>(const std::string&, Tensor<T>&) const;                    \
  template void write_backbone<T>(Archive&, const Backbone<T>&);                               \
  template void read_backbone<T>(const Archive&, Backbone<T>&);                                \
  template Backbone<T> load_backbone<T>(const Archive&);                                       \
  template void write_siamese<T>(Archive&, const SiameseModel<T>&);                            \
  template SiameseModel<T> load_siamese<T>(const Archive&);                                    \
  template void write_optimizer<T>(Archive&, const std::vector<Param<T>*>&, const Sgd<T>&);    \
  template void read_optimizer<T>(const Archive&, const std::vector<Param<T>*>&, Sgd<T>&);
RELVID_INSTANTIATE(float)
RELVID_INSTANTIATE(double)
#undef RELVID_INSTANTIATE

}  // namespace relvid::nn
