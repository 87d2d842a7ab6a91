#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relvid/backbone.hpp"
#include "relvid/siamese.hpp"

namespace relvid::nn {

/// A self-describing parameter archive: magic, length-prefixed JSON header,
/// then float64 little-endian tensor data in header order.
class Archive {
 public:
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;
  };

  nlohmann::json meta = nlohmann::json::object();

  void put(std::string name, std::vector<int> shape, std::vector<double> values);
  template <typename T>
  void put(const std::string& name, const Tensor<T>& t);
  bool contains(const std::string& name) const;
  const Entry& get(const std::string& name) const;
  /// Copies an entry into `t`, which must already have the stored shape.
  template <typename T>
  void get_into(const std::string& name, Tensor<T>& t) const;
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  std::vector<Entry> entries_;
};

nlohmann::json to_json(const BackboneConfig& config);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

/// Parameters plus normalisation running statistics, names prefixed with
/// "backbone.".
template <typename T>
void write_backbone(Archive& ar, const Backbone<T>& backbone);
/// Validates the stored config against the model's before copying.
template <typename T>
void read_backbone(const Archive& ar, Backbone<T>& backbone);

/// Builds a backbone from an archive's config and parameters.
template <typename T>
Backbone<T> load_backbone(const Archive& ar);

template <typename T>
void write_siamese(Archive& ar, const SiameseModel<T>& model);
template <typename T>
SiameseModel<T> load_siamese(const Archive& ar);

template <typename T>
void write_optimizer(Archive& ar, const std::vector<Param<T>*>& params, const Sgd<T>& sgd);
template <typename T>
void read_optimizer(const Archive& ar, const std::vector<Param<T>*>& params, Sgd<T>& sgd);

}  // namespace relvid::nn
