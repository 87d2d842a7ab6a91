#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace relvid {

/// Relation between two clips. The enumerator order is the canonical class
/// ordering; an active subset keeps this order, so class indices are the
/// positions within the sorted subset.
enum class Relation {
  ShotCooccurrence,      ///< C_S
  VideoCooccurrence,     ///< C_V
  DatasetCooccurrence,   ///< C_D
  RotationCooccurrence,  ///< C_R
  InvertedPattern,       ///< P_I
  DisorderPattern,       ///< P_D
  SpedUpPattern,         ///< P_S
};

inline constexpr std::array<Relation, 7> kAllRelations = {
    Relation::ShotCooccurrence,  Relation::VideoCooccurrence, Relation::DatasetCooccurrence,
    Relation::RotationCooccurrence, Relation::InvertedPattern, Relation::DisorderPattern,
    Relation::SpedUpPattern};

/// Short code, e.g. "C_S".
std::string_view to_string(Relation r) noexcept;
Relation relation_from_string(std::string_view code);

bool is_cooccurrence(Relation r) noexcept;

/// Parses "C_S,C_V,..." (or "all"). Rejects unknown codes, duplicates and the
/// empty set; returns the codes in canonical order.
std::vector<Relation> parse_relations(std::string_view list);
std::string format_relations(const std::vector<Relation>& relations);

/// Position of `r` in an active set.
int class_index(const std::vector<Relation>& relations, Relation r);

}  // namespace relvid
