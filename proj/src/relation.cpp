#include "relvid/relation.hpp"

#include <algorithm>

#include "relvid/error.hpp"

namespace relvid {

namespace {
constexpr std::array<std::string_view, 7> kCodes = {"C_S", "C_V", "C_D", "C_R", "P_I", "P_D", "P_S"};
}

std::string_view to_string(Relation r) noexcept { return kCodes[static_cast<std::size_t>(r)]; }

Relation relation_from_string(std::string_view code) {
  for (std::size_t i = 0; i < kCodes.size(); ++i)
    if (kCodes[i] == code) return kAllRelations[i];
  throw InputError("unknown relation '" + std::string(code) + "'");
}

bool is_cooccurrence(Relation r) noexcept {
  return r == Relation::ShotCooccurrence || r == Relation::VideoCooccurrence || r == Relation::DatasetCooccurrence ||
         r == Relation::RotationCooccurrence;
}

std::vector<Relation> parse_relations(std::string_view list) {
  if (list == "all") return {kAllRelations.begin(), kAllRelations.end()};
  std::vector<Relation> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const std::size_t comma = std::min(list.find(',', pos), list.size());
    std::string_view code = list.substr(pos, comma - pos);
    while (!code.empty() && code.front() == ' ') code.remove_prefix(1);
    while (!code.empty() && code.back() == ' ') code.remove_suffix(1);
    const Relation r = relation_from_string(code);
    if (std::find(out.begin(), out.end(), r) != out.end())
      throw InputError("duplicate relation '" + std::string(code) + "'");
    out.push_back(r);
    pos = comma + 1;
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string format_relations(const std::vector<Relation>& relations) {
  std::string s;
  for (Relation r : relations) {
    if (!s.empty()) s += ',';
    s += to_string(r);
  }
  return s;
}

int class_index(const std::vector<Relation>& relations, Relation r) {
  const auto it = std::find(relations.begin(), relations.end(), r);
  if (it == relations.end()) throw InputError("relation " + std::string(to_string(r)) + " is not active");
  return static_cast<int>(it - relations.begin());
}

}  // namespace relvid
