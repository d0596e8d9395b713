#include "slick/graph.hpp"

#include <algorithm>
#include <stdexcept>

#include "json.hpp"
#include "slick/serialize.hpp"

namespace slick {

using nlohmann::json;

IdPair ordered_pair(PartId a, PartId b) { return a < b ? IdPair{a, b} : IdPair{b, a}; }

bool StructuralPriorGraph::has_part(PartId p) const {
  return std::find(parts.begin(), parts.end(), p) != parts.end();
}

bool StructuralPriorGraph::related(PartId a, PartId b) const {
  const IdPair k = ordered_pair(a, b);
  return adjacency.count(k) > 0 || symmetry.count(k) > 0;
}

void StructuralPriorGraph::add_adjacent(PartId a, PartId b) {
  if (a == b) throw std::invalid_argument("self-edge in adjacency");
  adjacency.insert(ordered_pair(a, b));
}

void StructuralPriorGraph::add_symmetric(PartId a, PartId b) {
  if (a == b) throw std::invalid_argument("self-edge in symmetry");
  symmetry.insert(ordered_pair(a, b));
}

void StructuralPriorGraph::validate() const {
  if (!(bias_pos > 0.0) || !(bias_neg < 0.0)) {
    throw std::invalid_argument("graph bias ordering violated: need bias_pos > 0 > bias_neg");
  }
  auto check = [this](const std::set<IdPair>& edges, const char* name) {
    for (const auto& [a, b] : edges) {
      if (a == b) throw std::invalid_argument(std::string("self-edge in ") + name);
      if (!has_part(a) || !has_part(b)) {
        throw std::invalid_argument(std::string("edge references unknown part id in ") + name);
      }
    }
  };
  check(adjacency, "adjacency");
  check(symmetry, "symmetry");
}

std::vector<IdPair> StructuralPriorGraph::edges() const {
  std::set<IdPair> all = adjacency;
  all.insert(symmetry.begin(), symmetry.end());
  return {all.begin(), all.end()};
}

std::string StructuralPriorGraph::to_json() const {
  json j;
  j["parts"] = parts;
  json adj = json::array();
  for (const auto& [a, b] : adjacency) adj.push_back({a, b});
  json sym = json::array();
  for (const auto& [a, b] : symmetry) sym.push_back({a, b});
  j["adjacency"] = adj;
  j["symmetry"] = sym;
  j["bias_pos"] = bias_pos;
  j["bias_neg"] = bias_neg;
  return j.dump(2) + "\n";
}

StructuralPriorGraph StructuralPriorGraph::from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  StructuralPriorGraph g;
  g.parts = j.at("parts").get<std::vector<PartId>>();
  for (const auto& e : j.at("adjacency")) {
    g.add_adjacent(e.at(0).get<PartId>(), e.at(1).get<PartId>());
  }
  for (const auto& e : j.at("symmetry")) {
    g.add_symmetric(e.at(0).get<PartId>(), e.at(1).get<PartId>());
  }
  g.bias_pos = j.at("bias_pos").get<double>();
  g.bias_neg = j.at("bias_neg").get<double>();
  g.validate();
  return g;
}

void StructuralPriorGraph::save(const std::filesystem::path& path) const {
  write_text_file(path, to_json());
}

StructuralPriorGraph StructuralPriorGraph::load(const std::filesystem::path& path) {
  return from_json(read_text_file(path));
}

}  // namespace slick
