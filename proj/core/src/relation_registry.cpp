#include "relforge/relation_registry.hpp"

#include <fstream>

#include "relforge/errors.hpp"
#include "relforge/text.hpp"

namespace relforge {

namespace {

constexpr std::string_view kSubject = "sub.";
constexpr std::string_view kObject = "obj.";

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::set<EntityType> parse_type_set(const nlohmann::json& entry, const char* key,
                                    const std::string& id) {
  std::set<EntityType> out;
  auto it = entry.find(key);
  if (it == entry.end() || it->is_null()) return out;
  if (!it->is_array()) throw DataError("relation " + id + ": '" + key + "' must be an array");
  for (const auto& v : *it) {
    auto type = v.is_string() ? parse_entity_type(v.get<std::string>()) : std::nullopt;
    if (!type) throw DataError("relation " + id + ": bad entity type in '" + key + "'");
    out.insert(*type);
  }
  return out;
}

std::string required_string(const nlohmann::json& entry, const char* key, std::size_t index) {
  auto it = entry.find(key);
  if (it == entry.end() || !it->is_string() || it->get<std::string>().empty()) {
    throw DataError("registry entry " + std::to_string(index) + ": missing '" + key + "'");
  }
  return it->get<std::string>();
}

nlohmann::ordered_json type_array(const std::set<EntityType>& types) {
  auto out = nlohmann::ordered_json::array();
  for (auto t : types) out.push_back(to_string(t));
  return out;
}

}  // namespace

Registry::Registry(std::vector<RelationType> relations) : relations_(std::move(relations)) {
  for (std::size_t i = 0; i < relations_.size(); ++i) {
    const auto& rel = relations_[i];
    if (rel.id.empty()) throw DataError("registry entry " + std::to_string(i) + " has no id");
    if (rel.hypothesis_template.find(kSubject) == std::string::npos) {
      throw DataError("relation " + rel.id + ": template lacks placeholder \"sub.\"");
    }
    if (rel.hypothesis_template.find(kObject) == std::string::npos) {
      throw DataError("relation " + rel.id + ": template lacks placeholder \"obj.\"");
    }
    if (!by_id_.emplace(rel.id, i).second) throw DataError("duplicate relation id " + rel.id);
    if (!by_name_.emplace(normalize_phrase(rel.name), rel.id).second) {
      throw DataError("duplicate relation name '" + rel.name + "'");
    }
  }
}

const RelationType* Registry::find(std::string_view id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &relations_[it->second];
}

const RelationType& Registry::get(std::string_view id) const {
  if (const auto* rel = find(id)) return *rel;
  throw DataError("unknown relation id '" + std::string(id) + "'");
}

std::optional<std::size_t> Registry::index_of(std::string_view id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::string> Registry::id_for_name(std::string_view name) const {
  auto it = by_name_.find(normalize_phrase(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

Registry Registry::with_constraints(const std::vector<RelationType>& overrides) const {
  std::vector<RelationType> copy = relations_;
  for (const auto& o : overrides) {
    auto idx = index_of(o.id);
    if (!idx) throw DataError("constraint table names unknown relation id '" + o.id + "'");
    copy[*idx].subject_types = o.subject_types;
    copy[*idx].object_types = o.object_types;
  }
  return Registry(std::move(copy));
}

Registry parse_registry(const nlohmann::json& root) {
  if (!root.is_array()) throw DataError("registry: expected a JSON array");
  std::vector<RelationType> relations;
  for (std::size_t i = 0; i < root.size(); ++i) {
    const auto& entry = root[i];
    if (!entry.is_object()) throw DataError("registry entry " + std::to_string(i) + " is not an object");
    RelationType rel;
    rel.id = required_string(entry, "id", i);
    rel.name = required_string(entry, "name", i);
    rel.hypothesis_template = required_string(entry, "template", i);
    rel.subject_types = parse_type_set(entry, "subject_types", rel.id);
    rel.object_types = parse_type_set(entry, "object_types", rel.id);
    relations.push_back(std::move(rel));
  }
  return Registry(std::move(relations));
}

Registry load_registry(const std::filesystem::path& path) {
  return parse_registry(read_json_file(path));
}

std::vector<RelationType> load_constraint_table(const std::filesystem::path& path) {
  auto root = read_json_file(path);
  if (!root.is_array()) throw DataError(path.string() + ": expected a JSON array");
  std::vector<RelationType> table;
  for (std::size_t i = 0; i < root.size(); ++i) {
    RelationType rel;
    rel.id = required_string(root[i], "id", i);
    rel.subject_types = parse_type_set(root[i], "subject_types", rel.id);
    rel.object_types = parse_type_set(root[i], "object_types", rel.id);
    table.push_back(std::move(rel));
  }
  return table;
}

nlohmann::ordered_json constraint_table_to_json(const std::vector<RelationType>& table,
                                                const Registry& registry) {
  auto out = nlohmann::ordered_json::array();
  for (const auto& rel : table) {
    nlohmann::ordered_json j;
    j["id"] = rel.id;
    if (const auto* known = registry.find(rel.id)) j["name"] = known->name;
    j["subject_types"] = type_array(rel.subject_types);
    j["object_types"] = type_array(rel.object_types);
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<RelationType> derive_type_constraints(const Corpus& corpus, const Registry& registry) {
  std::vector<RelationType> observed(registry.size());
  std::vector<bool> present(registry.size(), false);
  for (const auto& doc : corpus) {
    for (const auto& label : doc.labels) {
      auto idx = registry.index_of(label.r);
      if (!idx) throw DataError("unknown relation id '" + label.r + "'");
      present[*idx] = true;
      observed[*idx].subject_types.insert(doc.vertex_set.at(label.h).entity_type);
      observed[*idx].object_types.insert(doc.vertex_set.at(label.t).entity_type);
    }
  }
  std::vector<RelationType> table;
  for (std::size_t i = 0; i < registry.size(); ++i) {
    if (!present[i]) continue;
    observed[i].id = registry.at(i).id;
    observed[i].name = registry.at(i).name;
    table.push_back(std::move(observed[i]));
  }
  return table;
}

std::string_view to_string(Direction direction) {
  return direction == Direction::Forward ? "forward" : "inverse";
}

std::string verbalize_premise(std::string_view subject, std::string_view relation,
                              std::string_view object) {
  std::string out;
  out.reserve(subject.size() + relation.size() + object.size() + 3);
  out.append(subject).append(" ").append(relation).append(" ").append(object);
  if (out.back() != '.') out += '.';
  return out;
}

std::string verbalize_premise(const ProposalTriple& proposal) {
  return verbalize_premise(proposal.subject_surface, proposal.relation_phrase,
                           proposal.object_surface);
}

std::string verbalize_hypothesis(const RelationType& relation, std::string_view subject_name,
                                 std::string_view object_name) {
  const std::string& tpl = relation.hypothesis_template;
  std::string out;
  out.reserve(tpl.size() + subject_name.size() + object_name.size());
  for (std::size_t i = 0; i < tpl.size();) {
    if (tpl.compare(i, kSubject.size(), kSubject) == 0) {
      out.append(subject_name);
      i += kSubject.size();
    } else if (tpl.compare(i, kObject.size(), kObject) == 0) {
      out.append(object_name);
      i += kObject.size();
    } else {
      out.push_back(tpl[i++]);
    }
  }
  return out;
}

std::vector<Hypothesis> enumerate_hypotheses(std::string_view subject_name,
                                             std::string_view object_name,
                                             const Registry& registry) {
  std::vector<Hypothesis> out;
  out.reserve(2 * registry.size());
  for (std::size_t i = 0; i < registry.size(); ++i) {
    const auto& rel = registry.at(i);
    out.push_back({rel.id, i, Direction::Forward, verbalize_hypothesis(rel, subject_name, object_name)});
    out.push_back({rel.id, i, Direction::Inverse, verbalize_hypothesis(rel, object_name, subject_name)});
  }
  return out;
}

std::vector<Hypothesis> enumerate_hypotheses(const ProposalTriple& proposal,
                                             const Registry& registry) {
  return enumerate_hypotheses(proposal.subject_surface, proposal.object_surface, registry);
}

bool check_type_constraint(const RelationType& relation, EntityType subject_type,
                           EntityType object_type) {
  const bool subject_ok =
      relation.subject_types.empty() || relation.subject_types.contains(subject_type);
  const bool object_ok = relation.object_types.empty() || relation.object_types.contains(object_type);
  return subject_ok && object_ok;
}

bool check_type_constraint(const Registry& registry, std::string_view relation_id,
                           EntityType subject_type, EntityType object_type) {
  return check_type_constraint(registry.get(relation_id), subject_type, object_type);
}

}  // namespace relforge
