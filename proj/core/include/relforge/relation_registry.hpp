#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "relforge/corpus.hpp"
#include "relforge/proposal.hpp"

namespace relforge {

struct RelationType {
  std::string id;
  std::string name;
  // Contains the placeholders "sub." and "obj." at least once each.
  std::string hypothesis_template;
  // Empty set means unconstrained.
  std::set<EntityType> subject_types;
  std::set<EntityType> object_types;
};

// The predefined relation inventory, in file order. Immutable after
// construction.
class Registry {
 public:
  Registry() = default;
  explicit Registry(std::vector<RelationType> relations);

  std::size_t size() const { return relations_.size(); }
  const std::vector<RelationType>& relations() const { return relations_; }
  const RelationType& at(std::size_t index) const { return relations_.at(index); }

  const RelationType* find(std::string_view id) const;
  // Throws DataError for unknown ids.
  const RelationType& get(std::string_view id) const;
  std::optional<std::size_t> index_of(std::string_view id) const;
  bool contains(std::string_view id) const { return index_of(id).has_value(); }

  // Lookup by normalized (lowercase, trimmed) relation name.
  std::optional<std::string> id_for_name(std::string_view name) const;

  // Returns a copy with the subject/object type sets of `overrides` applied.
  // Relations not mentioned keep their current constraints.
  Registry with_constraints(const std::vector<RelationType>& overrides) const;

 private:
  std::vector<RelationType> relations_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
  std::map<std::string, std::string, std::less<>> by_name_;
};

Registry parse_registry(const nlohmann::json& root);
Registry load_registry(const std::filesystem::path& path);

// Constraint table: same schema as the registry file; only id and the type
// arrays are read.
std::vector<RelationType> load_constraint_table(const std::filesystem::path& path);
nlohmann::ordered_json constraint_table_to_json(const std::vector<RelationType>& table,
                                                const Registry& registry);

// Observed subject/object types per relation over a labelled corpus. Only
// relations appearing in the corpus get an entry.
std::vector<RelationType> derive_type_constraints(const Corpus& corpus,
                                                  const Registry& registry);

enum class Direction { Forward, Inverse };

std::string_view to_string(Direction direction);

struct Hypothesis {
  std::string relation_id;
  std::size_t relation_index = 0;
  Direction direction = Direction::Forward;
  std::string sentence;
};

// "<subject> <relation> <object>." (the period is not doubled).
std::string verbalize_premise(std::string_view subject, std::string_view relation,
                              std::string_view object);
std::string verbalize_premise(const ProposalTriple& proposal);

// Single left-to-right pass over the template replacing each "sub." with the
// subject name and each "obj." with the object name. Substituted text is
// never rescanned.
std::string verbalize_hypothesis(const RelationType& relation, std::string_view subject_name,
                                 std::string_view object_name);

// Two hypotheses per relation in registry order, forward (subject, object)
// then inverse (object, subject).
std::vector<Hypothesis> enumerate_hypotheses(std::string_view subject_name,
                                             std::string_view object_name,
                                             const Registry& registry);
std::vector<Hypothesis> enumerate_hypotheses(const ProposalTriple& proposal,
                                             const Registry& registry);

bool check_type_constraint(const RelationType& relation, EntityType subject_type,
                           EntityType object_type);
// Throws DataError for unknown relation ids.
bool check_type_constraint(const Registry& registry, std::string_view relation_id,
                           EntityType subject_type, EntityType object_type);

}  // namespace relforge
