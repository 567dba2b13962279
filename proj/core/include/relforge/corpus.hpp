#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace relforge {

class Registry;

enum class EntityType { PER, ORG, LOC, TIME, NUM, MISC };

inline constexpr std::size_t kEntityTypeCount = 6;

std::string_view to_string(EntityType type);
std::optional<EntityType> parse_entity_type(std::string_view text);

struct TokenSpan {
  int start = 0;
  int end = 0;  // exclusive

  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct Mention {
  std::string name;
  int sent_id = 0;
  TokenSpan pos;
  EntityType type = EntityType::MISC;

  friend bool operator==(const Mention&, const Mention&) = default;
};

struct Entity {
  std::vector<Mention> mentions;
  EntityType entity_type = EntityType::MISC;
  std::string canonical_name;

  friend bool operator==(const Entity&, const Entity&) = default;
};

// Builds an entity from its mentions, computing the majority type (ties go
// to the type seen first) and the canonical name (longest surface, first on
// ties).
Entity make_entity(std::vector<Mention> mentions);

struct GoldTriple {
  int h = 0;
  int t = 0;
  std::string r;
  std::vector<int> evidence;

  friend bool operator==(const GoldTriple&, const GoldTriple&) = default;
};

struct Document {
  std::string title;
  std::vector<std::vector<std::string>> sents;
  std::vector<Entity> vertex_set;
  std::vector<GoldTriple> labels;

  bool has_label(int h, int t, std::string_view r) const;

  friend bool operator==(const Document&, const Document&) = default;
};

using Corpus = std::vector<Document>;

struct CorpusStats {
  std::size_t doc_count = 0;
  std::size_t entity_count = 0;
  std::size_t triple_count = 0;
  std::map<std::string, std::size_t> per_relation;

  friend bool operator==(const CorpusStats&, const CorpusStats&) = default;
};

// Diagnostics collected while loading; duplicates are dropped, not fatal.
struct LoadReport {
  std::vector<std::string> warnings;
  std::size_t duplicate_labels = 0;
};

// Parses a DocRED-schema JSON array. Every relation id must exist in the
// registry. Throws DataError naming the document index and field on any
// schema or invariant violation.
Corpus parse_corpus(const nlohmann::json& root, const Registry& registry,
                    LoadReport* report = nullptr);
Corpus load_corpus(const std::filesystem::path& path, const Registry& registry,
                   LoadReport* report = nullptr);

nlohmann::ordered_json corpus_to_json(const Corpus& corpus);
// Compact UTF-8 serialization, same field names as the input files.
std::string dump_corpus(const Corpus& corpus);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);

// Throws DataError if any document invariant is violated.
void validate_document(const Document& doc, const Registry& registry,
                       std::size_t index = 0);

CorpusStats dataset_stats(const Corpus& corpus);

struct DocTriple {
  std::string title;
  GoldTriple triple;
};

// Triples in `superset` whose (title, h, t, r) is absent from `base`, in
// superset order. Both corpora must contain the same titles.
std::vector<DocTriple> diff_triples(const Corpus& superset, const Corpus& base);

// Normalized mention surface -> entity index. On collision the lower entity
// index wins.
std::map<std::string, int> entity_surface_index(const Document& doc);

// Sentences joined by single spaces, tokens joined by single spaces.
std::string document_text(const Document& doc);

// Title -> position in corpus. Throws DataError on duplicate titles.
std::map<std::string, std::size_t> title_index(const Corpus& corpus);

}  // namespace relforge
