#include "relforge/corpus.hpp"

#include <array>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <spdlog/spdlog.h>

#include "relforge/errors.hpp"
#include "relforge/relation_registry.hpp"
#include "relforge/text.hpp"

namespace relforge {

namespace {

constexpr std::array<std::string_view, kEntityTypeCount> kTypeNames = {"PER", "ORG", "LOC",
                                                                       "TIME", "NUM", "MISC"};

[[noreturn]] void fail(std::size_t doc, const std::string& field, const std::string& what) {
  throw DataError("document " + std::to_string(doc) + ": field '" + field + "': " + what);
}

int get_int(const nlohmann::json& j, std::size_t doc, const std::string& field) {
  if (!j.is_number_integer()) fail(doc, field, "expected an integer");
  return j.get<int>();
}

const nlohmann::json& require(const nlohmann::json& obj, const char* key, std::size_t doc,
                              const std::string& prefix) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(doc, prefix + key, "missing");
  return *it;
}

Mention parse_mention(const nlohmann::json& m, std::size_t doc, const std::string& field) {
  if (!m.is_object()) fail(doc, field, "expected a mention object");
  Mention out;
  const auto& name = require(m, "name", doc, field + ".");
  if (!name.is_string()) fail(doc, field + ".name", "expected a string");
  out.name = name.get<std::string>();
  out.sent_id = get_int(require(m, "sent_id", doc, field + "."), doc, field + ".sent_id");
  const auto& pos = require(m, "pos", doc, field + ".");
  if (!pos.is_array() || pos.size() != 2) fail(doc, field + ".pos", "expected [start, end]");
  out.pos.start = get_int(pos[0], doc, field + ".pos[0]");
  out.pos.end = get_int(pos[1], doc, field + ".pos[1]");
  const auto& type = require(m, "type", doc, field + ".");
  if (!type.is_string()) fail(doc, field + ".type", "expected a string");
  auto parsed = parse_entity_type(type.get<std::string>());
  if (!parsed) fail(doc, field + ".type", "unknown entity type '" + type.get<std::string>() + "'");
  out.type = *parsed;
  return out;
}

Document parse_document(const nlohmann::json& d, std::size_t index) {
  if (!d.is_object()) fail(index, "<root>", "expected a document object");
  Document doc;
  const auto& title = require(d, "title", index, "");
  if (!title.is_string()) fail(index, "title", "expected a string");
  doc.title = title.get<std::string>();

  const auto& sents = require(d, "sents", index, "");
  if (!sents.is_array()) fail(index, "sents", "expected an array of token arrays");
  for (std::size_t s = 0; s < sents.size(); ++s) {
    const auto& sent = sents[s];
    if (!sent.is_array()) fail(index, "sents[" + std::to_string(s) + "]", "expected an array");
    std::vector<std::string> tokens;
    tokens.reserve(sent.size());
    for (const auto& tok : sent) {
      if (!tok.is_string()) fail(index, "sents[" + std::to_string(s) + "]", "non-string token");
      tokens.push_back(tok.get<std::string>());
    }
    doc.sents.push_back(std::move(tokens));
  }

  const auto& vertex_set = require(d, "vertexSet", index, "");
  if (!vertex_set.is_array()) fail(index, "vertexSet", "expected an array");
  for (std::size_t e = 0; e < vertex_set.size(); ++e) {
    const std::string field = "vertexSet[" + std::to_string(e) + "]";
    const auto& mentions = vertex_set[e];
    if (!mentions.is_array() || mentions.empty()) {
      fail(index, field, "expected a non-empty array of mentions");
    }
    std::vector<Mention> parsed;
    for (std::size_t m = 0; m < mentions.size(); ++m) {
      parsed.push_back(parse_mention(mentions[m], index, field + "[" + std::to_string(m) + "]"));
    }
    doc.vertex_set.push_back(make_entity(std::move(parsed)));
  }

  if (auto it = d.find("labels"); it != d.end()) {
    if (!it->is_array()) fail(index, "labels", "expected an array");
    for (std::size_t l = 0; l < it->size(); ++l) {
      const std::string field = "labels[" + std::to_string(l) + "]";
      const auto& label = (*it)[l];
      if (!label.is_object()) fail(index, field, "expected an object");
      GoldTriple triple;
      triple.h = get_int(require(label, "h", index, field + "."), index, field + ".h");
      triple.t = get_int(require(label, "t", index, field + "."), index, field + ".t");
      const auto& r = require(label, "r", index, field + ".");
      if (!r.is_string()) fail(index, field + ".r", "expected a string");
      triple.r = r.get<std::string>();
      if (auto ev = label.find("evidence"); ev != label.end()) {
        if (!ev->is_array()) fail(index, field + ".evidence", "expected an array");
        for (const auto& s : *ev) triple.evidence.push_back(get_int(s, index, field + ".evidence"));
      }
      doc.labels.push_back(std::move(triple));
    }
  }
  return doc;
}

}  // namespace

std::string_view to_string(EntityType type) { return kTypeNames[static_cast<std::size_t>(type)]; }

std::optional<EntityType> parse_entity_type(std::string_view text) {
  for (std::size_t i = 0; i < kTypeNames.size(); ++i) {
    if (kTypeNames[i] == text) return static_cast<EntityType>(i);
  }
  return std::nullopt;
}

Entity make_entity(std::vector<Mention> mentions) {
  Entity entity;
  entity.mentions = std::move(mentions);
  if (entity.mentions.empty()) return entity;

  std::array<int, kEntityTypeCount> counts{};
  std::array<std::size_t, kEntityTypeCount> first_seen;
  first_seen.fill(entity.mentions.size());
  std::size_t longest = 0;
  std::size_t longest_len = 0;
  for (std::size_t i = 0; i < entity.mentions.size(); ++i) {
    const auto& m = entity.mentions[i];
    auto t = static_cast<std::size_t>(m.type);
    ++counts[t];
    if (first_seen[t] == entity.mentions.size()) first_seen[t] = i;
    std::size_t len = utf8_length(m.name);
    if (len > longest_len) {
      longest_len = len;
      longest = i;
    }
  }
  std::size_t best = static_cast<std::size_t>(entity.mentions.front().type);
  for (std::size_t t = 0; t < kEntityTypeCount; ++t) {
    if (counts[t] > counts[best] || (counts[t] == counts[best] && first_seen[t] < first_seen[best])) {
      best = t;
    }
  }
  entity.entity_type = static_cast<EntityType>(best);
  entity.canonical_name = entity.mentions[longest].name;
  return entity;
}

bool Document::has_label(int h, int t, std::string_view r) const {
  for (const auto& label : labels) {
    if (label.h == h && label.t == t && label.r == r) return true;
  }
  return false;
}

void validate_document(const Document& doc, const Registry& registry, std::size_t index) {
  const int n_sents = static_cast<int>(doc.sents.size());
  for (std::size_t e = 0; e < doc.vertex_set.size(); ++e) {
    const auto& entity = doc.vertex_set[e];
    if (entity.mentions.empty()) {
      fail(index, "vertexSet[" + std::to_string(e) + "]", "entity has no mentions");
    }
    for (std::size_t m = 0; m < entity.mentions.size(); ++m) {
      const auto& mention = entity.mentions[m];
      const std::string field =
          "vertexSet[" + std::to_string(e) + "][" + std::to_string(m) + "]";
      if (mention.name.empty()) fail(index, field + ".name", "empty mention name");
      if (mention.sent_id < 0 || mention.sent_id >= n_sents) {
        fail(index, field + ".sent_id",
             "sentence " + std::to_string(mention.sent_id) + " out of range");
      }
      const int n_tokens = static_cast<int>(doc.sents[mention.sent_id].size());
      if (mention.pos.start < 0 || mention.pos.end <= mention.pos.start ||
          mention.pos.end > n_tokens) {
        fail(index, field + ".pos",
             "invalid span [" + std::to_string(mention.pos.start) + ", " +
                 std::to_string(mention.pos.end) + ") for sentence of " +
                 std::to_string(n_tokens) + " tokens");
      }
    }
  }
  const int n_entities = static_cast<int>(doc.vertex_set.size());
  std::set<std::tuple<int, int, std::string>> seen;
  for (std::size_t l = 0; l < doc.labels.size(); ++l) {
    const auto& label = doc.labels[l];
    const std::string field = "labels[" + std::to_string(l) + "]";
    if (label.h < 0 || label.h >= n_entities) fail(index, field + ".h", "entity index out of range");
    if (label.t < 0 || label.t >= n_entities) fail(index, field + ".t", "entity index out of range");
    if (label.h == label.t) fail(index, field, "head equals tail");
    if (!registry.contains(label.r)) {
      fail(index, field + ".r", "unknown relation id '" + label.r + "'");
    }
    for (int s : label.evidence) {
      if (s < 0 || s >= n_sents) fail(index, field + ".evidence", "sentence id out of range");
    }
    if (!seen.emplace(label.h, label.t, label.r).second) {
      fail(index, field, "duplicate (h, t, r)");
    }
  }
}

Corpus parse_corpus(const nlohmann::json& root, const Registry& registry, LoadReport* report) {
  if (!root.is_array()) throw DataError("corpus: expected a top-level array of documents");
  Corpus corpus;
  corpus.reserve(root.size());
  for (std::size_t i = 0; i < root.size(); ++i) {
    Document doc = parse_document(root[i], i);
    // Drop duplicate labels before validation so they warn instead of fail.
    std::set<std::tuple<int, int, std::string>> seen;
    std::vector<GoldTriple> unique;
    for (auto& label : doc.labels) {
      if (seen.emplace(label.h, label.t, label.r).second) {
        unique.push_back(std::move(label));
        continue;
      }
      std::string msg = "document " + std::to_string(i) + " (" + doc.title +
                        "): dropped duplicate label (" + std::to_string(label.h) + ", " +
                        std::to_string(label.t) + ", " + label.r + ")";
      spdlog::warn("{}", msg);
      if (report) {
        report->warnings.push_back(std::move(msg));
        ++report->duplicate_labels;
      }
    }
    doc.labels = std::move(unique);
    validate_document(doc, registry, i);
    corpus.push_back(std::move(doc));
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path, const Registry& registry,
                   LoadReport* report) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read corpus file " + path.string());
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return parse_corpus(root, registry, report);
}

nlohmann::ordered_json corpus_to_json(const Corpus& corpus) {
  auto root = nlohmann::ordered_json::array();
  for (const auto& doc : corpus) {
    nlohmann::ordered_json d;
    auto vertex_set = nlohmann::ordered_json::array();
    for (const auto& entity : doc.vertex_set) {
      auto mentions = nlohmann::ordered_json::array();
      for (const auto& m : entity.mentions) {
        nlohmann::ordered_json mj;
        mj["name"] = m.name;
        mj["pos"] = {m.pos.start, m.pos.end};
        mj["sent_id"] = m.sent_id;
        mj["type"] = to_string(m.type);
        mentions.push_back(std::move(mj));
      }
      vertex_set.push_back(std::move(mentions));
    }
    d["vertexSet"] = std::move(vertex_set);
    auto labels = nlohmann::ordered_json::array();
    for (const auto& l : doc.labels) {
      nlohmann::ordered_json lj;
      lj["r"] = l.r;
      lj["h"] = l.h;
      lj["t"] = l.t;
      lj["evidence"] = l.evidence;
      labels.push_back(std::move(lj));
    }
    d["labels"] = std::move(labels);
    d["title"] = doc.title;
    d["sents"] = doc.sents;
    root.push_back(std::move(d));
  }
  return root;
}

std::string dump_corpus(const Corpus& corpus) { return corpus_to_json(corpus).dump(); }

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << dump_corpus(corpus);
}

CorpusStats dataset_stats(const Corpus& corpus) {
  CorpusStats stats;
  stats.doc_count = corpus.size();
  for (const auto& doc : corpus) {
    stats.entity_count += doc.vertex_set.size();
    stats.triple_count += doc.labels.size();
    for (const auto& label : doc.labels) ++stats.per_relation[label.r];
  }
  return stats;
}

std::map<std::string, std::size_t> title_index(const Corpus& corpus) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!index.emplace(corpus[i].title, i).second) {
      throw DataError("duplicate document title '" + corpus[i].title + "'");
    }
  }
  return index;
}

std::vector<DocTriple> diff_triples(const Corpus& superset, const Corpus& base) {
  const auto base_index = title_index(base);
  const auto super_index = title_index(superset);
  for (const auto& doc : base) {
    if (!super_index.contains(doc.title)) {
      throw DataError("document '" + doc.title + "' present only in the base corpus");
    }
  }
  std::vector<DocTriple> out;
  for (const auto& doc : superset) {
    auto it = base_index.find(doc.title);
    if (it == base_index.end()) {
      throw DataError("document '" + doc.title + "' present only in the superset corpus");
    }
    const Document& other = base[it->second];
    std::set<std::tuple<int, int, std::string>> base_keys;
    for (const auto& l : other.labels) base_keys.emplace(l.h, l.t, l.r);
    for (const auto& l : doc.labels) {
      if (!base_keys.contains({l.h, l.t, l.r})) out.push_back({doc.title, l});
    }
  }
  return out;
}

std::map<std::string, int> entity_surface_index(const Document& doc) {
  std::map<std::string, int> index;
  for (std::size_t e = 0; e < doc.vertex_set.size(); ++e) {
    for (const auto& m : doc.vertex_set[e].mentions) {
      auto key = normalize_surface(m.name);
      if (!key.empty()) index.emplace(std::move(key), static_cast<int>(e));
    }
  }
  return index;
}

std::string document_text(const Document& doc) {
  std::string out;
  for (const auto& sent : doc.sents) {
    for (const auto& tok : sent) {
      if (!out.empty()) out += ' ';
      out += tok;
    }
  }
  return out;
}

}  // namespace relforge
