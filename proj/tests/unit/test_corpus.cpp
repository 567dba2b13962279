#include <gtest/gtest.h>

#include <fstream>

#include "relforge/corpus.hpp"
#include "relforge/errors.hpp"
#include "support.hpp"

using namespace relforge;
using testsupport::fixture;
using testsupport::registry;

namespace {

nlohmann::json minimal_doc() {
  return nlohmann::json::parse(R"({
    "title": "T",
    "sents": [["Anna", "lives", "in", "Rome", "."]],
    "vertexSet": [
      [{"name": "Anna", "pos": [0, 1], "sent_id": 0, "type": "PER"}],
      [{"name": "Rome", "pos": [3, 4], "sent_id": 0, "type": "LOC"}]
    ],
    "labels": [{"r": "P551", "h": 0, "t": 1, "evidence": [0]}]
  })");
}

std::string error_of(const nlohmann::json& root) {
  try {
    parse_corpus(root, registry());
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Corpus, LoadsFixture) {
  auto corpus = testsupport::fixture_corpus();
  ASSERT_EQ(corpus.size(), 5u);
  EXPECT_EQ(corpus[0].title, "Harold Venn");
  EXPECT_EQ(corpus[0].vertex_set.size(), 7u);
  EXPECT_EQ(corpus[0].vertex_set[0].canonical_name, "Harold Venn");
  EXPECT_EQ(corpus[0].vertex_set[0].mentions.size(), 2u);
  EXPECT_EQ(corpus[0].vertex_set[0].entity_type, EntityType::PER);
  EXPECT_TRUE(corpus[0].has_label(0, 1, "P19"));
  EXPECT_FALSE(corpus[0].has_label(1, 0, "P19"));
}

TEST(Corpus, StatsOnFixtureMatchHandCount) {
  auto s = dataset_stats(testsupport::fixture_corpus());
  EXPECT_EQ(s.doc_count, 5u);
  EXPECT_EQ(s.entity_count, 25u);
  EXPECT_EQ(s.triple_count, 12u);
  EXPECT_EQ(s.per_relation.at("P571"), 2u);
  EXPECT_EQ(s.per_relation.at("P17"), 2u);
}

TEST(Corpus, DiffRecoversSupersetAdditions) {
  auto base = testsupport::fixture_corpus();
  auto sup = load_corpus(fixture("corpus5_superset.json"), registry());
  EXPECT_EQ(dataset_stats(sup).triple_count, 15u);
  auto added = diff_triples(sup, base);
  ASSERT_EQ(added.size(), 3u);
  EXPECT_EQ(added[0].title, "Harold Venn");
  EXPECT_EQ(added[0].triple.r, "P22");
  EXPECT_EQ(added[1].title, "Lake Morrow");
  EXPECT_EQ(added[2].title, "Mira Castell");
  EXPECT_TRUE(diff_triples(base, base).empty());
}

TEST(Corpus, DiffRejectsMismatchedTitles) {
  auto base = testsupport::fixture_corpus();
  auto fewer = base;
  fewer.pop_back();
  EXPECT_THROW(diff_triples(base, fewer), DataError);
  EXPECT_THROW(diff_triples(fewer, base), DataError);
}

TEST(Corpus, RoundTripIsByteIdentical) {
  auto corpus = testsupport::fixture_corpus();
  const std::string once = dump_corpus(corpus);
  auto again = parse_corpus(nlohmann::json::parse(once), registry());
  EXPECT_EQ(again, corpus);
  EXPECT_EQ(dump_corpus(again), once);
}

TEST(Corpus, ErrorsNameDocumentAndField) {
  auto doc = minimal_doc();
  EXPECT_EQ(error_of(nlohmann::json::array({doc})), "");

  auto bad = doc;
  bad["labels"][0]["h"] = 5;
  auto root = nlohmann::json::array({doc, bad});
  auto msg = error_of(root);
  EXPECT_NE(msg.find("document 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("labels[0].h"), std::string::npos) << msg;

  bad = doc;
  bad["vertexSet"][1][0]["pos"] = {3, 9};
  EXPECT_NE(error_of(nlohmann::json::array({bad})).find("pos"), std::string::npos);

  bad = doc;
  bad["labels"][0]["r"] = "P9999";
  EXPECT_NE(error_of(nlohmann::json::array({bad})).find("unknown relation"), std::string::npos);

  bad = doc;
  bad["vertexSet"][0][0]["type"] = "ANIMAL";
  EXPECT_NE(error_of(nlohmann::json::array({bad})).find("type"), std::string::npos);

  bad = doc;
  bad.erase("sents");
  EXPECT_NE(error_of(nlohmann::json::array({bad})).find("sents"), std::string::npos);

  bad = doc;
  bad["labels"][0]["t"] = 0;
  EXPECT_NE(error_of(nlohmann::json::array({bad})).find("head equals tail"), std::string::npos);

  EXPECT_THROW(parse_corpus(doc, registry()), DataError);
}

TEST(Corpus, DuplicateLabelsAreDroppedWithWarning) {
  auto doc = minimal_doc();
  doc["labels"].push_back(doc["labels"][0]);
  LoadReport report;
  auto corpus = parse_corpus(nlohmann::json::array({doc}), registry(), &report);
  EXPECT_EQ(corpus[0].labels.size(), 1u);
  EXPECT_EQ(report.duplicate_labels, 1u);
  EXPECT_FALSE(report.warnings.empty());
}

TEST(Corpus, LabelsAreOptional) {
  auto doc = minimal_doc();
  doc.erase("labels");
  auto corpus = parse_corpus(nlohmann::json::array({doc}), registry());
  EXPECT_TRUE(corpus[0].labels.empty());
}

TEST(Corpus, EntityTypeIsMajorityWithFirstSeenTiebreak) {
  Mention a{"Rome", 0, {0, 1}, EntityType::LOC};
  Mention b{"Roma", 1, {0, 1}, EntityType::ORG};
  Mention c{"City of Rome", 2, {0, 3}, EntityType::ORG};
  auto e = make_entity({a, b});
  EXPECT_EQ(e.entity_type, EntityType::LOC);
  EXPECT_EQ(e.canonical_name, "Rome");
  e = make_entity({a, b, c});
  EXPECT_EQ(e.entity_type, EntityType::ORG);
  EXPECT_EQ(e.canonical_name, "City of Rome");
}

TEST(Corpus, SurfaceIndexPrefersLowerEntity) {
  auto doc = testsupport::fixture_corpus()[0];
  auto index = entity_surface_index(doc);
  EXPECT_EQ(index.at("harold venn"), 0);
  EXPECT_EQ(index.at("venn"), 0);
  EXPECT_EQ(index.at("thomas venn"), 3);
  doc.vertex_set[3].mentions.push_back({"Venn", 2, {0, 1}, EntityType::PER});
  EXPECT_EQ(entity_surface_index(doc).at("venn"), 0);
}

TEST(Corpus, DuplicateTitlesRejected) {
  auto corpus = testsupport::fixture_corpus();
  corpus.push_back(corpus[0]);
  EXPECT_THROW(title_index(corpus), DataError);
}

TEST(Corpus, MissingFileIsDataError) {
  EXPECT_THROW(load_corpus("/nonexistent/corpus.json", registry()), DataError);
}
