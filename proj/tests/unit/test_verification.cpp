#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <thread>

#include <sqlite3.h>

#include "oracle.hpp"
#include "relforge/errors.hpp"
#include "relforge/evaluator.hpp"
#include "relforge/verification.hpp"
#include "support.hpp"

using namespace relforge;
using testsupport::registry;

namespace {

const Corpus& corpus() {
  static const Corpus c = testsupport::fixture_corpus();
  return c;
}

Decision dec(std::string task, std::string who, Verdict v, std::int64_t ts,
             AnnotatorRole role = AnnotatorRole::Annotator) {
  return {std::move(task), std::move(who), role, v, ts};
}

std::vector<Decision> to_decisions(const std::vector<oracle::Dec>& in) {
  std::vector<Decision> out;
  for (const auto& d : in) {
    out.push_back({d.task, d.who, d.adjudicator ? AnnotatorRole::Adjudicator : AnnotatorRole::Annotator,
                   d.accept ? Verdict::Accept : Verdict::Reject, d.ts});
  }
  return out;
}

std::vector<AlignedTriple> sample_candidates() {
  return {
      {"Harold Venn", 0, 3, "P22", 0.75, Provenance::Nli, "p", "h"},
      {"Harold Venn", 0, 3, "P22", 0.75, Provenance::Nli, "p", "h"},  // duplicate
      {"Lake Morrow", 0, 2, "P17", 1.0, Provenance::Direct, "p", "h"},
  };
}

constexpr auto A = Verdict::Accept;
constexpr auto R = Verdict::Reject;

}  // namespace

TEST(TaskId, StableDigest) {
  // Frozen from an independent SHA-256 implementation.
  EXPECT_EQ(task_id_for("Harold Venn", 0, 3, "P22"), "809eb4471992777a");
  EXPECT_EQ(task_id_for("Zo\xc3\xab", 1, 0, "P17"), "b2959a73d2595a89");
  EXPECT_NE(task_id_for("Harold Venn", 3, 0, "P22"), task_id_for("Harold Venn", 0, 3, "P22"));
}

TEST(Export, StatementHighlightsAndMarkers) {
  auto tasks = export_tasks(sample_candidates(), corpus(), registry());
  ASSERT_EQ(tasks.size(), 2u);
  const auto& t = tasks[0];
  EXPECT_EQ(t.task_id, "809eb4471992777a");
  EXPECT_EQ(t.relation_name, "father");
  EXPECT_EQ(t.statement, "The father of Harold Venn is Thomas Venn");
  EXPECT_EQ(t.provenance, Provenance::Nli);
  ASSERT_EQ(t.sentences.size(), 3u);
  EXPECT_EQ(t.sentences[0], "Harold Venn was born in Brackley , a town in England .");
  EXPECT_EQ(t.marked_text,
            "[[Harold Venn]] was born in Brackley , a town in England . His father {{Thomas Venn}} "
            "worked for Corvel Motors . [[Venn]] married Edith Lowe in 1921 .");
  // Every highlight slices exactly its mention out of the sentence.
  const auto& d = corpus()[0];
  std::size_t mentions = 0;
  for (const auto& e : d.vertex_set) mentions += e.mentions.size();
  ASSERT_EQ(t.highlights.size(), mentions);
  for (const auto& h : t.highlights) {
    const auto& sent = t.sentences[h.sentence];  // ASCII fixture: bytes == code points
    const std::string slice = sent.substr(h.begin, h.end - h.begin);
    bool found = false;
    for (const auto& m : d.vertex_set[h.entity].mentions) found |= m.sent_id == h.sentence && m.name == slice;
    EXPECT_TRUE(found) << slice;
    EXPECT_EQ(h.role, h.entity == 0 ? "subject" : h.entity == 3 ? "object" : "entity");
  }
  EXPECT_TRUE(std::is_sorted(t.highlights.begin(), t.highlights.end(), [](const auto& a, const auto& b) {
    return std::tie(a.sentence, a.begin) < std::tie(b.sentence, b.begin);
  }));
}

TEST(Export, HighlightsCountCodePoints) {
  Document d;
  d.title = "U";
  d.sents = {{"Zo\xc3\xab", "visited", "M\xc3\xbcnchen", "."}};
  d.vertex_set = {make_entity({{"Zo\xc3\xab", 0, {0, 1}, EntityType::PER}}),
                  make_entity({{"M\xc3\xbcnchen", 0, {2, 3}, EntityType::LOC}})};
  auto tasks = export_tasks({{"U", 0, 1, "P17", 0.7, Provenance::Nli, "", ""}}, {d}, registry());
  ASSERT_EQ(tasks[0].highlights.size(), 2u);
  EXPECT_EQ(tasks[0].highlights[0].begin, 0);
  EXPECT_EQ(tasks[0].highlights[0].end, 3);
  EXPECT_EQ(tasks[0].highlights[1].begin, 12);
  EXPECT_EQ(tasks[0].highlights[1].end, 19);
}

TEST(Export, RejectsUnknownReferences) {
  EXPECT_THROW(export_tasks({{"Nope", 0, 1, "P17", 1, Provenance::Direct, "", ""}}, corpus(), registry()),
               DataError);
  EXPECT_THROW(export_tasks({{"Harold Venn", 0, 0, "P17", 1, Provenance::Direct, "", ""}}, corpus(),
                            registry()),
               DataError);
  EXPECT_THROW(export_tasks({{"Harold Venn", 0, 1, "P0", 1, Provenance::Direct, "", ""}}, corpus(),
                            registry()),
               DataError);
}

TEST(Export, JsonRoundTrip) {
  auto tasks = export_tasks(sample_candidates(), corpus(), registry());
  testsupport::TempDir dir;
  save_tasks(dir / "t.jsonl", tasks);
  auto back = load_tasks(dir / "t.jsonl");
  ASSERT_EQ(back.size(), tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) EXPECT_EQ(task_to_json(back[i]), task_to_json(tasks[i]));
}

TEST(Adjudicate, WorkedExamples) {
  std::vector<Decision> ds = {
      dec("t1", "a", A, 1), dec("t1", "b", A, 2),                        // unanimous accept
      dec("t2", "a", R, 1), dec("t2", "b", R, 2),                        // unanimous reject
      dec("t3", "a", A, 1), dec("t3", "b", R, 2),                        // conflict, no third
      dec("t4", "a", A, 1), dec("t4", "b", R, 2), dec("t4", "c", R, 3),  // third annotator
      dec("t5", "a", A, 1), dec("t5", "b", R, 2), dec("t5", "c", R, 3),
      dec("t5", "x", A, 9, AnnotatorRole::Adjudicator),  // adjudicator outranks annotator c
      dec("t6", "a", A, 1),                              // incomplete
      dec("t7", "c", R, 5), dec("t7", "b", A, 1), dec("t7", "a", A, 1),  // pair is (a, b)
  };
  auto rep = adjudicate(ds);
  ASSERT_EQ(rep.outcomes.size(), 5u);
  EXPECT_EQ(rep.outcomes[0], (AdjudicationOutcome{"t1", A, ResolutionPath::Unanimous}));
  EXPECT_EQ(rep.outcomes[1], (AdjudicationOutcome{"t2", R, ResolutionPath::Unanimous}));
  EXPECT_EQ(rep.outcomes[2], (AdjudicationOutcome{"t4", R, ResolutionPath::Adjudicated}));
  EXPECT_EQ(rep.outcomes[3], (AdjudicationOutcome{"t5", A, ResolutionPath::Adjudicated}));
  EXPECT_EQ(rep.outcomes[4], (AdjudicationOutcome{"t7", A, ResolutionPath::Unanimous}));
  EXPECT_EQ(rep.conflicted, std::vector<std::string>{"t3"});
  EXPECT_EQ(rep.incomplete, std::vector<std::string>{"t6"});
  EXPECT_EQ(rep.unanimous, 3u);
  EXPECT_EQ(rep.adjudicated, 2u);
  EXPECT_EQ(rep.accepted, 3u);
  EXPECT_DOUBLE_EQ(rep.acceptance_rate, 3.0 / 5.0);
}

TEST(Adjudicate, SevenOfTenIsSeventyPercent) {
  std::vector<Decision> ds;
  for (int i = 0; i < 10; ++i) {
    const std::string id = "task-" + std::to_string(i);
    const Verdict v = i < 7 ? A : R;
    if (i % 3 == 0) {
      ds.push_back(dec(id, "a", v, 1));
      ds.push_back(dec(id, "b", v == A ? R : A, 2));
      ds.push_back(dec(id, "z", v, 3, AnnotatorRole::Adjudicator));
    } else {
      ds.push_back(dec(id, "a", v, 1));
      ds.push_back(dec(id, "b", v, 2));
    }
  }
  auto rep = adjudicate(ds);
  EXPECT_EQ(rep.outcomes.size(), 10u);
  EXPECT_EQ(format_percent(100.0 * rep.acceptance_rate), "70.00");
}

TEST(Adjudicate, DuplicatePairRejected) {
  EXPECT_THROW(adjudicate({dec("t", "a", A, 1), dec("t", "a", R, 2)}), DataError);
}

TEST(Adjudicate, RandomSetsFollowTheTwoPlusOneRule) {
  std::mt19937_64 rng(2024);
  for (int round = 0; round < 200; ++round) {
    const int n_tasks = 1 + static_cast<int>(rng() % 12);
    const auto raw = oracle::random_decisions(rng, n_tasks);
    const auto rep = adjudicate(to_decisions(raw));
    std::set<std::string> tasks;
    for (const auto& d : raw) tasks.insert(d.task);
    std::size_t resolved = 0, accepted = 0;
    for (const auto& task : tasks) {
      const auto want = oracle::two_plus_one(raw, task);
      auto it = std::find_if(rep.outcomes.begin(), rep.outcomes.end(),
                             [&](const auto& o) { return o.task_id == task; });
      const bool conflicted = std::count(rep.conflicted.begin(), rep.conflicted.end(), task) > 0;
      const bool incomplete = std::count(rep.incomplete.begin(), rep.incomplete.end(), task) > 0;
      if (want.status == "resolved") {
        ASSERT_NE(it, rep.outcomes.end()) << task;
        EXPECT_EQ(it->verdict == A, want.accept);
        EXPECT_EQ(it->path == ResolutionPath::Adjudicated, want.adjudicated);
        ++resolved;
        accepted += want.accept;
      } else {
        EXPECT_EQ(it, rep.outcomes.end());
        EXPECT_EQ(conflicted, want.status == "conflicted");
        EXPECT_EQ(incomplete, want.status == "open");
      }
    }
    EXPECT_EQ(rep.unanimous + rep.adjudicated, rep.outcomes.size());
    EXPECT_EQ(rep.outcomes.size(), resolved);
    EXPECT_GE(rep.acceptance_rate, 0.0);
    EXPECT_LE(rep.acceptance_rate, 1.0);
    if (resolved) EXPECT_DOUBLE_EQ(rep.acceptance_rate, double(accepted) / double(resolved));
  }
}

TEST(Adjudicate, InputOrderIsIrrelevant) {
  std::mt19937_64 rng(77);
  for (int round = 0; round < 50; ++round) {
    auto ds = to_decisions(oracle::random_decisions(rng, 8));
    const auto first = adjudicate(ds);
    std::shuffle(ds.begin(), ds.end(), rng);
    const auto second = adjudicate(ds);
    EXPECT_EQ(first.outcomes, second.outcomes);
    EXPECT_EQ(first.conflicted, second.conflicted);
  }
}

TEST(Adjudicate, ProvenanceBreakdown) {
  auto tasks = export_tasks(sample_candidates(), corpus(), registry());
  std::vector<Decision> ds;
  for (const auto& t : tasks) {
    ds.push_back(dec(t.task_id, "a", t.provenance == Provenance::Nli ? R : A, 1));
    ds.push_back(dec(t.task_id, "b", t.provenance == Provenance::Nli ? R : A, 2));
  }
  auto b = acceptance_by_provenance(adjudicate(ds), tasks);
  EXPECT_EQ(b.nli_resolved, 1u);
  EXPECT_EQ(b.nli_accepted, 0u);
  EXPECT_EQ(b.direct_resolved, 1u);
  EXPECT_EQ(b.direct_accepted, 1u);
  EXPECT_EQ(b.direct_rate, 1.0);
  EXPECT_EQ(b.nli_rate, 0.0);
}

TEST(Apply, OnlyAcceptedCandidatesEnter) {
  const auto cands = sample_candidates();
  auto tasks = export_tasks(cands, corpus(), registry());
  std::vector<AdjudicationOutcome> outcomes = {{tasks[0].task_id, A, ResolutionPath::Unanimous},
                                               {tasks[1].task_id, R, ResolutionPath::Adjudicated}};
  auto applied = apply_verification(corpus(), outcomes, cands);
  EXPECT_EQ(applied.added, 1u);
  EXPECT_EQ(applied.rejected, 1u);
  EXPECT_TRUE(applied.corpus[0].has_label(0, 3, "P22"));
  EXPECT_FALSE(applied.corpus[1].has_label(0, 2, "P17"));
  EXPECT_EQ(dataset_stats(applied.corpus).triple_count, dataset_stats(corpus()).triple_count + 1);
  auto none = apply_verification(corpus(), {}, cands);
  EXPECT_EQ(none.added, 0u);
  EXPECT_EQ(none.corpus, corpus());
}

TEST(Store, AppendOnlyWithIdempotentReplays) {
  testsupport::TempDir dir;
  const std::string path = (dir / "store.db").string();
  auto tasks = export_tasks(sample_candidates(), corpus(), registry());
  const auto& id = tasks[0].task_id;
  {
    VerificationStore store(path);
    EXPECT_EQ(store.add_tasks(tasks), 2u);
    EXPECT_EQ(store.add_tasks(tasks), 0u);
    EXPECT_EQ(store.status(id), TaskStatus::Open);
    EXPECT_EQ(store.append_decision(dec(id, "a", A, 1), "k1"), AppendResult::Inserted);
    EXPECT_EQ(store.append_decision(dec(id, "a", A, 1), "k1"), AppendResult::Replayed);
    EXPECT_EQ(store.append_decision(dec(id, "a", R, 5), "k2"), AppendResult::Duplicate);
    EXPECT_EQ(store.append_decision(dec(id, "a", R, 5)), AppendResult::Duplicate);
    EXPECT_EQ(store.append_decision(dec(id, "b", R, 2)), AppendResult::Inserted);
    EXPECT_EQ(store.status(id), TaskStatus::Conflicted);
    EXPECT_THROW(store.append_decision(dec("nope", "a", A, 1)), DataError);
  }
  VerificationStore reopened(path);
  EXPECT_EQ(reopened.tasks().size(), 2u);
  EXPECT_EQ(reopened.tasks()[0].status, TaskStatus::Conflicted);
  ASSERT_EQ(reopened.decisions().size(), 2u);
  EXPECT_EQ(reopened.decisions()[0], dec(id, "a", A, 1));
  EXPECT_EQ(reopened.decisions_for(id).size(), 2u);
  reopened.append_decision(dec(id, "adj", A, 9, AnnotatorRole::Adjudicator));
  EXPECT_EQ(reopened.status(id), TaskStatus::Resolved);

  // The log refuses in-place edits even through raw SQL.
  sqlite3* db = nullptr;
  ASSERT_EQ(sqlite3_open(path.c_str(), &db), SQLITE_OK);
  EXPECT_NE(sqlite3_exec(db, "UPDATE decisions SET verdict = 'accept'", nullptr, nullptr, nullptr),
            SQLITE_OK);
  EXPECT_NE(sqlite3_exec(db, "DELETE FROM decisions", nullptr, nullptr, nullptr), SQLITE_OK);
  sqlite3_close(db);
  EXPECT_EQ(reopened.decisions().size(), 3u);
}

TEST(Store, ConcurrentAppendsKeepOneDecisionPerPair) {
  VerificationStore store(":memory:");
  auto tasks = export_tasks(sample_candidates(), corpus(), registry());
  store.add_tasks(tasks);
  std::vector<std::thread> threads;
  std::atomic<int> inserted{0};
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&, i] {
      for (int k = 0; k < 20; ++k) {
        auto r = store.append_decision(dec(tasks[k % 2].task_id, "ann-" + std::to_string(k % 4),
                                           i % 2 ? A : R, i));
        inserted += r == AppendResult::Inserted;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(inserted.load(), 4);
  EXPECT_EQ(store.decisions().size(), 4u);
}

TEST(Decisions, JsonRoundTrip) {
  testsupport::TempDir dir;
  std::vector<Decision> ds = {dec("t1", "a", A, 1), dec("t1", "z", R, 2, AnnotatorRole::Adjudicator)};
  save_decisions(dir / "d.jsonl", ds);
  EXPECT_EQ(load_decisions(dir / "d.jsonl"), ds);
  EXPECT_THROW(decision_from_json(nlohmann::json{{"task_id", "t"}, {"annotator_id", "a"}, {"verdict", "maybe"}}),
               DataError);
}
