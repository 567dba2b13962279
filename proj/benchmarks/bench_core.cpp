#include <benchmark/benchmark.h>

#include <random>
#include <string>

#include "relforge/corpus.hpp"
#include "relforge/llm_proposer.hpp"
#include "relforge/nli_aligner.hpp"
#include "relforge/relation_registry.hpp"
#include "relforge/scorer_gateway.hpp"

using namespace relforge;

namespace {

const std::filesystem::path kData = RELFORGE_BENCH_DATA_DIR;

const Registry& registry() {
  static const Registry r =
      load_registry(kData / "relations.json").with_constraints(load_constraint_table(kData / "type_constraints.json"));
  return r;
}

void BM_FuseScores(benchmark::State& state) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> d(-10, 10);
  std::vector<RawNliLogits> in(1024);
  for (auto& l : in) l = RawNliLogits{{d(rng), d(rng), d(rng), d(rng)}};
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(fuse_scores(in[i++ & 1023]));
  }
}
BENCHMARK(BM_FuseScores);

void BM_EnumerateHypotheses(benchmark::State& state) {
  const auto& reg = registry();
  for (auto _ : state) {
    benchmark::DoNotOptimize(enumerate_hypotheses("Harold Venn", "Thomas Venn", reg));
  }
}
BENCHMARK(BM_EnumerateHypotheses);

void BM_ParseTriples(benchmark::State& state) {
  std::string text;
  for (int i = 0; i < state.range(0); ++i) {
    text += std::to_string(i + 1) + ". (Entity " + std::to_string(i) + ", located in, Place " +
            std::to_string(i % 7) + ")\n";
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(parse_triples(text));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ParseTriples)->Arg(20)->Arg(200);

// Full 192-hypothesis alignment of one proposal with the mock backend.
void BM_AlignMock(benchmark::State& state) {
  const auto corpus = load_corpus(kData / "fixtures" / "corpus5.json", registry());
  const auto& doc = corpus[0];
  ProposalTriple p;
  p.doc_title = doc.title;
  p.subject_surface = "Thomas Venn";
  p.relation_phrase = "is the father of";
  p.object_surface = "Harold Venn";
  const auto linked = link_and_filter({p}, doc);
  MockNliBackend mock;
  ScorerGateway gw(mock, ScorerConfig{});
  for (auto _ : state) {
    benchmark::DoNotOptimize(align(linked.kept.at(0), doc, registry(), gw, AlignConfig{0.6, true}));
  }
}
BENCHMARK(BM_AlignMock);

}  // namespace
BENCHMARK_MAIN();
