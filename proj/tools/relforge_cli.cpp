// relforge command-line front end. Exit codes: 0 ok, 1 usage/config,
// 2 data, 3 backend exhaustion.
#include <csignal>
#include <cstdio>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "relforge/annotation_service.hpp"
#include "relforge/corpus.hpp"
#include "relforge/errors.hpp"
#include "relforge/evaluator.hpp"
#include "relforge/merge_pipeline.hpp"
#include "relforge/relation_registry.hpp"
#include "relforge/verification.hpp"

namespace fs = std::filesystem;
using namespace relforge;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitBackend = 3;

struct Common {
  std::string registry;
  std::string constraints;
  std::string log_level = "warn";
};

Registry open_registry(const Common& c) {
  Registry r = load_registry(c.registry.empty() ? default_data_dir() / "relations.json"
                                                : fs::path(c.registry));
  if (!c.constraints.empty()) r = r.with_constraints(load_constraint_table(c.constraints));
  return r;
}

void print_json(const nlohmann::ordered_json& j) { std::cout << j.dump(2) << "\n"; }

void print_stats(const CorpusStats& s, bool per_relation) {
  std::cout << "documents  " << s.doc_count << "\n"
            << "entities   " << s.entity_count << "\n"
            << "triples    " << s.triple_count << "\n";
  if (!per_relation) return;
  for (const auto& [r, n] : s.per_relation) std::printf("  %-8s %zu\n", r.c_str(), n);
}

nlohmann::ordered_json stats_json(const CorpusStats& s) {
  nlohmann::ordered_json j;
  j["documents"] = s.doc_count;
  j["entities"] = s.entity_count;
  j["triples"] = s.triple_count;
  j["per_relation"] = s.per_relation;
  return j;
}

AnnotationServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relation triple augmentation for document-level RE datasets"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--registry", common.registry, "Relation registry JSON (default: shipped)");
  app.add_option("--constraints", common.constraints, "Entity-type constraint table JSON");
  app.add_option("--log-level", common.log_level, "trace|debug|info|warn|error|off")
      ->capture_default_str();

  // run
  auto* run = app.add_subcommand("run", "propose -> align -> merge or task export");
  std::string run_config, run_out, run_mode;
  bool run_force = false;
  run->add_option("--config", run_config, "Pipeline config JSON")->required();
  run->add_option("--output-dir", run_out, "Override output_dir");
  run->add_option("--mode", run_mode, "Override mode (train|test)");
  run->add_flag("--force-distant", run_force, "Merge test-mode candidates without verification");

  // propose
  auto* propose_cmd = app.add_subcommand("propose", "Ask the LLM for candidate triples");
  std::string prop_config, prop_out;
  propose_cmd->add_option("--config", prop_config, "Pipeline config JSON")->required();
  propose_cmd->add_option("--output-dir", prop_out, "Override output_dir");

  // align
  auto* align_cmd = app.add_subcommand("align", "Map proposals to registry relations");
  std::string align_config, align_proposals, align_out;
  align_cmd->add_option("--config", align_config, "Pipeline config JSON")->required();
  align_cmd->add_option("--proposals", align_proposals, "proposals.jsonl")->required();
  align_cmd->add_option("--output-dir", align_out, "Override output_dir");

  // merge
  auto* merge_cmd = app.add_subcommand("merge", "Append candidates to a corpus as distant triples");
  std::string merge_corpus, merge_candidates, merge_out;
  merge_cmd->add_option("--corpus", merge_corpus)->required();
  merge_cmd->add_option("--candidates", merge_candidates)->required();
  merge_cmd->add_option("--output", merge_out)->required();

  // stats
  auto* stats_cmd = app.add_subcommand("stats", "Document, entity and triple counts");
  std::string stats_corpus;
  bool stats_json_out = false, stats_per_rel = false;
  stats_cmd->add_option("corpus", stats_corpus)->required();
  stats_cmd->add_flag("--json", stats_json_out);
  stats_cmd->add_flag("--per-relation", stats_per_rel);

  // diff
  auto* diff_cmd = app.add_subcommand("diff", "Triples present in a superset but not in a base");
  std::string diff_super, diff_base, diff_out;
  diff_cmd->add_option("superset", diff_super)->required();
  diff_cmd->add_option("base", diff_base)->required();
  diff_cmd->add_option("--output", diff_out, "Write the added triples as JSON lines");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Exact-match precision, recall and F1");
  std::string eval_gold, eval_pred;
  std::vector<std::string> eval_subsets;
  bool eval_json = false;
  eval_cmd->add_option("--gold", eval_gold)->required();
  eval_cmd->add_option("--predictions", eval_pred, "JSON lines with title, h, t, r")->required();
  eval_cmd->add_option("--subset", eval_subsets, "name=path of a triple subset for recall");
  eval_cmd->add_flag("--json", eval_json);

  // export-verify
  auto* export_cmd = app.add_subcommand("export-verify", "Build verification tasks from candidates");
  std::string exp_corpus, exp_candidates, exp_out;
  export_cmd->add_option("--corpus", exp_corpus)->required();
  export_cmd->add_option("--candidates", exp_candidates)->required();
  export_cmd->add_option("--output", exp_out)->required();

  // import-verify
  auto* import_cmd =
      app.add_subcommand("import-verify", "Merge candidates accepted by adjudicated decisions");
  std::string imp_corpus, imp_candidates, imp_decisions, imp_store, imp_out;
  import_cmd->add_option("--corpus", imp_corpus)->required();
  import_cmd->add_option("--candidates", imp_candidates)->required();
  auto* imp_dec_opt = import_cmd->add_option("--decisions", imp_decisions, "Decision log JSON lines");
  import_cmd->add_option("--store", imp_store, "SQLite store written by serve")->excludes(imp_dec_opt);
  import_cmd->add_option("--output", imp_out)->required();

  // adjudicate
  auto* adj_cmd = app.add_subcommand("adjudicate", "Resolve decisions and report acceptance");
  std::string adj_decisions, adj_store, adj_tasks, adj_out;
  bool adj_json = false;
  auto* adj_dec_opt = adj_cmd->add_option("--decisions", adj_decisions);
  adj_cmd->add_option("--store", adj_store)->excludes(adj_dec_opt);
  adj_cmd->add_option("--tasks", adj_tasks, "Task file for the per-provenance breakdown");
  adj_cmd->add_option("--output", adj_out, "Write resolved outcomes as JSON lines");
  adj_cmd->add_flag("--json", adj_json);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the annotation service");
  std::string srv_store, srv_tasks, srv_roster, srv_host = "127.0.0.1", srv_ui, srv_cors;
  int srv_port = 8080;
  serve_cmd->add_option("--store", srv_store, "SQLite file")->required();
  serve_cmd->add_option("--tasks", srv_tasks, "Task file to load into the store");
  serve_cmd->add_option("--roster", srv_roster)->required();
  serve_cmd->add_option("--host", srv_host)->capture_default_str();
  serve_cmd->add_option("--port", srv_port)->capture_default_str();
  serve_cmd->add_option("--ui-dir", srv_ui, "Static files served at /");
  serve_cmd->add_option("--cors-origin", srv_cors);

  // derive-constraints
  auto* derive_cmd =
      app.add_subcommand("derive-constraints", "Entity-type table from labelled training data");
  std::string der_corpus, der_out;
  derive_cmd->add_option("--corpus", der_corpus)->required();
  derive_cmd->add_option("--output", der_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(common.log_level));

    if (*run || *propose_cmd || *align_cmd) {
      const std::string& cfg_path = *run ? run_config : *propose_cmd ? prop_config : align_config;
      auto config = load_pipeline_config(cfg_path);
      const std::string& out = *run ? run_out : *propose_cmd ? prop_out : align_out;
      if (!out.empty()) config.output_dir = out;
      if (!common.registry.empty()) config.registry_path = common.registry;
      if (!common.constraints.empty()) config.constraints_path = common.constraints;

      if (*run) {
        if (run_mode == "train") config.mode = RunMode::Train;
        else if (run_mode == "test") config.mode = RunMode::Test;
        else if (!run_mode.empty()) throw UsageError("--mode must be train or test");
        config.force_distant = config.force_distant || run_force;
        auto manifest = run_pipeline(config);
        print_json(manifest_to_json(manifest)["totals"]);
        return backend_failures(manifest) ? kExitBackend : 0;
      }

      auto registry = load_configured_registry(config);
      auto corpus = load_corpus(config.corpus_path, registry);
      fs::create_directories(config.output_dir);

      if (*propose_cmd) {
        auto llm_cfg = config.llm;
        llm_cfg.demonstration = read_text_file(config.demonstration_path.empty()
                                                   ? default_data_dir() / "demonstration.txt"
                                                   : config.demonstration_path);
        llm_cfg.validate();
        auto client = make_llm_client(config);
        BoundedChatClient bounded(*client, llm_cfg.max_in_flight);
        auto stage = propose_corpus(corpus, llm_cfg, bounded, config.workers);
        std::vector<nlohmann::ordered_json> lines, failures;
        fs::create_directories(config.output_dir / "transcripts");
        std::size_t failed = 0;
        for (std::size_t i = 0; i < stage.outcomes.size(); ++i) {
          const auto& o = stage.outcomes[i];
          char name[32];
          std::snprintf(name, sizeof name, "doc-%05zu.json", i);
          write_text_file(config.output_dir / "transcripts" / name,
                          transcript_to_json(o.transcript).dump(2) + "\n");
          for (const auto& p : o.proposals) lines.push_back(proposal_to_json(p));
          if (o.failed) {
            ++failed;
            failures.push_back({{"title", corpus[i].title}, {"error", o.error}});
          }
        }
        write_text_file(config.output_dir / "proposals.jsonl", dump_json_lines(lines));
        write_text_file(config.output_dir / "failures.jsonl", dump_json_lines(failures));
        std::cout << "proposals " << lines.size() << ", failed documents " << failed << "\n";
        return failed ? kExitBackend : 0;
      }

      config.align.validate();
      std::vector<ProposalTriple> proposals;
      for (const auto& j : read_json_lines(align_proposals)) proposals.push_back(proposal_from_json(j));
      auto backend = make_nli_backend(config);
      ScorerGateway scorer(*backend, config.scorer);
      auto stage = align_corpus(corpus, proposals, registry, scorer, config.align, config.workers);
      std::vector<nlohmann::ordered_json> unscored;
      for (const auto& d : stage.documents) {
        for (const auto& p : d.unscored) unscored.push_back(proposal_to_json(p));
      }
      save_candidates(config.output_dir / "candidates.jsonl", stage.candidates);
      write_text_file(config.output_dir / "unscored.jsonl", dump_json_lines(unscored));
      std::cout << "candidates " << stage.candidates.size() << ", unscored " << unscored.size() << "\n";
      return unscored.empty() ? 0 : kExitBackend;
    }

    const Registry registry = open_registry(common);

    if (*merge_cmd) {
      auto corpus = load_corpus(merge_corpus, registry);
      auto merged = merge_into_dataset(corpus, load_candidates(merge_candidates));
      save_corpus(merge_out, merged.corpus);
      std::cout << "added " << merged.added << ", duplicates " << merged.duplicates << "\n";
    } else if (*stats_cmd) {
      auto s = dataset_stats(load_corpus(stats_corpus, registry));
      if (stats_json_out) print_json(stats_json(s));
      else print_stats(s, stats_per_rel);
    } else if (*diff_cmd) {
      auto superset = load_corpus(diff_super, registry);
      auto base = load_corpus(diff_base, registry);
      auto added = diff_triples(superset, base);
      std::cout << "superset triples " << dataset_stats(superset).triple_count << "\n"
                << "base triples     " << dataset_stats(base).triple_count << "\n"
                << "added            " << added.size() << "\n";
      if (!diff_out.empty()) {
        std::vector<nlohmann::ordered_json> lines;
        for (const auto& d : added) {
          lines.push_back({{"title", d.title}, {"h", d.triple.h}, {"t", d.triple.t}, {"r", d.triple.r}});
        }
        write_text_file(diff_out, dump_json_lines(lines));
      }
    } else if (*eval_cmd) {
      auto gold = load_corpus(eval_gold, registry);
      auto predictions = load_predictions(eval_pred);
      auto report = exact_match_prf(predictions, gold);
      for (const auto& spec : eval_subsets) {
        auto eq = spec.find('=');
        if (eq == std::string::npos) throw UsageError("--subset expects name=path");
        report.subset_recalls[spec.substr(0, eq)] =
            recall_on_subset(predictions, load_predictions(spec.substr(eq + 1)));
      }
      if (eval_json) print_json(report_to_json(report));
      else std::cout << render_report_table(report);
    } else if (*export_cmd) {
      auto corpus = load_corpus(exp_corpus, registry);
      auto tasks = export_tasks(load_candidates(exp_candidates), corpus, registry);
      save_tasks(exp_out, tasks);
      std::cout << "tasks " << tasks.size() << "\n";
    } else if (*import_cmd) {
      if (imp_decisions.empty() && imp_store.empty()) throw UsageError("give --decisions or --store");
      std::vector<Decision> decisions;
      if (!imp_store.empty()) decisions = VerificationStore(imp_store).decisions();
      else decisions = load_decisions(imp_decisions);
      auto report = adjudicate(decisions);
      auto corpus = load_corpus(imp_corpus, registry);
      auto applied = apply_verification(corpus, report.outcomes, load_candidates(imp_candidates));
      save_corpus(imp_out, applied.corpus);
      std::cout << "accepted " << applied.accepted << ", rejected " << applied.rejected
                << ", unresolved " << applied.unresolved << ", added " << applied.added << "\n";
    } else if (*adj_cmd) {
      if (adj_decisions.empty() && adj_store.empty()) throw UsageError("give --decisions or --store");
      std::vector<Decision> decisions;
      std::vector<VerificationTask> tasks;
      if (!adj_store.empty()) {
        VerificationStore store(adj_store);
        decisions = store.decisions();
        tasks = store.tasks();
      } else {
        decisions = load_decisions(adj_decisions);
      }
      if (!adj_tasks.empty()) tasks = load_tasks(adj_tasks);
      auto report = adjudicate(decisions);
      auto breakdown = acceptance_by_provenance(report, tasks);
      if (!adj_out.empty()) {
        std::vector<nlohmann::ordered_json> lines;
        for (const auto& o : report.outcomes) {
          lines.push_back({{"task_id", o.task_id},
                           {"verdict", to_string(o.verdict)},
                           {"path", to_string(o.path)}});
        }
        write_text_file(adj_out, dump_json_lines(lines));
      }
      nlohmann::ordered_json j;
      j["resolved"] = report.outcomes.size();
      j["unanimous"] = report.unanimous;
      j["adjudicated"] = report.adjudicated;
      j["conflicted"] = report.conflicted.size();
      j["incomplete"] = report.incomplete.size();
      j["accepted"] = report.accepted;
      j["acceptance_rate"] = format_percent(100.0 * report.acceptance_rate);
      if (!tasks.empty()) {
        j["nli_acceptance_rate"] = format_percent(100.0 * breakdown.nli_rate);
        j["direct_acceptance_rate"] = format_percent(100.0 * breakdown.direct_rate);
      }
      if (adj_json) {
        print_json(j);
      } else {
        for (const auto& [k, v] : j.items()) {
          std::cout << k << " " << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
        }
      }
    } else if (*serve_cmd) {
      VerificationStore store(srv_store);
      if (!srv_tasks.empty()) {
        const auto added = store.add_tasks(load_tasks(srv_tasks));
        spdlog::info("loaded {} new tasks", added);
      }
      AnnotationService service(store, load_roster(srv_roster));
      AnnotationServer server(service, {srv_ui, srv_cors});
      if (!server.bind(srv_host, srv_port)) {
        throw UsageError("cannot bind " + srv_host + ":" + std::to_string(srv_port));
      }
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << srv_host << ":" << srv_port << std::endl;
      server.listen();
      g_server = nullptr;
    } else if (*derive_cmd) {
      auto corpus = load_corpus(der_corpus, registry);
      auto table = derive_type_constraints(corpus, registry);
      write_text_file(der_out, constraint_table_to_json(table, registry).dump(1) + "\n");
      std::cout << "relations " << table.size() << "\n";
    }
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
