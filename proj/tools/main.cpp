// toolgap command-line driver.

#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "toolgap/corpus.hpp"
#include "toolgap/io.hpp"
#include "toolgap/pipeline.hpp"
#include "toolgap/synth.hpp"

namespace {

using namespace toolgap;

// Flags shared by every stage command. Unset flags leave the config alone.
struct StageFlags {
  std::string config;
  std::optional<std::string> model_id, corpus, dump, out_dir, script, grading;
  std::optional<std::size_t> runs;
  std::optional<double> temperature;
  std::optional<std::uint64_t> split_seed;
  std::optional<unsigned> jobs;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config, "JSON config file");
    cmd->add_option("--model-id", model_id, "Model identifier recorded in outputs");
    cmd->add_option("--corpus", corpus, "Corpus JSONL");
    cmd->add_option("--dump", dump, "Hidden-state dump (HSD1)");
    cmd->add_option("--out-dir", out_dir, "Directory for stage outputs");
    cmd->add_option("--script", script, "Mock backend script (selects the mock backend)");
    cmd->add_option("--grading", grading, "Factual grading: choice-match, reference-match, external-judge");
    cmd->add_option("--runs", runs, "No-tool runs per sample (N)");
    cmd->add_option("--temperature", temperature, "Labeling temperature (T)");
    cmd->add_option("--split-seed", split_seed, "Probe train/test split seed");
    cmd->add_option("-j,--jobs", jobs, "Concurrent requests or workers");
  }

  PipelineConfig resolve() const {
    PipelineConfig c = config.empty() ? PipelineConfig{} : load_config(config);
    if (model_id) c.model_id = *model_id;
    if (corpus) c.corpus = *corpus;
    if (dump) c.dump = *dump;
    if (out_dir) c.out_dir = *out_dir;
    if (script) {
      c.backend.kind = "mock";
      c.backend.script = *script;
    }
    if (grading) c.grading = factual_grading_from_string(*grading);
    if (runs) c.labeling.runs = *runs;
    if (temperature) c.labeling.temperature = *temperature;
    if (split_seed) c.probe.split_seed = *split_seed;
    if (jobs) c.jobs = *jobs;
    validate(c);
    return c;
  }
};

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toolgap: tool-necessity diagnostics for language models"};
  app.require_subcommand(1);

  // gen
  std::uint64_t gen_seed = 0;
  std::size_t gen_total = 4000;
  std::string gen_out = "corpus.jsonl";
  std::string gen_template(kDefaultArithmeticTemplate);
  auto* gen = app.add_subcommand("gen", "Generate the synthetic arithmetic corpus");
  gen->add_option("--seed", gen_seed, "RNG seed")->required();
  gen->add_option("--total", gen_total, "Number of expressions (divisible so every family share is whole)");
  gen->add_option("-o,--out", gen_out, "Output corpus JSONL");
  gen->add_option("--template", gen_template, "Prompt template containing {expression}");

  // ingest
  std::string ingest_source, ingest_out = "factual.jsonl", ingest_form = "mc";
  auto* ingest = app.add_subcommand("ingest", "Ingest the TruthfulQA CSV as a factual corpus");
  ingest->add_option("--source", ingest_source, "TruthfulQA CSV")->required();
  ingest->add_option("--form", ingest_form, "mc or generative");
  ingest->add_option("-o,--out", ingest_out, "Output corpus JSONL");

  // synth
  std::string synth_corpus, synth_out = "world";
  WorldSpec spec;
  auto* synth = app.add_subcommand("synth", "Write a scripted mock world (script, planted dump, truth) for a corpus");
  synth->add_option("--corpus", synth_corpus, "Corpus JSONL")->required();
  synth->add_option("--out-dir", synth_out, "Output directory");
  synth->add_option("--seed", spec.seed, "World seed");
  synth->add_option("--model", spec.model, "Model name in the dump header");
  synth->add_option("--dim", spec.dim, "Hidden size");
  synth->add_option("--layers", spec.layers, "Layer count");
  synth->add_option("--runs", spec.runs, "Scripted labeling runs per sample");
  synth->add_option("--necessary-rate", spec.necessary_rate, "P(n = 1)");
  synth->add_option("--stage1-error", spec.stage1_error, "P(z != n)");
  synth->add_option("--stage2-error", spec.stage2_error, "P(a != z)");
  synth->add_option("--transport-failures", spec.transport_failures, "Trailing samples whose requests always fail");

  StageFlags flags;
  std::string probe_target = "both";
  CLI::App* stages[7];
  const char* stage_names[7] = {"label", "collect", "verbal", "probe", "cosine", "diagnose", "report"};
  const char* stage_help[7] = {"Label model-adaptive necessity with N no-tool runs",
                               "Collect greedy tool-call behaviour with tools exposed",
                               "Run the two-stage verbal self-assessment",
                               "Train cognition/action probes over the position x layer grid",
                               "Cosine grid between cognition and action probe directions",
                               "Trace each sample through necessity, cognition and action",
                               "Write category CSV, heatmaps, Sankey, scatter and boundary-order exports"};
  for (int i = 0; i < 7; ++i) {
    stages[i] = app.add_subcommand(stage_names[i], stage_help[i]);
    flags.attach(stages[i]);
  }
  stages[3]->add_option("--target", probe_target, "cognition, action or both");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) {
      const auto corpus = make_arithmetic_corpus(gen_seed, gen_total, gen_template);
      save(corpus, gen_out);
      print({{"stage", "gen"}, {"output", gen_out}, {"samples", corpus.samples.size()}});
    } else if (ingest->parsed()) {
      IngestReport report;
      const auto corpus = ingest_factual(ingest_source, factual_form_from_string(ingest_form), &report);
      save(corpus, ingest_out);
      print({{"stage", "ingest"},
             {"output", ingest_out},
             {"rows", report.rows},
             {"samples", corpus.samples.size()},
             {"skipped", report.skipped},
             {"skipped_rows", report.skipped_rows}});
    } else if (synth->parsed()) {
      const auto corpus = load(synth_corpus);
      const auto world = make_world(corpus, spec);
      write_world(world, synth_out);
      print({{"stage", "synth"}, {"output", synth_out}, {"truth", to_json(world.truth)["categories"]}});
    } else {
      const auto cfg = flags.resolve();
      if (stages[0]->parsed()) print(run_label(cfg));
      if (stages[1]->parsed()) print(run_collect(cfg));
      if (stages[2]->parsed()) print(run_verbal(cfg));
      if (stages[3]->parsed()) print(run_probe(cfg, probe_target));
      if (stages[4]->parsed()) print(run_cosine(cfg));
      if (stages[5]->parsed()) print(run_diagnose(cfg));
      if (stages[6]->parsed()) print(run_report(cfg));
    }
  } catch (const ConfigInvalid& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const MissingStage& e) {
    std::fprintf(stderr, "missing input: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
