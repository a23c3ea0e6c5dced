#include <doctest.h>

#include <fstream>

#include "tmpdir.hpp"
#include "toolgap/diagnose.hpp"
#include "toolgap/io.hpp"
#include "toolgap/pipeline.hpp"
#include "toolgap/synth.hpp"

using namespace toolgap;
namespace fs = std::filesystem;

namespace {

struct MockRun {
  TempDir dir;
  World world;
  PipelineConfig config;
};

// Corpus, synthetic world and a config pointing at them.
std::unique_ptr<MockRun> mock_run(std::size_t samples, std::size_t transport_failures = 0) {
  auto r = std::make_unique<MockRun>();
  const auto corpus = make_arithmetic_corpus(3, samples);
  save(corpus, r->dir / "corpus.jsonl");
  WorldSpec spec;
  spec.seed = 8;
  spec.transport_failures = transport_failures;
  r->world = make_world(corpus, spec);
  write_world(r->world, r->dir.path);
  r->config.corpus = r->dir / "corpus.jsonl";
  r->config.dump = r->dir / "dump.hsd";
  r->config.backend.script = r->dir / "script.jsonl";
  r->config.out_dir = r->dir / "out";
  r->config.retry = {1, std::chrono::milliseconds(0), 1.0};
  r->config.labeling.retry = r->config.retry;
  return r;
}

std::string read(const fs::path& p) { return io::read_file(p); }

}  // namespace

TEST_CASE("config round trip and precedence over defaults") {
  PipelineConfig c;
  c.model_id = "qwen";
  c.backend.kind = "http";
  c.backend.http.endpoint = "http://localhost:1";
  c.corpus = "a.jsonl";
  c.labeling.runs = 5;
  c.labeling.temperature = 0.3;
  c.grading = FactualGrading::ReferenceMatch;
  c.probe.epochs = 50;
  c.probe.split_seed = 9;
  c.jobs = 3;
  const auto back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.labeling.runs == 5);
  CHECK(back.probe.split_seed == 9);

  // Keys left out fall back to defaults.
  const auto partial = config_from_json(json{{"labeling", {{"runs", 4}}}});
  CHECK(partial.labeling.runs == 4);
  CHECK(partial.labeling.temperature == 0.7);
  CHECK(partial.max_tool_rounds == 3);
  CHECK(partial.probe.lr == 0.01);
  CHECK(partial.out_dir == "out");

  TempDir dir;
  io::write_atomic(dir / "c.json", to_json(c).dump());
  CHECK(to_json(load_config(dir / "c.json")) == to_json(c));
  io::write_atomic(dir / "bad.json", "{\"labeling\": {\"runs\": \"ten\"}}");
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigInvalid);
  CHECK_THROWS_AS(load_config(dir / "none.json"), ConfigInvalid);
}

TEST_CASE("config validation") {
  auto check_invalid = [](auto mutate) {
    PipelineConfig c;
    mutate(c);
    CHECK_THROWS_AS(validate(c), ConfigInvalid);
  };
  CHECK_NOTHROW(validate(PipelineConfig{}));
  check_invalid([](PipelineConfig& c) { c.labeling.runs = 0; });
  check_invalid([](PipelineConfig& c) { c.labeling.temperature = -1; });
  check_invalid([](PipelineConfig& c) { c.backend.kind = "grpc"; });
  check_invalid([](PipelineConfig& c) { c.backend.kind = "http"; });
  check_invalid([](PipelineConfig& c) { c.probe.test_fraction = 1.0; });
  check_invalid([](PipelineConfig& c) { c.probe.lr = 0; });
  check_invalid([](PipelineConfig& c) { c.jobs = 0; });
  check_invalid([](PipelineConfig& c) { c.model_id.clear(); });
  check_invalid([](PipelineConfig& c) { c.boundary_models["x"] = "/no/such/file"; });
}

TEST_CASE("stages name the stage that must run first") {
  TempDir dir;
  PipelineConfig c;
  c.out_dir = dir / "out";
  c.corpus = dir / "missing.jsonl";
  c.dump = dir / "missing.hsd";
  CHECK_THROWS_WITH_AS(run_label(c), doctest::Contains("run `gen` or `ingest` first"), MissingStage);
  CHECK_THROWS_WITH_AS(run_probe(c), doctest::Contains("run extractor first"), MissingStage);
  CHECK_THROWS_WITH_AS(run_cosine(c), doctest::Contains("run `probe` first"), MissingStage);
  CHECK_THROWS_WITH_AS(run_diagnose(c), doctest::Contains("run `label` first"), MissingStage);
  CHECK_THROWS_WITH_AS(run_report(c), doctest::Contains("run `diagnose` first"), MissingStage);
  CHECK_THROWS_AS(run_probe(c, "everything"), ConfigInvalid);
}

TEST_CASE("mock pipeline reproduces the planted world") {
  auto run = mock_run(400, 5);
  const auto& c = run->config;
  const auto& truth = run->world.truth;

  CHECK(run_label(c)["complete"] == 395);
  CHECK(run_collect(c)["complete"] == 395);
  run_verbal(c);
  const auto probe = run_probe(c);
  CHECK(probe["action"]["best_test_mcc"].get<double>() == doctest::Approx(1.0));
  run_cosine(c);
  const auto diag = run_diagnose(c);
  CHECK(diag["records"] == 395);
  CHECK(diag["unclassifiable"] == 5);
  CHECK(diag["STAGE2_ONLY"] == truth.traces.stage2_only);

  const auto report = run_report(c);
  CHECK(report["categories"]["N-C"] == truth.categories.n_c);
  CHECK(report["categories"]["N-NC"] == truth.categories.n_nc);
  CHECK(report["categories"]["UN-C"] == truth.categories.un_c);
  CHECK(report["categories"]["UN-NC"] == truth.categories.un_nc);
  CHECK(report["categories"]["unclassifiable"] == 5);
  CHECK(report["mismatch_rate"].get<double>() == truth.categories.mismatch_rate());
  CHECK(report["traces"]["STAGE1_ONLY"] == truth.traces.stage1_only);
  CHECK(report["traces"]["COMPENSATING"] == truth.traces.compensating);
  CHECK(report["boundary_samples"] == 395);
  CHECK(report.contains("verbal"));

  // Per-sample bits match the planted ones.
  const auto set = load_diagnosis(layout(c).diagnosis);
  std::map<std::string, WorldSample> planted;
  for (const auto& s : truth.samples) planted[s.sample_id] = s;
  for (const auto& r : set.records) {
    const auto& s = planted.at(r.sample_id);
    CHECK(r.n == s.n);
    CHECK(r.z == s.z);
    CHECK(r.a == s.a);
  }

  for (const char* f : {"categories.csv", "heatmap_cognition.csv", "heatmap_action.svg", "heatmap_cosine.csv",
                        "sankey.json", "scatter.csv", "boundary_order.json", "boundary_stripes.csv", "summary.json"})
    CHECK(fs::exists(layout(c).report_dir / f));
  const auto sankey = json::parse(read(layout(c).report_dir / "sankey.json"));
  CHECK(sankey["samples"] == 395);

  SUBCASE("rerunning a stage is idempotent and independent of jobs") {
    const auto before = read(layout(c).necessity);
    const auto diag_before = read(layout(c).diagnosis);
    auto c4 = c;
    c4.jobs = 4;
    run_label(c4);
    run_collect(c4);
    run_diagnose(c4);
    CHECK(read(layout(c).necessity) == before);
    CHECK(read(layout(c).diagnosis) == diag_before);
  }
  SUBCASE("a dump missing a labeled sample needs allow_partial") {
    const auto dump = HiddenStateDump::open(c.dump);
    auto header = dump.header();
    header.sample_ids.erase(header.sample_ids.begin());
    std::vector<float> body;
    std::vector<Decision> dec;
    for (std::size_t i = 1; i < dump.samples(); ++i) {
      const auto t = dump.tensor(i);
      body.insert(body.end(), t.begin(), t.end());
      dec.push_back(*dump.decision(i));
    }
    auto cp = c;
    cp.dump = run->dir / "partial.hsd";
    write_dump(cp.dump, header, body, dec);
    CHECK_THROWS_AS(run_probe(cp), MissingGrids);
    cp.allow_partial_dump = true;
    const auto s = run_probe(cp);
    CHECK(s["cognition"]["missing"] == 1);
    CHECK(s["cognition"]["samples"] == 394);
  }
}

TEST_CASE("report refuses an empty diagnosis set") {
  auto run = mock_run(100);
  const auto& c = run->config;
  DiagnosisSet empty;
  empty.unclassifiable = {{"arith-0000", "no hidden-state grid"}};
  save_diagnosis(empty, layout(c).diagnosis);
  CHECK_THROWS_WITH_AS(run_report(c), doctest::Contains("diagnosis set is empty"), std::runtime_error);
}
