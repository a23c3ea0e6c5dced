#include "toolgap/pipeline.hpp"

#include <cstdlib>
#include <set>
#include <unordered_map>

#include "toolgap/collector.hpp"
#include "toolgap/diagnose.hpp"
#include "toolgap/io.hpp"
#include "toolgap/mock_backend.hpp"
#include "toolgap/parallel.hpp"

namespace toolgap {

namespace fs = std::filesystem;

namespace {

BackendSpec backend_from_json(const json& j) {
  BackendSpec b;
  b.kind = j.value("kind", b.kind);
  b.script = j.value("script", std::string());
  auto& h = b.http;
  h.endpoint = j.value("endpoint", h.endpoint);
  h.path = j.value("path", h.path);
  h.model = j.value("model", h.model);
  h.model_family = j.value("model_family", h.model_family);
  h.top_logprobs = j.value("top_logprobs", h.top_logprobs);
  h.max_tokens = j.value("max_tokens", h.max_tokens);
  h.timeout_seconds = j.value("timeout_seconds", h.timeout_seconds);
  if (j.contains("trigger_texts"))
    h.triggers.token_texts = j["trigger_texts"].get<std::map<std::string, std::vector<std::string>>>();
  if (j.contains("trigger_ids"))
    h.triggers.token_ids = j["trigger_ids"].get<std::map<std::string, std::vector<std::size_t>>>();
  return b;
}

json backend_to_json(const BackendSpec& b) {
  json j;
  j["kind"] = b.kind;
  if (b.kind == "mock") {
    j["script"] = b.script.string();
    return j;
  }
  j["endpoint"] = b.http.endpoint;
  j["path"] = b.http.path;
  j["model"] = b.http.model;
  j["model_family"] = b.http.model_family;
  j["top_logprobs"] = b.http.top_logprobs;
  j["max_tokens"] = b.http.max_tokens;
  j["timeout_seconds"] = b.http.timeout_seconds;
  j["trigger_texts"] = b.http.triggers.token_texts;
  j["trigger_ids"] = b.http.triggers.token_ids;
  return j;
}

void require(const fs::path& path, const std::string& what, const std::string& remedy) {
  if (path.empty() || !fs::exists(path))
    throw MissingStage(what + " not found" + (path.empty() ? std::string() : " at " + path.string()) + "; " + remedy);
}

Corpus load_corpus(const PipelineConfig& c) {
  require(c.corpus, "corpus", "run `gen` or `ingest` first");
  auto corpus = load(c.corpus);
  if (corpus.samples.empty()) throw std::runtime_error("corpus " + c.corpus.string() + " is empty");
  return corpus;
}

std::vector<NecessityRecord> load_necessity_stage(const PipelineConfig& c) {
  const auto p = layout(c).necessity;
  require(p, "necessity records", "run `label` first");
  return load_necessity(p);
}

std::vector<BehaviorRecord> load_behavior_stage(const PipelineConfig& c) {
  const auto p = layout(c).behavior;
  require(p, "behaviour records", "run `collect` first");
  return load_behavior(p);
}

HiddenStateDump open_dump(const PipelineConfig& c) {
  require(c.dump, "hidden-state dump", "run extractor first");
  return HiddenStateDump::open(c.dump);
}

template <typename T>
std::size_t count_if_complete(const std::vector<T>& records) {
  std::size_t n = 0;
  for (const auto& r : records) n += r.complete ? 1 : 0;
  return n;
}

}  // namespace

PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  c.model_id = j.value("model_id", c.model_id);
  if (j.contains("backend")) c.backend = backend_from_json(j["backend"]);
  if (j.contains("judge") && !j["judge"].is_null()) c.judge = backend_from_json(j["judge"]);
  c.corpus = j.value("corpus", std::string());
  c.dump = j.value("dump", std::string());
  c.out_dir = j.value("out_dir", c.out_dir.string());
  if (j.contains("labeling")) {
    const auto& l = j["labeling"];
    c.labeling.runs = l.value("runs", c.labeling.runs);
    c.labeling.temperature = l.value("temperature", c.labeling.temperature);
    c.labeling.system_prompt = l.value("system_prompt", c.labeling.system_prompt);
  }
  if (j.contains("grading")) c.grading = factual_grading_from_string(j["grading"].get<std::string>());
  if (j.contains("collection")) {
    const auto& k = j["collection"];
    c.max_tool_rounds = k.value("max_tool_rounds", c.max_tool_rounds);
    c.collect_system_prompt = k.value("system_prompt", c.collect_system_prompt);
  }
  c.search_fixtures = j.value("search_fixtures", std::string());
  if (j.contains("probe")) {
    const auto& p = j["probe"];
    c.probe.lr = p.value("lr", c.probe.lr);
    c.probe.epochs = p.value("epochs", c.probe.epochs);
    c.probe.patience = p.value("patience", c.probe.patience);
    c.probe.min_delta = p.value("min_delta", c.probe.min_delta);
    c.probe.test_fraction = p.value("test_fraction", c.probe.test_fraction);
    c.probe.standardize = p.value("standardize", c.probe.standardize);
    c.allow_partial_dump = p.value("allow_partial", c.allow_partial_dump);
  }
  c.probe.split_seed = j.value("split_seed", c.probe.split_seed);
  if (j.contains("retry")) {
    const auto& r = j["retry"];
    c.retry.max_attempts = r.value("max_attempts", c.retry.max_attempts);
    c.retry.initial_backoff = std::chrono::milliseconds(r.value("initial_backoff_ms", c.retry.initial_backoff.count()));
    c.retry.multiplier = r.value("multiplier", c.retry.multiplier);
  }
  c.labeling.retry = c.retry;
  c.jobs = j.value("jobs", c.jobs);
  if (j.contains("boundary_models"))
    for (const auto& [name, path] : j["boundary_models"].items()) c.boundary_models[name] = path.get<std::string>();
  return c;
}

json to_json(const PipelineConfig& c) {
  json j;
  j["model_id"] = c.model_id;
  j["backend"] = backend_to_json(c.backend);
  if (c.judge) j["judge"] = backend_to_json(*c.judge);
  j["corpus"] = c.corpus.string();
  j["dump"] = c.dump.string();
  j["out_dir"] = c.out_dir.string();
  j["labeling"] = {{"runs", c.labeling.runs},
                   {"temperature", c.labeling.temperature},
                   {"system_prompt", c.labeling.system_prompt}};
  j["grading"] = to_string(c.grading);
  j["collection"] = {{"max_tool_rounds", c.max_tool_rounds}, {"system_prompt", c.collect_system_prompt}};
  j["search_fixtures"] = c.search_fixtures.string();
  j["probe"] = {{"lr", c.probe.lr},
                {"epochs", c.probe.epochs},
                {"patience", c.probe.patience},
                {"min_delta", c.probe.min_delta},
                {"test_fraction", c.probe.test_fraction},
                {"standardize", c.probe.standardize},
                {"allow_partial", c.allow_partial_dump}};
  j["split_seed"] = c.probe.split_seed;
  j["retry"] = {{"max_attempts", c.retry.max_attempts},
                {"initial_backoff_ms", c.retry.initial_backoff.count()},
                {"multiplier", c.retry.multiplier}};
  j["jobs"] = c.jobs;
  json models = json::object();
  for (const auto& [name, path] : c.boundary_models) models[name] = path.string();
  j["boundary_models"] = models;
  return j;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigInvalid("config file " + path.string() + " does not exist");
  try {
    return config_from_json(json::parse(io::read_file(path)));
  } catch (const json::exception& e) {
    throw ConfigInvalid("config " + path.string() + ": " + e.what());
  }
}

void validate(const PipelineConfig& c) {
  if (c.model_id.empty()) throw ConfigInvalid("model_id must be set");
  if (c.labeling.runs < 1) throw ConfigInvalid("labeling.runs must be at least 1");
  if (!(c.labeling.temperature >= 0.0)) throw ConfigInvalid("labeling.temperature must be >= 0");
  for (const auto* b : {&c.backend, c.judge ? &*c.judge : nullptr}) {
    if (!b) continue;
    if (b->kind != "mock" && b->kind != "http") throw ConfigInvalid("backend.kind must be 'mock' or 'http'");
    if (b->kind == "http" && b->http.endpoint.empty()) throw ConfigInvalid("http backend needs an endpoint");
  }
  if (c.max_tool_rounds < 1) throw ConfigInvalid("collection.max_tool_rounds must be at least 1");
  if (!(c.probe.test_fraction > 0.0 && c.probe.test_fraction < 1.0))
    throw ConfigInvalid("probe.test_fraction must lie in (0, 1)");
  if (!(c.probe.lr > 0.0)) throw ConfigInvalid("probe.lr must be positive");
  if (c.probe.epochs < 1) throw ConfigInvalid("probe.epochs must be at least 1");
  if (c.retry.max_attempts < 1) throw ConfigInvalid("retry.max_attempts must be at least 1");
  if (c.jobs < 1) throw ConfigInvalid("jobs must be at least 1");
  if (!c.search_fixtures.empty() && !fs::exists(c.search_fixtures))
    throw ConfigInvalid("search fixtures " + c.search_fixtures.string() + " do not exist");
  for (const auto& [name, path] : c.boundary_models)
    if (!fs::exists(path)) throw ConfigInvalid("boundary model " + name + ": " + path.string() + " does not exist");
}

Layout layout(const PipelineConfig& c) {
  Layout l;
  l.necessity = c.out_dir / "necessity.jsonl";
  l.behavior = c.out_dir / "behavior.jsonl";
  l.verbal = c.out_dir / "verbal.jsonl";
  l.probes_cognition = c.out_dir / "probes_cognition.json";
  l.probes_action = c.out_dir / "probes_action.json";
  l.grid_cognition = c.out_dir / "grid_cognition.json";
  l.grid_action = c.out_dir / "grid_action.json";
  l.grid_cosine = c.out_dir / "grid_cosine.json";
  l.diagnosis = c.out_dir / "diagnosis.jsonl";
  l.report_dir = c.out_dir / "report";
  return l;
}

std::unique_ptr<Backend> make_backend(const BackendSpec& spec, const Corpus& corpus) {
  if (spec.kind == "mock") {
    require(spec.script, "mock script", "run `synth` or point backend.script at a script");
    return std::make_unique<MockBackend>(load_script(spec.script), corpus);
  }
  if (spec.kind == "http") {
    auto cfg = spec.http;
    if (const char* key = std::getenv(kApiKeyEnv)) cfg.api_key = key;
    return std::make_unique<HttpBackend>(std::move(cfg));
  }
  throw ConfigInvalid("unknown backend kind '" + spec.kind + "'");
}

std::vector<ToolHandler> tools_for(const PipelineConfig& c, Domain domain) {
  if (domain == Domain::Arithmetic) return {make_calculator()};
  return {make_search(c.search_fixtures.empty() ? SearchFixtures() : SearchFixtures::load(c.search_fixtures.string()))};
}

json run_label(const PipelineConfig& c) {
  validate(c);
  const auto corpus = load_corpus(c);
  auto backend = make_backend(c.backend, corpus);
  std::unique_ptr<Backend> judge;
  GradingConfig grading{c.grading, nullptr, c.retry};
  if (c.grading == FactualGrading::ExternalJudge && corpus.domain == Domain::Factual) {
    judge = c.judge ? make_backend(*c.judge, corpus) : nullptr;
    grading.judge = judge ? judge.get() : backend.get();
  }
  auto params = c.labeling;
  params.retry = c.retry;
  const auto records = label_corpus(*backend, corpus, c.model_id, params, grading, c.jobs);
  save_necessity(records, layout(c).necessity);
  std::size_t necessary = 0;
  for (const auto& r : records) necessary += r.complete && r.n == 1 ? 1 : 0;
  return {{"stage", "label"},
          {"output", layout(c).necessity.string()},
          {"records", records.size()},
          {"complete", count_if_complete(records)},
          {"necessary", necessary}};
}

json run_collect(const PipelineConfig& c) {
  validate(c);
  const auto corpus = load_corpus(c);
  auto backend = make_backend(c.backend, corpus);
  const auto tools = tools_for(c, corpus.domain);
  CollectParams params;
  params.max_tool_rounds = c.max_tool_rounds;
  params.system_prompt = c.collect_system_prompt;
  params.retry = c.retry;
  const auto records = collect_corpus(*backend, corpus, tools, c.model_id, params, c.jobs);
  save_behavior(records, layout(c).behavior);
  std::size_t called = 0;
  for (const auto& r : records) called += r.complete && r.called ? 1 : 0;
  return {{"stage", "collect"},
          {"output", layout(c).behavior.string()},
          {"records", records.size()},
          {"complete", count_if_complete(records)},
          {"called", called}};
}

json run_verbal(const PipelineConfig& c) {
  validate(c);
  const auto corpus = load_corpus(c);
  const auto direct = load_behavior_stage(c);
  std::unordered_map<std::string, const BehaviorRecord*> by_id;
  for (const auto& b : direct) by_id.emplace(b.sample_id, &b);
  auto backend = make_backend(c.backend, corpus);
  const auto tools = tools_for(c, corpus.domain);
  VerbalParams params;
  params.collect.max_tool_rounds = c.max_tool_rounds;
  params.collect.system_prompt = c.collect_system_prompt;
  params.collect.retry = c.retry;
  std::vector<VerbalRecord> records(corpus.samples.size());
  parallel_for(corpus.samples.size(), c.jobs, [&](std::size_t i) {
    const auto& s = corpus.samples[i];
    const auto it = by_id.find(s.id);
    records[i] = verbalized_protocol(*backend, s, tools, c.model_id, it == by_id.end() ? nullptr : it->second, params);
  });
  save_verbal(records, layout(c).verbal);
  std::size_t invalid = 0;
  for (const auto& r : records) invalid += !r.complete || !r.verbal_necessary ? 1 : 0;
  return {{"stage", "verbal"}, {"output", layout(c).verbal.string()}, {"records", records.size()}, {"invalid", invalid}};
}

json run_probe(const PipelineConfig& c, const std::string& target) {
  validate(c);
  if (target != "cognition" && target != "action" && target != "both")
    throw ConfigInvalid("probe target must be cognition, action or both");
  const auto dump = open_dump(c);
  const auto l = layout(c);
  json summary = {{"stage", "probe"}, {"dump", c.dump.string()}, {"layers", dump.layers()}, {"dim", dump.dim()}};

  auto sweep_and_save = [&](ProbeTarget t, const std::map<std::string, int>& labels, const fs::path& probes_path,
                            const fs::path& grid_path) {
    const auto res = sweep_grid(dump, labels, t, c.probe, {c.allow_partial_dump, Execution::Parallel});
    save_probes(res.probes, dump.layers(), probes_path);
    io::write_atomic(grid_path, to_json(res.grid).dump() + "\n");
    double best = -2.0;
    GridCell best_cell;
    for (std::size_t i = 0; i < res.probes.size(); ++i)
      if (!res.grid.flagged[i] && res.grid.values[i] > best) {
        best = res.grid.values[i];
        best_cell = cell_at(i);
      }
    summary[std::string(to_string(t))] = {{"samples", res.sample_ids.size()},
                                          {"missing", res.missing.size()},
                                          {"best_test_mcc", best},
                                          {"best_cell", {best_cell.offset, best_cell.layer}}};
  };

  if (target != "action") {
    std::map<std::string, int> labels;
    for (const auto& r : load_necessity_stage(c))
      if (r.complete) labels[r.sample_id] = r.n;
    sweep_and_save(ProbeTarget::Cognition, labels, l.probes_cognition, l.grid_cognition);
  }
  if (target != "cognition") {
    std::map<std::string, int> labels;
    for (const auto& r : load_behavior_stage(c))
      if (r.complete) labels[r.sample_id] = r.called ? 1 : 0;
    sweep_and_save(ProbeTarget::Action, labels, l.probes_action, l.grid_action);
  }
  return summary;
}

json run_cosine(const PipelineConfig& c) {
  const auto l = layout(c);
  require(l.probes_cognition, "cognition probes", "run `probe` first");
  require(l.probes_action, "action probes", "run `probe --target action` first");
  const auto cog = load_probes(l.probes_cognition);
  const auto act = load_probes(l.probes_action);
  const auto grid = cosine_grid(cog, act);
  io::write_atomic(l.grid_cosine, to_json(grid).dump() + "\n");
  return {{"stage", "cosine"}, {"output", l.grid_cosine.string()}, {"cells", grid.values.size()}};
}

json run_diagnose(const PipelineConfig& c) {
  validate(c);
  const auto l = layout(c);
  const auto necessity = load_necessity_stage(c);
  const auto behavior = load_behavior_stage(c);
  require(l.probes_cognition, "cognition probes", "run `probe` first");
  const auto dump = open_dump(c);
  std::size_t layers = 0;
  const auto probes = load_probes(l.probes_cognition, &layers);
  if (layers != dump.layers())
    throw std::runtime_error("cognition probes cover " + std::to_string(layers) + " layers but the dump has " +
                             std::to_string(dump.layers()) + "; rerun `probe`");
  const auto set = diagnose(necessity, behavior, dump, readout_probe(probes, layers));
  save_diagnosis(set, l.diagnosis);
  const auto counts = count_traces(set.records);
  return {{"stage", "diagnose"},
          {"output", l.diagnosis.string()},
          {"records", set.records.size()},
          {"unclassifiable", set.unclassifiable.size()},
          {"STAGE2_ONLY", counts.stage2_only}};
}

json run_report(const PipelineConfig& c) {
  const auto l = layout(c);
  require(l.diagnosis, "diagnosis records", "run `diagnose` first");
  const auto diag = load_diagnosis(l.diagnosis);
  if (diag.records.empty())
    throw std::runtime_error("diagnosis set is empty: no sample has a necessity label, a behaviour record and a "
                             "hidden-state grid, so there is nothing to report");
  const auto necessity = load_necessity_stage(c);
  const auto behavior = load_behavior_stage(c);
  const auto corpus = load_corpus(c);
  const auto& dir = l.report_dir;
  json summary = {{"stage", "report"}, {"model", c.model_id}, {"domain", to_string(corpus.domain)}};

  // Necessity x action categories.
  const auto classified = classify_records(necessity, behavior);
  std::vector<Category> cats;
  for (const auto& [id, cat] : classified.categories) cats.push_back(cat);
  const auto counts = aggregate(cats);
  io::write_atomic(dir / "categories.csv", std::string(kCategoryCsvHeader) + "\n" +
                                               category_csv_row(c.model_id, to_string(corpus.domain), counts) + "\n");
  summary["categories"] = {{"N-C", counts.n_c},
                           {"N-NC", counts.n_nc},
                           {"UN-C", counts.un_c},
                           {"UN-NC", counts.un_nc},
                           {"unclassifiable", classified.unclassifiable.size()}};
  summary["mismatch_rate"] = counts.mismatch_rate();
  summary["mismatch_pct"] = format_tenths(counts.mismatch_pct_tenths());

  // Heatmaps.
  json heatmaps = json::array();
  const std::pair<fs::path, std::string> grids[] = {
      {l.grid_cognition, "cognition"}, {l.grid_action, "action"}, {l.grid_cosine, "cosine"}};
  for (const auto& [path, kind] : grids) {
    if (!fs::exists(path)) continue;
    const auto g = grid_from_json(json::parse(io::read_file(path)));
    const bool is_cos = kind == "cosine";
    io::write_atomic(dir / ("heatmap_" + kind + ".csv"), grid_csv(g));
    io::write_atomic(dir / ("heatmap_" + kind + ".svg"),
                     grid_svg(g, is_cos ? -1.0 : 0.0, 1.0,
                              is_cos ? "cos(w_c, w_a)" : kind + " probe test MCC"));
    heatmaps.push_back(kind);
  }
  summary["heatmaps"] = heatmaps;

  // Tracing exports.
  const auto flows = sankey_export(diag.records);
  io::write_atomic(dir / "sankey.json", to_json(flows).dump(2) + "\n");
  const auto scatter = confidence_scatter(diag.records);
  io::write_atomic(dir / "scatter.csv", scatter_csv(scatter));
  summary["traces"] = to_json(flows)["totals"];
  summary["diagnosed"] = diag.records.size();
  summary["scatter_skipped"] = scatter.skipped;
  if (scatter.points.empty()) summary["warnings"].push_back("no diagnosis record carries p_call; scatter is empty");

  // Boundary ordering over this model plus any configured others.
  std::vector<std::string> models{c.model_id};
  std::vector<std::unordered_map<std::string, int>> green(1);
  for (const auto& r : necessity)
    if (r.complete) green[0][r.sample_id] = r.n == 0 ? 1 : 0;
  for (const auto& [name, path] : c.boundary_models) {
    models.push_back(name);
    green.emplace_back();
    for (const auto& r : load_necessity(path))
      if (r.complete) green.back()[r.sample_id] = r.n == 0 ? 1 : 0;
  }
  std::vector<std::string> ids;
  for (const auto& s : corpus.samples) {
    bool everywhere = true;
    for (const auto& g : green) everywhere = everywhere && g.count(s.id);
    if (everywhere) ids.push_back(s.id);
  }
  std::vector<std::vector<int>> matrix(models.size());
  for (std::size_t m = 0; m < models.size(); ++m)
    for (const auto& id : ids) matrix[m].push_back(green[m].at(id));
  const auto order = boundary_order(matrix);
  json perm = {{"models", models}, {"sample_ids", ids}, {"order", order}};
  io::write_atomic(dir / "boundary_order.json", perm.dump() + "\n");
  io::write_atomic(dir / "boundary_stripes.csv", boundary_stripe_csv(models, ids, matrix, order));
  summary["boundary_samples"] = ids.size();

  if (fs::exists(l.verbal)) {
    const auto verbal = load_verbal(l.verbal);
    try {
      const auto m = verbal_metrics(verbal, necessity, behavior);
      summary["verbal"] = {{"mcc", m.mcc.value},
                           {"mcc_undefined", m.mcc.undefined},
                           {"cog_exe_mismatch_rate", m.cog_exe_mismatch_rate},
                           {"changed_rate", m.changed_rate},
                           {"joined", m.joined},
                           {"invalid", m.invalid}};
    } catch (const std::invalid_argument& e) {
      summary["warnings"].push_back(std::string("verbal metrics skipped: ") + e.what());
    }
  }
  io::write_atomic(dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

}  // namespace toolgap
