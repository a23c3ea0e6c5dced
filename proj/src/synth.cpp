#include "toolgap/synth.hpp"

#include <cmath>

#include "toolgap/io.hpp"
#include "toolgap/rng.hpp"

namespace toolgap {

using ojson = nlohmann::ordered_json;

GridCell cognition_cell(const WorldSpec& spec) { return {-1, spec.layers - 1}; }
GridCell action_cell(const WorldSpec& spec) { return {-2, spec.layers - 1}; }

namespace {

// Box-Muller on the portable uniform draws.
double gaussian(Rng& rng) {
  double u1 = rng.uniform01();
  while (u1 <= 0.0) u1 = rng.uniform01();
  const double u2 = rng.uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Probabilities on a 1/1024 grid survive the float32 trailer exactly.
double grid_prob(Rng& rng, int lo, int hi) { return static_cast<double>(rng.uniform_int(lo, hi)) / 1024.0; }

Decision draw_decision(Rng& rng, bool call, bool tie) {
  if (tie) {
    const double p = grid_prob(rng, 50, 400);
    return {p, p};
  }
  // Winner in [0.5, 0.9]; loser strictly below it and within the remaining mass.
  const double winner = grid_prob(rng, 512, 921);
  const int loser_hi = static_cast<int>(std::lround((1.0 - winner) * 1024.0));
  const double loser = grid_prob(rng, 1, loser_hi);
  return call ? Decision{winner, loser} : Decision{loser, winner};
}

// Unit direction with equal-magnitude, random-sign entries.
std::vector<double> direction(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  const double m = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& x : v) x = rng.uniform_int(0, 1) ? m : -m;
  return v;
}

}  // namespace

World make_world(const Corpus& corpus, const WorldSpec& spec) {
  if (corpus.samples.empty()) throw std::invalid_argument("synthetic world needs a nonempty corpus");
  if (spec.dim == 0 || spec.layers == 0 || spec.runs == 0) throw std::invalid_argument("world shape must be positive");
  if (spec.transport_failures > corpus.samples.size()) throw std::invalid_argument("more transport failures than samples");

  Rng rng(spec.seed);
  World w;
  w.spec = spec;
  w.header.model = spec.model;
  w.header.dim = spec.dim;
  w.header.n_layers = spec.layers;
  w.header.decision_included = true;
  w.header.extra["synthetic"] = true;
  w.header.extra["position_convention"] = "rendered prompt";

  const auto u_c = direction(rng, spec.dim);
  const auto u_a = direction(rng, spec.dim);
  const auto c_cell = cognition_cell(spec);
  const auto a_cell = action_cell(spec);
  const std::size_t per_sample = w.header.floats_per_sample();
  const std::size_t first_failure = corpus.samples.size() - spec.transport_failures;

  std::vector<Category> categories;
  std::vector<DiagnosisRecord> traced;
  for (std::size_t s = 0; s < corpus.samples.size(); ++s) {
    const auto& sample = corpus.samples[s];
    WorldSample ws;
    ws.sample_id = sample.id;
    ws.n = rng.uniform01() < spec.necessary_rate ? 1 : 0;
    ws.z = rng.uniform01() < spec.stage1_error ? 1 - ws.n : ws.n;
    ws.a = rng.uniform01() < spec.stage2_error ? 1 - ws.z : ws.z;
    ws.transport_fail = s >= first_failure;

    ScriptEntry e;
    e.sample_id = sample.id;
    e.per_run_correct.assign(spec.runs, true);
    if (ws.n) {
      const auto wrong = rng.uniform_int(1, static_cast<std::int64_t>(spec.runs));
      std::vector<std::size_t> idx(spec.runs);
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      rng.shuffle(std::span<std::size_t>(idx));
      for (std::int64_t k = 0; k < wrong; ++k) e.per_run_correct[idx[static_cast<std::size_t>(k)]] = false;
    }
    e.calls_tool = ws.a == 1;
    const bool tie = !e.calls_tool && rng.uniform01() < spec.tie_rate;
    if (tie) ++w.truth.ties;
    e.decision = draw_decision(rng, e.calls_tool, tie);
    if (rng.uniform01() < spec.verbal_invalid_rate) {
      e.verbal = "It depends.";
      e.verbal_calls_tool = e.calls_tool;
    } else {
      const bool says_yes = rng.uniform01() < 0.2 ? !ws.n : ws.n == 1;
      e.verbal = says_yes ? "Yes." : "No.";
      e.verbal_calls_tool = rng.uniform01() < 0.1 ? !says_yes : says_yes;
    }
    e.transport_fail = ws.transport_fail;
    w.script.push_back(std::move(e));
    w.decisions.push_back(*w.script.back().decision);
    w.header.sample_ids.push_back(sample.id);

    // Background cells are isotropic noise; the readout cell carries z and
    // a neighbouring cell carries a, each along a fixed direction.
    const std::size_t base = w.body.size();
    w.body.resize(base + per_sample);
    for (std::size_t i = 0; i < per_sample; ++i) w.body[base + i] = static_cast<float>(gaussian(rng));
    auto plant = [&](GridCell cell, const std::vector<double>& u, int bit) {
      float* h = w.body.data() + base + (cell.layer * kPositions + position_index_of(cell.offset)) * spec.dim;
      const double sign = bit ? 1.0 : -1.0;
      for (std::size_t j = 0; j < spec.dim; ++j)
        h[j] = static_cast<float>(sign * spec.margin * u[j] + spec.noise * gaussian(rng));
    };
    plant(c_cell, u_c, ws.z);
    plant(a_cell, u_a, ws.a);

    if (!ws.transport_fail) {
      categories.push_back(classify(ws.n, ws.a == 1));
      traced.push_back(make_record(ws.sample_id, ws.n, {ws.z, 0.5}, ws.a == 1, std::nullopt));
    }
    w.truth.samples.push_back(std::move(ws));
  }
  w.truth.categories = aggregate(categories);
  w.truth.traces = count_traces(traced);
  return w;
}

ojson to_json(const WorldTruth& truth) {
  ojson j;
  const auto& c = truth.categories;
  j["categories"] = {{"N-C", c.n_c}, {"N-NC", c.n_nc}, {"UN-C", c.un_c}, {"UN-NC", c.un_nc}};
  j["mismatch_rate"] = c.mismatch_rate();
  j["traces"] = {{"ALIGNED", truth.traces.aligned},
                 {"STAGE1_ONLY", truth.traces.stage1_only},
                 {"STAGE2_ONLY", truth.traces.stage2_only},
                 {"COMPENSATING", truth.traces.compensating}};
  j["ties"] = truth.ties;
  j["samples"] = ojson::array();
  for (const auto& s : truth.samples)
    j["samples"].push_back(
        {{"sample_id", s.sample_id}, {"n", s.n}, {"z", s.z}, {"a", s.a}, {"transport_fail", s.transport_fail}});
  return j;
}

void write_world(const World& world, const std::filesystem::path& dir) {
  save_script(world.script, dir / "script.jsonl");
  write_dump(dir / "dump.hsd", world.header, world.body, world.decisions);
  io::write_atomic(dir / "truth.json", to_json(world.truth).dump(2) + "\n");
}

}  // namespace toolgap
