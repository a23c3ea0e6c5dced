#include "toolgap/diagnose.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <tuple>
#include <unordered_map>

#include "toolgap/io.hpp"
#include "toolgap/kernels.hpp"

namespace toolgap {

using ojson = nlohmann::ordered_json;

std::string_view to_string(TraceCategory c) {
  switch (c) {
    case TraceCategory::Aligned: return "ALIGNED";
    case TraceCategory::Stage1Only: return "STAGE1_ONLY";
    case TraceCategory::Stage2Only: return "STAGE2_ONLY";
    case TraceCategory::Compensating: return "COMPENSATING";
  }
  return "?";
}

TraceCategory trace_category_from_string(std::string_view s) {
  for (const auto c : {TraceCategory::Aligned, TraceCategory::Stage1Only, TraceCategory::Stage2Only,
                       TraceCategory::Compensating})
    if (to_string(c) == s) return c;
  throw std::invalid_argument("unknown trace category '" + std::string(s) + "'");
}

std::string_view color_of(TraceCategory c) {
  switch (c) {
    case TraceCategory::Aligned: return "green";
    case TraceCategory::Stage1Only: return "red";
    case TraceCategory::Stage2Only: return "orange";
    case TraceCategory::Compensating: return "purple";
  }
  return "gray";
}

TraceCategory trace(int n, int z, int a) {
  for (const int bit : {n, z, a})
    if (bit != 0 && bit != 1) throw std::invalid_argument("trace bits must be 0 or 1");
  if (n == z) return z == a ? TraceCategory::Aligned : TraceCategory::Stage2Only;
  return z == a ? TraceCategory::Stage1Only : TraceCategory::Compensating;
}

Readout cognition_readout(std::span<const float> hidden, const ProbeResult& probe) {
  const double confidence = kernels::sigmoid(probe.logit(hidden));
  return {confidence >= 0.5 ? 1 : 0, confidence};
}

Readout cognition_readout(const HiddenStateDump& dump, std::size_t sample, const ProbeResult& probe) {
  if (probe.cell.layer >= dump.layers() || probe.cell.offset < -20 || probe.cell.offset > -1)
    throw std::out_of_range("dump has no cell (" + std::to_string(probe.cell.offset) + ", " +
                            std::to_string(probe.cell.layer) + ")");
  if (sample >= dump.samples()) throw std::out_of_range("sample index outside the dump");
  return cognition_readout(dump.vector(sample, probe.cell.layer, position_index_of(probe.cell.offset)), probe);
}

const ProbeResult& readout_probe(std::span<const ProbeResult> probes, std::size_t layers) {
  if (layers == 0) throw std::invalid_argument("probe grid has no layers");
  const GridCell want{-1, layers - 1};
  for (const auto& p : probes)
    if (p.cell == want) return p;
  throw std::invalid_argument("no cognition probe at the last token of layer " + std::to_string(layers - 1));
}

DiagnosisRecord make_record(std::string sample_id, int n, Readout readout, bool called, std::optional<double> p_call) {
  DiagnosisRecord r;
  r.sample_id = std::move(sample_id);
  r.n = n;
  r.z = readout.z;
  r.a = called ? 1 : 0;
  r.confidence = readout.confidence;
  r.p_call = p_call;
  r.category = trace(r.n, r.z, r.a);
  return r;
}

DiagnosisSet diagnose(std::span<const NecessityRecord> necessity, std::span<const BehaviorRecord> behavior,
                      const HiddenStateDump& dump, const ProbeResult& probe) {
  if (probe.weight.size() != dump.dim())
    throw std::invalid_argument("readout probe has dimension " + std::to_string(probe.weight.size()) +
                                " but the dump has " + std::to_string(dump.dim()));
  std::unordered_map<std::string, const BehaviorRecord*> by_id;
  for (const auto& b : behavior) by_id.emplace(b.sample_id, &b);

  DiagnosisSet out;
  for (const auto& nr : necessity) {
    if (!nr.complete) {
      out.unclassifiable.emplace_back(nr.sample_id, "necessity record incomplete");
      continue;
    }
    const auto it = by_id.find(nr.sample_id);
    if (it == by_id.end()) {
      out.unclassifiable.emplace_back(nr.sample_id, "no behaviour record");
      continue;
    }
    if (!it->second->complete) {
      out.unclassifiable.emplace_back(nr.sample_id, "behaviour record incomplete");
      continue;
    }
    const auto idx = dump.index_of(nr.sample_id);
    if (!idx) {
      out.unclassifiable.emplace_back(nr.sample_id, "no hidden-state grid");
      continue;
    }
    out.records.push_back(
        make_record(nr.sample_id, nr.n, cognition_readout(dump, *idx, probe), it->second->called, it->second->p_call));
  }
  return out;
}

std::uint64_t TraceCounts::get(TraceCategory c) const {
  switch (c) {
    case TraceCategory::Aligned: return aligned;
    case TraceCategory::Stage1Only: return stage1_only;
    case TraceCategory::Stage2Only: return stage2_only;
    case TraceCategory::Compensating: return compensating;
  }
  return 0;
}

TraceCounts count_traces(std::span<const DiagnosisRecord> records) {
  TraceCounts c;
  for (const auto& r : records) {
    switch (r.category) {
      case TraceCategory::Aligned: ++c.aligned; break;
      case TraceCategory::Stage1Only: ++c.stage1_only; break;
      case TraceCategory::Stage2Only: ++c.stage2_only; break;
      case TraceCategory::Compensating: ++c.compensating; break;
    }
  }
  return c;
}

std::uint64_t SankeyFlows::inflow(std::size_t node) const {
  std::uint64_t s = 0;
  for (const auto& l : links)
    if (l.target == node) s += l.value;
  return s;
}

std::uint64_t SankeyFlows::outflow(std::size_t node) const {
  std::uint64_t s = 0;
  for (const auto& l : links)
    if (l.source == node) s += l.value;
  return s;
}

SankeyFlows sankey_export(std::span<const DiagnosisRecord> records) {
  if (records.empty()) throw std::invalid_argument("sankey export needs at least one diagnosis record");
  SankeyFlows f;
  f.nodes = {"Factual: necessary",   "Factual: unnecessary", "Cognition: necessary",
             "Cognition: unnecessary", "Action: call",        "Action: no call"};
  std::map<std::tuple<std::size_t, std::size_t, int>, std::uint64_t> edges;
  for (const auto& r : records) {
    if (r.category != trace(r.n, r.z, r.a)) throw std::invalid_argument("record " + r.sample_id + " has a stale category");
    const std::size_t fact = r.n ? kFactualNecessary : kFactualUnnecessary;
    const std::size_t cog = r.z ? kCognitionNecessary : kCognitionUnnecessary;
    const std::size_t act = r.a ? kActionCall : kActionNoCall;
    ++edges[{fact, cog, static_cast<int>(r.category)}];
    ++edges[{cog, act, static_cast<int>(r.category)}];
  }
  for (const auto& [key, value] : edges)
    f.links.push_back({std::get<0>(key), std::get<1>(key), value, static_cast<TraceCategory>(std::get<2>(key))});
  f.totals = count_traces(records);

  for (const std::size_t node : {kCognitionNecessary, kCognitionUnnecessary})
    if (f.inflow(node) != f.outflow(node)) throw std::logic_error("sankey flows are not conserved");
  if (f.outflow(kFactualNecessary) + f.outflow(kFactualUnnecessary) != records.size() ||
      f.inflow(kActionCall) + f.inflow(kActionNoCall) != records.size())
    throw std::logic_error("sankey total flow differs from the record count");
  return f;
}

ojson to_json(const SankeyFlows& flows) {
  ojson j;
  j["nodes"] = ojson::array();
  for (std::size_t i = 0; i < flows.nodes.size(); ++i) j["nodes"].push_back({{"id", i}, {"name", flows.nodes[i]}});
  j["links"] = ojson::array();
  for (const auto& l : flows.links)
    j["links"].push_back({{"source", l.source},
                          {"target", l.target},
                          {"value", l.value},
                          {"category", to_string(l.category)},
                          {"color", color_of(l.category)}});
  ojson totals;
  for (const auto c : {TraceCategory::Aligned, TraceCategory::Stage1Only, TraceCategory::Stage2Only,
                       TraceCategory::Compensating})
    totals[std::string(to_string(c))] = flows.totals.get(c);
  j["totals"] = totals;
  j["samples"] = flows.totals.total();
  j["end_to_end_mismatch"] = flows.totals.end_to_end_mismatch();
  return j;
}

Scatter confidence_scatter(std::span<const DiagnosisRecord> records) {
  Scatter s;
  for (const auto& r : records) {
    if (!r.p_call) {
      ++s.skipped;
      continue;
    }
    s.points.push_back({r.sample_id, r.confidence, *r.p_call, r.category});
  }
  std::stable_sort(s.points.begin(), s.points.end(),
                   [](const ScatterPoint& a, const ScatterPoint& b) { return a.sample_id < b.sample_id; });
  return s;
}

std::string scatter_csv(const Scatter& scatter) {
  std::string out = "sample_id,confidence,p_call,category,color\n";
  char buf[64];
  for (const auto& p : scatter.points) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,", p.confidence, p.p_call);
    out += p.sample_id + buf + std::string(to_string(p.category)) + "," + std::string(color_of(p.category)) + "\n";
  }
  return out;
}

namespace {

void partition_block(const std::vector<std::vector<int>>& labels, std::size_t model, std::vector<std::size_t>& block) {
  if (model == labels.size() || block.size() < 2) return;
  std::vector<std::size_t> green, red;
  for (const auto s : block) (labels[model][s] ? green : red).push_back(s);
  partition_block(labels, model + 1, green);
  partition_block(labels, model + 1, red);
  block = std::move(green);
  block.insert(block.end(), red.begin(), red.end());
}

}  // namespace

std::vector<std::size_t> boundary_order(const std::vector<std::vector<int>>& labels) {
  if (labels.empty()) return {};
  const std::size_t n = labels.front().size();
  for (std::size_t m = 0; m < labels.size(); ++m) {
    if (labels[m].size() != n)
      throw std::invalid_argument("model row " + std::to_string(m) + " covers " + std::to_string(labels[m].size()) +
                                  " samples, expected " + std::to_string(n));
    for (const int v : labels[m])
      if (v != 0 && v != 1) throw std::invalid_argument("boundary labels must be 0 or 1");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  partition_block(labels, 0, order);
  return order;
}

std::string boundary_stripe_csv(const std::vector<std::string>& models, const std::vector<std::string>& sample_ids,
                                const std::vector<std::vector<int>>& labels, std::span<const std::size_t> order) {
  if (models.size() != labels.size()) throw std::invalid_argument("one model name per label row is required");
  std::string out = "model";
  for (const auto i : order) out += "," + sample_ids.at(i);
  out += '\n';
  for (std::size_t m = 0; m < models.size(); ++m) {
    out += models[m];
    for (const auto i : order) out += labels[m].at(i) ? ",1" : ",0";
    out += '\n';
  }
  return out;
}

ojson to_json(const DiagnosisRecord& r) {
  ojson j;
  j["sample_id"] = r.sample_id;
  j["n"] = r.n;
  j["z"] = r.z;
  j["a"] = r.a;
  j["confidence"] = r.confidence;
  j["p_call"] = r.p_call ? ojson(*r.p_call) : ojson(nullptr);
  j["category"] = to_string(r.category);
  return j;
}

DiagnosisRecord diagnosis_from_json(const ojson& j) {
  DiagnosisRecord r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.n = j.at("n").get<int>();
  r.z = j.at("z").get<int>();
  r.a = j.at("a").get<int>();
  r.confidence = j.at("confidence").get<double>();
  if (j.contains("p_call") && !j["p_call"].is_null()) r.p_call = j["p_call"].get<double>();
  r.category = trace_category_from_string(j.at("category").get<std::string>());
  if (r.category != trace(r.n, r.z, r.a))
    throw std::invalid_argument("diagnosis record " + r.sample_id + ": category does not match (n, z, a)");
  return r;
}

void save_diagnosis(const DiagnosisSet& set, const std::filesystem::path& path) {
  std::vector<ojson> rows;
  for (const auto& r : set.records) rows.push_back(to_json(r));
  for (const auto& [id, reason] : set.unclassifiable) rows.push_back({{"sample_id", id}, {"unclassifiable", reason}});
  io::write_atomic(path, io::to_jsonl(rows));
}

DiagnosisSet load_diagnosis(const std::filesystem::path& path) {
  DiagnosisSet set;
  io::for_each_jsonl(path, [&](const ojson& row, std::size_t line) {
    try {
      if (row.contains("unclassifiable"))
        set.unclassifiable.emplace_back(row.at("sample_id").get<std::string>(), row["unclassifiable"].get<std::string>());
      else
        set.records.push_back(diagnosis_from_json(row));
    } catch (const std::exception& e) {
      throw io::FormatError(path.string() + ": " + e.what(), line);
    }
  });
  return set;
}

}  // namespace toolgap
