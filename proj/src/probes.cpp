#include "toolgap/probes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>

#include "toolgap/io.hpp"
#include "toolgap/kernels.hpp"
#include "toolgap/rng.hpp"

namespace toolgap {

using ojson = nlohmann::ordered_json;

std::string_view to_string(ProbeTarget t) { return t == ProbeTarget::Cognition ? "cognition" : "action"; }

ProbeTarget probe_target_from_string(std::string_view s) {
  if (s == "cognition") return ProbeTarget::Cognition;
  if (s == "action") return ProbeTarget::Action;
  throw std::invalid_argument("unknown probe target '" + std::string(s) + "'");
}

FeatureMatrix gather(const HiddenStateDump& dump, std::span<const std::size_t> samples, GridCell cell) {
  if (cell.layer >= dump.layers() || cell.offset < -20 || cell.offset > -1)
    throw std::out_of_range("grid cell outside the dump");
  FeatureMatrix m;
  m.rows = samples.size();
  m.cols = dump.dim();
  m.data.resize(m.rows * m.cols);
  const auto pos = position_index_of(cell.offset);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto v = dump.vector(samples[i], cell.layer, pos);
    std::copy(v.begin(), v.end(), m.data.begin() + static_cast<std::ptrdiff_t>(i * m.cols));
  }
  return m;
}

Split stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test_fraction must lie in (0, 1)");
  Rng rng(seed);
  Split s;
  for (const int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    rng.shuffle(std::span<std::size_t>(idx));
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    s.test.insert(s.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.insert(s.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<double> ProbeResult::raw_direction() const {
  std::vector<double> out(weight.size());
  for (std::size_t j = 0; j < weight.size(); ++j) out[j] = weight[j] / scale[j];
  return out;
}

double ProbeResult::logit(std::span<const float> hidden) const {
  if (hidden.size() != weight.size())
    throw std::invalid_argument("probe dimension " + std::to_string(weight.size()) + " does not match hidden size " +
                                std::to_string(hidden.size()));
  double z = bias;
  for (std::size_t j = 0; j < weight.size(); ++j) z += weight[j] * ((static_cast<double>(hidden[j]) - mean[j]) / scale[j]);
  return z;
}

double ProbeResult::confidence(std::span<const float> hidden) const { return kernels::sigmoid(logit(hidden)); }

namespace {

MccResult score(const kernels::Batch& batch, std::span<const double> w, double b) {
  std::vector<double> z(batch.rows);
  kernels::logits_serial(batch, w, b, z);
  std::vector<int> pred(batch.rows);
  for (std::size_t i = 0; i < batch.rows; ++i) pred[i] = z[i] >= 0.0 ? 1 : 0;
  return mcc(confusion(pred, batch.y));
}

}  // namespace

ProbeResult train_probe(const FeatureMatrix& features, std::span<const int> labels, const Split& split,
                        const ProbeHyper& hyper, ProbeTarget target, GridCell cell) {
  const std::size_t K = features.rows;
  const std::size_t d = features.cols;
  if (labels.size() != K) throw std::invalid_argument("label count does not match feature rows");
  if (K < 20) throw std::invalid_argument("probe training needs at least 20 samples, got " + std::to_string(K));
  if (d == 0) throw std::invalid_argument("probe features are empty");
  for (const int y : labels)
    if (y != 0 && y != 1) throw std::invalid_argument("probe labels must be 0 or 1");
  for (const double v : features.data)
    if (!std::isfinite(v)) throw std::invalid_argument("probe features contain non-finite values");
  std::size_t train_pos = 0;
  for (const auto i : split.train) train_pos += static_cast<std::size_t>(labels[i]);
  if (train_pos == 0 || train_pos == split.train.size())
    throw DegenerateLabels("degenerate labels: the training split has a single class");

  ProbeResult r;
  r.target = target;
  r.cell = cell;
  r.split_seed = hyper.split_seed;
  r.mean.assign(d, 0.0);
  r.scale.assign(d, 1.0);
  if (hyper.standardize) {
    const auto n = static_cast<double>(split.train.size());
    for (const auto i : split.train)
      for (std::size_t j = 0; j < d; ++j) r.mean[j] += features.data[i * d + j];
    for (auto& m : r.mean) m /= n;
    std::vector<double> var(d, 0.0);
    for (const auto i : split.train)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = features.data[i * d + j] - r.mean[j];
        var[j] += c * c;
      }
    for (std::size_t j = 0; j < d; ++j) {
      const double sd = std::sqrt(var[j] / n);
      r.scale[j] = sd > 1e-12 ? sd : 1.0;
    }
  }

  auto build = [&](const std::vector<std::size_t>& rows, std::vector<double>& x, std::vector<int>& y) {
    x.resize(rows.size() * d);
    y.resize(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto i = rows[k];
      for (std::size_t j = 0; j < d; ++j) x[k * d + j] = (features.data[i * d + j] - r.mean[j]) / r.scale[j];
      y[k] = labels[i];
    }
  };
  std::vector<double> x_train, x_test;
  std::vector<int> y_train, y_test;
  build(split.train, x_train, y_train);
  build(split.test, x_test, y_test);
  const kernels::Batch train{x_train, y_train, split.train.size(), d};
  const kernels::Batch test{x_test, y_test, split.test.size(), d};

  std::vector<double> w(d, 0.0), m(d, 0.0), v(d, 0.0), g(d, 0.0);
  double b = 0.0, mb = 0.0, vb = 0.0, gb = 0.0;
  double best = INFINITY;
  std::size_t stall = 0;
  double beta1_t = 1.0, beta2_t = 1.0;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    const double loss = hyper.kernel == Execution::Parallel ? kernels::loss_grad_parallel(train, w, b, g, gb)
                                                            : kernels::loss_grad_serial(train, w, b, g, gb);
    r.loss_history.push_back(loss);
    if (best - loss < hyper.min_delta) {
      if (++stall >= hyper.patience) break;
    } else {
      stall = 0;
    }
    best = std::min(best, loss);

    beta1_t *= hyper.beta1;
    beta2_t *= hyper.beta2;
    const double c1 = 1.0 - beta1_t;
    const double c2 = 1.0 - beta2_t;
    for (std::size_t j = 0; j < d; ++j) {
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
      w[j] -= hyper.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + hyper.epsilon);
    }
    mb = hyper.beta1 * mb + (1.0 - hyper.beta1) * gb;
    vb = hyper.beta2 * vb + (1.0 - hyper.beta2) * gb * gb;
    b -= hyper.lr * (mb / c1) / (std::sqrt(vb / c2) + hyper.epsilon);
  }
  r.epochs_run = r.loss_history.size();
  r.weight = std::move(w);
  r.bias = b;
  r.train_mcc = score(train, r.weight, r.bias);
  r.test_mcc = test.rows ? score(test, r.weight, r.bias) : MccResult{0.0, true};
  return r;
}

ProbeResult train_probe(const FeatureMatrix& features, std::span<const int> labels, const ProbeHyper& hyper,
                        ProbeTarget target, GridCell cell) {
  for (const int y : labels)
    if (y != labels.front()) return train_probe(features, labels, stratified_split(labels, hyper.test_fraction, hyper.split_seed),
                                                hyper, target, cell);
  throw DegenerateLabels("degenerate labels: all labels are identical");
}

PositionGrid::PositionGrid(std::string kind_, std::size_t layers_)
    : kind(std::move(kind_)), layers(layers_), values(layers_ * kPositions, 0.0), flagged(layers_ * kPositions, false) {}

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size() && i < 10; ++i) s += (i ? ", " : "") + ids[i];
  if (ids.size() > 10) s += ", ...";
  return s;
}

}  // namespace

MissingGrids::MissingGrids(std::vector<std::string> ids)
    : std::runtime_error(std::to_string(ids.size()) + " labeled samples have no hidden-state grid: " + join_ids(ids)),
      ids_(std::move(ids)) {}

SweepResult sweep_grid(const HiddenStateDump& dump, const std::map<std::string, int>& labels, ProbeTarget target,
                       const ProbeHyper& hyper, const SweepOptions& options) {
  SweepResult out;
  for (const auto& [id, y] : labels)
    if (!dump.index_of(id)) out.missing.push_back(id);
  if (!out.missing.empty() && !options.allow_partial) throw MissingGrids(out.missing);

  // Samples in dump order.
  std::vector<std::size_t> rows;
  std::vector<int> y;
  for (std::size_t i = 0; i < dump.samples(); ++i) {
    const auto it = labels.find(dump.header().sample_ids[i]);
    if (it == labels.end()) continue;
    rows.push_back(i);
    y.push_back(it->second);
    out.sample_ids.push_back(it->first);
  }
  if (std::all_of(y.begin(), y.end(), [&](int v) { return v == y.front(); }))
    throw DegenerateLabels("degenerate labels: all " + std::string(to_string(target)) + " labels are identical");
  out.split = stratified_split(y, hyper.test_fraction, hyper.split_seed);

  const std::size_t n_cells = dump.layers() * kPositions;
  out.probes.resize(n_cells);
  out.grid = PositionGrid(std::string(to_string(target)), dump.layers());

  auto fit = [&](std::size_t c) {
    const auto cell = cell_at(c);
    const auto features = gather(dump, rows, cell);
    out.probes[c] = train_probe(features, y, out.split, hyper, target, cell);
  };
  if (options.cells == Execution::Parallel) {
    std::exception_ptr error;
    std::mutex error_mutex;
#pragma omp parallel for schedule(dynamic)
    for (std::size_t c = 0; c < n_cells; ++c) {
      try {
        fit(c);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  } else {
    for (std::size_t c = 0; c < n_cells; ++c) fit(c);
  }
  for (std::size_t c = 0; c < n_cells; ++c) {
    out.grid.values[c] = out.probes[c].test_mcc.value;
    out.grid.flagged[c] = out.probes[c].test_mcc.undefined;
  }
  return out;
}

std::optional<double> cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine of vectors with different lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

PositionGrid cosine_grid(std::span<const ProbeResult> cognition, std::span<const ProbeResult> action) {
  if (cognition.size() != action.size() || cognition.empty() || cognition.size() % kPositions != 0)
    throw std::invalid_argument("cognition and action probes must cover the same full grid");
  PositionGrid g("cosine", cognition.size() / kPositions);
  for (std::size_t c = 0; c < cognition.size(); ++c) {
    if (!(cognition[c].cell == action[c].cell) || cognition[c].cell != cell_at(c))
      throw std::invalid_argument("probe maps are not aligned at cell " + std::to_string(c));
    const auto value = cosine(cognition[c].raw_direction(), action[c].raw_direction());
    g.values[c] = value.value_or(0.0);
    g.flagged[c] = !value;
  }
  return g;
}

ojson to_json(const ProbeResult& p) {
  ojson j;
  j["target"] = to_string(p.target);
  j["offset"] = p.cell.offset;
  j["layer"] = p.cell.layer;
  j["train_mcc"] = p.train_mcc.value;
  j["train_mcc_undefined"] = p.train_mcc.undefined;
  j["test_mcc"] = p.test_mcc.value;
  j["test_mcc_undefined"] = p.test_mcc.undefined;
  j["split_seed"] = p.split_seed;
  j["epochs_run"] = p.epochs_run;
  j["final_loss"] = p.loss_history.empty() ? 0.0 : p.loss_history.back();
  j["bias"] = p.bias;
  j["weight"] = p.weight;
  j["mean"] = p.mean;
  j["scale"] = p.scale;
  return j;
}

ProbeResult probe_from_json(const ojson& j) {
  ProbeResult p;
  p.target = probe_target_from_string(j.at("target").get<std::string>());
  p.cell = {j.at("offset").get<int>(), j.at("layer").get<std::size_t>()};
  p.train_mcc = {j.at("train_mcc").get<double>(), j.value("train_mcc_undefined", false)};
  p.test_mcc = {j.at("test_mcc").get<double>(), j.value("test_mcc_undefined", false)};
  p.split_seed = j.value("split_seed", std::uint64_t{0});
  p.epochs_run = j.value("epochs_run", std::size_t{0});
  if (j.contains("final_loss")) p.loss_history = {j["final_loss"].get<double>()};
  p.bias = j.at("bias").get<double>();
  p.weight = j.at("weight").get<std::vector<double>>();
  p.mean = j.at("mean").get<std::vector<double>>();
  p.scale = j.at("scale").get<std::vector<double>>();
  if (p.mean.size() != p.weight.size() || p.scale.size() != p.weight.size())
    throw std::invalid_argument("probe transform size does not match weight size");
  return p;
}

void save_probes(std::span<const ProbeResult> probes, std::size_t layers, const std::filesystem::path& path) {
  ojson j;
  j["target"] = probes.empty() ? "" : std::string(to_string(probes.front().target));
  j["layers"] = layers;
  j["positions"] = kPositions;
  j["weight_space"] = "standardized";
  j["probes"] = ojson::array();
  for (const auto& p : probes) j["probes"].push_back(to_json(p));
  io::write_atomic(path, j.dump() + "\n");
}

std::vector<ProbeResult> load_probes(const std::filesystem::path& path, std::size_t* layers) {
  const auto j = ojson::parse(io::read_file(path));
  std::vector<ProbeResult> out;
  for (const auto& p : j.at("probes")) out.push_back(probe_from_json(p));
  if (layers) *layers = j.at("layers").get<std::size_t>();
  return out;
}

ojson to_json(const PositionGrid& g) {
  ojson j;
  j["kind"] = g.kind;
  j["layers"] = g.layers;
  std::vector<int> offsets;
  for (std::size_t p = 0; p < kPositions; ++p) offsets.push_back(offset_of(p));
  j["offsets"] = offsets;
  ojson rows = ojson::array();
  for (std::size_t l = 0; l < g.layers; ++l) {
    ojson row = ojson::array();
    for (std::size_t p = 0; p < kPositions; ++p)
      row.push_back(g.flagged[l * kPositions + p] ? ojson(nullptr) : ojson(g.at(l, p)));
    rows.push_back(std::move(row));
  }
  j["values"] = std::move(rows);
  return j;
}

PositionGrid grid_from_json(const ojson& j) {
  PositionGrid g(j.at("kind").get<std::string>(), j.at("layers").get<std::size_t>());
  const auto& rows = j.at("values");
  if (rows.size() != g.layers) throw std::invalid_argument("grid row count does not match layers");
  for (std::size_t l = 0; l < g.layers; ++l) {
    if (rows[l].size() != kPositions) throw std::invalid_argument("grid row has the wrong width");
    for (std::size_t p = 0; p < kPositions; ++p) {
      if (rows[l][p].is_null())
        g.flagged[l * kPositions + p] = true;
      else
        g.at(l, p) = rows[l][p].get<double>();
    }
  }
  return g;
}

std::string grid_csv(const PositionGrid& g) {
  std::string out = "layer";
  for (std::size_t p = 0; p < kPositions; ++p) out += "," + std::to_string(offset_of(p));
  out += '\n';
  char buf[32];
  for (std::size_t l = 0; l < g.layers; ++l) {
    out += std::to_string(l);
    for (std::size_t p = 0; p < kPositions; ++p) {
      out += ',';
      if (g.flagged[l * kPositions + p]) continue;
      std::snprintf(buf, sizeof buf, "%.6f", g.at(l, p));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

namespace {

// Diverging red-white-blue when the range straddles zero, white-to-blue otherwise.
std::string color_for(double v, double lo, double hi) {
  v = std::clamp(v, lo, hi);
  int r = 255, g = 255, b = 255;
  if (lo < 0.0 && hi > 0.0) {
    const double t = v >= 0 ? v / hi : v / lo;
    if (v >= 0) {
      r = static_cast<int>(255 - t * (255 - 33));
      g = static_cast<int>(255 - t * (255 - 102));
      b = static_cast<int>(255 - t * (255 - 172));
    } else {
      r = static_cast<int>(255 - t * (255 - 178));
      g = static_cast<int>(255 - t * (255 - 24));
      b = static_cast<int>(255 - t * (255 - 43));
    }
  } else {
    const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    r = static_cast<int>(247 - t * (247 - 8));
    g = static_cast<int>(251 - t * (251 - 48));
    b = static_cast<int>(255 - t * (255 - 107));
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

std::string grid_svg(const PositionGrid& g, double lo, double hi, std::string_view title) {
  constexpr int cell = 22, left = 48, top = 36, bottom = 30;
  const int width = left + static_cast<int>(kPositions) * cell + 10;
  const int height = top + static_cast<int>(g.layers) * cell + bottom;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
                  std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"9\">\n";
  s += "<text x=\"" + std::to_string(left) + "\" y=\"16\" font-size=\"12\">" + std::string(title) + "</text>\n";
  char buf[64];
  for (std::size_t l = 0; l < g.layers; ++l) {
    const int y = top + static_cast<int>(l) * cell;
    s += "<text x=\"4\" y=\"" + std::to_string(y + cell / 2 + 3) + "\">L" + std::to_string(l) + "</text>\n";
    for (std::size_t p = 0; p < kPositions; ++p) {
      const int x = left + static_cast<int>(p) * cell;
      const bool flagged = g.flagged[l * kPositions + p];
      const std::string fill = flagged ? "#cccccc" : color_for(g.at(l, p), lo, hi);
      std::snprintf(buf, sizeof buf, "%.3f", g.at(l, p));
      s += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" + std::to_string(cell) +
           "\" height=\"" + std::to_string(cell) + "\" fill=\"" + fill + "\"><title>layer " + std::to_string(l) +
           ", token " + std::to_string(offset_of(p)) + ": " + (flagged ? std::string("undefined") : std::string(buf)) +
           "</title></rect>\n";
    }
  }
  const int label_y = top + static_cast<int>(g.layers) * cell + 14;
  for (std::size_t p = 0; p < kPositions; p += 1)
    s += "<text x=\"" + std::to_string(left + static_cast<int>(p) * cell + 3) + "\" y=\"" + std::to_string(label_y) +
         "\">" + std::to_string(offset_of(p)) + "</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace toolgap
