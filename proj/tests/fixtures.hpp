#pragma once

// Synthetic hidden-state data shared by the probe, diagnosis and acceptance tests.

#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "toolgap/dump.hpp"
#include "toolgap/probes.hpp"
#include "toolgap/rng.hpp"

namespace fixtures {

inline double gaussian(toolgap::Rng& rng) {
  const double u1 = 1.0 - rng.uniform01();
  const double u2 = rng.uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline std::vector<double> unit_vector(toolgap::Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double n = 0.0;
  for (auto& x : v) {
    x = gaussian(rng);
    n += x * x;
  }
  for (auto& x : v) x /= std::sqrt(n);
  return v;
}

/// Two Gaussian clusters split by the hyperplane u.x = 0 with unit margin:
/// off u the features are standard normal, along u each point sits at
/// signed distance +-(1 + |g|) with g standard normal.
struct Separable {
  toolgap::FeatureMatrix x;
  std::vector<int> y;
  std::vector<double> direction;
};

inline Separable separable(std::uint64_t seed, std::size_t k, std::size_t d) {
  toolgap::Rng rng(seed);
  Separable s;
  s.direction = unit_vector(rng, d);
  s.x.rows = k;
  s.x.cols = d;
  s.x.data.resize(k * d);
  for (std::size_t i = 0; i < k; ++i) {
    const int y = rng.uniform01() < 0.5 ? 1 : 0;
    std::vector<double> v(d);
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      v[j] = gaussian(rng);
      dot += v[j] * s.direction[j];
    }
    const double along = (y ? 1.0 : -1.0) * (1.0 + std::abs(gaussian(rng)));
    for (std::size_t j = 0; j < d; ++j) s.x.data[i * d + j] = v[j] + (along - dot) * s.direction[j];
    s.y.push_back(y);
  }
  return s;
}

/// Dump whose planted cells carry the label as a +-margin shift along a
/// random unit direction; every other cell is pure noise.
struct Planted {
  std::map<std::string, int> labels;
  std::set<std::size_t> planted;  // cell indices
};

inline Planted write_planted_dump(const std::filesystem::path& path, std::uint64_t seed, std::size_t samples,
                                  std::size_t layers, std::size_t dim, const std::vector<toolgap::GridCell>& cells,
                                  double margin) {
  toolgap::Rng rng(seed);
  Planted out;
  for (const auto& c : cells) out.planted.insert(toolgap::cell_index(c));
  std::vector<std::vector<double>> dirs;
  for (std::size_t i = 0; i < cells.size(); ++i) dirs.push_back(unit_vector(rng, dim));

  toolgap::DumpHeader h;
  h.model = "planted";
  h.dim = dim;
  h.n_layers = layers;
  std::vector<float> body;
  body.reserve(samples * h.floats_per_sample());
  for (std::size_t s = 0; s < samples; ++s) {
    const std::string id = "p" + std::to_string(s);
    h.sample_ids.push_back(id);
    const int y = rng.uniform01() < 0.5 ? 1 : 0;
    out.labels[id] = y;
    for (std::size_t l = 0; l < layers; ++l)
      for (std::size_t p = 0; p < toolgap::kPositions; ++p) {
        const std::size_t ci = l * toolgap::kPositions + p;
        std::size_t which = cells.size();
        for (std::size_t k = 0; k < cells.size(); ++k)
          if (toolgap::cell_index(cells[k]) == ci) which = k;
        for (std::size_t j = 0; j < dim; ++j) {
          double v = gaussian(rng);
          if (which < cells.size()) v += (y ? margin : -margin) * dirs[which][j];
          body.push_back(static_cast<float>(v));
        }
      }
  }
  toolgap::write_dump(path, h, body);
  return out;
}

/// Two independent label sets planted at the same cells along orthogonal
/// unit directions: cognition along u, action along v with u.v = 0.
struct DualPlanted {
  std::map<std::string, int> cognition;
  std::map<std::string, int> action;
  std::set<std::size_t> planted;
};

inline DualPlanted write_dual_planted_dump(const std::filesystem::path& path, std::uint64_t seed, std::size_t samples,
                                           std::size_t layers, std::size_t dim,
                                           const std::vector<toolgap::GridCell>& cells, double margin) {
  toolgap::Rng rng(seed);
  DualPlanted out;
  std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> dirs;
  for (const auto& c : cells) {
    out.planted.insert(toolgap::cell_index(c));
    auto u = unit_vector(rng, dim);
    auto v = unit_vector(rng, dim);
    double dot = 0.0;
    for (std::size_t j = 0; j < dim; ++j) dot += u[j] * v[j];
    double norm = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      v[j] -= dot * u[j];
      norm += v[j] * v[j];
    }
    for (auto& x : v) x /= std::sqrt(norm);
    dirs[toolgap::cell_index(c)] = {u, v};
  }

  toolgap::DumpHeader h;
  h.model = "dual-planted";
  h.dim = dim;
  h.n_layers = layers;
  std::vector<float> body;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::string id = "q" + std::to_string(s);
    h.sample_ids.push_back(id);
    const int yc = rng.uniform01() < 0.5 ? 1 : 0;
    const int ya = rng.uniform01() < 0.5 ? 1 : 0;
    out.cognition[id] = yc;
    out.action[id] = ya;
    for (std::size_t ci = 0; ci < layers * toolgap::kPositions; ++ci) {
      const auto it = dirs.find(ci);
      for (std::size_t j = 0; j < dim; ++j) {
        double x = gaussian(rng);
        if (it != dirs.end())
          x += (yc ? margin : -margin) * it->second.first[j] + (ya ? margin : -margin) * it->second.second[j];
        body.push_back(static_cast<float>(x));
      }
    }
  }
  toolgap::write_dump(path, h, body);
  return out;
}

}  // namespace fixtures
