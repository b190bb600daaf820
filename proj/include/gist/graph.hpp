#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gist/tensor.hpp"

namespace gist {

using Edge = std::pair<std::size_t, std::size_t>;
using Mask = std::vector<std::uint8_t>;

class GraphError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Undirected attributed graph. Edges are stored once with u < v, sorted,
// without self-loops. Features are kept in 64-bit; training casts them down.
struct Graph {
  std::size_t n = 0;
  std::vector<Edge> edges;
  DenseMatrix<double> features;
  std::vector<int> labels;
  Mask train_mask;
  Mask val_mask;
  Mask test_mask;

  std::size_t feature_dim() const noexcept { return features.cols(); }

  // Sorts and deduplicates edges and checks every invariant.
  // Returns the number of self-loops that were dropped.
  std::size_t canonicalize() {
    std::size_t self_loops = 0;
    std::vector<Edge> out;
    out.reserve(edges.size());
    for (auto [u, v] : edges) {
      if (u >= n || v >= n) throw GraphError("edge (" + std::to_string(u) + "," + std::to_string(v) + ") out of range");
      if (u == v) {
        ++self_loops;
        continue;
      }
      out.emplace_back(std::min(u, v), std::max(u, v));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    edges = std::move(out);
    validate();
    return self_loops;
  }

  void validate() const {
    if (features.rows() != n) throw GraphError("feature rows do not match node count");
    if (labels.size() != n) throw GraphError("label count does not match node count");
    for (const Mask* m : {&train_mask, &val_mask, &test_mask})
      if (m->size() != n) throw GraphError("mask length does not match node count");
    for (std::size_t i = 0; i < n; ++i)
      if (int(train_mask[i] != 0) + int(val_mask[i] != 0) + int(test_mask[i] != 0) > 1)
        throw GraphError("node " + std::to_string(i) + " appears in more than one split");
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const auto [u, v] = edges[k];
      if (u >= v || v >= n) throw GraphError("edges must satisfy u < v < n");
      if (k > 0 && !(edges[k - 1] < edges[k])) throw GraphError("edges must be sorted and unique");
    }
  }
};

// Empty label/mask/feature scaffolding over n nodes.
inline Graph make_graph(std::size_t n, std::vector<Edge> edges, std::size_t feature_dim = 1) {
  Graph g;
  g.n = n;
  g.edges = std::move(edges);
  g.features = DenseMatrix<double>(n, feature_dim);
  g.labels.assign(n, 0);
  g.train_mask.assign(n, 0);
  g.val_mask.assign(n, 0);
  g.test_mask.assign(n, 0);
  g.canonicalize();
  return g;
}

inline std::vector<std::size_t> degrees(const Graph& g) {
  std::vector<std::size_t> deg(g.n, 0);
  for (auto [u, v] : g.edges) {
    ++deg[u];
    ++deg[v];
  }
  return deg;
}

inline std::vector<std::vector<std::size_t>> adjacency_lists(const Graph& g) {
  std::vector<std::vector<std::size_t>> adj(g.n);
  for (auto [u, v] : g.edges) {
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  return adj;
}

struct DegreeStats {
  std::size_t min_deg = 0;
  std::size_t max_deg = 0;
  double mean_deg = 0.0;
};

inline DegreeStats degree_stats(const Graph& g) {
  if (g.n == 0) return {};
  const auto deg = degrees(g);
  DegreeStats s;
  s.min_deg = *std::min_element(deg.begin(), deg.end());
  s.max_deg = *std::max_element(deg.begin(), deg.end());
  s.mean_deg = 2.0 * static_cast<double>(g.edges.size()) / static_cast<double>(g.n);
  return s;
}

enum class AdjacencyMode {
  renorm,     // D̃^{-1/2}(A+I)D̃^{-1/2}, D̃ = D + I
  chebyshev,  // I + D^{-1/2} A D^{-1/2}
};

inline const char* to_string(AdjacencyMode m) {
  return m == AdjacencyMode::renorm ? "renorm" : "chebyshev";
}

inline AdjacencyMode parse_adjacency_mode(const std::string& s) {
  if (s == "renorm") return AdjacencyMode::renorm;
  if (s == "chebyshev") return AdjacencyMode::chebyshev;
  throw std::invalid_argument("unknown adjacency mode '" + s + "'");
}

template <typename T = double>
SparseMatrix<T> normalized_adjacency(const Graph& g, AdjacencyMode mode) {
  const auto deg = degrees(g);
  std::vector<double> inv_sqrt(g.n, 0.0);
  for (std::size_t i = 0; i < g.n; ++i) {
    const double d = static_cast<double>(deg[i]) + (mode == AdjacencyMode::renorm ? 1.0 : 0.0);
    inv_sqrt[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  std::vector<std::tuple<std::size_t, std::size_t, T>> trip;
  trip.reserve(2 * g.edges.size() + g.n);
  for (std::size_t i = 0; i < g.n; ++i) {
    const double diag = mode == AdjacencyMode::renorm ? inv_sqrt[i] * inv_sqrt[i] : 1.0;
    trip.emplace_back(i, i, static_cast<T>(diag));
  }
  for (auto [u, v] : g.edges) {
    const auto w = static_cast<T>(inv_sqrt[u] * inv_sqrt[v]);
    trip.emplace_back(u, v, w);
    trip.emplace_back(v, u, w);
  }
  return SparseMatrix<T>::from_triplets(g.n, g.n, std::move(trip));
}

// Row-normalised neighbour mean (no self term). Isolated rows are empty.
template <typename T = double>
SparseMatrix<T> mean_neighbor_operator(const Graph& g) {
  const auto adj = adjacency_lists(g);
  std::vector<std::size_t> row_ptr(g.n + 1, 0), col_idx;
  std::vector<T> values;
  col_idx.reserve(2 * g.edges.size());
  values.reserve(2 * g.edges.size());
  for (std::size_t i = 0; i < g.n; ++i) {
    const auto w = adj[i].empty() ? T{} : static_cast<T>(1.0 / static_cast<double>(adj[i].size()));
    for (auto j : adj[i]) {
      col_idx.push_back(j);
      values.push_back(w);
    }
    row_ptr[i + 1] = col_idx.size();
  }
  return SparseMatrix<T>(g.n, g.n, std::move(row_ptr), std::move(col_idx), std::move(values));
}

// Keeps exactly the edges with both endpoints in `nodes`; new ids follow
// the order of `nodes`.
inline Graph induced_subgraph(const Graph& g, std::span<const std::size_t> nodes) {
  constexpr auto npos = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> remap(g.n, npos);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto v = nodes[i];
    if (v >= g.n) throw GraphError("induced_subgraph: node " + std::to_string(v) + " out of range");
    if (remap[v] != npos) throw GraphError("induced_subgraph: node " + std::to_string(v) + " repeated");
    remap[v] = i;
  }
  Graph out;
  out.n = nodes.size();
  for (auto [u, v] : g.edges) {
    if (remap[u] == npos || remap[v] == npos) continue;
    out.edges.emplace_back(std::min(remap[u], remap[v]), std::max(remap[u], remap[v]));
  }
  std::sort(out.edges.begin(), out.edges.end());
  out.features = slice_rows(g.features, nodes);
  out.labels.resize(out.n);
  out.train_mask.resize(out.n);
  out.val_mask.resize(out.n);
  out.test_mask.resize(out.n);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    out.labels[i] = g.labels[nodes[i]];
    out.train_mask[i] = g.train_mask[nodes[i]];
    out.val_mask[i] = g.val_mask[nodes[i]];
    out.test_mask[i] = g.test_mask[nodes[i]];
  }
  return out;
}

}  // namespace gist
