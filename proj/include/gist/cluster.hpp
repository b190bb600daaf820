#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "gist/graph.hpp"
#include "gist/random.hpp"

namespace gist {

class ClusterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Clustering {
  std::size_t c = 0;
  std::vector<std::size_t> assignment;         // node -> cluster
  std::vector<std::vector<std::size_t>> members;  // cluster -> sorted nodes

  static Clustering from_assignment(std::size_t c, std::vector<std::size_t> assignment) {
    Clustering cl{c, std::move(assignment), std::vector<std::vector<std::size_t>>(c)};
    for (std::size_t v = 0; v < cl.assignment.size(); ++v) {
      if (cl.assignment[v] >= c) throw ClusterError("cluster id out of range");
      cl.members[cl.assignment[v]].push_back(v);
    }
    for (std::size_t j = 0; j < c; ++j)
      if (cl.members[j].empty()) throw ClusterError("cluster " + std::to_string(j) + " is empty");
    return cl;
  }
};

inline std::size_t cut_edges(const Graph& g, const Clustering& cl) {
  std::size_t cut = 0;
  for (auto [u, v] : g.edges) cut += cl.assignment[u] != cl.assignment[v];
  return cut;
}

namespace detail {

struct Balance {
  std::vector<std::size_t> target, lo, hi;
};

inline Balance balance_bounds(std::size_t n, std::size_t c) {
  Balance b;
  for (std::size_t j = 0; j < c; ++j) {
    const std::size_t t = n / c + (j < n % c ? 1 : 0);
    b.target.push_back(t);
    b.lo.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(t)))));
    b.hi.push_back(static_cast<std::size_t>(std::floor(1.1 * static_cast<double>(t))));
  }
  return b;
}

inline long links_to(const std::vector<std::size_t>& nbrs, const std::vector<std::size_t>& assign, std::size_t cluster) {
  long k = 0;
  for (auto u : nbrs) k += assign[u] == cluster;
  return k;
}

// Boundary refinement: positive-gain single moves within the balance band,
// then Kernighan-Lin style pair swaps. Every accepted change strictly lowers
// the cut.
inline void refine(const std::vector<std::vector<std::size_t>>& adj, std::vector<std::size_t>& assign,
                   std::vector<std::size_t>& sizes, const Balance& bal, std::size_t max_iters = 32) {
  const std::size_t n = adj.size();
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    bool changed = false;

    for (std::size_t v = 0; v < n; ++v) {
      const auto a = assign[v];
      if (sizes[a] <= bal.lo[a]) continue;
      const long own = links_to(adj[v], assign, a);
      std::size_t best = a;
      long best_gain = 0;
      for (auto u : adj[v]) {
        const auto b = assign[u];
        if (b == a || sizes[b] >= bal.hi[b]) continue;
        const long gain = links_to(adj[v], assign, b) - own;
        if (gain > best_gain || (gain == best_gain && gain > 0 && b < best)) {
          best_gain = gain;
          best = b;
        }
      }
      if (best != a && best_gain > 0) {
        assign[v] = best;
        --sizes[a];
        ++sizes[best];
        changed = true;
      }
    }

    // Candidates per ordered cluster pair (a, b): nodes of a touching b.
    std::map<std::pair<std::size_t, std::size_t>, std::vector<std::pair<long, std::size_t>>> cand;
    for (std::size_t v = 0; v < n; ++v) {
      const auto a = assign[v];
      const long own = links_to(adj[v], assign, a);
      std::vector<std::size_t> seen;
      for (auto u : adj[v]) {
        const auto b = assign[u];
        if (b == a || std::find(seen.begin(), seen.end(), b) != seen.end()) continue;
        seen.push_back(b);
        cand[{a, b}].emplace_back(links_to(adj[v], assign, b) - own, v);
      }
    }
    std::vector<char> locked(n, 0);
    for (auto& [key, lhs] : cand) {
      const auto [a, b] = key;
      if (a > b) continue;
      auto it = cand.find({b, a});
      if (it == cand.end()) continue;
      auto& rhs = it->second;
      auto by_gain = [](const auto& x, const auto& y) { return x.first != y.first ? x.first > y.first : x.second < y.second; };
      std::sort(lhs.begin(), lhs.end(), by_gain);
      std::sort(rhs.begin(), rhs.end(), by_gain);
      std::size_t i = 0, j = 0;
      while (i < lhs.size() && j < rhs.size()) {
        const auto u = lhs[i].second, w = rhs[j].second;
        if (locked[u] || assign[u] != a) { ++i; continue; }
        if (locked[w] || assign[w] != b) { ++j; continue; }
        if (lhs[i].first + rhs[j].first <= 0) break;
        const long gu = links_to(adj[u], assign, b) - links_to(adj[u], assign, a);
        const long gw = links_to(adj[w], assign, a) - links_to(adj[w], assign, b);
        const long shared = std::binary_search(adj[u].begin(), adj[u].end(), w) ? 1 : 0;
        if (gu + gw - 2 * shared > 0) {
          assign[u] = b;
          assign[w] = a;
          locked[u] = locked[w] = 1;
          changed = true;
        }
        ++i;
        ++j;
      }
    }
    if (!changed) break;
  }
}

}  // namespace detail

// Balanced multi-source BFS growth from c random seeds with round-robin
// frontier expansion, followed by one boundary refinement pass.
inline Clustering partition_graph(const Graph& g, std::size_t c, Rng& rng) {
  const std::size_t n = g.n;
  if (c < 1) throw ClusterError("cluster count must be at least 1");
  if (c > n) throw ClusterError("cluster count " + std::to_string(c) + " exceeds node count " + std::to_string(n));
  if (c == 1) return Clustering::from_assignment(1, std::vector<std::size_t>(n, 0));

  const auto adj = adjacency_lists(g);
  const auto bal = detail::balance_bounds(n, c);
  constexpr auto unassigned = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> assign(n, unassigned), sizes(c, 0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::deque<std::size_t>> frontier(c);
  std::size_t next_free = 0, assigned = 0;
  auto take = [&](std::size_t v, std::size_t j) {
    assign[v] = j;
    ++sizes[j];
    ++assigned;
    for (auto u : adj[v])
      if (assign[u] == unassigned) frontier[j].push_back(u);
  };
  for (std::size_t j = 0; j < c; ++j) take(order[j], j);

  while (assigned < n) {
    for (std::size_t j = 0; j < c && assigned < n; ++j) {
      if (sizes[j] >= bal.target[j]) continue;
      std::size_t v = unassigned;
      while (!frontier[j].empty()) {
        const auto u = frontier[j].front();
        frontier[j].pop_front();
        if (assign[u] == unassigned) {
          v = u;
          break;
        }
      }
      if (v == unassigned) {
        while (assign[order[next_free]] != unassigned) ++next_free;
        v = order[next_free];
      }
      take(v, j);
    }
  }

  detail::refine(adj, assign, sizes, bal);
  return Clustering::from_assignment(c, std::move(assign));
}

// Draws q clusters per batch without replacement, reshuffling at each epoch
// boundary so every cluster is used exactly once per epoch. The final batch
// of an epoch holds the remaining c mod q clusters when q does not divide c.
class BatchSampler {
 public:
  BatchSampler(const Clustering& cl, std::size_t q, std::uint64_t seed) : cl_{&cl}, q_{q}, rng_{seed} {
    if (q < 1 || q > cl.c)
      throw ClusterError("clusters per batch must be in [1, " + std::to_string(cl.c) + "], got " + std::to_string(q));
  }

  std::size_t batches_per_epoch() const noexcept { return (cl_->c + q_ - 1) / q_; }

  // Cluster ids of the next batch in draw order.
  std::vector<std::size_t> next_clusters() {
    if (pos_ >= perm_.size()) {
      perm_.resize(cl_->c);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      if (cl_->c > 1) std::shuffle(perm_.begin(), perm_.end(), rng_);
      pos_ = 0;
    }
    const std::size_t end = std::min(pos_ + q_, perm_.size());
    std::vector<std::size_t> ids(perm_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 perm_.begin() + static_cast<std::ptrdiff_t>(end));
    pos_ = end;
    return ids;
  }

  // Node ids of the next batch: clusters in draw order, members ascending.
  IndexSet next_nodes() { return nodes_of(next_clusters()); }

  IndexSet nodes_of(const std::vector<std::size_t>& clusters) const {
    IndexSet nodes;
    for (auto j : clusters) nodes.insert(nodes.end(), cl_->members[j].begin(), cl_->members[j].end());
    return nodes;
  }

 private:
  const Clustering* cl_;
  std::size_t q_;
  Rng rng_;
  std::vector<std::size_t> perm_;
  std::size_t pos_ = 0;
};

inline Graph make_batch(const Graph& g, BatchSampler& sampler) {
  const auto nodes = sampler.next_nodes();
  return induced_subgraph(g, nodes);
}

}  // namespace gist
