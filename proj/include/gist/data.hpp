#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "gist/graph.hpp"
#include "gist/random.hpp"

namespace gist {

class DatasetError : public std::runtime_error {
 public:
  enum class Kind { missing_file, parse_error, ragged_features, label_out_of_range, overlapping_masks, invalid };

  DatasetError(Kind kind, const std::string& what) : std::runtime_error(what), kind_{kind} {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct LoadWarnings {
  std::size_t self_loops_dropped = 0;
  std::size_t duplicate_edges_dropped = 0;
};

struct DatasetBundle {
  Graph graph;
  std::string name;
  std::size_t num_classes = 0;
  LoadWarnings warnings;

  void validate() const {
    graph.validate();
    for (auto y : graph.labels)
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
        throw DatasetError(DatasetError::Kind::label_out_of_range, "label " + std::to_string(y) + " out of range");
    auto any = [](const Mask& m) { return std::any_of(m.begin(), m.end(), [](auto v) { return v != 0; }); };
    if (!any(graph.train_mask) || !any(graph.test_mask))
      throw DatasetError(DatasetError::Kind::invalid, "train and test splits must be nonempty");
  }
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == '\t' || line[i] == ' ' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != '\t' && line[i] != ' ' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename N>
N parse_number(std::string_view s, const std::string& where) {
  N v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw DatasetError(DatasetError::Kind::parse_error, where + ": cannot parse '" + std::string(s) + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::ifstream open_input(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DatasetError(DatasetError::Kind::missing_file, "missing file: " + p.string());
  return in;
}

}  // namespace detail

// Reads meta.json, nodes.tsv, edges.tsv and splits.tsv from `dir`.
inline DatasetBundle load_dataset(const std::filesystem::path& dir) {
  using K = DatasetError::Kind;
  DatasetBundle b;

  nlohmann::json meta;
  {
    auto in = detail::open_input(dir / "meta.json");
    try {
      in >> meta;
      b.name = meta.at("name").get<std::string>();
      b.num_classes = meta.at("num_classes").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(K::parse_error, std::string("meta.json: ") + e.what());
    }
  }
  const auto d = meta.at("num_features").get<std::size_t>();

  std::vector<double> feats;
  std::vector<int> labels;
  {
    auto in = detail::open_input(dir / "nodes.tsv");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto f = detail::split_fields(line);
      const std::string where = "nodes.tsv:" + std::to_string(lineno);
      if (f.size() != d + 2)
        throw DatasetError(K::ragged_features, where + ": expected " + std::to_string(d) + " features, got " +
                                                   std::to_string(f.size() < 2 ? 0 : f.size() - 2));
      if (detail::parse_number<std::size_t>(f[0], where) != labels.size())
        throw DatasetError(K::parse_error, where + ": node ids must be 0..n-1 in order");
      for (std::size_t j = 0; j < d; ++j) feats.push_back(detail::parse_number<double>(f[1 + j], where));
      const int y = detail::parse_number<int>(f[d + 1], where);
      if (y < 0 || static_cast<std::size_t>(y) >= b.num_classes)
        throw DatasetError(K::label_out_of_range, where + ": label " + std::to_string(y) + " out of range");
      labels.push_back(y);
    }
  }
  const std::size_t n = labels.size();
  Graph& g = b.graph;
  g.n = n;
  g.features = DenseMatrix<double>(n, d, std::move(feats));
  g.labels = std::move(labels);
  g.train_mask.assign(n, 0);
  g.val_mask.assign(n, 0);
  g.test_mask.assign(n, 0);

  {
    auto in = detail::open_input(dir / "edges.tsv");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto f = detail::split_fields(line);
      if (f.empty()) continue;
      const std::string where = "edges.tsv:" + std::to_string(lineno);
      if (f.size() != 2) throw DatasetError(K::parse_error, where + ": expected two node ids");
      const auto u = detail::parse_number<std::size_t>(f[0], where);
      const auto v = detail::parse_number<std::size_t>(f[1], where);
      if (u >= n || v >= n) throw DatasetError(K::parse_error, where + ": node id out of range");
      g.edges.emplace_back(u, v);
    }
  }
  const std::size_t raw_edges = g.edges.size();

  {
    auto in = detail::open_input(dir / "splits.tsv");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto f = detail::split_fields(line);
      if (f.empty()) continue;
      const std::string where = "splits.tsv:" + std::to_string(lineno);
      if (f.size() != 2) throw DatasetError(K::parse_error, where + ": expected 'node_id split'");
      const auto v = detail::parse_number<std::size_t>(f[0], where);
      if (v >= n) throw DatasetError(K::parse_error, where + ": node id out of range");
      if (g.train_mask[v] || g.val_mask[v] || g.test_mask[v])
        throw DatasetError(K::overlapping_masks, where + ": node " + std::to_string(v) + " assigned to two splits");
      if (f[1] == "train") g.train_mask[v] = 1;
      else if (f[1] == "val") g.val_mask[v] = 1;
      else if (f[1] == "test") g.test_mask[v] = 1;
      else throw DatasetError(K::parse_error, where + ": unknown split '" + std::string(f[1]) + "'");
    }
  }

  b.warnings.self_loops_dropped = g.canonicalize();
  b.warnings.duplicate_edges_dropped = raw_edges - b.warnings.self_loops_dropped - g.edges.size();
  b.validate();
  return b;
}

// Canonical form: sorted u < v edges, shortest round-trip decimals, splits in
// node order.
inline void save_dataset(const DatasetBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Graph& g = b.graph;
  {
    nlohmann::json meta{{"name", b.name}, {"num_classes", b.num_classes}, {"num_features", g.feature_dim()}};
    std::ofstream out(dir / "meta.json", std::ios::binary);
    out << meta.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "nodes.tsv", std::ios::binary);
    for (std::size_t i = 0; i < g.n; ++i) {
      out << i;
      for (double v : g.features.row(i)) out << '\t' << detail::format_double(v);
      out << '\t' << g.labels[i] << '\n';
    }
  }
  {
    std::ofstream out(dir / "edges.tsv", std::ios::binary);
    for (auto [u, v] : g.edges) out << u << '\t' << v << '\n';
  }
  {
    std::ofstream out(dir / "splits.tsv", std::ios::binary);
    for (std::size_t i = 0; i < g.n; ++i) {
      if (g.train_mask[i]) out << i << "\ttrain\n";
      else if (g.val_mask[i]) out << i << "\tval\n";
      else if (g.test_mask[i]) out << i << "\ttest\n";
    }
  }
}

// Scales each nonzero feature row to unit l1 sum.
inline void row_normalize_features(Graph& g) {
  for (std::size_t i = 0; i < g.n; ++i) {
    auto row = g.features.row(i);
    double s = 0.0;
    for (double v : row) s += std::abs(v);
    if (s == 0.0) continue;
    for (double& v : row) v /= s;
  }
}

// Scales each nonzero feature row to the given l2 norm.
inline void scale_rows_to_norm(Graph& g, double norm) {
  for (std::size_t i = 0; i < g.n; ++i) {
    auto row = g.features.row(i);
    double s = 0.0;
    for (double v : row) s += v * v;
    if (s == 0.0) continue;
    const double f = norm / std::sqrt(s);
    for (double& v : row) v *= f;
  }
}

// Random 60/20/20 train/val/test split.
inline void assign_random_splits(Graph& g, Rng& rng, double train_frac = 0.6, double val_frac = 0.2) {
  std::vector<std::size_t> order(g.n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::round(train_frac * static_cast<double>(g.n)));
  const auto n_val = static_cast<std::size_t>(std::round(val_frac * static_cast<double>(g.n)));
  g.train_mask.assign(g.n, 0);
  g.val_mask.assign(g.n, 0);
  g.test_mask.assign(g.n, 0);
  for (std::size_t k = 0; k < g.n; ++k) {
    const auto v = order[k];
    if (k < n_train) g.train_mask[v] = 1;
    else if (k < n_train + n_val) g.val_mask[v] = 1;
    else g.test_mask[v] = 1;
  }
}

struct SbmParams {
  std::size_t n = 200;
  std::size_t blocks = 2;
  double p_in = 0.1;
  double p_out = 0.01;
  std::size_t feature_dim = 8;
  double noise = 1.0;
  std::uint64_t seed = 0;
  // When set, rows are rescaled to l2 norm (1 - eps) / 2 for the theory regime.
  double theory_eps = -1.0;
};

// Stochastic block model. Node i belongs to block floor(i k / n); its
// feature is the one-hot block signal (block mod d) plus Gaussian noise.
inline DatasetBundle synth_sbm(const SbmParams& p) {
  if (p.n == 0 || p.blocks == 0 || p.blocks > p.n) throw std::invalid_argument("synth_sbm: need 1 <= blocks <= n");
  if (!(p.p_in > p.p_out) || p.p_out < 0.0 || p.p_in > 1.0)
    throw std::invalid_argument("synth_sbm: probabilities must satisfy 0 <= p_out < p_in <= 1");
  if (p.feature_dim == 0 || p.noise < 0.0) throw std::invalid_argument("synth_sbm: bad feature settings");
  auto rng = make_rng(p.seed, {0x5b3});

  DatasetBundle b;
  b.name = "sbm";
  b.num_classes = p.blocks;
  Graph& g = b.graph;
  g.n = p.n;
  g.labels.resize(p.n);
  for (std::size_t i = 0; i < p.n; ++i) g.labels[i] = static_cast<int>(i * p.blocks / p.n);

  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t i = 0; i < p.n; ++i)
    for (std::size_t j = i + 1; j < p.n; ++j)
      if (coin(rng) < (g.labels[i] == g.labels[j] ? p.p_in : p.p_out)) g.edges.emplace_back(i, j);

  std::normal_distribution<double> gauss(0.0, 1.0);
  g.features = DenseMatrix<double>(p.n, p.feature_dim);
  for (std::size_t i = 0; i < p.n; ++i) {
    auto row = g.features.row(i);
    row[static_cast<std::size_t>(g.labels[i]) % p.feature_dim] = 1.0;
    if (p.noise > 0.0)
      for (double& v : row) v += p.noise * gauss(rng);
  }
  if (p.theory_eps >= 0.0) scale_rows_to_norm(g, (1.0 - p.theory_eps) / 2.0);
  assign_random_splits(g, rng);
  g.canonicalize();
  b.validate();
  return b;
}

struct RegularParams {
  std::size_t n = 20;
  std::size_t degree = 4;
  std::size_t feature_dim = 6;
  double eps = 0.1;
  std::uint64_t seed = 0;
};

// Random simple `degree`-regular graph (Steger-Wormald pairing: join two
// random free stubs whenever that keeps the graph simple, restart if stuck)
// with Gaussian features scaled to l2 norm (1 - eps) / 2 and random binary
// labels.
inline DatasetBundle synth_regular(const RegularParams& p) {
  if (p.degree >= p.n || (p.n * p.degree) % 2 != 0)
    throw std::invalid_argument("synth_regular: need degree < n and n*degree even");
  auto rng = make_rng(p.seed, {0x7e9});
  std::vector<Edge> edges;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 1000) throw std::runtime_error("synth_regular: could not build a simple regular graph");
    std::vector<std::size_t> stubs;
    for (std::size_t v = 0; v < p.n; ++v)
      for (std::size_t k = 0; k < p.degree; ++k) stubs.push_back(v);
    std::set<Edge> used;
    bool stuck = false;
    while (!stubs.empty() && !stuck) {
      std::vector<std::pair<std::size_t, std::size_t>> ok;
      for (std::size_t a = 0; a < stubs.size(); ++a)
        for (std::size_t b = a + 1; b < stubs.size(); ++b) {
          const Edge e{std::min(stubs[a], stubs[b]), std::max(stubs[a], stubs[b])};
          if (e.first != e.second && !used.count(e)) ok.emplace_back(a, b);
        }
      if (ok.empty()) {
        stuck = true;
        break;
      }
      const auto [a, b] = ok[std::uniform_int_distribution<std::size_t>(0, ok.size() - 1)(rng)];
      used.insert({std::min(stubs[a], stubs[b]), std::max(stubs[a], stubs[b])});
      stubs.erase(stubs.begin() + static_cast<std::ptrdiff_t>(b));
      stubs.erase(stubs.begin() + static_cast<std::ptrdiff_t>(a));
    }
    if (stuck) continue;
    edges.assign(used.begin(), used.end());
    break;
  }
  DatasetBundle b;
  b.name = "regular";
  b.num_classes = 2;
  Graph& g = b.graph;
  g.n = p.n;
  g.edges = std::move(edges);
  g.features = DenseMatrix<double>(p.n, p.feature_dim);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& v : g.features.values()) v = gauss(rng);
  scale_rows_to_norm(g, (1.0 - p.eps) / 2.0);
  std::bernoulli_distribution coin(0.5);
  g.labels.resize(p.n);
  for (auto& y : g.labels) y = coin(rng) ? 1 : 0;
  assign_random_splits(g, rng);
  g.canonicalize();
  b.validate();
  return b;
}

}  // namespace gist
