#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gist/graph.hpp"
#include "gist/random.hpp"
#include "gist/tensor.hpp"

namespace gist {

class TheoryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double max_asymmetry(const DenseMatrix<double>& a) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) worst = std::max(worst, std::abs(a(i, j) - a(j, i)));
  return worst;
}

// All eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi rotations.
inline std::vector<double> symmetric_eigenvalues(const DenseMatrix<double>& input, double sym_tol = 1e-9) {
  if (input.rows() != input.cols()) throw DimensionError("eigenvalues: matrix must be square");
  if (max_asymmetry(input) > sym_tol) throw std::invalid_argument("eigenvalues: matrix is not symmetric");
  const std::size_t n = input.rows();
  DenseMatrix<double> a = input;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (input(i, j) + input(j, i));

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
    return std::sqrt(2.0 * s);
  };
  const double scale = std::max(frobenius_norm(a), 1e-300);
  for (int sweep = 0; sweep < 100 && off_norm() > 1e-15 * scale; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

inline double min_eigenvalue(const DenseMatrix<double>& a) {
  if (a.empty()) throw DimensionError("min_eigenvalue: empty matrix");
  return symmetric_eigenvalues(a).front();
}

inline double max_eigenvalue(const DenseMatrix<double>& a) {
  if (a.empty()) throw DimensionError("max_eigenvalue: empty matrix");
  return symmetric_eigenvalues(a).back();
}

// P[⟨u,θ⟩ ≥ 0, ⟨v,θ⟩ ≥ 0] for θ ~ N(0, I).
inline double orthant_probability(std::span<const double> u, std::span<const double> v) {
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    uv += u[k] * v[k];
    uu += u[k] * u[k];
    vv += v[k] * v[k];
  }
  const double cosine = std::clamp(uv / std::sqrt(uu * vv), -1.0, 1.0);
  return (std::numbers::pi - std::acos(cosine)) / (2.0 * std::numbers::pi);
}

// H∞_ij = (1/(d1 m)) ⟨x̂_i, x̂_j⟩ P[⟨x̂_i,θ⟩ ≥ 0, ⟨x̂_j,θ⟩ ≥ 0].
inline DenseMatrix<double> ntk_gram(const DenseMatrix<double>& xhat, std::size_t m, std::size_t d1) {
  if (m == 0 || d1 == 0) throw std::invalid_argument("ntk_gram: m and d1 must be positive");
  const std::size_t n = xhat.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : xhat.row(i)) s += v * v;
    if (s == 0.0) throw TheoryError("ntk_gram: node " + std::to_string(i) + " has a zero feature row");
  }
  const double scale = 1.0 / (static_cast<double>(d1) * static_cast<double>(m));
  DenseMatrix<double> h(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const auto xi = xhat.row(i), xj = xhat.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < xi.size(); ++k) dot += xi[k] * xj[k];
      h(i, j) = h(j, i) = scale * dot * orthant_probability(xi, xj);
    }
  }
  return h;
}

// G∞ = Ā H∞ Ā, symmetrised.
inline DenseMatrix<double> gist_kernel(const SparseMatrix<double>& abar, const DenseMatrix<double>& h_inf) {
  if (abar.rows() != abar.cols() || abar.cols() != h_inf.rows() || h_inf.rows() != h_inf.cols())
    throw DimensionError("gist_kernel: shapes " + detail::shape_str(abar.rows(), abar.cols()) + " and " +
                         detail::shape_str(h_inf.rows(), h_inf.cols()) + " are not conformable");
  const auto ah = spmm(abar, h_inf);
  auto g = transpose(spmm(abar, transpose(ah)));
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = i + 1; j < g.cols(); ++j) g(i, j) = g(j, i) = 0.5 * (g(i, j) + g(j, i));
  return g;
}

// ‖Ā²‖_{1,1}: sum of every entry of Ā·Ā.
inline double abar_l1_norm(const SparseMatrix<double>& abar) {
  double s = 0.0;
  const auto sq = spmm(abar, abar.to_dense());
  for (const double v : sq.values()) s += std::abs(v);
  return s;
}

// Per-round contraction γ + (1 − γ)(1 − ηλ0/2)^ζ.
inline double predicted_rate(double gamma, double eta, double lambda0, std::size_t zeta) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("predicted_rate: gamma must lie in (0, 1)");
  if (!(eta > 0.0)) throw std::invalid_argument("predicted_rate: eta must be positive");
  if (lambda0 < 0.0) throw std::invalid_argument("predicted_rate: lambda0 must be nonnegative");
  if (eta * lambda0 >= 2.0) throw std::invalid_argument("predicted_rate: eta * lambda0 >= 2, rate formula invalid");
  return gamma + (1.0 - gamma) * std::pow(1.0 - eta * lambda0 / 2.0, static_cast<double>(zeta));
}

// Bound on the expected initial loss: C²n + (d/m²)‖Ā²‖_{1,1}.
inline double initial_loss_bound(double c, std::size_t n, std::size_t d, std::size_t m, double abar_l1) {
  const double md = static_cast<double>(m);
  return c * c * static_cast<double>(n) + static_cast<double>(d) / (md * md) * abar_l1;
}

// Regression targets in [-1, 1]: ±1 for two classes, evenly spaced otherwise.
inline std::vector<double> regression_targets(const Graph& g, std::size_t num_classes) {
  std::vector<double> y(g.n);
  for (std::size_t i = 0; i < g.n; ++i)
    y[i] = num_classes <= 1 ? 0.0 : 2.0 * g.labels[i] / static_cast<double>(num_classes - 1) - 1.0;
  return y;
}

struct ParallelPair {
  std::size_t i = 0;
  std::size_t j = 0;
  double abs_cosine = 0.0;
};

struct AssumptionResults {
  double lambda_min_abar = 0.0;
  bool abar_nonsingular = false;

  std::size_t min_deg = 0;
  std::size_t max_deg = 0;
  double p = 0.0;
  double eps = 1.0;
  bool degree_regular = false;

  double max_feature_norm = 0.0;
  double norm_bound = 0.0;
  bool feature_norm_pass = false;
  std::vector<ParallelPair> parallel_pairs;
  std::size_t parallel_pair_count = 0;
  bool nonparallel_pass = false;

  double max_xhat_norm = 0.0;
  bool xhat_norm_pass = false;

  double c = 0.0;

  bool all_pass() const { return abar_nonsingular && degree_regular && feature_norm_pass && nonparallel_pass && xhat_norm_pass; }
};

// The degree condition is solved in closed form: the ε of a candidate p is
// max(1 − √(min/p), √(max/p) − 1), minimised at √p = (√min + √max)/2.
inline AssumptionResults check_assumptions(const Graph& g, std::span<const double> targets = {},
                                           std::size_t max_reported_pairs = 10) {
  AssumptionResults r;
  const auto abar = normalized_adjacency<double>(g, AdjacencyMode::chebyshev);
  r.lambda_min_abar = g.n ? min_eigenvalue(abar.to_dense()) : 0.0;
  r.abar_nonsingular = g.n > 0 && std::abs(r.lambda_min_abar) > 1e-9;

  const auto stats = degree_stats(g);
  r.min_deg = stats.min_deg;
  r.max_deg = stats.max_deg;
  if (stats.min_deg > 0) {
    const double lo = std::sqrt(static_cast<double>(stats.min_deg)), hi = std::sqrt(static_cast<double>(stats.max_deg));
    r.p = 0.25 * (lo + hi) * (lo + hi);
    r.eps = (hi - lo) / (hi + lo);
    r.degree_regular = r.eps < 1.0;
  }

  r.norm_bound = (1.0 - r.eps) / 2.0;
  std::vector<double> norms(g.n);
  for (std::size_t i = 0; i < g.n; ++i) {
    double s = 0.0;
    for (double v : g.features.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
    r.max_feature_norm = std::max(r.max_feature_norm, norms[i]);
  }
  r.feature_norm_pass = r.degree_regular && r.max_feature_norm <= r.norm_bound + 1e-12;

  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = i + 1; j < g.n; ++j) {
      double dot = 0.0;
      const auto xi = g.features.row(i), xj = g.features.row(j);
      for (std::size_t k = 0; k < xi.size(); ++k) dot += xi[k] * xj[k];
      const double denom = norms[i] * norms[j];
      const double abs_cos = denom == 0.0 ? 1.0 : std::abs(dot) / denom;
      if (abs_cos >= 1.0 - 1e-12) {
        ++r.parallel_pair_count;
        if (r.parallel_pairs.size() < max_reported_pairs) r.parallel_pairs.push_back({i, j, abs_cos});
      }
    }
  }
  r.nonparallel_pass = r.parallel_pair_count == 0;

  const auto xhat = spmm(abar, g.features);
  for (std::size_t i = 0; i < g.n; ++i) {
    double s = 0.0;
    for (double v : xhat.row(i)) s += v * v;
    r.max_xhat_norm = std::max(r.max_xhat_norm, std::sqrt(s));
  }
  r.xhat_norm_pass = r.max_xhat_norm <= 1.0 + 1e-12;

  for (double y : targets) r.c = std::max(r.c, std::abs(y));
  return r;
}

inline nlohmann::json to_json(const AssumptionResults& r) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : r.parallel_pairs) pairs.push_back({{"i", p.i}, {"j", p.j}, {"abs_cosine", p.abs_cosine}});
  return {
      {"abar_nonsingular", {{"pass", r.abar_nonsingular}, {"lambda_min_abar", r.lambda_min_abar}}},
      {"degree_regularity",
       {{"pass", r.degree_regular}, {"min_deg", r.min_deg}, {"max_deg", r.max_deg}, {"p", r.p}, {"eps", r.eps}}},
      {"features",
       {{"norm_pass", r.feature_norm_pass},
        {"max_feature_norm", r.max_feature_norm},
        {"norm_bound", r.norm_bound},
        {"parallel_pass", r.nonparallel_pass},
        {"parallel_pair_count", r.parallel_pair_count},
        {"parallel_pairs", pairs}}},
      {"xhat_norm", {{"pass", r.xhat_norm_pass}, {"max_xhat_norm", r.max_xhat_norm}}},
      {"C", r.c},
      {"all_pass", r.all_pass()},
  };
}

struct KernelReport {
  DenseMatrix<double> h_inf;
  DenseMatrix<double> g_inf;
  double lambda0 = 0.0;
  double lambda_min_abar = 0.0;
  double abar_l1 = 0.0;
  AssumptionResults assumptions;
};

inline KernelReport kernel_report(const Graph& g, std::size_t m, std::size_t d1, std::span<const double> targets = {}) {
  KernelReport rep;
  rep.assumptions = check_assumptions(g, targets);
  const auto abar = normalized_adjacency<double>(g, AdjacencyMode::chebyshev);
  rep.h_inf = ntk_gram(spmm(abar, g.features), m, d1);
  rep.g_inf = gist_kernel(abar, rep.h_inf);
  rep.lambda0 = min_eigenvalue(rep.g_inf);
  rep.lambda_min_abar = rep.assumptions.lambda_min_abar;
  rep.abar_l1 = abar_l1_norm(abar);
  return rep;
}

inline nlohmann::json to_json(const KernelReport& r, bool include_matrices = false) {
  nlohmann::json j{{"lambda0", r.lambda0},
                   {"lambda_min_abar", r.lambda_min_abar},
                   {"abar_l1_norm", r.abar_l1},
                   {"assumptions", to_json(r.assumptions)}};
  if (include_matrices) {
    auto rows = [](const DenseMatrix<double>& a) {
      nlohmann::json out = nlohmann::json::array();
      for (std::size_t i = 0; i < a.rows(); ++i) out.push_back(std::vector<double>(a.row(i).begin(), a.row(i).end()));
      return out;
    };
    j["H_inf"] = rows(r.h_inf);
    j["G_inf"] = rows(r.g_inf);
  }
  return j;
}

struct TheoryConfig {
  std::size_t d1 = 4096;
  std::size_t m = 2;
  std::size_t zeta = 5;
  std::size_t rounds = 100;
  double eta = 0.0;  // <= 0 selects 1 / λ_max(d1 G∞)
  double gamma = 0.5;
  double delta = 0.1;
  std::uint64_t seed = 0;
  bool force = false;

  void validate() const {
    if (d1 == 0 || m == 0 || zeta == 0 || rounds == 0) throw std::invalid_argument("theory: d1, m, zeta, T must be >= 1");
    if (m > d1) throw std::invalid_argument("theory: m must not exceed d1");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("theory: gamma must lie in (0, 1)");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("theory: delta must lie in (0, 1)");
  }
};

struct TheoryRound {
  std::size_t round = 0;
  double loss = 0.0;
  double max_drift = 0.0;
  double predicted_envelope = 0.0;
};

struct TheoryResult {
  std::vector<TheoryRound> rounds;  // rounds[t] holds the state after t aggregations
  double eta = 0.0;
  double lambda0 = 0.0;
  double rate = 1.0;
  double plateau = 0.0;
  double initial_loss = 0.0;
  double abar_l1 = 0.0;
  AssumptionResults assumptions;
};

namespace detail {

// scale · Ā σ(X̂ Θ_Rᵀ) a_R over the neurons in `rows`.
inline std::vector<double> one_hidden_output(const SparseMatrix<double>& abar, const DenseMatrix<double>& xhat,
                                             const DenseMatrix<double>& theta, std::span<const double> a,
                                             std::span<const std::size_t> rows, double scale) {
  const std::size_t n = xhat.rows(), d = xhat.cols();
  DenseMatrix<double> hidden(n, 1);
  for (auto r : rows) {
    const auto th = theta.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = xhat.row(i);
      double z = 0.0;
      for (std::size_t k = 0; k < d; ++k) z += x[k] * th[k];
      if (z > 0.0) hidden(i, 0) += a[r] * z;
    }
  }
  const auto out = spmm(abar, hidden);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = scale * out(i, 0);
  return y;
}

inline double sq_loss(std::span<const double> yhat, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return s;
}

}  // namespace detail

// Initial full-network loss ‖y − ŷ(0)‖² for one draw of Θ and a.
inline double theory_initial_loss(const Graph& g, std::span<const double> y, std::size_t d1, std::size_t m,
                                  std::uint64_t seed) {
  const auto abar = normalized_adjacency<double>(g, AdjacencyMode::chebyshev);
  const auto xhat = spmm(abar, g.features);
  auto rng = make_rng(seed, {0x7e0});
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  DenseMatrix<double> theta(d1, g.feature_dim());
  for (auto& v : theta.values()) v = gauss(rng);
  std::vector<double> a(d1);
  for (auto& v : a) v = coin(rng) ? 1.0 : -1.0;
  IndexSet all(d1);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const double scale = 1.0 / (static_cast<double>(m) * std::sqrt(static_cast<double>(d1)));
  return detail::sq_loss(detail::one_hidden_output(abar, xhat, theta, a, all, scale), y);
}

// One-hidden-layer GIST with fixed output weights, squared loss and plain
// gradient descent on each sub-network.
inline TheoryResult run_theory_experiment(const TheoryConfig& cfg, const Graph& g, std::span<const double> y) {
  cfg.validate();
  if (y.size() != g.n) throw std::invalid_argument("theory: target length does not match node count");
  TheoryResult res;
  res.assumptions = check_assumptions(g, y);
  if (!res.assumptions.all_pass() && !cfg.force)
    throw TheoryError("theory: graph fails the convergence assumptions (use force to run anyway)");

  const std::size_t n = g.n, d = g.feature_dim(), d1 = cfg.d1, m = cfg.m;
  const auto abar = normalized_adjacency<double>(g, AdjacencyMode::chebyshev);
  const auto abar_t = transpose(abar);
  const auto xhat = spmm(abar, g.features);
  const auto g_inf = gist_kernel(abar, ntk_gram(xhat, m, d1));
  const auto ev = symmetric_eigenvalues(g_inf);
  res.lambda0 = ev.front();
  res.abar_l1 = abar_l1_norm(abar);
  res.eta = cfg.eta > 0.0 ? cfg.eta : 1.0 / (static_cast<double>(d1) * ev.back());
  res.rate = predicted_rate(cfg.gamma, res.eta, std::max(res.lambda0, 0.0), cfg.zeta);

  auto rng = make_rng(cfg.seed, {0x7e0});
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  DenseMatrix<double> theta(d1, d);
  for (auto& v : theta.values()) v = gauss(rng);
  std::vector<double> a(d1);
  for (auto& v : a) v = coin(rng) ? 1.0 : -1.0;
  const DenseMatrix<double> theta0 = theta;

  const double inv_sqrt_d1 = 1.0 / std::sqrt(static_cast<double>(d1));
  IndexSet all(d1);
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto record = [&](std::size_t t) {
    const auto yhat = detail::one_hidden_output(abar, xhat, theta, a, all, inv_sqrt_d1 / static_cast<double>(m));
    double drift = 0.0;
    for (std::size_t r = 0; r < d1; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += (theta(r, k) - theta0(r, k)) * (theta(r, k) - theta0(r, k));
      drift = std::max(drift, std::sqrt(s));
    }
    res.rounds.push_back({t, detail::sq_loss(yhat, y), drift, 0.0});
  };
  record(0);

  auto mask_rng = make_rng(cfg.seed, {0x3a5});
  std::uniform_int_distribution<std::size_t> pick(0, m - 1);
  DenseMatrix<double> resid_mat(n, 1);
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    std::vector<IndexSet> owned(m);
    for (std::size_t r = 0; r < d1; ++r) owned[pick(mask_rng)].push_back(r);
    for (std::size_t j = 0; j < m; ++j) {
      const auto& rows = owned[j];
      for (std::size_t k = 0; k < cfg.zeta; ++k) {
        const auto yhat = detail::one_hidden_output(abar, xhat, theta, a, rows, inv_sqrt_d1);
        for (std::size_t i = 0; i < n; ++i) resid_mat(i, 0) = yhat[i] - y[i];
        const auto back = spmm(abar_t, resid_mat);  // Σ_i (ŷ_i − y_i) Ā_{ii'}
        for (auto r : rows) {
          auto th = theta.row(r);
          std::vector<double> grad(d, 0.0);
          for (std::size_t i = 0; i < n; ++i) {
            const auto x = xhat.row(i);
            double z = 0.0;
            for (std::size_t c = 0; c < d; ++c) z += x[c] * th[c];
            if (z < 0.0) continue;
            const double w = back(i, 0) * a[r] * inv_sqrt_d1;
            for (std::size_t c = 0; c < d; ++c) grad[c] += w * x[c];
          }
          for (std::size_t c = 0; c < d; ++c) th[c] -= res.eta * grad[c];
        }
      }
    }
    record(t + 1);
  }

  const std::size_t tail = std::max<std::size_t>(1, res.rounds.size() / 4);
  for (std::size_t k = res.rounds.size() - tail; k < res.rounds.size(); ++k)
    res.plateau = std::max(res.plateau, res.rounds[k].loss);
  res.initial_loss = res.rounds.front().loss;
  for (auto& r : res.rounds)
    r.predicted_envelope = res.initial_loss * std::pow(res.rate, static_cast<double>(r.round)) + res.plateau;
  return res;
}

// Mean loss over the last quarter of rounds.
inline double tail_mean_loss(const TheoryResult& r) {
  const std::size_t tail = std::max<std::size_t>(1, r.rounds.size() / 4);
  double s = 0.0;
  for (std::size_t k = r.rounds.size() - tail; k < r.rounds.size(); ++k) s += r.rounds[k].loss;
  return s / static_cast<double>(tail);
}

}  // namespace gist
