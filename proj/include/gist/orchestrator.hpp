#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gist/cluster.hpp"
#include "gist/graph.hpp"
#include "gist/model.hpp"
#include "gist/partition.hpp"
#include "gist/random.hpp"
#include "gist/tensor.hpp"

namespace gist {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class WorkerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { gist, single, local_sgd, ensemble };
enum class Optimizer { adam, sgd };
enum class Schedule { none, step };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::gist: return "gist";
    case Mode::single: return "single";
    case Mode::local_sgd: return "local_sgd";
    case Mode::ensemble: return "ensemble";
  }
  return "?";
}
inline const char* to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }
inline const char* to_string(Schedule s) { return s == Schedule::step ? "step" : "none"; }

inline Mode parse_mode(const std::string& s) {
  for (auto m : {Mode::gist, Mode::single, Mode::local_sgd, Mode::ensemble})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown mode '" + s + "'");
}
inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "adam") return Optimizer::adam;
  if (s == "sgd") return Optimizer::sgd;
  throw ConfigError("unknown optimizer '" + s + "'");
}
inline Schedule parse_schedule(const std::string& s) {
  if (s == "step") return Schedule::step;
  if (s == "none") return Schedule::none;
  throw ConfigError("unknown schedule '" + s + "'");
}

struct TrainConfig {
  Mode mode = Mode::gist;
  Arch arch = Arch::gcn;
  std::vector<std::size_t> hidden{256, 256};
  std::size_t m = 1;
  std::size_t zeta = 1;
  std::size_t clusters = 1;
  std::size_t batch_clusters = 1;
  std::size_t epochs = 400;
  Optimizer optimizer = Optimizer::adam;
  double lr = 0.01;
  Schedule schedule = Schedule::step;
  double dropout = 0.0;
  double weight_decay = 0.0;
  bool partition_input = false;
  AdjacencyMode adjacency = AdjacencyMode::renorm;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  std::size_t threads = 0;  // 0: one per worker, capped by the hardware

  std::vector<std::size_t> dims(std::size_t d_in, std::size_t num_classes) const {
    std::vector<std::size_t> out{d_in};
    out.insert(out.end(), hidden.begin(), hidden.end());
    out.push_back(num_classes);
    return out;
  }

  void validate() const {
    if (m < 1) throw ConfigError("sub-gcns must be at least 1");
    if (mode == Mode::single && m != 1) throw ConfigError("mode single requires sub-gcns = 1, got " + std::to_string(m));
    if (zeta < 1) throw ConfigError("local-iters must be at least 1");
    if (clusters < 1) throw ConfigError("clusters must be at least 1");
    if (batch_clusters < 1 || batch_clusters > clusters)
      throw ConfigError("batch-clusters must lie in [1, clusters]");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");
    if (eval_every < 1) throw ConfigError("eval-every must be at least 1");
    for (auto h : hidden)
      if (h == 0) throw ConfigError("hidden sizes must be positive");
    if (m > 1 && hidden.empty() && !partition_input && (mode == Mode::gist || mode == Mode::ensemble))
      throw ConfigError("a model without hidden layers needs partition-input when sub-gcns > 1");
  }

  // Checks that only depend on the data shape.
  void validate_for(std::size_t n, std::size_t d_in, std::size_t num_classes) const {
    validate();
    if (clusters > n) throw ConfigError("clusters exceeds node count");
    if (mode == Mode::gist || mode == Mode::ensemble) {
      for (auto h : hidden)
        if (m > h) throw ConfigError("sub-gcns " + std::to_string(m) + " exceeds hidden size " + std::to_string(h));
      if (partition_input && m > d_in) throw ConfigError("sub-gcns exceeds input feature count");
    }
    if (num_classes < 1) throw ConfigError("dataset has no classes");
  }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"arch", to_string(c.arch)},
          {"hidden", c.hidden},
          {"sub_gcns", c.m},
          {"local_iters", c.zeta},
          {"clusters", c.clusters},
          {"batch_clusters", c.batch_clusters},
          {"epochs", c.epochs},
          {"optimizer", to_string(c.optimizer)},
          {"lr", c.lr},
          {"schedule", to_string(c.schedule)},
          {"dropout", c.dropout},
          {"weight_decay", c.weight_decay},
          {"partition_input", c.partition_input},
          {"adjacency", to_string(c.adjacency)},
          {"seed", c.seed},
          {"eval_every", c.eval_every}};
}

struct MetricsRecord {
  std::size_t round = 0;
  Mode mode = Mode::gist;
  double loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  double micro_f1 = 0.0;
  double wall_s = 0.0;
  std::size_t comm_scalars = 0;
};

inline nlohmann::ordered_json to_json(const MetricsRecord& r, bool include_wall = true) {
  nlohmann::ordered_json j{{"round", r.round},       {"mode", to_string(r.mode)}, {"loss", r.loss},
                           {"train_acc", r.train_acc}, {"val_acc", r.val_acc},      {"test_acc", r.test_acc},
                           {"micro_f1", r.micro_f1}};
  if (include_wall) j["wall_s"] = r.wall_s;
  j["comm_scalars"] = r.comm_scalars;
  return j;
}

// Scalars moved in one synchronisation. per_worker is one direction; the
// round total counts the dispatch and the return separately.
struct CommCost {
  std::vector<std::size_t> per_worker;
  std::size_t one_way_total = 0;
  std::size_t per_round = 0;
};

inline CommCost comm_cost(Mode mode, std::size_t m, std::span<const std::size_t> dims, bool partition_input = false,
                          Arch arch = Arch::gcn) {
  check_dims(dims);
  CommCost cc;
  if (mode == Mode::single) {
    cc.per_worker.assign(1, 0);
    return cc;
  }
  const std::size_t L = dims.size() - 1;
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t count = 0;
    for (std::size_t l = 0; l < L; ++l) {
      if (mode == Mode::local_sgd) {
        count += weight_rows(arch, dims[l]) * dims[l + 1];
        continue;
      }
      const bool split_in = l != 0 || partition_input;
      const bool split_out = l + 1 != L;
      const auto din = split_in ? balanced_block_size(dims[l], m, i) : dims[l];
      const auto dout = split_out ? balanced_block_size(dims[l + 1], m, i) : dims[l + 1];
      count += weight_rows(arch, din) * dout;
    }
    cc.per_worker.push_back(count);
    cc.one_way_total += count;
  }
  cc.per_round = 2 * cc.one_way_total;
  return cc;
}

inline CommCost comm_cost(const TrainConfig& cfg, std::span<const std::size_t> dims) {
  return comm_cost(cfg.mode, cfg.m, dims, cfg.partition_input, cfg.arch);
}

// Point-to-point link between the orchestrator and one worker. Models cross
// it by value and every crossing is counted.
class WorkerChannel {
 public:
  GcnModel<float> transfer(GcnModel<float> model) {
    scalars_ += model.parameter_count();
    return model;
  }
  std::size_t scalars() const noexcept { return scalars_; }

 private:
  std::size_t scalars_ = 0;
};

// Mini-batch tensors for one set of clusters, shared read-only by workers.
struct BatchData {
  DenseMatrix<float> x;
  SparseMatrix<float> op;
  std::vector<int> labels;
  Mask train_mask;
};

class BatchCache {
 public:
  BatchCache(const Graph& g, const Clustering& cl, Arch arch, AdjacencyMode adj, std::size_t capacity = 1024)
      : g_{&g}, cl_{&cl}, arch_{arch}, adj_{adj}, capacity_{capacity} {}

  std::shared_ptr<const BatchData> get(std::vector<std::size_t> clusters) {
    std::sort(clusters.begin(), clusters.end());
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(clusters); it != cache_.end()) return it->second;
    }
    IndexSet nodes;
    for (auto j : clusters) nodes.insert(nodes.end(), cl_->members[j].begin(), cl_->members[j].end());
    const Graph sub = induced_subgraph(*g_, nodes);
    auto data = std::make_shared<BatchData>();
    data->x = sub.features.cast<float>();
    data->op = arch_ == Arch::gcn ? normalized_adjacency<float>(sub, adj_) : mean_neighbor_operator<float>(sub);
    data->labels = sub.labels;
    data->train_mask = sub.train_mask;
    std::lock_guard lock(mu_);
    if (cache_.size() < capacity_) cache_.emplace(clusters, data);
    return data;
  }

 private:
  const Graph* g_;
  const Clustering* cl_;
  Arch arch_;
  AdjacencyMode adj_;
  std::size_t capacity_;
  std::mutex mu_;
  std::map<std::vector<std::size_t>, std::shared_ptr<const BatchData>> cache_;
};

struct EvalResult {
  double loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
};

inline double masked_accuracy(const DenseMatrix<float>& scores, std::span<const int> labels, std::span<const std::uint8_t> mask) {
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    if (!mask[i]) continue;
    const auto row = scores.row(i);
    const auto pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    hit += pred == labels[i];
    ++total;
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

// Averages the members' softmax outputs. Each member reads its own input
// columns.
struct Ensemble {
  std::vector<GcnModel<float>> members;
  std::vector<IndexSet> input_cols;
  mutable std::size_t forward_count = 0;

  DenseMatrix<float> predict_proba(const SparseMatrix<float>& op, const DenseMatrix<float>& x) const {
    if (members.empty()) throw ModelError("ensemble has no members");
    DenseMatrix<float> avg;
    for (std::size_t k = 0; k < members.size(); ++k) {
      const auto xk = input_cols[k].size() == x.cols() ? x : slice_cols(x, input_cols[k]);
      auto p = softmax_rows(forward(members[k], op, xk).logits);
      ++forward_count;
      if (k == 0) avg = std::move(p);
      else add_inplace(avg, p);
    }
    scale_inplace(avg, 1.0f / static_cast<float>(members.size()));
    return avg;
  }
};

// Full-graph evaluation of a global model.
class Evaluator {
 public:
  Evaluator(const Graph& g, Arch arch, AdjacencyMode adj)
      : g_{&g},
        x_{g.features.cast<float>()},
        op_{arch == Arch::gcn ? normalized_adjacency<float>(g, adj) : mean_neighbor_operator<float>(g)} {}

  EvalResult evaluate(const GcnModel<float>& model, const IndexSet* input_cols = nullptr) const {
    const auto logits =
        forward(model, op_, input_cols && input_cols->size() != x_.cols() ? slice_cols(x_, *input_cols) : x_).logits;
    EvalResult r = scores(logits);
    r.loss = has_train() ? loss_ce(logits, g_->labels, g_->train_mask).loss : 0.0;
    return r;
  }

  EvalResult evaluate(const Ensemble& ens) const {
    const auto probs = ens.predict_proba(op_, x_);
    EvalResult r = scores(probs);
    std::size_t count = 0;
    double nll = 0.0;
    for (std::size_t i = 0; i < g_->n; ++i) {
      if (!g_->train_mask[i]) continue;
      nll -= std::log(std::max(static_cast<double>(probs(i, static_cast<std::size_t>(g_->labels[i]))), 1e-30));
      ++count;
    }
    r.loss = count ? nll / static_cast<double>(count) : 0.0;
    return r;
  }

  const SparseMatrix<float>& op() const noexcept { return op_; }
  const DenseMatrix<float>& x() const noexcept { return x_; }

 private:
  bool has_train() const { return std::any_of(g_->train_mask.begin(), g_->train_mask.end(), [](auto v) { return v; }); }

  EvalResult scores(const DenseMatrix<float>& s) const {
    return {0.0, masked_accuracy(s, g_->labels, g_->train_mask), masked_accuracy(s, g_->labels, g_->val_mask),
            masked_accuracy(s, g_->labels, g_->test_mask)};
  }

  const Graph* g_;
  DenseMatrix<float> x_;
  SparseMatrix<float> op_;
};

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_metrics;
  // Called with round 0 before training and after every round.
  std::function<void(std::size_t, const GcnModel<float>&)> on_round;
  std::function<void(std::size_t, const FeaturePartition&)> on_partition;
};

struct TrainResult {
  GcnModel<float> model;
  std::optional<Ensemble> ensemble;
  std::vector<MetricsRecord> metrics;
  std::size_t rounds = 0;
  std::size_t steps_per_worker = 0;
  std::size_t total_steps = 0;
  std::size_t comm_scalars = 0;
};

// Round bookkeeping shared by every mode. The single-mode step budget
// epochs × batches_per_epoch is split evenly over the m workers.
struct WorkPlan {
  std::size_t batches_per_epoch = 1;
  std::size_t budget = 0;
  std::size_t per_worker = 0;
  std::size_t rounds = 0;

  static WorkPlan make(const TrainConfig& cfg) {
    WorkPlan w;
    w.batches_per_epoch = (cfg.clusters + cfg.batch_clusters - 1) / cfg.batch_clusters;
    w.budget = cfg.epochs * w.batches_per_epoch;
    w.per_worker = (w.budget + cfg.m - 1) / cfg.m;
    w.rounds = (w.per_worker + cfg.zeta - 1) / cfg.zeta;
    return w;
  }

  std::size_t steps_in_round(std::size_t t, std::size_t zeta) const {
    return std::min(zeta, per_worker - t * zeta);
  }
};

namespace detail {

// Everything a worker keeps between rounds.
struct WorkerState {
  BatchSampler sampler;
  std::optional<AdamState<float>> adam;
  std::size_t steps_done = 0;
};

struct TrainingContext {
  const TrainConfig& cfg;
  const Graph& g;
  std::size_t num_classes;
  std::vector<std::size_t> dims;
  WorkPlan plan;
  Clustering clustering;
  BatchCache cache;
  Evaluator evaluator;
  std::vector<WorkerState> workers;
  std::vector<WorkerChannel> channels;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  TrainingContext(const TrainConfig& c, const Graph& graph, std::size_t k, std::size_t n_workers)
      : cfg{c},
        g{graph},
        num_classes{k},
        dims{c.dims(graph.feature_dim(), k)},
        plan{WorkPlan::make(c)},
        clustering{[&] {
          auto rng = make_rng(c.seed, {0xC1});
          return partition_graph(graph, c.clusters, rng);
        }()},
        cache{graph, clustering, c.arch, c.adjacency},
        evaluator{graph, c.arch, c.adjacency},
        channels(n_workers) {
    for (std::size_t i = 0; i < n_workers; ++i)
      workers.push_back({BatchSampler(clustering, c.batch_clusters, derive_seed(c.seed, {0xBA, i})), std::nullopt, 0});
  }

  double lr_at(std::size_t worker_step) const {
    if (cfg.schedule == Schedule::none) return cfg.lr;
    return lr_schedule(cfg.lr, worker_step * cfg.m / plan.batches_per_epoch, cfg.epochs);
  }

  std::size_t comm() const {
    std::size_t s = 0;
    for (const auto& ch : channels) s += ch.scalars();
    return s;
  }

  // One optimisation step of worker `w` on its next batch.
  void step(std::size_t w, GcnModel<float>& model, const IndexSet* input_cols) {
    auto& st = workers[w];
    const auto batch = cache.get(st.sampler.next_clusters());
    const auto s = st.steps_done++;
    if (std::none_of(batch->train_mask.begin(), batch->train_mask.end(), [](auto v) { return v; })) return;
    auto drop_rng = make_rng(cfg.seed, {0xD0, w, s});
    const DropoutSpec drop{cfg.dropout, &drop_rng};
    const bool slice_x = input_cols && input_cols->size() != batch->x.cols();
    const auto fr = slice_x ? forward(model, batch->op, slice_cols(batch->x, *input_cols), drop)
                            : forward(model, batch->op, batch->x, drop);
    const auto ce = loss_ce(fr.logits, batch->labels, batch->train_mask);
    auto grads = backward(model, batch->op, fr.tape, ce.dlogits);
    add_weight_decay(grads, model, cfg.weight_decay);
    const double lr = lr_at(s);
    if (cfg.optimizer == Optimizer::sgd) {
      sgd_step(model, grads, lr);
    } else {
      if (!st.adam) st.adam = AdamState<float>::zeros_like(model);
      adam_step(model, grads, *st.adam, lr);
    }
  }

  MetricsRecord record(std::size_t round, const EvalResult& e) const {
    MetricsRecord r;
    r.round = round;
    r.mode = cfg.mode;
    r.loss = e.loss;
    r.train_acc = e.train_acc;
    r.val_acc = e.val_acc;
    r.test_acc = e.test_acc;
    r.micro_f1 = e.test_acc;
    r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.comm_scalars = comm();
    return r;
  }

  bool eval_due(std::size_t round) const { return round % cfg.eval_every == 0 || round == plan.rounds; }
};

inline void emit(TrainResult& res, const TrainHooks& hooks, MetricsRecord r) {
  if (hooks.on_metrics) hooks.on_metrics(r);
  res.metrics.push_back(std::move(r));
}

// Runs fn(i) for i in [0, n) on up to `threads` OS threads. fn writes only
// to slot i.
template <typename F>
void run_workers(std::size_t n, std::size_t threads, std::size_t round, F&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (threads == 0) threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) guarded(i);
      });
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw WorkerError("worker " + std::to_string(i) + " failed in round " + std::to_string(round) + ": " + e.what());
    }
  }
}

inline GcnModel<float> initial_model(const TrainConfig& cfg, const std::vector<std::size_t>& dims) {
  auto rng = make_rng(cfg.seed, {0x1417});
  return init_glorot<float>(dims, cfg.arch, rng);
}

inline void check_inputs(const TrainConfig& cfg, const Graph& g, std::size_t num_classes) {
  cfg.validate_for(g.n, g.feature_dim(), num_classes);
  g.validate();
}

}  // namespace detail

// Full model, one process, same batch pipeline.
inline TrainResult train_single(const TrainConfig& cfg, const Graph& g, std::size_t num_classes,
                                const TrainHooks& hooks = {}) {
  detail::check_inputs(cfg, g, num_classes);
  if (cfg.m != 1) throw ConfigError("train_single requires sub-gcns = 1");
  detail::TrainingContext ctx(cfg, g, num_classes, 1);
  TrainResult res;
  res.model = detail::initial_model(cfg, ctx.dims);
  res.rounds = ctx.plan.rounds;
  res.steps_per_worker = ctx.plan.per_worker;
  if (hooks.on_round) hooks.on_round(0, res.model);
  if (res.rounds == 0) detail::emit(res, hooks, ctx.record(0, ctx.evaluator.evaluate(res.model)));
  for (std::size_t t = 0; t < res.rounds; ++t) {
    for (std::size_t k = 0; k < ctx.plan.steps_in_round(t, cfg.zeta); ++k) ctx.step(0, res.model, nullptr);
    if (hooks.on_round) hooks.on_round(t + 1, res.model);
    if (ctx.eval_due(t + 1)) detail::emit(res, hooks, ctx.record(t + 1, ctx.evaluator.evaluate(res.model)));
  }
  res.total_steps = ctx.workers[0].steps_done;
  return res;
}

// Each round: partition features, extract m sub-GCNs, train them in parallel
// for ζ steps, write them back into their diagonal blocks, evaluate.
inline TrainResult train_gist(const TrainConfig& cfg, const Graph& g, std::size_t num_classes,
                              const TrainHooks& hooks = {}) {
  detail::check_inputs(cfg, g, num_classes);
  const std::size_t m = cfg.m;
  detail::TrainingContext ctx(cfg, g, num_classes, m);
  TrainResult res;
  res.model = detail::initial_model(cfg, ctx.dims);
  res.rounds = ctx.plan.rounds;
  res.steps_per_worker = ctx.plan.per_worker;
  if (hooks.on_round) hooks.on_round(0, res.model);
  if (res.rounds == 0) detail::emit(res, hooks, ctx.record(0, ctx.evaluator.evaluate(res.model)));

  for (std::size_t t = 0; t < res.rounds; ++t) {
    auto prng = make_rng(cfg.seed, {0xA11, t});
    const auto part = sample_partition(ctx.dims, m, cfg.partition_input, prng);
    if (hooks.on_partition) hooks.on_partition(t, part);
    std::vector<GcnModel<float>> subs(m);
    for (std::size_t i = 0; i < m; ++i) subs[i] = extract_sub_model(res.model, part, i);
    const auto steps = ctx.plan.steps_in_round(t, cfg.zeta);
    detail::run_workers(m, cfg.threads, t, [&](std::size_t i) {
      auto local = ctx.channels[i].transfer(std::move(subs[i]));
      ctx.workers[i].adam.reset();
      for (std::size_t k = 0; k < steps; ++k) ctx.step(i, local, &part.block(0, i));
      subs[i] = ctx.channels[i].transfer(std::move(local));
    });
    aggregate(res.model, subs, part);
    if (hooks.on_round) hooks.on_round(t + 1, res.model);
    if (ctx.eval_due(t + 1)) detail::emit(res, hooks, ctx.record(t + 1, ctx.evaluator.evaluate(res.model)));
  }
  for (const auto& w : ctx.workers) res.total_steps += w.steps_done;
  res.comm_scalars = ctx.comm();
  return res;
}

inline void average_into(GcnModel<float>& dst, const std::vector<GcnModel<float>>& replicas) {
  if (replicas.empty()) throw ModelError("average_into: no replicas");
  for (std::size_t l = 0; l < dst.weights.size(); ++l) {
    auto out = dst.weights[l].values();
    for (std::size_t e = 0; e < out.size(); ++e) {
      double s = 0.0;
      for (const auto& r : replicas) s += r.weights[l].values()[e];
      out[e] = static_cast<float>(s / static_cast<double>(replicas.size()));
    }
  }
}

// Every worker trains the full model; synchronisation averages elementwise.
inline TrainResult train_local_sgd(const TrainConfig& cfg, const Graph& g, std::size_t num_classes,
                                   const TrainHooks& hooks = {}) {
  detail::check_inputs(cfg, g, num_classes);
  const std::size_t m = cfg.m;
  detail::TrainingContext ctx(cfg, g, num_classes, m);
  TrainResult res;
  res.model = detail::initial_model(cfg, ctx.dims);
  res.rounds = ctx.plan.rounds;
  res.steps_per_worker = ctx.plan.per_worker;
  if (hooks.on_round) hooks.on_round(0, res.model);
  if (res.rounds == 0) detail::emit(res, hooks, ctx.record(0, ctx.evaluator.evaluate(res.model)));

  std::vector<GcnModel<float>> replicas(m);
  for (std::size_t t = 0; t < res.rounds; ++t) {
    const auto steps = ctx.plan.steps_in_round(t, cfg.zeta);
    detail::run_workers(m, cfg.threads, t, [&](std::size_t i) {
      auto local = ctx.channels[i].transfer(res.model);
      for (std::size_t k = 0; k < steps; ++k) ctx.step(i, local, nullptr);
      replicas[i] = ctx.channels[i].transfer(std::move(local));
    });
    average_into(res.model, replicas);
    if (hooks.on_round) hooks.on_round(t + 1, res.model);
    if (ctx.eval_due(t + 1)) detail::emit(res, hooks, ctx.record(t + 1, ctx.evaluator.evaluate(res.model)));
  }
  for (const auto& w : ctx.workers) res.total_steps += w.steps_done;
  res.comm_scalars = ctx.comm();
  return res;
}

// One partition, never aggregated. Each sub-GCN keeps the checkpoint with
// the best validation accuracy; metrics describe the ensemble of those.
inline TrainResult train_ensemble(const TrainConfig& cfg, const Graph& g, std::size_t num_classes,
                                  const TrainHooks& hooks = {}) {
  detail::check_inputs(cfg, g, num_classes);
  const std::size_t m = cfg.m;
  detail::TrainingContext ctx(cfg, g, num_classes, m);
  TrainResult res;
  res.model = detail::initial_model(cfg, ctx.dims);
  res.rounds = ctx.plan.rounds;
  res.steps_per_worker = ctx.plan.per_worker;
  if (hooks.on_round) hooks.on_round(0, res.model);

  auto prng = make_rng(cfg.seed, {0xA11, 0});
  const auto part = sample_partition(ctx.dims, m, cfg.partition_input, prng);
  if (hooks.on_partition) hooks.on_partition(0, part);
  Ensemble ens;
  std::vector<GcnModel<float>> current(m);
  std::vector<double> best_val(m, -1.0);
  for (std::size_t i = 0; i < m; ++i) {
    current[i] = extract_sub_model(res.model, part, i);
    ens.members.push_back(current[i]);
    ens.input_cols.push_back(part.block(0, i));
  }
  if (res.rounds == 0) detail::emit(res, hooks, ctx.record(0, ctx.evaluator.evaluate(ens)));

  for (std::size_t t = 0; t < res.rounds; ++t) {
    const auto steps = ctx.plan.steps_in_round(t, cfg.zeta);
    detail::run_workers(m, cfg.threads, t, [&](std::size_t i) {
      if (t == 0) current[i] = ctx.channels[i].transfer(std::move(current[i]));
      for (std::size_t k = 0; k < steps; ++k) ctx.step(i, current[i], &part.block(0, i));
    });
    if (!ctx.eval_due(t + 1)) continue;
    for (std::size_t i = 0; i < m; ++i) {
      const auto snapshot = ctx.channels[i].transfer(current[i]);
      const double val = ctx.evaluator.evaluate(snapshot, &ens.input_cols[i]).val_acc;
      if (val > best_val[i]) {
        best_val[i] = val;
        ens.members[i] = snapshot;
      }
    }
    detail::emit(res, hooks, ctx.record(t + 1, ctx.evaluator.evaluate(ens)));
  }
  for (const auto& w : ctx.workers) res.total_steps += w.steps_done;
  res.comm_scalars = ctx.comm();
  ens.forward_count = 0;
  res.ensemble = std::move(ens);
  return res;
}

inline TrainResult train(const TrainConfig& cfg, const Graph& g, std::size_t num_classes, const TrainHooks& hooks = {}) {
  switch (cfg.mode) {
    case Mode::single: return train_single(cfg, g, num_classes, hooks);
    case Mode::gist: return train_gist(cfg, g, num_classes, hooks);
    case Mode::local_sgd: return train_local_sgd(cfg, g, num_classes, hooks);
    case Mode::ensemble: return train_ensemble(cfg, g, num_classes, hooks);
  }
  throw ConfigError("unknown mode");
}

}  // namespace gist
