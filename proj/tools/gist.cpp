#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gist/gist.hpp"

namespace {

using ojson = nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::size_t> parse_list(const std::string& s, const char* flag) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size() || item.front() == '-')
      throw UsageError(std::string(flag) + ": expected comma-separated positive integers, got '" + s + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) throw std::runtime_error("cannot open output file " + path);
    }
  }
  std::ostream& os() { return file_ ? *file_ : std::cout; }
  void line(const ojson& j) { os() << j.dump() << '\n' << std::flush; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

struct TrainArgs {
  std::string dataset, output, mode = "gist", arch = "gcn", hidden = "256,256", optimizer = "adam", schedule = "step",
                       adjacency = "renorm", save_model;
  gist::TrainConfig cfg;
  bool raw_features = false;
};

struct TheoryArgs {
  std::string dataset, output;
  std::size_t nodes = 20, degree = 4, features = 6;
  double eps = 0.1;
  std::uint64_t graph_seed = 0;
  gist::TheoryConfig cfg;
};

gist::DatasetBundle theory_graph(const TheoryArgs& a) {
  if (!a.dataset.empty()) return gist::load_dataset(a.dataset);
  return gist::synth_regular({a.nodes, a.degree, a.features, a.eps, a.graph_seed});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph independent subnetwork training"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a GCN and stream metrics as JSON Lines");
  train->add_option("--dataset", ta.dataset, "Dataset directory")->required();
  train->add_option("--arch", ta.arch, "gcn or sage")->check(CLI::IsMember({"gcn", "sage"}));
  train->add_option("--hidden", ta.hidden, "Hidden sizes, comma separated");
  train->add_option("--mode", ta.mode, "gist, single, local_sgd or ensemble")
      ->check(CLI::IsMember({"gist", "single", "local_sgd", "ensemble"}));
  train->add_option("--sub-gcns", ta.cfg.m, "Number of sub-GCNs / workers");
  train->add_option("--local-iters", ta.cfg.zeta, "Local iterations per round");
  train->add_option("--clusters", ta.cfg.clusters, "Graph clusters");
  train->add_option("--batch-clusters", ta.cfg.batch_clusters, "Clusters per mini-batch");
  train->add_option("--epochs", ta.cfg.epochs, "Training epochs");
  train->add_option("--lr", ta.cfg.lr, "Learning rate");
  train->add_option("--optimizer", ta.optimizer, "adam or sgd")->check(CLI::IsMember({"adam", "sgd"}));
  train->add_option("--schedule", ta.schedule, "none or step")->check(CLI::IsMember({"none", "step"}));
  train->add_flag("--partition-input", ta.cfg.partition_input, "Also partition the input features");
  train->add_option("--adjacency", ta.adjacency, "renorm or chebyshev")->check(CLI::IsMember({"renorm", "chebyshev"}));
  train->add_option("--seed", ta.cfg.seed, "Random seed");
  train->add_option("--output", ta.output, "Output file (default stdout)");
  train->add_option("--eval-every", ta.cfg.eval_every, "Evaluate every N rounds");
  train->add_option("--dropout", ta.cfg.dropout, "Dropout rate");
  train->add_option("--weight-decay", ta.cfg.weight_decay, "L2 penalty");
  train->add_option("--threads", ta.cfg.threads, "Worker threads (0 = auto); does not affect results");
  train->add_flag("--raw-features", ta.raw_features, "Skip row normalisation of features");
  train->add_option("--save-model", ta.save_model, "Write the final global model checkpoint here");

  std::string cl_dataset, cl_output;
  std::size_t cl_clusters = 2;
  std::uint64_t cl_seed = 0;
  auto* cluster = app.add_subcommand("cluster", "Partition the graph into balanced clusters");
  cluster->add_option("--dataset", cl_dataset, "Dataset directory")->required();
  cluster->add_option("--clusters", cl_clusters, "Cluster count");
  cluster->add_option("--seed", cl_seed, "Random seed");
  cluster->add_option("--output", cl_output, "Output file (default stdout)");

  std::string k_dataset, k_output;
  std::size_t k_m = 2, k_width = 4096;
  bool k_matrices = false;
  auto* kernel = app.add_subcommand("kernel", "Compute the GIST kernel and check the convergence assumptions");
  kernel->add_option("--dataset", k_dataset, "Dataset directory")->required();
  kernel->add_option("--sub-gcns", k_m, "Number of sub-networks m");
  kernel->add_option("--width", k_width, "Hidden width d1");
  kernel->add_flag("--matrices", k_matrices, "Include H_inf and G_inf in the report");
  kernel->add_option("--output", k_output, "Output file (default stdout)");

  TheoryArgs th;
  auto* theory = app.add_subcommand("theory-run", "Run one-hidden-layer GIST with squared loss");
  theory->add_option("--dataset", th.dataset, "Dataset directory (default: random regular graph)");
  theory->add_option("--nodes", th.nodes, "Nodes of the generated regular graph");
  theory->add_option("--degree", th.degree, "Degree of the generated regular graph");
  theory->add_option("--features", th.features, "Feature dimension of the generated graph");
  theory->add_option("--eps", th.eps, "Feature norm slack of the generated graph");
  theory->add_option("--graph-seed", th.graph_seed, "Seed of the generated graph");
  theory->add_option("--width", th.cfg.d1, "Hidden width d1");
  theory->add_option("--sub-gcns", th.cfg.m, "Number of sub-networks m");
  theory->add_option("--local-iters", th.cfg.zeta, "Local iterations per round");
  theory->add_option("--rounds", th.cfg.rounds, "Global rounds T");
  theory->add_option("--eta", th.cfg.eta, "Step size (<= 0: 1 / lambda_max(d1 G))");
  theory->add_option("--gamma", th.cfg.gamma, "Rate parameter gamma in (0, 1)");
  theory->add_option("--seed", th.cfg.seed, "Random seed");
  theory->add_flag("--force", th.cfg.force, "Run even if the assumptions fail");
  theory->add_option("--output", th.output, "Output file (default stdout)");

  std::string cc_dims = "1433,256,256,7", cc_arch = "gcn", cc_mode = "gist", cc_output;
  std::size_t cc_m = 2;
  bool cc_partition_input = false;
  auto* comm = app.add_subcommand("comm-cost", "Scalars communicated per synchronisation");
  comm->add_option("--dims", cc_dims, "Layer widths d_0,...,d_L");
  comm->add_option("--sub-gcns", cc_m, "Number of workers");
  comm->add_option("--arch", cc_arch, "gcn or sage")->check(CLI::IsMember({"gcn", "sage"}));
  comm->add_option("--mode", cc_mode, "gist, local_sgd or ensemble")
      ->check(CLI::IsMember({"gist", "local_sgd", "ensemble"}));
  comm->add_flag("--partition-input", cc_partition_input, "Input features are partitioned too");
  comm->add_option("--output", cc_output, "Output file (default stdout)");

  gist::SbmParams sbm;
  gist::RegularParams reg;
  std::string sy_output, sy_kind = "sbm";
  bool sy_l1 = false;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset directory");
  synth->add_option("--output", sy_output, "Target directory")->required();
  synth->add_option("--kind", sy_kind, "sbm or regular")->check(CLI::IsMember({"sbm", "regular"}));
  synth->add_option("--nodes", sbm.n, "Node count");
  synth->add_option("--blocks", sbm.blocks, "SBM blocks / classes");
  synth->add_option("--p-in", sbm.p_in, "Within-block edge probability");
  synth->add_option("--p-out", sbm.p_out, "Cross-block edge probability");
  synth->add_option("--features", sbm.feature_dim, "Feature dimension");
  synth->add_option("--noise", sbm.noise, "Gaussian feature noise");
  synth->add_option("--theory-eps", sbm.theory_eps, "Scale rows to (1-eps)/2 when >= 0");
  synth->add_option("--degree", reg.degree, "Degree for --kind regular");
  synth->add_option("--seed", sbm.seed, "Random seed");
  synth->add_flag("--l1-normalize", sy_l1, "Row-normalise features before writing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  auto config_error = [](const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  };
  auto runtime_error = [](const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  };

  if (*train) {
    gist::TrainConfig& cfg = ta.cfg;
    try {
      cfg.mode = gist::parse_mode(ta.mode);
      cfg.arch = gist::parse_arch(ta.arch);
      cfg.hidden = parse_list(ta.hidden, "--hidden");
      cfg.optimizer = gist::parse_optimizer(ta.optimizer);
      cfg.schedule = gist::parse_schedule(ta.schedule);
      cfg.adjacency = gist::parse_adjacency_mode(ta.adjacency);
      cfg.validate();
    } catch (const std::exception& e) {
      return config_error(e);
    }
    gist::DatasetBundle data;
    try {
      data = gist::load_dataset(ta.dataset);
    } catch (const std::exception& e) {
      return runtime_error(e);
    }
    try {
      cfg.validate_for(data.graph.n, data.graph.feature_dim(), data.num_classes);
    } catch (const std::exception& e) {
      return config_error(e);
    }
    try {
      if (!ta.raw_features) gist::row_normalize_features(data.graph);
      Output out(ta.output);
      ojson echo{{"command", "train"}, {"dataset", ta.dataset}};
      const auto resolved = gist::to_json(cfg);
      for (auto& [k, v] : resolved.items()) echo[k] = v;
      echo["row_normalize"] = !ta.raw_features;
      out.line(echo);
      gist::TrainHooks hooks;
      hooks.on_metrics = [&](const gist::MetricsRecord& r) { out.line(gist::to_json(r)); };
      const auto res = gist::train(cfg, data.graph, data.num_classes, hooks);
      if (data.warnings.self_loops_dropped)
        std::cerr << "warning: dropped " << data.warnings.self_loops_dropped << " self-loops\n";
      if (!ta.save_model.empty()) {
        std::ofstream f(ta.save_model, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open " + ta.save_model);
        gist::save_checkpoint(res.model, f);
      }
    } catch (const gist::ConfigError& e) {
      return config_error(e);
    } catch (const std::exception& e) {
      return runtime_error(e);
    }
    return 0;
  }

  if (*cluster) {
    try {
      const auto data = gist::load_dataset(cl_dataset);
      if (cl_clusters < 1 || cl_clusters > data.graph.n)
        return config_error(std::invalid_argument("clusters must lie in [1, node count]"));
      Output out(cl_output);
      out.line({{"command", "cluster"}, {"dataset", cl_dataset}, {"clusters", cl_clusters}, {"seed", cl_seed}});
      auto rng = gist::make_rng(cl_seed, {0xC1});
      const auto cl = gist::partition_graph(data.graph, cl_clusters, rng);
      std::vector<std::size_t> sizes;
      for (const auto& m : cl.members) sizes.push_back(m.size());
      out.line({{"cut_edges", gist::cut_edges(data.graph, cl)},
                {"edges", data.graph.edges.size()},
                {"sizes", sizes},
                {"assignment", cl.assignment}});
    } catch (const std::exception& e) {
      return runtime_error(e);
    }
    return 0;
  }

  if (*kernel) {
    if (k_m < 1 || k_width < 1) return config_error(std::invalid_argument("sub-gcns and width must be positive"));
    try {
      const auto data = gist::load_dataset(k_dataset);
      Output out(k_output);
      out.line({{"command", "kernel"}, {"dataset", k_dataset}, {"sub_gcns", k_m}, {"width", k_width},
                {"matrices", k_matrices}});
      const auto y = gist::regression_targets(data.graph, data.num_classes);
      const auto rep = gist::kernel_report(data.graph, k_m, k_width, y);
      out.os() << gist::to_json(rep, k_matrices).dump() << '\n';
    } catch (const std::exception& e) {
      return runtime_error(e);
    }
    return 0;
  }

  if (*theory) {
    try {
      th.cfg.validate();
    } catch (const std::exception& e) {
      return config_error(e);
    }
    try {
      const auto data = theory_graph(th);
      Output out(th.output);
      ojson echo{{"command", "theory-run"}};
      if (th.dataset.empty())
        echo["graph"] = {{"kind", "regular"}, {"nodes", th.nodes}, {"degree", th.degree}, {"features", th.features},
                         {"eps", th.eps}, {"seed", th.graph_seed}};
      else
        echo["dataset"] = th.dataset;
      echo["width"] = th.cfg.d1;
      echo["sub_gcns"] = th.cfg.m;
      echo["local_iters"] = th.cfg.zeta;
      echo["rounds"] = th.cfg.rounds;
      echo["eta"] = th.cfg.eta;
      echo["gamma"] = th.cfg.gamma;
      echo["seed"] = th.cfg.seed;
      echo["force"] = th.cfg.force;
      out.line(echo);
      const auto y = gist::regression_targets(data.graph, data.num_classes);
      const auto res = gist::run_theory_experiment(th.cfg, data.graph, y);
      for (const auto& r : res.rounds)
        out.line({{"round", r.round}, {"loss", r.loss}, {"max_drift", r.max_drift},
                  {"predicted_envelope", r.predicted_envelope}});
      std::vector<double> gammas{0.25, 0.5, 0.75};
      if (std::find(gammas.begin(), gammas.end(), th.cfg.gamma) == gammas.end()) gammas.push_back(th.cfg.gamma);
      std::sort(gammas.begin(), gammas.end());
      ojson sweep = ojson::array();
      for (double g : gammas) {
        const double rate = gist::predicted_rate(g, res.eta, std::max(res.lambda0, 0.0), th.cfg.zeta);
        const double final_env =
            res.initial_loss * std::pow(rate, static_cast<double>(th.cfg.rounds)) + res.plateau;
        sweep.push_back({{"gamma", g}, {"rate", rate}, {"final_envelope", final_env}});
      }
      out.line({{"summary",
                 {{"eta", res.eta}, {"lambda0", res.lambda0}, {"rate", res.rate}, {"plateau", res.plateau},
                  {"abar_l1_norm", res.abar_l1}, {"gamma_sweep", sweep}}}});
    } catch (const gist::TheoryError& e) {
      return runtime_error(e);
    } catch (const std::exception& e) {
      return runtime_error(e);
    }
    return 0;
  }

  if (*comm) {
    std::vector<std::size_t> dims;
    gist::Mode mode{};
    gist::Arch arch{};
    try {
      dims = parse_list(cc_dims, "--dims");
      gist::check_dims(dims);
      mode = gist::parse_mode(cc_mode);
      arch = gist::parse_arch(cc_arch);
      if (cc_m < 1) throw std::invalid_argument("sub-gcns must be at least 1");
      for (std::size_t l = 1; l + 1 < dims.size(); ++l)
        if (mode != gist::Mode::local_sgd && cc_m > dims[l])
          throw std::invalid_argument("sub-gcns exceeds a hidden width");
    } catch (const std::exception& e) {
      return config_error(e);
    }
    try {
      Output out(cc_output);
      out.line({{"command", "comm-cost"}, {"dims", dims}, {"sub_gcns", cc_m}, {"arch", cc_arch}, {"mode", cc_mode},
                {"partition_input", cc_partition_input}});
      const auto cc = gist::comm_cost(mode, cc_m, dims, cc_partition_input, arch);
      const auto local = gist::comm_cost(gist::Mode::local_sgd, cc_m, dims, false, arch);
      out.line({{"per_worker", cc.per_worker},
                {"one_way_total", cc.one_way_total},
                {"per_round", cc.per_round},
                {"local_sgd_per_worker", local.per_worker.front()}});
    } catch (const std::exception& e) {
      return runtime_error(e);
    }
    return 0;
  }

  if (*synth) {
    try {
      gist::DatasetBundle b;
      if (sy_kind == "sbm") {
        b = gist::synth_sbm(sbm);
      } else {
        reg.n = sbm.n;
        reg.feature_dim = sbm.feature_dim;
        reg.seed = sbm.seed;
        if (sbm.theory_eps >= 0.0) reg.eps = sbm.theory_eps;
        b = gist::synth_regular(reg);
      }
      if (sy_l1) gist::row_normalize_features(b.graph);
      gist::save_dataset(b, sy_output);
      std::cout << ojson{{"command", "synth"}, {"kind", sy_kind}, {"output", sy_output}, {"nodes", b.graph.n},
                         {"edges", b.graph.edges.size()}, {"classes", b.num_classes}}
                       .dump()
                << '\n';
    } catch (const std::invalid_argument& e) {
      return config_error(e);
    } catch (const std::exception& e) {
      return runtime_error(e);
    }
    return 0;
  }
  return 1;
}
