#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <random>
#include <string>
#include <vector>

#include "blockopt/core.hpp"
#include "blockopt/errors.hpp"
#include "blockopt/graph.hpp"
#include "blockopt/harness.hpp"
#include "blockopt/pushsum.hpp"
#include "blockopt/rng.hpp"
#include "blockopt/schedule.hpp"

namespace {

int cmd_gen_graph(int n, double p, std::uint64_t seed, int max_retries,
                  const std::string& out_path) {
  auto gen = blockopt::rng::stream(seed, "graph");
  const blockopt::Digraph g =
      blockopt::gen_erdos_renyi(n, p, gen, max_retries);
  if (out_path.empty())
    blockopt::write_edge_list(g, std::cout);
  else
    blockopt::save_edge_list(g, out_path);
  std::cerr << "nodes=" << g.node_count() << " edges=" << g.edges().size()
            << " algebraic_connectivity=" << blockopt::algebraic_connectivity(g)
            << "\n";
  return 0;
}

int cmd_pushsum_demo(int n, int B, double p, std::uint64_t seed, long rounds,
                     const std::string& rule) {
  auto graph_gen = blockopt::rng::stream(seed, "graph");
  const blockopt::Digraph g = blockopt::gen_erdos_renyi(n, p, graph_gen);
  const blockopt::WeightMatrix base = blockopt::base_weights(g);
  const blockopt::BlockSchedule sched(B, blockopt::parse_schedule_rule(rule),
                                      blockopt::rng::derive_seed(seed, "schedule"));
  std::vector<int> dims(B, 2);
  blockopt::PushSumState st = blockopt::PushSumState::uniform(n, dims);
  auto init_gen = blockopt::rng::stream(seed, "init");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < B; ++l)
      for (int k = 0; k < dims[l]; ++k) st.z[i][l](k) = normal(init_gen);

  std::cout << "round,error\n";
  for (long t = 0; t < rounds; ++t) {
    const std::vector<int> sel = sched.round_selections(n, t);
    std::vector<blockopt::WeightMatrix> weights;
    for (int l = 0; l < B; ++l)
      weights.push_back(blockopt::block_weights(base, sel, l));
    st = blockopt::pushsum_step(st, weights);
    std::cout << (t + 1) << ',' << blockopt::consensus_error(st).maxCoeff()
              << '\n';
  }
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_path,
            bool verify) {
  blockopt::RunConfig cfg = blockopt::load_config(config_path);
  cfg.verify = verify;
  const blockopt::RunResult res = blockopt::run_experiment(cfg);
  if (out_path.empty())
    blockopt::write_metrics_csv(res.trace, std::cout);
  else
    blockopt::write_metrics_csv(res.trace, out_path);
  const blockopt::MetricsRecord& last = res.trace.back();
  std::cerr << "rounds=" << last.t << " J=" << last.J << " D=" << last.D
            << " R=" << last.R
            << " algebraic_connectivity="
            << blockopt::algebraic_connectivity(res.graph) << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::vector<int>& blocks,
              const std::string& out_path, double tol) {
  const blockopt::RunConfig cfg = blockopt::load_config(config_path);
  const auto table = blockopt::completion_time_sweep(cfg, blocks, tol);
  std::ostringstream csv;
  csv << "B,t_end,t_end_over_B\n";
  csv.precision(17);
  for (const auto& e : table)
    csv << e.B << ',' << e.t_end << ',' << e.normalized << '\n';
  if (out_path.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw blockopt::IoError("sweep: cannot open " + out_path);
    out << csv.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-wise push-sum consensus and distributed optimization"};
  app.require_subcommand(1);

  // Accepted for interface stability; the engine is single-threaded and
  // deterministic regardless of the requested thread count.
  if (const char* tc = std::getenv("BLOCKOPT_THREADS")) (void)tc;

  int n = 10, B = 3, max_retries = 100;
  double p = 0.4, tol = 1e-3;
  std::uint64_t seed = 1;
  long rounds = 100;
  std::string rule = "round_robin", config_path, out_path;
  std::vector<int> blocks{1, 3, 6};
  bool verify = false;

  auto* gg = app.add_subcommand("gen-graph", "Sample a strongly connected "
                                             "symmetric random digraph and "
                                             "emit its edge list");
  gg->add_option("--n", n, "node count")->check(CLI::PositiveNumber);
  gg->add_option("--p", p, "edge probability");
  gg->add_option("--seed", seed, "master seed");
  gg->add_option("--max-retries", max_retries, "resampling budget");
  gg->add_option("--out", out_path, "edge-list path (default stdout)");

  auto* ps = app.add_subcommand("pushsum-demo",
                                "Run block-wise push-sum and print the "
                                "per-round max consensus error as CSV");
  ps->add_option("--n", n, "node count")->check(CLI::PositiveNumber);
  ps->add_option("--blocks", B, "block count")->check(CLI::PositiveNumber);
  ps->add_option("--p", p, "edge probability");
  ps->add_option("--seed", seed, "master seed");
  ps->add_option("--rounds", rounds, "round count");
  ps->add_option("--rule", rule, "round_robin | shuffled_cyclic");

  auto* run = app.add_subcommand("run", "Run one configured experiment");
  run->add_option("--config", config_path, "config file")->required();
  run->add_option("--out", out_path, "metrics CSV path (default stdout)");
  run->add_flag("--verify", verify, "check every per-round invariant");

  auto* sw = app.add_subcommand("sweep",
                                "Completion-time sweep over block counts");
  sw->add_option("--config", config_path, "config file")->required();
  sw->add_option("--blocks", blocks, "block counts")->delimiter(',');
  sw->add_option("--tol", tol, "completion tolerance on J");
  sw->add_option("--out", out_path, "CSV path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gg->parsed()) return cmd_gen_graph(n, p, seed, max_retries, out_path);
    if (ps->parsed()) return cmd_pushsum_demo(n, B, p, seed, rounds, rule);
    if (run->parsed()) return cmd_run(config_path, out_path, verify);
    if (sw->parsed()) return cmd_sweep(config_path, blocks, out_path, tol);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
