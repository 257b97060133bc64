#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "blockopt/core.hpp"
#include "blockopt/errors.hpp"
#include "blockopt/graph.hpp"
#include "blockopt/problems.hpp"
#include "blockopt/rng.hpp"
#include "blockopt/schedule.hpp"

namespace blockopt {

/// Full experiment description. Defaults are the reference sparse-regression
/// setup at desk scale.
struct RunConfig {
  std::uint64_t seed = 1;

  int graph_n = 10;
  double graph_p = 0.4;
  int graph_max_retries = 100;

  int problem_m = 60;
  int problem_n_i = 40;
  double problem_sparsity_frac = 0.8;
  double problem_noise_var = 0.5;
  double problem_lambda = 0.15;
  double problem_theta = 7.0;
  double box_lower = -10.0;
  double box_upper = 10.0;

  std::string variant = "atc";  // atc | cta | ghat | baseline
  int B = 3;
  double gamma0 = 0.3;
  double mu = 1e-3;
  double tau = 10.0;

  std::string schedule_rule = "round_robin";
  std::uint64_t schedule_seed = 0;

  long max_rounds = 5000;
  long metrics_stride = 10;
  double stop_tol_J = 0.0;

  bool verify = false;  // set by the CLI flag, not a config key
};

namespace detail {

inline void validate(const RunConfig& c) {
  if (c.graph_n < 1 || c.problem_m < 1 || c.problem_n_i < 1 || c.B < 1)
    throw ConfigError("config: dimensions must be positive");
  if (!(c.graph_p > 0.0) || c.graph_p > 1.0)
    throw ConfigError("config: graph.p must lie in (0,1]");
  if (c.problem_sparsity_frac < 0.0 || c.problem_sparsity_frac >= 1.0)
    throw ConfigError("config: problem.sparsity_frac must lie in [0,1)");
  if (c.problem_noise_var < 0.0 || c.problem_lambda < 0.0 ||
      !(c.problem_theta > 0.0) || !(c.tau > 0.0))
    throw ConfigError("config: nonnegative parameters required");
  if (c.box_lower > c.box_upper) throw ConfigError("config: empty box");
  if (!(c.gamma0 > 0.0) || c.gamma0 > 1.0 || !(c.mu > 0.0) ||
      !(c.mu < 1.0 / c.gamma0))
    throw ConfigError("config: need gamma0 in (0,1] and mu in (0,1/gamma0)");
  if (c.variant != "atc" && c.variant != "cta" && c.variant != "ghat" &&
      c.variant != "baseline")
    throw ConfigError("config: unknown algorithm.variant " + c.variant);
  parse_schedule_rule(c.schedule_rule);
  if (c.problem_m % c.B != 0)
    throw ConfigError("config: algorithm.B must divide problem.m");
  if (c.max_rounds < 0 || c.metrics_stride < 1 || c.stop_tol_J < 0.0)
    throw ConfigError("config: bad run section");
}

}  // namespace detail

/// Parses the dotted key/value config text: one `key = value` per line,
/// '#' comments, closed key vocabulary (unknown keys are errors).
inline RunConfig parse_config(std::istream& in) {
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    if (eq == std::string::npos) {
      if (!trim(line).empty())
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": expected key = value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key or value");
    auto as_ll = [&] { return std::stoll(val); };
    auto as_d = [&] { return std::stod(val); };
    try {
      if (key == "seed") cfg.seed = std::stoull(val);
      else if (key == "graph.n") cfg.graph_n = static_cast<int>(as_ll());
      else if (key == "graph.p") cfg.graph_p = as_d();
      else if (key == "graph.max_retries")
        cfg.graph_max_retries = static_cast<int>(as_ll());
      else if (key == "problem.m") cfg.problem_m = static_cast<int>(as_ll());
      else if (key == "problem.n_i") cfg.problem_n_i = static_cast<int>(as_ll());
      else if (key == "problem.sparsity_frac") cfg.problem_sparsity_frac = as_d();
      else if (key == "problem.noise_var") cfg.problem_noise_var = as_d();
      else if (key == "problem.lambda") cfg.problem_lambda = as_d();
      else if (key == "problem.theta") cfg.problem_theta = as_d();
      else if (key == "problem.box") {
        std::istringstream bs(val);
        if (!(bs >> cfg.box_lower >> cfg.box_upper))
          throw ConfigError("config: problem.box needs two numbers");
      } else if (key == "algorithm.variant") cfg.variant = val;
      else if (key == "algorithm.B") cfg.B = static_cast<int>(as_ll());
      else if (key == "algorithm.gamma0") cfg.gamma0 = as_d();
      else if (key == "algorithm.mu") cfg.mu = as_d();
      else if (key == "algorithm.tau") cfg.tau = as_d();
      else if (key == "schedule.rule") cfg.schedule_rule = val;
      else if (key == "schedule.seed") cfg.schedule_seed = std::stoull(val);
      else if (key == "run.max_rounds") cfg.max_rounds = as_ll();
      else if (key == "run.metrics_stride") cfg.metrics_stride = as_ll();
      else if (key == "run.stop_tol_J") cfg.stop_tol_J = as_d();
      else
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": unknown key " + key);
    } catch (const std::invalid_argument&) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": bad value for " + key);
    } catch (const std::out_of_range&) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": value out of range for " + key);
    }
  }
  detail::validate(cfg);
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_config: cannot open " + path);
  return parse_config(in);
}

struct RunResult {
  std::vector<MetricsRecord> trace;
  std::vector<AgentState> final_states;
  Digraph graph{1};
  long t_end = -1;  // first round with J < stop_tol_J, -1 if never reached
};

namespace detail {

inline void check_finite(const MetricsRecord& rec) {
  const double vals[] = {rec.J, rec.D, rec.R, rec.tracking_residual,
                         rec.V, rec.gamma, rec.delta_sum};
  for (double v : vals)
    if (!std::isfinite(v))
      throw DivergenceDetected("run_experiment: non-finite metric at t=" +
                               std::to_string(rec.t));
}

/// Per-round invariant battery for verify mode. Feasibility and the s_bar
/// recursion are convex-combination consequences of the ATC/ghat updates and
/// are checked only there (the CTA correction term leaves the box in general).
inline void verify_round(const std::vector<AgentState>& prev,
                         const std::vector<AgentState>& next,
                         const RoundDiagnostics& diag, Variant variant,
                         double gamma, const SparseRegressionProblem& problem,
                         long t) {
  const BlockPartition& part = problem.partition();
  const int N = static_cast<int>(next.size());
  auto fail = [&](const std::string& what) {
    throw InvariantViolation("verify: " + what + " at t=" + std::to_string(t));
  };
  // Mass conservation and phi positivity.
  for (int l = 0; l < part.block_count(); ++l) {
    double mass = 0.0;
    for (const AgentState& st : next) {
      if (!(st.phi(l) > 1e-6)) fail("phi lower bound");
      mass += st.phi(l);
    }
    if (std::abs(mass - N) > 1e-10) fail("phi mass conservation");
  }
  // Exact tracker conservation: sigma_bar equals the average of the gradient
  // signal each variant actually injects (fresh gradients, or g_hat).
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(part.total_dim());
  for (const AgentState& st : next) {
    if (variant == Variant::ghat) {
      for (int l = 0; l < part.block_count(); ++l) {
        Eigen::VectorXd tmp = Eigen::VectorXd::Zero(part.total_dim());
        part.scatter(tmp, l, st.g_hat[l]);
        expected += tmp;
      }
    } else {
      expected += st.grad_cache;
    }
  }
  expected /= static_cast<double>(N);
  const Eigen::VectorXd sigbar = weighted_average_sigma_bar(next, part);
  const double scale = 1.0 + expected.lpNorm<Eigen::Infinity>();
  if ((sigbar - expected).lpNorm<Eigen::Infinity>() > 1e-8 * scale)
    fail("gradient-sum conservation");
  // Descent inequality of every local best response.
  for (int i = 0; i < N; ++i)
    if (!descent_check(diag.best_responses[i], diag.delta_x[i]))
      fail("best-response descent inequality");
  if (variant != Variant::cta) {
    // Feasibility of the derived iterates.
    for (const AgentState& st : next) {
      const Eigen::VectorXd x = st.x_full(part);
      if (x.maxCoeff() > problem.box_upper() + 1e-12 ||
          x.minCoeff() < problem.box_lower() - 1e-12)
        fail("iterate feasibility");
    }
    // s_bar recursion: sbar' - sbar = (gamma/N) sum_i phi_i dx_i per block.
    const Eigen::VectorXd s0 = weighted_average_sbar(prev, part);
    const Eigen::VectorXd s1 = weighted_average_sbar(next, part);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(part.total_dim());
    for (int i = 0; i < N; ++i) {
      const int li = diag.selections[i];
      Eigen::VectorXd tmp = Eigen::VectorXd::Zero(part.total_dim());
      part.scatter(tmp, li, prev[i].phi(li) * diag.delta_x[i]);
      rhs += tmp;
    }
    rhs *= gamma / static_cast<double>(N);
    const double rscale = 1.0 + s0.norm() + s1.norm();
    if ((s1 - s0 - rhs).norm() > 1e-10 * rscale) fail("s_bar recursion");
  }
}

}  // namespace detail

/// Metropolis-Hastings doubly stochastic weights on the undirected support.
inline Eigen::MatrixXd metropolis_weights(const Digraph& g) {
  const int n = g.node_count();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  std::vector<int> deg(n, 0);
  for (const auto& [j, i] : g.edges())
    if (j != i) ++deg[i];
  for (const auto& [j, i] : g.edges()) {
    if (j == i) continue;
    w(i, j) = 1.0 / (1.0 + std::max(deg[i], deg[j]));
  }
  for (int i = 0; i < n; ++i) w(i, i) = 1.0 - w.row(i).sum();
  return w;
}

/// One round of the projected (sub)gradient comparator on a symmetric graph:
/// x_i' = P_K( sum_j w_ij x_j - gamma g_i(x_i) ), g_i the subgradient of
/// f_i + (lambda/N) sum r0 with sign(0) = 0.
inline std::vector<Eigen::VectorXd> baseline_subgradient_round(
    const std::vector<Eigen::VectorXd>& x, const Eigen::MatrixXd& w,
    double gamma, const SparseRegressionProblem& problem) {
  const int N = static_cast<int>(x.size());
  std::vector<Eigen::VectorXd> next(N);
  const double et = eta(problem.theta());
  for (int i = 0; i < N; ++i) {
    Eigen::VectorXd mixed = Eigen::VectorXd::Zero(x[i].size());
    for (int j = 0; j < N; ++j)
      if (w(i, j) != 0.0) mixed += w(i, j) * x[j];
    Eigen::VectorXd g = problem.grad_f(i, x[i]);
    for (int k = 0; k < g.size(); ++k) {
      const double xi = x[i](k);
      const double sgn = xi > 0.0 ? 1.0 : (xi < 0.0 ? -1.0 : 0.0);
      g(k) += (problem.lambda() / problem.agent_count()) *
              (et * sgn - r0_minus_derivative(xi, problem.theta()));
    }
    next[i] = problem.project_feasible(mixed - gamma * g);
  }
  return next;
}

/// Full deterministic experiment: sample graph and instance from labeled
/// streams of the master seed, run the configured variant, record metrics on
/// the stride (plus t=0 and the final round), stop early once J < stop_tol_J.
inline RunResult run_experiment(const RunConfig& cfg) {
  detail::validate(cfg);
  auto graph_rng = rng::stream(cfg.seed, "graph");
  auto data_rng = rng::stream(cfg.seed, "data");
  auto noise_rng = rng::stream(cfg.seed, "noise");
  auto init_rng = rng::stream(cfg.seed, "init");

  RunResult res;
  res.graph = gen_erdos_renyi(cfg.graph_n, cfg.graph_p, graph_rng,
                              cfg.graph_max_retries);
  const SparseRegressionProblem problem = make_sparse_regression(
      data_rng, noise_rng, cfg.graph_n, cfg.problem_m, cfg.problem_n_i,
      cfg.problem_sparsity_frac, cfg.problem_noise_var, cfg.problem_lambda,
      cfg.problem_theta, cfg.box_lower, cfg.box_upper, cfg.B);
  const BlockPartition& part = problem.partition();

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> x0(cfg.graph_n);
  for (int i = 0; i < cfg.graph_n; ++i) {
    x0[i].resize(cfg.problem_m);
    for (int k = 0; k < cfg.problem_m; ++k) x0[i](k) = normal(init_rng);
    x0[i] = problem.project_feasible(x0[i]);
  }

  const std::uint64_t sched_seed =
      cfg.schedule_seed != 0 ? cfg.schedule_seed
                             : rng::derive_seed(cfg.seed, "schedule");
  const BlockSchedule sched(cfg.B, parse_schedule_rule(cfg.schedule_rule),
                            sched_seed);

  if (cfg.variant == "baseline") {
    const Eigen::MatrixXd w = metropolis_weights(res.graph);
    std::vector<Eigen::VectorXd> x = x0;
    double gamma = cfg.gamma0;
    auto record = [&](long t, double delta_sum) {
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(cfg.problem_m);
      for (const auto& xi : x) mean += xi;
      mean /= static_cast<double>(cfg.graph_n);
      MetricsRecord rec;
      rec.t = t;
      rec.message_exchanges = static_cast<double>(t);  // full-vector rounds
      rec.J = problem.merit_J(mean);
      for (const auto& xi : x) rec.D = std::max(rec.D, (xi - mean).norm());
      rec.R = 0.0;
      rec.tracking_residual = 0.0;
      double v = 0.0;
      for (int i = 0; i < cfg.graph_n; ++i) v += problem.f(i, mean);
      for (int l = 0; l < part.block_count(); ++l)
        for (const auto& xi : x)
          v += problem.r_block_value(l, part.gather(xi, l));
      rec.V = v;
      rec.gamma = gamma;
      rec.delta_sum = delta_sum;
      detail::check_finite(rec);
      res.trace.push_back(rec);
      return rec.J;
    };
    double J = record(0, 0.0);
    if (cfg.stop_tol_J > 0.0 && J < cfg.stop_tol_J) res.t_end = 0;
    for (long t = 0; t < cfg.max_rounds && res.t_end < 0; ++t) {
      const std::vector<Eigen::VectorXd> prev = x;
      x = baseline_subgradient_round(x, w, gamma, problem);
      gamma = step_size_next(gamma, cfg.mu);
      double ds = 0.0;
      for (int i = 0; i < cfg.graph_n; ++i) ds += (x[i] - prev[i]).norm();
      const long tn = t + 1;
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(cfg.problem_m);
      for (const auto& xi : x) mean += xi;
      mean /= static_cast<double>(cfg.graph_n);
      const double Jn = problem.merit_J(mean);
      if (!std::isfinite(Jn))
        throw DivergenceDetected("baseline: non-finite J");
      const bool stop = cfg.stop_tol_J > 0.0 && Jn < cfg.stop_tol_J;
      if (tn % cfg.metrics_stride == 0 || tn == cfg.max_rounds || stop)
        record(tn, ds);
      if (stop) res.t_end = tn;
    }
    return res;
  }

  const Variant variant = parse_variant(cfg.variant);
  const WeightMatrix base = base_weights(res.graph);
  const SurrogateSpec spec{cfg.tau, SurrogateKind::dc_linearization};
  std::vector<AgentState> states = init_states(problem, x0);
  double gamma = cfg.gamma0;

  MetricsRecord rec0 = compute_metrics(states, problem, 0, cfg.B, gamma, 0.0);
  detail::check_finite(rec0);
  res.trace.push_back(rec0);
  if (cfg.stop_tol_J > 0.0 && rec0.J < cfg.stop_tol_J) res.t_end = 0;

  for (long t = 0; t < cfg.max_rounds && res.t_end < 0; ++t) {
    RoundDiagnostics diag;
    std::vector<AgentState> next =
        run_round(variant, states, base, sched, gamma, problem, spec, t, &diag);
    if (cfg.verify)
      detail::verify_round(states, next, diag, variant, gamma, problem, t);
    states = std::move(next);
    const double gamma_used = gamma;
    gamma = step_size_next(gamma, cfg.mu);
    const long tn = t + 1;
    const Eigen::VectorXd sbar = weighted_average_sbar(states, part);
    const double J = problem.merit_J(sbar);
    if (!std::isfinite(J)) throw DivergenceDetected("run: non-finite J");
    const bool stop = cfg.stop_tol_J > 0.0 && J < cfg.stop_tol_J;
    if (tn % cfg.metrics_stride == 0 || tn == cfg.max_rounds || stop) {
      MetricsRecord rec = compute_metrics(states, problem, tn, cfg.B,
                                          gamma_used, diag.delta_sum);
      detail::check_finite(rec);
      res.trace.push_back(rec);
    }
    if (stop) res.t_end = tn;
  }
  res.final_states = std::move(states);
  return res;
}

inline void write_metrics_csv(const std::vector<MetricsRecord>& trace,
                              std::ostream& out) {
  out << "t,message_exchanges,J,D,R,tracking_residual,V,gamma,delta_sum\n";
  out.precision(17);
  for (const MetricsRecord& r : trace)
    out << r.t << ',' << r.message_exchanges << ',' << r.J << ',' << r.D << ','
        << r.R << ',' << r.tracking_residual << ',' << r.V << ',' << r.gamma
        << ',' << r.delta_sum << '\n';
}

inline void write_metrics_csv(const std::vector<MetricsRecord>& trace,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary keeps LF endings
  if (!out) throw IoError("write_metrics_csv: cannot open " + path);
  write_metrics_csv(trace, out);
}

struct SweepEntry {
  int B = 0;
  long t_end = -1;            // -1 when the tolerance was not reached
  double normalized = -1.0;   // t_end / B
};

/// Runs the experiment once per block count with stop tolerance 1e-3 and
/// reports the completion round and its communication-normalized value.
inline std::vector<SweepEntry> completion_time_sweep(RunConfig cfg,
                                                     const std::vector<int>& Bs,
                                                     double tol = 1e-3) {
  std::vector<SweepEntry> table;
  for (int B : Bs) {
    RunConfig c = cfg;
    c.B = B;
    c.stop_tol_J = tol;
    // Equal message-exchange budget across block counts.
    c.max_rounds = cfg.max_rounds * B;
    const RunResult r = run_experiment(c);
    SweepEntry e;
    e.B = B;
    e.t_end = r.t_end;
    if (r.t_end >= 0)
      e.normalized = static_cast<double>(r.t_end) / static_cast<double>(B);
    table.push_back(e);
  }
  return table;
}

}  // namespace blockopt
