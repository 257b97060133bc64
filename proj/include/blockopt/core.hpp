#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "blockopt/errors.hpp"
#include "blockopt/graph.hpp"
#include "blockopt/problems.hpp"
#include "blockopt/pushsum.hpp"
#include "blockopt/schedule.hpp"
#include "blockopt/surrogate.hpp"

namespace blockopt {

/// Canonical per-agent optimizer state in mass coordinates: s = phi * x and
/// sigma = phi * y per block, so conservation identities are exact sums.
/// x and y are derived views.
struct AgentState {
  Eigen::VectorXd phi;                 // per block, positive
  std::vector<Eigen::VectorXd> s;      // per block, phi * x
  std::vector<Eigen::VectorXd> sigma;  // per block, phi * y
  Eigen::VectorXd grad_cache;          // last evaluated full gradient
  std::vector<Eigen::VectorXd> g_hat;  // stale block gradients (ghat variant)

  Eigen::VectorXd x_block(int l) const { return s[l] / phi(l); }
  Eigen::VectorXd y_block(int l) const { return sigma[l] / phi(l); }

  Eigen::VectorXd x_full(const BlockPartition& part) const {
    Eigen::VectorXd x(part.total_dim());
    for (int l = 0; l < part.block_count(); ++l) part.scatter(x, l, x_block(l));
    return x;
  }

  Eigen::VectorXd y_full(const BlockPartition& part) const {
    Eigen::VectorXd y(part.total_dim());
    for (int l = 0; l < part.block_count(); ++l) part.scatter(y, l, y_block(l));
    return y;
  }
};

/// phi = 1, x = x0, y = grad f_i(x0) in every block; g_hat starts at the same
/// gradient so the stale buffer is consistent from round 0.
inline std::vector<AgentState> init_states(
    const SparseRegressionProblem& problem,
    const std::vector<Eigen::VectorXd>& x0) {
  const BlockPartition& part = problem.partition();
  const int N = problem.agent_count();
  const int B = part.block_count();
  if (static_cast<int>(x0.size()) != N)
    throw DimensionError("init_states: one initial point per agent required");
  std::vector<AgentState> states(N);
  for (int i = 0; i < N; ++i) {
    AgentState& st = states[i];
    st.phi = Eigen::VectorXd::Ones(B);
    st.grad_cache = problem.grad_f(i, x0[i]);
    st.s.resize(B);
    st.sigma.resize(B);
    st.g_hat.resize(B);
    for (int l = 0; l < B; ++l) {
      st.s[l] = part.gather(x0[i], l);
      st.sigma[l] = part.gather(st.grad_cache, l);
      st.g_hat[l] = st.sigma[l];
    }
  }
  return states;
}

/// Diminishing step-size recursion gamma' = gamma (1 - mu gamma).
inline double step_size_next(double gamma, double mu) {
  if (!(gamma > 0.0) || gamma > 1.0)
    throw InvalidSchedule("step_size_next: gamma must lie in (0,1]");
  if (!(mu > 0.0) || !(mu * gamma < 1.0))
    throw InvalidSchedule("step_size_next: need 0 < mu < 1/gamma");
  return gamma * (1.0 - mu * gamma);
}

/// Local best response of one agent on one block, with the distributed linear
/// coefficient N * y_block standing in for the network-average gradient.
inline BestResponse best_response_block(int agent, int block,
                                        const Eigen::VectorXd& x_full,
                                        const Eigen::VectorXd& y_block,
                                        const SurrogateSpec& spec,
                                        const SparseRegressionProblem& problem) {
  return problem.block_best_response(
      agent, block, x_full,
      static_cast<double>(problem.agent_count()) * y_block, spec.tau,
      spec.kind);
}

/// Per-round record the harness consumes for verification and metrics.
struct RoundDiagnostics {
  std::vector<int> selections;               // per agent
  std::vector<Eigen::VectorXd> delta_x;      // per agent, selected block only
  std::vector<BestResponse> best_responses;  // per agent, selected block only
  double delta_sum = 0.0;                    // sum_i ||delta_x_i||
};

enum class Variant { atc, cta, ghat };

inline Variant parse_variant(const std::string& name) {
  if (name == "atc") return Variant::atc;
  if (name == "cta") return Variant::cta;
  if (name == "ghat") return Variant::ghat;
  throw ConfigError("unknown variant: " + name);
}

namespace detail {

/// Shared local-optimization stage: each agent solves its selected block and
/// reports delta x (zero on non-selected blocks by convention).
inline RoundDiagnostics local_stage(const std::vector<AgentState>& states,
                                    const BlockSchedule& sched, long t,
                                    const SparseRegressionProblem& problem,
                                    const SurrogateSpec& spec,
                                    std::vector<Eigen::VectorXd>& x_now) {
  const int N = static_cast<int>(states.size());
  const BlockPartition& part = problem.partition();
  RoundDiagnostics diag;
  diag.selections = sched.round_selections(N, t);
  diag.delta_x.resize(N);
  diag.best_responses.resize(N);
  x_now.resize(N);
  for (int i = 0; i < N; ++i) {
    const int li = diag.selections[i];
    x_now[i] = states[i].x_full(part);
    diag.best_responses[i] = best_response_block(
        i, li, x_now[i], states[i].y_block(li), spec, problem);
    diag.delta_x[i] =
        diag.best_responses[i].x_tilde - part.gather(x_now[i], li);
    diag.delta_sum += diag.delta_x[i].norm();
  }
  return diag;
}

}  // namespace detail

/// One ATC round: mix phi, mix s carrying the gamma-scaled local step, derive
/// the new x, then mix sigma carrying each sender's fresh gradient difference.
inline std::vector<AgentState> sonata_round(const std::vector<AgentState>& states,
                                            const WeightMatrix& base,
                                            const BlockSchedule& sched,
                                            double gamma,
                                            const SparseRegressionProblem& problem,
                                            const SurrogateSpec& spec, long t,
                                            RoundDiagnostics* out_diag = nullptr) {
  const int N = static_cast<int>(states.size());
  const BlockPartition& part = problem.partition();
  const int B = part.block_count();
  std::vector<Eigen::VectorXd> x_now;
  RoundDiagnostics diag = detail::local_stage(states, sched, t, problem, spec, x_now);

  std::vector<AgentState> next = states;
  for (int l = 0; l < B; ++l) {
    const WeightMatrix a = block_weights(base, diag.selections, l);
    Eigen::VectorXd phi_old(N);
    for (int j = 0; j < N; ++j) phi_old(j) = states[j].phi(l);
    const Eigen::VectorXd phi_new = a.entries * phi_old;
    for (int i = 0; i < N; ++i) {
      if (!(phi_new(i) > 0.0))
        throw DegenerateWeight("sonata_round: nonpositive phi");
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(part.dim(l));
      for (int j = 0; j < N; ++j) {
        const double w = a.entries(i, j);
        if (w == 0.0) continue;
        if (diag.selections[j] == l)
          acc += w * (states[j].s[l] + gamma * phi_old(j) * diag.delta_x[j]);
        else
          acc += w * states[j].s[l];
      }
      next[i].s[l] = acc;
      next[i].phi(l) = phi_new(i);
    }
  }

  // Gradient refresh at the post-consensus iterate, then sigma mixing.
  std::vector<Eigen::VectorXd> grad_new(N);
  for (int j = 0; j < N; ++j)
    grad_new[j] = problem.grad_f(j, next[j].x_full(part));
  for (int l = 0; l < B; ++l) {
    const WeightMatrix a = block_weights(base, diag.selections, l);
    for (int i = 0; i < N; ++i) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(part.dim(l));
      for (int j = 0; j < N; ++j) {
        const double w = a.entries(i, j);
        if (w == 0.0) continue;
        acc += w * (states[j].sigma[l] + part.gather(grad_new[j], l) -
                    part.gather(states[j].grad_cache, l));
      }
      next[i].sigma[l] = acc;
    }
  }
  for (int j = 0; j < N; ++j) next[j].grad_cache = grad_new[j];

  if (out_diag) *out_diag = std::move(diag);
  return next;
}

/// CTA round: neighbors are combined first, then each agent adds its own
/// gamma-scaled step and its own gradient difference.
inline std::vector<AgentState> cta_round(const std::vector<AgentState>& states,
                                         const WeightMatrix& base,
                                         const BlockSchedule& sched,
                                         double gamma,
                                         const SparseRegressionProblem& problem,
                                         const SurrogateSpec& spec, long t,
                                         RoundDiagnostics* out_diag = nullptr) {
  const int N = static_cast<int>(states.size());
  const BlockPartition& part = problem.partition();
  const int B = part.block_count();
  std::vector<Eigen::VectorXd> x_now;
  RoundDiagnostics diag = detail::local_stage(states, sched, t, problem, spec, x_now);

  std::vector<AgentState> next = states;
  for (int l = 0; l < B; ++l) {
    const WeightMatrix a = block_weights(base, diag.selections, l);
    Eigen::VectorXd phi_old(N);
    for (int j = 0; j < N; ++j) phi_old(j) = states[j].phi(l);
    const Eigen::VectorXd phi_new = a.entries * phi_old;
    for (int i = 0; i < N; ++i) {
      if (!(phi_new(i) > 0.0))
        throw DegenerateWeight("cta_round: nonpositive phi");
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(part.dim(l));
      for (int j = 0; j < N; ++j) {
        const double w = a.entries(i, j);
        if (w != 0.0) acc += w * states[j].s[l];
      }
      if (diag.selections[i] == l)
        acc += gamma * phi_new(i) * phi_old(i) * diag.delta_x[i];
      next[i].s[l] = acc;
      next[i].phi(l) = phi_new(i);
    }
  }

  std::vector<Eigen::VectorXd> grad_new(N);
  for (int j = 0; j < N; ++j)
    grad_new[j] = problem.grad_f(j, next[j].x_full(part));
  for (int l = 0; l < B; ++l) {
    const WeightMatrix a = block_weights(base, diag.selections, l);
    for (int i = 0; i < N; ++i) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(part.dim(l));
      for (int j = 0; j < N; ++j) {
        const double w = a.entries(i, j);
        if (w != 0.0) acc += w * states[j].sigma[l];
      }
      acc += part.gather(grad_new[i], l) - part.gather(states[i].grad_cache, l);
      next[i].sigma[l] = acc;
    }
  }
  for (int j = 0; j < N; ++j) next[j].grad_cache = grad_new[j];

  if (out_diag) *out_diag = std::move(diag);
  return next;
}

/// ATC round with stale block gradients: only the selected block of g_hat is
/// refreshed from the new iterate, and the sigma mixing carries each sender's
/// (g_hat' - g_hat) difference so the single-block case coincides with the
/// full-gradient round exactly.
inline std::vector<AgentState> blockwise_gradient_round(
    const std::vector<AgentState>& states, const WeightMatrix& base,
    const BlockSchedule& sched, double gamma,
    const SparseRegressionProblem& problem, const SurrogateSpec& spec, long t,
    RoundDiagnostics* out_diag = nullptr) {
  const int N = static_cast<int>(states.size());
  const BlockPartition& part = problem.partition();
  const int B = part.block_count();
  std::vector<Eigen::VectorXd> x_now;
  RoundDiagnostics diag = detail::local_stage(states, sched, t, problem, spec, x_now);

  std::vector<AgentState> next = states;
  for (int l = 0; l < B; ++l) {
    const WeightMatrix a = block_weights(base, diag.selections, l);
    Eigen::VectorXd phi_old(N);
    for (int j = 0; j < N; ++j) phi_old(j) = states[j].phi(l);
    const Eigen::VectorXd phi_new = a.entries * phi_old;
    for (int i = 0; i < N; ++i) {
      if (!(phi_new(i) > 0.0))
        throw DegenerateWeight("blockwise_gradient_round: nonpositive phi");
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(part.dim(l));
      for (int j = 0; j < N; ++j) {
        const double w = a.entries(i, j);
        if (w == 0.0) continue;
        if (diag.selections[j] == l)
          acc += w * (states[j].s[l] + gamma * phi_old(j) * diag.delta_x[j]);
        else
          acc += w * states[j].s[l];
      }
      next[i].s[l] = acc;
      next[i].phi(l) = phi_new(i);
    }
  }

  // Refresh only the selected block of the stale gradient buffer.
  for (int j = 0; j < N; ++j) {
    const int lj = diag.selections[j];
    next[j].g_hat[lj] =
        problem.block_grad_f(j, lj, next[j].x_full(part));
  }
  for (int l = 0; l < B; ++l) {
    const WeightMatrix a = block_weights(base, diag.selections, l);
    for (int i = 0; i < N; ++i) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(part.dim(l));
      for (int j = 0; j < N; ++j) {
        const double w = a.entries(i, j);
        if (w == 0.0) continue;
        acc += w * (states[j].sigma[l] + next[j].g_hat[l] - states[j].g_hat[l]);
      }
      next[i].sigma[l] = acc;
    }
  }

  if (out_diag) *out_diag = std::move(diag);
  return next;
}

inline std::vector<AgentState> run_round(Variant variant,
                                         const std::vector<AgentState>& states,
                                         const WeightMatrix& base,
                                         const BlockSchedule& sched,
                                         double gamma,
                                         const SparseRegressionProblem& problem,
                                         const SurrogateSpec& spec, long t,
                                         RoundDiagnostics* out_diag = nullptr) {
  switch (variant) {
    case Variant::atc:
      return sonata_round(states, base, sched, gamma, problem, spec, t, out_diag);
    case Variant::cta:
      return cta_round(states, base, sched, gamma, problem, spec, t, out_diag);
    case Variant::ghat:
      return blockwise_gradient_round(states, base, sched, gamma, problem,
                                      spec, t, out_diag);
  }
  throw ConfigError("run_round: bad variant");
}

/// Weighted network average (1/N) sum_i phi_(i,l) x_(i,l) = (1/N) sum_i s_(i,l).
inline Eigen::VectorXd weighted_average_sbar(const std::vector<AgentState>& states,
                                             const BlockPartition& part) {
  Eigen::VectorXd sbar = Eigen::VectorXd::Zero(part.total_dim());
  for (int l = 0; l < part.block_count(); ++l) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(part.dim(l));
    for (const AgentState& st : states) acc += st.s[l];
    part.scatter(sbar, l, acc / static_cast<double>(states.size()));
  }
  return sbar;
}

/// Weighted average of the trackers, (1/N) sum_i sigma_(i,l).
inline Eigen::VectorXd weighted_average_sigma_bar(
    const std::vector<AgentState>& states, const BlockPartition& part) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(part.total_dim());
  for (int l = 0; l < part.block_count(); ++l) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(part.dim(l));
    for (const AgentState& st : states) acc += st.sigma[l];
    part.scatter(out, l, acc / static_cast<double>(states.size()));
  }
  return out;
}

/// Diagnostic sum_i f_i(s_bar_next) + sum_l sum_i phi_(i,l) r_l(x_(i,l));
/// decreases along desk runs up to a summable perturbation, so no strict
/// monotonicity is asserted anywhere.
inline double lyapunov_V(const std::vector<AgentState>& states,
                         const Eigen::VectorXd& s_bar_next,
                         const SparseRegressionProblem& problem) {
  double v = 0.0;
  for (int i = 0; i < problem.agent_count(); ++i) v += problem.f(i, s_bar_next);
  const BlockPartition& part = problem.partition();
  for (int l = 0; l < part.block_count(); ++l)
    for (const AgentState& st : states)
      v += st.phi(l) * problem.r_block_value(l, st.x_block(l));
  return v;
}

/// Best-response descent inequality with explicit modulus bookkeeping:
/// grad^T dx <= -modulus ||dx||^2 - (r_new - r_old) + tiny slack.
inline bool descent_check(const Eigen::VectorXd& grad_at_center,
                          const Eigen::VectorXd& delta_x, double modulus,
                          double r_old, double r_new) {
  const double dx2 = delta_x.squaredNorm();
  const double slack = 1e-9 * (1.0 + dx2);
  return grad_at_center.dot(delta_x) <=
         -modulus * dx2 - (r_new - r_old) + slack;
}

inline bool descent_check(const BestResponse& br,
                          const Eigen::VectorXd& delta_x) {
  return descent_check(br.grad_at_center, delta_x, br.modulus, br.r_old,
                       br.r_new);
}

/// Quadratic-surrogate form with the distributed coefficient N * y_block.
inline bool descent_check(const Eigen::VectorXd& y_block,
                          const Eigen::VectorXd& delta_x, double tau_i,
                          double r_old, double r_new, int N) {
  return descent_check(static_cast<double>(N) * y_block, delta_x, 2.0 * tau_i,
                       r_old, r_new);
}

struct MetricsRecord {
  long t = 0;
  double message_exchanges = 0.0;
  double J = 0.0;
  double D = 0.0;
  double R = 0.0;
  double tracking_residual = 0.0;
  double V = 0.0;
  double gamma = 0.0;
  double delta_sum = 0.0;
};

/// J, D, R, exact tracking residual, V, and the per-round step-size and
/// displacement diagnostics.
inline MetricsRecord compute_metrics(const std::vector<AgentState>& states,
                                     const SparseRegressionProblem& problem,
                                     long t, int block_count, double gamma,
                                     double delta_sum) {
  const BlockPartition& part = problem.partition();
  const int N = static_cast<int>(states.size());
  MetricsRecord rec;
  rec.t = t;
  rec.message_exchanges =
      static_cast<double>(t) / static_cast<double>(block_count);
  const Eigen::VectorXd sbar = weighted_average_sbar(states, part);
  const Eigen::VectorXd sigbar = weighted_average_sigma_bar(states, part);
  rec.J = problem.merit_J(sbar);
  Eigen::VectorXd avg_grad = Eigen::VectorXd::Zero(part.total_dim());
  for (int i = 0; i < N; ++i) {
    const Eigen::VectorXd xi = states[i].x_full(part);
    rec.D = std::max(rec.D, (xi - sbar).norm());
    rec.R = std::max(rec.R, (states[i].y_full(part) - sigbar).norm());
    avg_grad += problem.grad_f(i, xi);
  }
  avg_grad /= static_cast<double>(N);
  rec.tracking_residual = (sigbar - avg_grad).lpNorm<Eigen::Infinity>();
  rec.V = lyapunov_V(states, sbar, problem);
  rec.gamma = gamma;
  rec.delta_sum = delta_sum;
  return rec;
}

}  // namespace blockopt
