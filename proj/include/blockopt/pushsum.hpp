#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "blockopt/errors.hpp"
#include "blockopt/graph.hpp"

namespace blockopt {

/// Per-agent, per-block (phi, z) pair of the block-wise push-sum protocol.
/// phi starts at 1 everywhere; column stochasticity of the mixing matrices
/// keeps sum_i phi_(i,l) = N for every block and round.
struct PushSumState {
  Eigen::MatrixXd phi;                           // N x B, all positive
  std::vector<std::vector<Eigen::VectorXd>> z;   // [agent][block], size d_l

  int agent_count() const { return static_cast<int>(phi.rows()); }
  int block_count() const { return static_cast<int>(phi.cols()); }

  static PushSumState uniform(int agents, const std::vector<int>& block_dims) {
    PushSumState st;
    const int B = static_cast<int>(block_dims.size());
    st.phi = Eigen::MatrixXd::Ones(agents, B);
    st.z.assign(agents, {});
    for (int i = 0; i < agents; ++i) {
      st.z[i].reserve(B);
      for (int l = 0; l < B; ++l)
        st.z[i].push_back(Eigen::VectorXd::Zero(block_dims[l]));
    }
    return st;
  }
};

/// Weight matrix of block l for one round: column j is the base column if
/// agent j sent block l, the j-th canonical basis vector otherwise. Column
/// stochastic by construction and matching the induced subgraph.
inline WeightMatrix block_weights(const WeightMatrix& base,
                                  const std::vector<int>& selections,
                                  int block) {
  const int n = base.size();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  double kappa = 1.0;
  for (int j = 0; j < n; ++j) {
    if (selections[static_cast<std::size_t>(j)] == block) {
      a.col(j) = base.entries.col(j);
      kappa = std::min(kappa, base.kappa);
    } else {
      a(j, j) = 1.0;
    }
  }
  return WeightMatrix{std::move(a),
                      induced_block_subgraph(base.support, selections, block),
                      kappa};
}

/// One synchronous round of the block-wise push-sum consensus:
///   phi'_(i,l) = sum_j a_ijl phi_(j,l)
///   z'_(i,l)   = sum_j (a_ijl phi_(j,l) / phi'_(i,l)) (z_(j,l) + eps_(j,l))
/// `perturbations`, when non-null, supplies eps per agent and block; null
/// means the unperturbed protocol.
inline PushSumState perturbed_pushsum_step(
    const PushSumState& state, const std::vector<WeightMatrix>& weights,
    const std::vector<std::vector<Eigen::VectorXd>>* perturbations) {
  const int n = state.agent_count();
  const int B = state.block_count();
  PushSumState next = state;
  for (int l = 0; l < B; ++l) {
    const Eigen::MatrixXd& a = weights[static_cast<std::size_t>(l)].entries;
    const Eigen::VectorXd phi_next = a * state.phi.col(l);
    for (int i = 0; i < n; ++i) {
      if (!(phi_next(i) > 0.0))
        throw DegenerateWeight("pushsum: nonpositive phi encountered");
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(state.z[i][l].size());
      for (int j = 0; j < n; ++j) {
        const double w = a(i, j);
        if (w == 0.0) continue;
        if (perturbations)
          acc += w * state.phi(j, l) *
                 (state.z[j][l] + (*perturbations)[j][l]);
        else
          acc += w * state.phi(j, l) * state.z[j][l];
      }
      next.z[i][l] = acc / phi_next(i);
    }
    next.phi.col(l) = phi_next;
  }
  return next;
}

inline PushSumState pushsum_step(const PushSumState& state,
                                 const std::vector<WeightMatrix>& weights) {
  return perturbed_pushsum_step(state, weights, nullptr);
}

/// Staleness buffer for block-wise average tracking of time-varying signals:
/// u_hat_(i,l) holds the block value at the most recent round agent i
/// selected block l.
struct SignalTracker {
  std::vector<Eigen::VectorXd> u_hat;  // per block
};

/// One round of the modified tracking scheme: each agent refreshes only its
/// selected block of u_hat with `fresh_block[i]` (the newly acquired block
/// value), then the perturbed step mixes phi_j z_j + (u_hat' - u_hat).
inline PushSumState track_average_step(
    const PushSumState& state, std::vector<SignalTracker>& trackers,
    const std::vector<int>& selections,
    const std::vector<WeightMatrix>& weights,
    const std::vector<Eigen::VectorXd>& fresh_block) {
  const int n = state.agent_count();
  const int B = state.block_count();
  std::vector<std::vector<Eigen::VectorXd>> eps(
      static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    eps[i].reserve(B);
    for (int l = 0; l < B; ++l)
      eps[i].push_back(Eigen::VectorXd::Zero(state.z[i][l].size()));
    const int li = selections[static_cast<std::size_t>(i)];
    // eps enters the update premultiplied by phi_j, so the injected
    // difference is divided by phi to land as (u_hat' - u_hat) in the sum.
    eps[i][li] = (fresh_block[static_cast<std::size_t>(i)] -
                  trackers[static_cast<std::size_t>(i)].u_hat[li]) /
                 state.phi(i, li);
    trackers[static_cast<std::size_t>(i)].u_hat[li] =
        fresh_block[static_cast<std::size_t>(i)];
  }
  return perturbed_pushsum_step(state, weights, &eps);
}

/// Per-agent l1 distance of z_(i,:) from the network average, summed over
/// blocks.
inline Eigen::VectorXd consensus_error(const PushSumState& state) {
  const int n = state.agent_count();
  const int B = state.block_count();
  Eigen::VectorXd err = Eigen::VectorXd::Zero(n);
  for (int l = 0; l < B; ++l) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(state.z[0][l].size());
    for (int j = 0; j < n; ++j) mean += state.z[j][l];
    mean /= n;
    for (int i = 0; i < n; ++i)
      err(i) += (state.z[i][l] - mean).lpNorm<1>();
  }
  return err;
}

}  // namespace blockopt
