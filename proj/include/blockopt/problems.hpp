#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "blockopt/errors.hpp"
#include "blockopt/surrogate.hpp"

namespace blockopt {

/// Partition of coordinates {0..m-1} into B pairwise disjoint index sets.
class BlockPartition {
 public:
  explicit BlockPartition(std::vector<std::vector<int>> blocks)
      : blocks_(std::move(blocks)) {
    std::vector<char> seen;
    for (const auto& blk : blocks_)
      for (int k : blk) {
        if (k < 0) throw DimensionError("BlockPartition: negative index");
        if (k >= static_cast<int>(seen.size())) seen.resize(k + 1, 0);
        if (seen[k]) throw DimensionError("BlockPartition: overlapping blocks");
        seen[k] = 1;
      }
    total_ = 0;
    for (const auto& blk : blocks_) total_ += static_cast<int>(blk.size());
    if (static_cast<int>(seen.size()) != total_)
      throw DimensionError("BlockPartition: indices do not cover {0..m-1}");
  }

  static BlockPartition contiguous(int m, int B) {
    if (B < 1 || m < B || m % B != 0)
      throw DimensionError("BlockPartition::contiguous: B must divide m");
    std::vector<std::vector<int>> blocks(B);
    const int d = m / B;
    for (int l = 0; l < B; ++l) {
      blocks[l].resize(d);
      std::iota(blocks[l].begin(), blocks[l].end(), l * d);
    }
    return BlockPartition(std::move(blocks));
  }

  int block_count() const { return static_cast<int>(blocks_.size()); }
  int total_dim() const { return total_; }
  int dim(int l) const { return static_cast<int>(blocks_[l].size()); }
  const std::vector<int>& indices(int l) const { return blocks_[l]; }
  const std::vector<std::vector<int>>& blocks() const { return blocks_; }

  std::vector<int> dims() const {
    std::vector<int> d(blocks_.size());
    for (std::size_t l = 0; l < blocks_.size(); ++l)
      d[l] = static_cast<int>(blocks_[l].size());
    return d;
  }

  Eigen::VectorXd gather(const Eigen::VectorXd& x, int l) const {
    const auto& idx = blocks_[l];
    Eigen::VectorXd out(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) out(k) = x(idx[k]);
    return out;
  }

  void scatter(Eigen::VectorXd& x, int l, const Eigen::VectorXd& blk) const {
    const auto& idx = blocks_[l];
    for (std::size_t k = 0; k < idx.size(); ++k) x(idx[k]) = blk(k);
  }

 private:
  std::vector<std::vector<int>> blocks_;
  int total_ = 0;
};

// --- Regularizer primitives -------------------------------------------------

/// eta(theta) = theta / log(1 + theta), the slope of the convex DC part.
inline double eta(double theta) {
  if (!(theta >= 1e-8)) throw DimensionError("eta: theta must be >= 1e-8");
  return theta / std::log1p(theta);
}

/// The log penalty r0(x) = log(1 + theta |x|) / log(1 + theta).
inline double r0_value(double x, double theta) {
  return std::log1p(theta * std::abs(x)) / std::log1p(theta);
}

/// Convex remainder of the DC split, r0^-(x) = eta |x| - r0(x).
inline double r0_minus_value(double x, double theta) {
  return eta(theta) * std::abs(x) - r0_value(x, theta);
}

/// d r0^- / dx, odd and bounded by eta(theta).
inline double r0_minus_derivative(double x, double theta) {
  const double ax = std::abs(x);
  const double sgn = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
  return sgn * theta * theta * ax / (std::log1p(theta) * (1.0 + theta * ax));
}

/// Element-wise soft threshold sign(x) * max(|x| - kappa, 0).
inline Eigen::VectorXd soft_threshold(const Eigen::VectorXd& v, double kappa) {
  if (kappa < 0.0) throw DimensionError("soft_threshold: kappa must be >= 0");
  return v.unaryExpr([kappa](double x) {
    const double mag = std::abs(x) - kappa;
    return mag > 0.0 ? (x > 0.0 ? mag : -mag) : 0.0;
  });
}

/// Element-wise clamp onto [lo, hi].
inline Eigen::VectorXd box_project(const Eigen::VectorXd& v, double lo,
                                   double hi) {
  if (lo > hi) throw DimensionError("box_project: lo > hi");
  return v.cwiseMax(lo).cwiseMin(hi);
}

// --- Independent subproblem oracle ------------------------------------------

/// Solves min_{x in [lo,hi]^d}  q^T (x - xc) + tau ||x - xc||^2
///                              + lambda_eta ||x||_1
/// by projected proximal-gradient iterations (step 1/(4 tau), deliberately
/// not the one-shot step, so the iteration path is independent of the
/// closed-form route it validates).
inline Eigen::VectorXd oracle_prox_solve(const Eigen::VectorXd& q,
                                         const Eigen::VectorXd& x_c,
                                         double tau, double lambda_eta,
                                         double lo, double hi,
                                         double tol = 1e-12,
                                         int max_iters = 100000) {
  if (!(tau > 0.0)) throw DimensionError("oracle_prox_solve: tau must be > 0");
  const double step = 1.0 / (4.0 * tau);
  Eigen::VectorXd x = box_project(x_c, lo, hi);
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::VectorXd grad = q + 2.0 * tau * (x - x_c);
    const Eigen::VectorXd next =
        box_project(soft_threshold(x - step * grad, step * lambda_eta), lo, hi);
    const double move = (next - x).lpNorm<Eigen::Infinity>();
    x = next;
    if (move <= tol) return x;
  }
  throw SolverFailure("oracle_prox_solve: tolerance not reached");
}

// --- Sparse regression instance ----------------------------------------------

/// Distributed sparse regression: per-agent least squares f_i = ||D_i x - b_i||^2
/// over a box, with the DC log regularizer r(x) = lambda sum_j r0(x_j).
class SparseRegressionProblem {
 public:
  SparseRegressionProblem(std::vector<Eigen::MatrixXd> D,
                          std::vector<Eigen::VectorXd> b,
                          BlockPartition partition, double lambda,
                          double theta, double box_lower, double box_upper)
      : D_(std::move(D)),
        b_(std::move(b)),
        partition_(std::move(partition)),
        lambda_(lambda),
        theta_(theta),
        lo_(box_lower),
        hi_(box_upper) {
    if (D_.size() != b_.size() || D_.empty())
      throw DimensionError("SparseRegressionProblem: agent data mismatch");
    for (std::size_t i = 0; i < D_.size(); ++i) {
      if (D_[i].cols() != partition_.total_dim() || D_[i].rows() != b_[i].size())
        throw DimensionError("SparseRegressionProblem: inconsistent shapes");
    }
    if (lambda_ < 0.0 || lo_ > hi_)
      throw DimensionError("SparseRegressionProblem: bad parameters");
  }

  int agent_count() const { return static_cast<int>(D_.size()); }
  int total_dim() const { return partition_.total_dim(); }
  const BlockPartition& partition() const { return partition_; }
  double lambda() const { return lambda_; }
  double theta() const { return theta_; }
  double box_lower() const { return lo_; }
  double box_upper() const { return hi_; }
  const Eigen::MatrixXd& data_matrix(int i) const { return D_[i]; }
  const Eigen::VectorXd& observations(int i) const { return b_[i]; }

  double f(int i, const Eigen::VectorXd& x) const {
    return (D_[i] * x - b_[i]).squaredNorm();
  }

  Eigen::VectorXd grad_f(int i, const Eigen::VectorXd& x) const {
    return 2.0 * D_[i].transpose() * (D_[i] * x - b_[i]);
  }

  Eigen::VectorXd block_grad_f(int i, int l, const Eigen::VectorXd& x) const {
    return partition_.gather(grad_f(i, x), l);
  }

  /// lambda * sum of r0 over the block's coordinates (the true regularizer).
  double r_block_value(int l, const Eigen::VectorXd& xl) const {
    double v = 0.0;
    for (int k = 0; k < xl.size(); ++k) v += r0_value(xl(k), theta_);
    return lambda_ * v;
  }

  /// Convex DC part lambda * eta * ||.||_1 on one block.
  double convex_reg_value(const Eigen::VectorXd& xl) const {
    return lambda_ * eta(theta_) * xl.lpNorm<1>();
  }

  /// Element-wise gradient of the (lambda-scaled) concave remainder,
  /// lambda * d r0^- / dx.
  Eigen::VectorXd concave_part_gradient(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(v.size());
    for (int k = 0; k < v.size(); ++k)
      out(k) = lambda_ * r0_minus_derivative(v(k), theta_);
    return out;
  }

  Eigen::VectorXd project_feasible(const Eigen::VectorXd& x) const {
    return box_project(x, lo_, hi_);
  }

  /// Closed-form minimizer of the block subproblem with linear coefficient q:
  ///   dc_linearization:    P_K( S_{lambda eta / tau}( xc - (q - v)/tau ) )
  ///   plain_linearization: same with v = 0 and the 2 tau modulus.
  BestResponse block_best_response(int /*agent*/, int l,
                                   const Eigen::VectorXd& x_full,
                                   const Eigen::VectorXd& q, double tau,
                                   SurrogateKind kind) const {
    const Eigen::VectorXd xc = partition_.gather(x_full, l);
    BestResponse br;
    if (kind == SurrogateKind::dc_linearization) {
      br.grad_at_center = q - concave_part_gradient(xc);
      br.modulus = tau;
      br.x_tilde = box_project(
          soft_threshold(xc - br.grad_at_center / tau,
                         lambda_ * eta(theta_) / tau),
          lo_, hi_);
    } else {
      br.grad_at_center = q;
      br.modulus = 2.0 * tau;
      br.x_tilde = box_project(
          soft_threshold(xc - q / (2.0 * tau),
                         lambda_ * eta(theta_) / (2.0 * tau)),
          lo_, hi_);
    }
    br.r_old = convex_reg_value(xc);
    br.r_new = convex_reg_value(br.x_tilde);
    return br;
  }

  /// Stationarity residual of the average estimate:
  /// || s - P_K( S_{lambda eta}( s - (sum_i grad f_i(s) - v(s)) ) ) ||_inf.
  double merit_J(const Eigen::VectorXd& s_bar) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(total_dim());
    for (int i = 0; i < agent_count(); ++i) g += grad_f(i, s_bar);
    g -= concave_part_gradient(s_bar);
    const Eigen::VectorXd mapped = box_project(
        soft_threshold(s_bar - g, lambda_ * eta(theta_)), lo_, hi_);
    return (s_bar - mapped).lpNorm<Eigen::Infinity>();
  }

  /// Best-response map with the centralized gradient; its fixed points are
  /// the stationary solutions, so ||xhat(w) - w|| is a stationarity
  /// diagnostic.
  Eigen::VectorXd best_response_map_xhat(const Eigen::VectorXd& w,
                                         double tau) const {
    Eigen::VectorXd sum_grad = Eigen::VectorXd::Zero(total_dim());
    for (int i = 0; i < agent_count(); ++i) sum_grad += grad_f(i, w);
    Eigen::VectorXd out = w;
    for (int l = 0; l < partition_.block_count(); ++l) {
      const BestResponse br =
          block_best_response(0, l, w, partition_.gather(sum_grad, l), tau,
                              SurrogateKind::dc_linearization);
      partition_.scatter(out, l, br.x_tilde);
    }
    return out;
  }

 private:
  std::vector<Eigen::MatrixXd> D_;
  std::vector<Eigen::VectorXd> b_;
  BlockPartition partition_;
  double lambda_, theta_, lo_, hi_;
};

/// Distributed-form closed-form block minimizer, q = N * y_block.
inline Eigen::VectorXd closed_form_block_min(int agent, int block,
                                             const Eigen::VectorXd& x_full,
                                             const Eigen::VectorXd& y_block,
                                             double tau, int agent_count,
                                             const SparseRegressionProblem& p) {
  return p
      .block_best_response(agent, block, x_full,
                           static_cast<double>(agent_count) * y_block, tau,
                           SurrogateKind::dc_linearization)
      .x_tilde;
}

/// Pure local form, q = grad_l f_i(x); exposed for oracle tests.
inline Eigen::VectorXd closed_form_block_min_local(
    int agent, int block, const Eigen::VectorXd& x_full, double tau,
    const SparseRegressionProblem& p) {
  return p
      .block_best_response(agent, block, x_full,
                           p.block_grad_f(agent, block, x_full), tau,
                           SurrogateKind::dc_linearization)
      .x_tilde;
}

/// Generates the sparse-regression experiment data: normal ground truth with
/// the smallest `sparsity_frac` fraction of entries (by magnitude) zeroed,
/// row-normalized normal measurement matrices, additive normal noise.
inline SparseRegressionProblem make_sparse_regression(
    std::mt19937_64& data_rng, std::mt19937_64& noise_rng, int N, int m,
    int n_i, double sparsity_frac, double noise_var, double lambda,
    double theta, double box_lower, double box_upper, int B,
    Eigen::VectorXd* ground_truth = nullptr) {
  if (N < 1 || m < 1 || n_i < 1)
    throw DimensionError("make_sparse_regression: bad dimensions");
  if (sparsity_frac < 0.0 || sparsity_frac >= 1.0)
    throw DimensionError("make_sparse_regression: sparsity_frac in [0,1)");
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::VectorXd x0(m);
  for (int k = 0; k < m; ++k) x0(k) = normal(data_rng);
  const int zeros = static_cast<int>(std::llround(sparsity_frac * m));
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(x0(a)) < std::abs(x0(b));
  });
  for (int k = 0; k < zeros; ++k) x0(order[k]) = 0.0;

  std::vector<Eigen::MatrixXd> D(N);
  std::vector<Eigen::VectorXd> b(N);
  const double noise_std = std::sqrt(noise_var);
  for (int i = 0; i < N; ++i) {
    D[i].resize(n_i, m);
    for (int r = 0; r < n_i; ++r) {
      for (int c = 0; c < m; ++c) D[i](r, c) = normal(data_rng);
      D[i].row(r) /= D[i].row(r).norm();
    }
    b[i] = D[i] * x0;
    for (int r = 0; r < n_i; ++r) b[i](r) += noise_std * normal(noise_rng);
  }
  if (ground_truth) *ground_truth = x0;
  return SparseRegressionProblem(std::move(D), std::move(b),
                                 BlockPartition::contiguous(m, B), lambda,
                                 theta, box_lower, box_upper);
}

// --- Instance serialization ---------------------------------------------------
// A JSON manifest (<prefix>.json) and a flat little-endian binary container
// (<prefix>.bin) holding, per agent, D_i row-major followed by b_i.

inline void save_instance(const SparseRegressionProblem& p,
                          const std::string& prefix) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["agent_count"] = p.agent_count();
  manifest["dim"] = p.total_dim();
  std::vector<int> rows;
  for (int i = 0; i < p.agent_count(); ++i)
    rows.push_back(static_cast<int>(p.data_matrix(i).rows()));
  manifest["rows"] = rows;
  manifest["lambda"] = p.lambda();
  manifest["theta"] = p.theta();
  manifest["box"] = {p.box_lower(), p.box_upper()};
  manifest["partition"] = p.partition().blocks();

  std::ofstream mout(prefix + ".json");
  if (!mout) throw IoError("save_instance: cannot open " + prefix + ".json");
  mout << manifest.dump(2) << "\n";

  std::ofstream bout(prefix + ".bin", std::ios::binary);
  if (!bout) throw IoError("save_instance: cannot open " + prefix + ".bin");
  auto put = [&](double v) {
    bout.write(reinterpret_cast<const char*>(&v), sizeof(double));
  };
  for (int i = 0; i < p.agent_count(); ++i) {
    const Eigen::MatrixXd& D = p.data_matrix(i);
    for (int r = 0; r < D.rows(); ++r)
      for (int c = 0; c < D.cols(); ++c) put(D(r, c));
    const Eigen::VectorXd& b = p.observations(i);
    for (int r = 0; r < b.size(); ++r) put(b(r));
  }
}

inline SparseRegressionProblem load_instance(const std::string& prefix) {
  std::ifstream min(prefix + ".json");
  if (!min) throw IoError("load_instance: cannot open " + prefix + ".json");
  nlohmann::json manifest = nlohmann::json::parse(min);
  if (manifest.at("format_version").get<int>() != 1)
    throw IoError("load_instance: unsupported format version");
  const int N = manifest.at("agent_count").get<int>();
  const int m = manifest.at("dim").get<int>();
  const auto rows = manifest.at("rows").get<std::vector<int>>();
  const auto box = manifest.at("box").get<std::vector<double>>();
  BlockPartition partition(
      manifest.at("partition").get<std::vector<std::vector<int>>>());

  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw IoError("load_instance: cannot open " + prefix + ".bin");
  auto get = [&]() {
    double v = 0.0;
    bin.read(reinterpret_cast<char*>(&v), sizeof(double));
    if (!bin) throw IoError("load_instance: truncated binary container");
    return v;
  };
  std::vector<Eigen::MatrixXd> D(N);
  std::vector<Eigen::VectorXd> b(N);
  for (int i = 0; i < N; ++i) {
    D[i].resize(rows[i], m);
    for (int r = 0; r < rows[i]; ++r)
      for (int c = 0; c < m; ++c) D[i](r, c) = get();
    b[i].resize(rows[i]);
    for (int r = 0; r < rows[i]; ++r) b[i](r) = get();
  }
  return SparseRegressionProblem(std::move(D), std::move(b),
                                 std::move(partition),
                                 manifest.at("lambda").get<double>(),
                                 manifest.at("theta").get<double>(), box.at(0),
                                 box.at(1));
}

}  // namespace blockopt
