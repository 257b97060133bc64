#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "blockopt/errors.hpp"

namespace blockopt {

/// Fixed directed communication graph. An edge (j,i) means j can send to i.
/// Self-loops (i,i) are always present: every agent listens to itself.
class Digraph {
 public:
  explicit Digraph(int node_count) : n_(node_count) {
    if (node_count < 1) throw DimensionError("Digraph: node_count must be >= 1");
    for (int i = 0; i < n_; ++i) edges_.emplace(i, i);
  }

  int node_count() const { return n_; }

  void add_edge(int from, int to) {
    if (from < 0 || from >= n_ || to < 0 || to >= n_)
      throw DimensionError("Digraph::add_edge: node out of range");
    edges_.emplace(from, to);
  }

  bool has_edge(int from, int to) const {
    return edges_.count({from, to}) > 0;
  }

  const std::set<std::pair<int, int>>& edges() const { return edges_; }

  /// In-neighbors of i (senders to i), including i itself.
  std::vector<int> in_neighbors(int i) const {
    std::vector<int> nbr;
    for (const auto& [j, k] : edges_)
      if (k == i) nbr.push_back(j);
    return nbr;
  }

  int out_degree(int j) const {
    int d = 0;
    for (const auto& [from, to] : edges_)
      if (from == j) ++d;
    return d;
  }

  bool operator==(const Digraph& other) const {
    return n_ == other.n_ && edges_ == other.edges_;
  }

 private:
  int n_;
  std::set<std::pair<int, int>> edges_;
};

/// True iff every node reaches every node. Since self-loops are always
/// present, it suffices that node 0 reaches all nodes in the graph and in
/// its transpose.
inline bool is_strongly_connected(const Digraph& g) {
  const int n = g.node_count();
  auto reach = [&](bool transpose) {
    std::vector<char> seen(n, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (const auto& [a, b] : g.edges()) {
        const int from = transpose ? b : a;
        const int to = transpose ? a : b;
        if (from == u && !seen[to]) {
          seen[to] = 1;
          ++count;
          stack.push_back(to);
        }
      }
    }
    return count == n;
  };
  return reach(false) && reach(true);
}

/// Symmetric Erdos-Renyi sample with self-loops, resampled until strongly
/// connected. Undirected topologies are represented as symmetric edge sets.
inline Digraph gen_erdos_renyi(int n, double p, std::mt19937_64& rng,
                               int max_retries = 100) {
  if (n < 1) throw DimensionError("gen_erdos_renyi: n must be >= 1");
  if (!(p > 0.0) || p > 1.0)
    throw DimensionError("gen_erdos_renyi: p must lie in (0,1]");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    Digraph g(n);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (coin(rng) < p) {
          g.add_edge(i, j);
          g.add_edge(j, i);
        }
    if (is_strongly_connected(g)) return g;
  }
  throw RetriesExhausted("gen_erdos_renyi: no strongly connected sample");
}

/// Column-stochastic nonnegative matrix supported exactly on a digraph.
struct WeightMatrix {
  Eigen::MatrixXd entries;
  Digraph support;
  double kappa = 0.0;  // lower bound on the supported entries

  int size() const { return static_cast<int>(entries.rows()); }
};

/// Uniform out-degree weights: a_ij = 1/outdeg(j) for every edge (j,i).
/// Locally computable and column stochastic by construction.
inline WeightMatrix base_weights(const Digraph& g) {
  const int n = g.node_count();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  double kappa = 1.0;
  for (int j = 0; j < n; ++j) {
    const double w = 1.0 / g.out_degree(j);
    kappa = std::min(kappa, w);
    for (const auto& [from, to] : g.edges())
      if (from == j) a(to, j) = w;
  }
  return WeightMatrix{std::move(a), g, kappa};
}

/// Subgraph of g induced by one round's block selections: edge (j,i) is kept
/// iff agent j sent block `block` that round; self-loops always stay.
inline Digraph induced_block_subgraph(const Digraph& g,
                                      const std::vector<int>& selections,
                                      int block) {
  Digraph sub(g.node_count());
  for (const auto& [j, i] : g.edges())
    if (selections[static_cast<std::size_t>(j)] == block) sub.add_edge(j, i);
  return sub;
}

/// Union of the block-induced subgraphs over a window of rounds; strong
/// connectivity of this union is the T-strong-connectivity property.
inline bool verify_T_strong_connectivity(
    const Digraph& g, const std::vector<std::vector<int>>& selections_window,
    int block) {
  if (selections_window.empty())
    throw DimensionError("verify_T_strong_connectivity: empty window");
  Digraph acc(g.node_count());
  for (const auto& round : selections_window) {
    const Digraph sub = induced_block_subgraph(g, round, block);
    for (const auto& [j, i] : sub.edges()) acc.add_edge(j, i);
  }
  return is_strongly_connected(acc);
}

/// Second-smallest eigenvalue of the undirected Laplacian, reported by the
/// harness for sampled topologies.
inline double algebraic_connectivity(const Digraph& g) {
  const int n = g.node_count();
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [j, i] : g.edges()) {
    if (j == i) continue;
    lap(i, j) = -1.0;
    lap(j, i) = -1.0;
  }
  for (int i = 0; i < n; ++i) lap(i, i) = -lap.row(i).sum() + lap(i, i);
  if (n == 1) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap);
  return es.eigenvalues()(1);
}

/// Edge-list text format: first line "N", then "j i" per edge, 1-indexed.
inline void write_edge_list(const Digraph& g, std::ostream& out) {
  out << g.node_count() << "\n";
  for (const auto& [j, i] : g.edges()) out << (j + 1) << " " << (i + 1) << "\n";
}

inline Digraph read_edge_list(std::istream& in) {
  int n = 0;
  if (!(in >> n)) throw IoError("read_edge_list: missing node count");
  Digraph g(n);
  int j = 0, i = 0;
  while (in >> j >> i) g.add_edge(j - 1, i - 1);
  return g;
}

inline void save_edge_list(const Digraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_edge_list: cannot open " + path);
  write_edge_list(g, out);
}

inline Digraph load_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_edge_list: cannot open " + path);
  return read_edge_list(in);
}

}  // namespace blockopt
