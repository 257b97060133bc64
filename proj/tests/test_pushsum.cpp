#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "blockopt/pushsum.hpp"
#include "blockopt/rng.hpp"
#include "blockopt/schedule.hpp"

using namespace blockopt;
using Catch::Approx;

namespace {

Digraph two_node_complete() {
  Digraph g(2);
  g.add_edge(0, 1);
  g.add_edge(1, 0);
  return g;
}

std::vector<WeightMatrix> round_weights(const WeightMatrix& base,
                                        const std::vector<int>& sel, int B) {
  std::vector<WeightMatrix> w;
  for (int l = 0; l < B; ++l) w.push_back(block_weights(base, sel, l));
  return w;
}

}  // namespace

TEST_CASE("block weights: senders get the base column, others the basis vector") {
  const WeightMatrix base = base_weights(two_node_complete());
  const WeightMatrix w = block_weights(base, {0, 1}, 0);
  // Agent 0 sent block 0: base column.
  REQUIRE(w.entries(0, 0) == Approx(0.5));
  REQUIRE(w.entries(1, 0) == Approx(0.5));
  // Agent 1 did not: canonical basis column.
  REQUIRE(w.entries(0, 1) == 0.0);
  REQUIRE(w.entries(1, 1) == 1.0);
  for (int j = 0; j < 2; ++j)
    REQUIRE(std::abs(w.entries.col(j).sum() - 1.0) <= 1e-12);
}

TEST_CASE("hand-evaluated push-sum step on two agents") {
  const WeightMatrix base = base_weights(two_node_complete());
  PushSumState st = PushSumState::uniform(2, {1});
  st.z[0][0](0) = 0.0;
  st.z[1][0](0) = 2.0;
  const PushSumState next =
      pushsum_step(st, round_weights(base, {0, 0}, 1));
  REQUIRE(next.phi(0, 0) == Approx(1.0));
  REQUIRE(next.phi(1, 0) == Approx(1.0));
  REQUIRE(next.z[0][0](0) == Approx(1.0));
  REQUIRE(next.z[1][0](0) == Approx(1.0));
}

TEST_CASE("identity weights leave a block untouched") {
  const WeightMatrix base = base_weights(two_node_complete());
  PushSumState st = PushSumState::uniform(2, {1, 1});
  st.z[0][1](0) = 3.0;
  st.phi(1, 1) = 1.0;
  // Nobody selects block 1 this round.
  const PushSumState next =
      pushsum_step(st, round_weights(base, {0, 0}, 2));
  REQUIRE(next.z[0][1](0) == 3.0);
  REQUIRE(next.phi(0, 1) == 1.0);
}

TEST_CASE("mass and weighted sums are conserved every step") {
  auto gen = rng::stream(17, "graph");
  const Digraph g = gen_erdos_renyi(6, 0.5, gen);
  const WeightMatrix base = base_weights(g);
  const BlockSchedule sched(3, ScheduleRule::round_robin);
  PushSumState st = PushSumState::uniform(6, {2, 2, 2});
  auto init = rng::stream(17, "init");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < 6; ++i)
    for (int l = 0; l < 3; ++l)
      for (int k = 0; k < 2; ++k) st.z[i][l](k) = normal(init);

  std::vector<Eigen::VectorXd> weighted(3);
  for (int l = 0; l < 3; ++l) {
    weighted[l] = Eigen::VectorXd::Zero(2);
    for (int i = 0; i < 6; ++i) weighted[l] += st.phi(i, l) * st.z[i][l];
  }
  for (long t = 0; t < 50; ++t) {
    st = pushsum_step(
        st, round_weights(base, sched.round_selections(6, t), 3));
    for (int l = 0; l < 3; ++l) {
      REQUIRE(std::abs(st.phi.col(l).sum() - 6.0) <= 1e-12 * 6.0);
      Eigen::VectorXd now = Eigen::VectorXd::Zero(2);
      for (int i = 0; i < 6; ++i) now += st.phi(i, l) * st.z[i][l];
      REQUIRE((now - weighted[l]).norm() <=
              1e-10 * (1.0 + weighted[l].norm()));
      REQUIRE(st.phi.col(l).minCoeff() > 0.0);
    }
  }
}

TEST_CASE("zero perturbations reproduce the plain step bitwise") {
  const WeightMatrix base = base_weights(two_node_complete());
  PushSumState st = PushSumState::uniform(2, {2});
  st.z[0][0] << 1.0, -2.0;
  st.z[1][0] << 0.5, 4.0;
  const auto weights = round_weights(base, {0, 0}, 1);
  std::vector<std::vector<Eigen::VectorXd>> eps(
      2, {Eigen::VectorXd::Zero(2)});
  const PushSumState a = pushsum_step(st, weights);
  const PushSumState b = perturbed_pushsum_step(st, weights, &eps);
  for (int i = 0; i < 2; ++i)
    REQUIRE((a.z[i][0] - b.z[i][0]).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE((a.phi - b.phi).norm() == 0.0);
}

TEST_CASE("constant perturbation shifts the weighted average by exactly c") {
  const WeightMatrix base = base_weights(two_node_complete());
  PushSumState st = PushSumState::uniform(2, {1});
  st.z[0][0](0) = -1.0;
  st.z[1][0](0) = 5.0;
  const double c = 0.7;
  std::vector<std::vector<Eigen::VectorXd>> eps(
      2, {Eigen::VectorXd::Constant(1, c)});
  const auto weights = round_weights(base, {0, 0}, 1);
  auto weighted_avg = [](const PushSumState& s) {
    double acc = 0.0;
    for (int i = 0; i < 2; ++i) acc += s.phi(i, 0) * s.z[i][0](0);
    return acc / 2.0;
  };
  const double before = weighted_avg(st);
  const PushSumState next = perturbed_pushsum_step(st, weights, &eps);
  REQUIRE(weighted_avg(next) == Approx(before + c));
}

TEST_CASE("vanishing perturbations still reach consensus") {
  Digraph g(3);
  g.add_edge(0, 1);
  g.add_edge(1, 2);
  g.add_edge(2, 0);
  const WeightMatrix base = base_weights(g);
  PushSumState st = PushSumState::uniform(3, {1});
  st.z[0][0](0) = 1.0;
  st.z[1][0](0) = -4.0;
  st.z[2][0](0) = 2.5;
  const auto weights = round_weights(base, {0, 0, 0}, 1);
  double scale = 1.0;
  for (long t = 0; t < 400; ++t) {
    std::vector<std::vector<Eigen::VectorXd>> eps(
        3, {Eigen::VectorXd::Constant(1, scale)});
    st = perturbed_pushsum_step(st, weights, &eps);
    scale *= 0.5;
  }
  REQUIRE(consensus_error(st).maxCoeff() <= 1e-8);
}

TEST_CASE("unperturbed block push-sum converges to the initial average") {
  auto gen = rng::stream(23, "graph");
  const Digraph g = gen_erdos_renyi(5, 0.5, gen);
  const WeightMatrix base = base_weights(g);
  const BlockSchedule sched(3, ScheduleRule::round_robin);
  PushSumState st = PushSumState::uniform(5, {2, 2, 2});
  auto init = rng::stream(23, "init");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> mean(3, Eigen::VectorXd::Zero(2));
  for (int i = 0; i < 5; ++i)
    for (int l = 0; l < 3; ++l) {
      for (int k = 0; k < 2; ++k) st.z[i][l](k) = normal(init);
      mean[l] += st.z[i][l] / 5.0;
    }
  for (long t = 0; t < 500; ++t)
    st = pushsum_step(
        st, round_weights(base, sched.round_selections(5, t), 3));
  REQUIRE(consensus_error(st).maxCoeff() <= 1e-8);
  for (int i = 0; i < 5; ++i)
    for (int l = 0; l < 3; ++l)
      REQUIRE((st.z[i][l] - mean[l]).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("tracking constant signals reduces to plain consensus on the mean") {
  auto gen = rng::stream(29, "graph");
  const Digraph g = gen_erdos_renyi(4, 0.6, gen);
  const WeightMatrix base = base_weights(g);
  const BlockSchedule sched(2, ScheduleRule::round_robin);
  auto init = rng::stream(29, "init");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<Eigen::VectorXd>> u(4);
  std::vector<Eigen::VectorXd> mean(2, Eigen::VectorXd::Zero(3));
  PushSumState st = PushSumState::uniform(4, {3, 3});
  std::vector<SignalTracker> trackers(4);
  for (int i = 0; i < 4; ++i) {
    for (int l = 0; l < 2; ++l) {
      Eigen::VectorXd ui(3);
      for (int k = 0; k < 3; ++k) ui(k) = normal(init);
      u[i].push_back(ui);
      mean[l] += ui / 4.0;
      st.z[i][l] = ui;  // start at the local signal
    }
    trackers[i].u_hat = u[i];
  }
  for (long t = 0; t < 600; ++t) {
    const std::vector<int> sel = sched.round_selections(4, t);
    std::vector<Eigen::VectorXd> fresh(4);
    for (int i = 0; i < 4; ++i) fresh[i] = u[i][sel[i]];
    st = track_average_step(st, trackers, sel,
                            round_weights(base, sel, 2), fresh);
  }
  for (int i = 0; i < 4; ++i)
    for (int l = 0; l < 2; ++l)
      REQUIRE((st.z[i][l] - mean[l]).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("single agent tracks its own signal exactly") {
  const WeightMatrix base = base_weights(Digraph(1));
  const BlockSchedule sched(1, ScheduleRule::round_robin);
  PushSumState st = PushSumState::uniform(1, {2});
  std::vector<SignalTracker> trackers(1);
  Eigen::VectorXd u(2);
  u << 1.0, -1.0;
  trackers[0].u_hat = {u};
  st.z[0][0] = u;
  for (long t = 0; t < 5; ++t) {
    u(0) += 0.25;
    st = track_average_step(st, trackers, {0},
                            round_weights(base, {0}, 1), {u});
    REQUIRE((st.z[0][0] - u).norm() <= 1e-14);
  }
}

TEST_CASE("consensus error examples") {
  PushSumState st = PushSumState::uniform(2, {1});
  st.z[0][0](0) = 0.0;
  st.z[1][0](0) = 2.0;
  const Eigen::VectorXd err = consensus_error(st);
  REQUIRE(err(0) == Approx(1.0));
  REQUIRE(err(1) == Approx(1.0));
  st.z[1][0](0) = 0.0;
  REQUIRE(consensus_error(st).maxCoeff() == 0.0);
}
