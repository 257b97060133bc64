#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "blockopt/core.hpp"
#include "blockopt/rng.hpp"

using namespace blockopt;
using Catch::Approx;

namespace {

struct Fixture {
  Digraph graph{1};
  WeightMatrix base{Eigen::MatrixXd::Ones(1, 1), Digraph(1), 1.0};
  SparseRegressionProblem problem;
  std::vector<Eigen::VectorXd> x0;

  explicit Fixture(std::uint64_t seed, int N = 5, int m = 12, int n_i = 8,
                   int B = 3, double lambda = 0.15)
      : problem(make(seed, N, m, n_i, B, lambda)) {
    auto ggen = rng::stream(seed, "graph");
    graph = gen_erdos_renyi(N, 0.6, ggen);
    base = base_weights(graph);
    auto igen = rng::stream(seed, "init");
    std::normal_distribution<double> normal(0.0, 1.0);
    x0.resize(N);
    for (int i = 0; i < N; ++i) {
      x0[i].resize(m);
      for (int k = 0; k < m; ++k) x0[i](k) = normal(igen);
      x0[i] = problem.project_feasible(x0[i]);
    }
  }

  static SparseRegressionProblem make(std::uint64_t seed, int N, int m,
                                      int n_i, int B, double lambda) {
    auto data = rng::stream(seed, "data");
    auto noise = rng::stream(seed, "noise");
    return make_sparse_regression(data, noise, N, m, n_i, 0.5, 0.5, lambda,
                                  7.0, -10.0, 10.0, B);
  }
};

}  // namespace

TEST_CASE("step size recursion and its guards") {
  REQUIRE(step_size_next(0.3, 1e-3) == Approx(0.29991).epsilon(1e-14));
  REQUIRE(step_size_next(0.5, 1e-15) == Approx(0.5));
  double gamma = 0.3;
  for (int t = 0; t < 10000; ++t) {
    const double next = step_size_next(gamma, 1e-3);
    REQUIRE(next > 0.0);
    REQUIRE(next <= gamma);
    gamma = next;
  }
  REQUIRE_THROWS_AS(step_size_next(0.0, 1e-3), InvalidSchedule);
  REQUIRE_THROWS_AS(step_size_next(1.5, 1e-3), InvalidSchedule);
  REQUIRE_THROWS_AS(step_size_next(0.5, 3.0), InvalidSchedule);
}

TEST_CASE("best response degenerates to the center when the tracker is zero") {
  auto data = rng::stream(71, "data");
  auto noise = rng::stream(71, "noise");
  const SparseRegressionProblem p = make_sparse_regression(
      data, noise, 3, 8, 6, 0.5, 0.1, 0.0, 7.0, -1e9, 1e9, 2);
  Eigen::VectorXd x = Eigen::VectorXd::Constant(8, 0.4);
  const SurrogateSpec spec{5.0, SurrogateKind::plain_linearization};
  const BestResponse br =
      best_response_block(0, 1, x, Eigen::VectorXd::Zero(4), spec, p);
  REQUIRE((br.x_tilde - p.partition().gather(x, 1)).norm() <= 1e-14);
}

TEST_CASE("plain linearization step is the quadratic stationary point") {
  auto data = rng::stream(73, "data");
  auto noise = rng::stream(73, "noise");
  const SparseRegressionProblem p = make_sparse_regression(
      data, noise, 4, 8, 6, 0.5, 0.1, 0.0, 7.0, -1e9, 1e9, 2);
  Eigen::VectorXd x = Eigen::VectorXd::Constant(8, -0.2);
  Eigen::VectorXd y(4);
  y << 1.0, 0.0, -2.0, 0.5;
  const double tau = 3.0;
  const SurrogateSpec spec{tau, SurrogateKind::plain_linearization};
  const BestResponse br = best_response_block(1, 0, x, y, spec, p);
  const Eigen::VectorXd expect =
      p.partition().gather(x, 0) -
      (static_cast<double>(p.agent_count()) / (2.0 * tau)) * y;
  REQUIRE((br.x_tilde - expect).lpNorm<Eigen::Infinity>() <= 1e-12);
  // Closed-form equality case of the descent inequality.
  const Eigen::VectorXd dx = br.x_tilde - p.partition().gather(x, 0);
  REQUIRE(descent_check(y, dx, tau, br.r_old, br.r_new, p.agent_count()));
  REQUIRE(br.grad_at_center.dot(dx) == Approx(-2.0 * tau * dx.squaredNorm()));
}

TEST_CASE("descent check accepts the zero displacement") {
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  REQUIRE(descent_check(zero, zero, 10.0, 0.7, 0.7));
}

TEST_CASE("weighted average of the mass coordinates") {
  const BlockPartition part = BlockPartition::contiguous(1, 1);
  std::vector<AgentState> st(2);
  for (int i = 0; i < 2; ++i) {
    st[i].phi = Eigen::VectorXd::Ones(1);
    st[i].s = {Eigen::VectorXd::Zero(1)};
    st[i].sigma = {Eigen::VectorXd::Zero(1)};
  }
  st[0].phi(0) = 0.5;
  st[1].phi(0) = 1.5;
  // Identical x = 2 with conserved mass: the average is the consensus value.
  st[0].s[0](0) = 0.5 * 2.0;
  st[1].s[0](0) = 1.5 * 2.0;
  REQUIRE(weighted_average_sbar(st, part)(0) == Approx(2.0));
  // x = (0, 2): the phi-weighted mean.
  st[0].s[0](0) = 0.0;
  st[1].s[0](0) = 1.5 * 2.0;
  REQUIRE(weighted_average_sbar(st, part)(0) == Approx(1.5));
}

TEST_CASE("objective diagnostic at a common feasible point") {
  Fixture fx(79);
  const int N = fx.problem.agent_count();
  const Eigen::VectorXd common = fx.problem.project_feasible(fx.x0[0]);
  std::vector<Eigen::VectorXd> same(N, common);
  const std::vector<AgentState> st = init_states(fx.problem, same);
  const double v = lyapunov_V(st, common, fx.problem);
  double expect = 0.0;
  for (int i = 0; i < N; ++i) expect += fx.problem.f(i, common);
  for (int l = 0; l < fx.problem.partition().block_count(); ++l)
    expect += N * fx.problem.r_block_value(
                      l, fx.problem.partition().gather(common, l));
  REQUIRE(v == Approx(expect).epsilon(1e-12));
}

TEST_CASE("initialization fixes phi, the tracker, and the metrics identities") {
  Fixture fx(83);
  const std::vector<AgentState> st = init_states(fx.problem, fx.x0);
  for (const AgentState& s : st) REQUIRE((s.phi.array() == 1.0).all());
  const MetricsRecord rec = compute_metrics(st, fx.problem, 0, 3, 0.3, 0.0);
  REQUIRE(rec.tracking_residual <= 1e-14);
  REQUIRE(rec.message_exchanges == 0.0);

  // Consensus state (identical x and identical y): D and R vanish.
  std::vector<Eigen::VectorXd> same(fx.problem.agent_count(), fx.x0[0]);
  std::vector<AgentState> cs = init_states(fx.problem, same);
  for (AgentState& s : cs) s.sigma = cs[0].sigma;
  const MetricsRecord crec = compute_metrics(cs, fx.problem, 0, 3, 0.3, 0.0);
  // Zero up to the rounding of the floating-point mean.
  REQUIRE(crec.D <= 1e-13);
  REQUIRE(crec.R <= 1e-13);
}

TEST_CASE("a zero step from consensus leaves the estimates unchanged") {
  Fixture fx(89);
  const int N = fx.problem.agent_count();
  std::vector<Eigen::VectorXd> same(N, fx.x0[0]);
  std::vector<AgentState> st = init_states(fx.problem, same);
  const BlockSchedule sched(3, ScheduleRule::round_robin);
  const SurrogateSpec spec{10.0, SurrogateKind::dc_linearization};
  for (auto round : {&sonata_round, &cta_round}) {
    const std::vector<AgentState> next =
        round(st, fx.base, sched, 0.0, fx.problem, spec, 0, nullptr);
    for (int i = 0; i < N; ++i)
      REQUIRE((next[i].x_full(fx.problem.partition()) - fx.x0[0])
                  .lpNorm<Eigen::Infinity>() <= 1e-13);
  }
}

TEST_CASE("gradient-sum conservation holds exactly along every variant") {
  Fixture fx(97);
  const BlockPartition& part = fx.problem.partition();
  const int N = fx.problem.agent_count();
  const BlockSchedule sched(3, ScheduleRule::round_robin);
  const SurrogateSpec spec{10.0, SurrogateKind::dc_linearization};
  for (Variant v : {Variant::atc, Variant::cta, Variant::ghat}) {
    std::vector<AgentState> st = init_states(fx.problem, fx.x0);
    double gamma = 0.3;
    for (long t = 0; t < 150; ++t) {
      st = run_round(v, st, fx.base, sched, gamma, fx.problem, spec, t);
      gamma = step_size_next(gamma, 1e-3);
      // Mass conservation and positivity per block.
      for (int l = 0; l < 3; ++l) {
        double mass = 0.0, mn = 1e300;
        for (const AgentState& s : st) {
          mass += s.phi(l);
          mn = std::min(mn, s.phi(l));
        }
        REQUIRE(std::abs(mass - N) <= 1e-10);
        REQUIRE(mn > 1e-6);
      }
      // sigma_bar equals the average injected gradient signal.
      Eigen::VectorXd expected = Eigen::VectorXd::Zero(part.total_dim());
      for (const AgentState& s : st) {
        if (v == Variant::ghat) {
          for (int l = 0; l < 3; ++l) {
            Eigen::VectorXd tmp = Eigen::VectorXd::Zero(part.total_dim());
            part.scatter(tmp, l, s.g_hat[l]);
            expected += tmp;
          }
        } else {
          expected += s.grad_cache;
        }
      }
      expected /= N;
      const Eigen::VectorXd sigbar = weighted_average_sigma_bar(st, part);
      REQUIRE((sigbar - expected).lpNorm<Eigen::Infinity>() <=
              1e-8 * (1.0 + expected.lpNorm<Eigen::Infinity>()));
    }
  }
}

TEST_CASE("iterates stay feasible and the average recursion closes (ATC)") {
  Fixture fx(101);
  const BlockPartition& part = fx.problem.partition();
  const int N = fx.problem.agent_count();
  const BlockSchedule sched(3, ScheduleRule::round_robin);
  const SurrogateSpec spec{10.0, SurrogateKind::dc_linearization};
  std::vector<AgentState> st = init_states(fx.problem, fx.x0);
  double gamma = 0.3;
  for (long t = 0; t < 100; ++t) {
    RoundDiagnostics diag;
    const std::vector<AgentState> next =
        sonata_round(st, fx.base, sched, gamma, fx.problem, spec, t, &diag);
    for (const AgentState& s : next) {
      const Eigen::VectorXd x = s.x_full(part);
      REQUIRE(x.maxCoeff() <= fx.problem.box_upper() + 1e-12);
      REQUIRE(x.minCoeff() >= fx.problem.box_lower() - 1e-12);
    }
    const Eigen::VectorXd s0 = weighted_average_sbar(st, part);
    const Eigen::VectorXd s1 = weighted_average_sbar(next, part);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(part.total_dim());
    for (int i = 0; i < N; ++i) {
      Eigen::VectorXd tmp = Eigen::VectorXd::Zero(part.total_dim());
      part.scatter(tmp, diag.selections[i],
                   st[i].phi(diag.selections[i]) * diag.delta_x[i]);
      rhs += tmp;
    }
    rhs *= gamma / N;
    REQUIRE((s1 - s0 - rhs).norm() <= 1e-10 * (1.0 + s0.norm() + s1.norm()));
    st = next;
    gamma = step_size_next(gamma, 1e-3);
  }
}

TEST_CASE("single-block runs of the stale-gradient variant match ATC bitwise") {
  Fixture fx(103, /*N=*/5, /*m=*/12, /*n_i=*/8, /*B=*/1);
  const BlockSchedule sched(1, ScheduleRule::round_robin);
  const SurrogateSpec spec{10.0, SurrogateKind::dc_linearization};
  std::vector<AgentState> a = init_states(fx.problem, fx.x0);
  std::vector<AgentState> b = a;
  double gamma = 0.3;
  for (long t = 0; t < 100; ++t) {
    a = sonata_round(a, fx.base, sched, gamma, fx.problem, spec, t);
    b = blockwise_gradient_round(b, fx.base, sched, gamma, fx.problem, spec, t);
    gamma = step_size_next(gamma, 1e-3);
    for (int i = 0; i < fx.problem.agent_count(); ++i) {
      REQUIRE((a[i].phi - b[i].phi).norm() == 0.0);
      REQUIRE((a[i].s[0] - b[i].s[0]).lpNorm<Eigen::Infinity>() == 0.0);
      REQUIRE((a[i].sigma[0] - b[i].sigma[0]).lpNorm<Eigen::Infinity>() == 0.0);
    }
  }
}

TEST_CASE("stale gradients change only on the selected block") {
  Fixture fx(107);
  const BlockSchedule sched(3, ScheduleRule::round_robin);
  const SurrogateSpec spec{10.0, SurrogateKind::dc_linearization};
  std::vector<AgentState> st = init_states(fx.problem, fx.x0);
  for (long t = 0; t < 20; ++t) {
    const std::vector<int> sel = sched.round_selections(5, t);
    const std::vector<AgentState> next = blockwise_gradient_round(
        st, fx.base, sched, 0.3, fx.problem, spec, t);
    for (int i = 0; i < 5; ++i)
      for (int l = 0; l < 3; ++l)
        if (l != sel[i])
          REQUIRE((next[i].g_hat[l] - st[i].g_hat[l]).norm() == 0.0);
    st = next;
  }
}
