#pragma once

#include <Eigen/Dense>

namespace blockopt {

/// Which strongly convex model the per-block subproblem minimizes.
///   plain_linearization: q^T (x - xc) + tau ||x - xc||^2   (modulus 2 tau)
///   dc_linearization:    linearize the concave regularizer part as well and
///                        use the tau/2 quadratic convention (modulus tau),
///                        matching the sparse-regression closed form.
enum class SurrogateKind { plain_linearization, dc_linearization };

struct SurrogateSpec {
  double tau = 10.0;
  SurrogateKind kind = SurrogateKind::dc_linearization;
};

/// Solution of one block subproblem, with the pieces the descent inequality
/// needs: the gradient of the smooth surrogate part at the center, its true
/// strong-convexity modulus, and the convex regularizer values at center and
/// minimizer.
struct BestResponse {
  Eigen::VectorXd x_tilde;
  Eigen::VectorXd grad_at_center;
  double modulus = 0.0;
  double r_old = 0.0;
  double r_new = 0.0;
};

}  // namespace blockopt
