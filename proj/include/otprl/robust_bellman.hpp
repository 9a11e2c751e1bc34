#pragma once

#include "otprl/common.hpp"
#include "otprl/transport.hpp"

#include <string>
#include <vector>

namespace otprl {

/// Direction of the inner optimization over transition models: reward values
/// use Inf (adversary minimizes return), cost values use Sup (adversary
/// maximizes constraint cost).
enum class Direction { Inf, Sup };

enum class ValueKind { Reward, Cost };

/// Which path computes the inner worst case in the Bellman operators.
enum class SolveMethod { Primal, Dual };

/// Stationary stochastic policy over a finite state/action space.
struct TabularPolicy {
    Matrix probs; // n_states x n_actions
    void validate() const;
};

/// Action-value table for either the reward or the cost signal.
struct QTable {
    Matrix values; // n_states x n_actions
    ValueKind kind = ValueKind::Reward;
};

/// Finite robust constrained MDP. The uncertainty set around each nominal
/// row nominal[s*n_actions + a] is an optimal-transport ball of radius
/// radius(s,a) under the ground cost d(s,a) given on state-index pairs.
struct DiscreteRCMDP {
    int n_states = 0;
    int n_actions = 0;
    std::vector<DiscreteDist> nominal; ///< size n_states*n_actions; 1-D index supports
    Matrix reward;                     ///< n_states x n_actions
    Matrix cost;                       ///< n_states x n_actions, entries >= 0
    double gamma = 0.99;
    DiscreteDist rho0;                 ///< initial distribution over state indices
    Matrix radius;                     ///< n_states x n_actions, entries >= 0
    std::vector<Matrix> cost_matrix;   ///< size 1 (shared) or n_states*n_actions

    const DiscreteDist& p_hat(int s, int a) const { return nominal[s * n_actions + a]; }
    const Matrix& d(int s, int a) const {
        return cost_matrix.size() == 1 ? cost_matrix[0]
                                       : cost_matrix[s * n_actions + a];
    }
    void validate() const;

    /// Parses the documented JSON schema (see docs/rcmdp_schema.md).
    static DiscreteRCMDP from_json_text(const std::string& text);
};

/// Builds a distribution over state indices 0..probs.size()-1 with the given
/// probabilities; zero-probability indices are dropped from the support.
DiscreteDist index_dist(const std::vector<double>& probs);

/// Dense probabilities over n states from an index-supported distribution.
std::vector<double> dense_probs(const DiscreteDist& dist, int n_states);

struct WorstCaseResult {
    double value = 0.0;
    DiscreteDist worst_dist; ///< second marginal of the optimal coupling
    double budget_slack = 0.0; ///< eps minus transport spent at the optimum
};

/// Exact inner problem of the robust Bellman operators: optimizes E_p[V]
/// over the OT ball {p : OTC_d(p_hat, p) <= eps}, as an LP over couplings
/// with first marginal p_hat and transport budget eps.
WorstCaseResult worst_case_expectation_primal(const DiscreteDist& p_hat,
                                              const std::vector<double>& values,
                                              const Matrix& cost_row, double eps,
                                              Direction direction);

/// Lagrangian objective of the dual form at a fixed multiplier lambda;
/// convex in lambda for Sup, concave for Inf. Exposed for property tests.
double dual_objective(const DiscreteDist& p_hat, const std::vector<double>& values,
                      const Matrix& cost_row, double eps, Direction direction,
                      double lambda);

struct DualResult {
    double value = 0.0;
    double lambda = 0.0; ///< optimal multiplier found by the line search
};

/// Dual form of the inner problem (strong duality): a 1-D search over the
/// transport multiplier with exact enumeration of successor states inside.
DualResult worst_case_expectation_dual_full(const DiscreteDist& p_hat,
                                            const std::vector<double>& values,
                                            const Matrix& cost_row, double eps,
                                            Direction direction);

double worst_case_expectation_dual(const DiscreteDist& p_hat,
                                   const std::vector<double>& values,
                                   const Matrix& cost_row, double eps,
                                   Direction direction);

/// One application of the robust Bellman operator for the policy: reward
/// tables take the worst case downward (Inf), cost tables upward (Sup).
QTable robust_bellman_apply(const DiscreteRCMDP& mdp, const TabularPolicy& policy,
                            const QTable& q, SolveMethod method = SolveMethod::Primal);

/// Iterates the robust operator from Q = 0 to its fixed point.
QTable robust_policy_evaluation(const DiscreteRCMDP& mdp, const TabularPolicy& policy,
                                ValueKind kind, double tol = 1e-9,
                                SolveMethod method = SolveMethod::Primal);

/// V(s) = sum_a policy(a|s) q(s,a).
std::vector<double> state_values(const QTable& q, const TabularPolicy& policy);

struct BruteforceResult {
    TabularPolicy best_policy;
    double j_r_worst = 0.0; ///< worst-case return of the chosen policy
    double j_c_worst = 0.0; ///< worst-case constraint cost of the chosen policy
    bool feasible = false;  ///< true when some policy satisfies the budget
};

/// Enumerates every deterministic policy (requires n_states <= 4,
/// n_actions <= 2) and returns the budget-feasible one with the largest
/// worst-case return. When none is feasible, returns the policy with the
/// smallest worst-case cost and feasible = false.
BruteforceResult solve_rcmdp_bruteforce(const DiscreteRCMDP& mdp, double budget);

} // namespace otprl
