#pragma once

#include "otprl/common.hpp"

namespace otprl {

/// Family of ground costs d(s_hat_prime, s_prime) between successor states.
enum class CostKind {
    PercentSq, ///< mean squared percentage deviation relative to a base state
    PNormPow,  ///< sum_i |x_i - y_i|^p  (p-Wasserstein^p ground cost)
    Indicator  ///< 1 if x != y, else 0 (total-variation ground cost)
};

/// Ground transport cost. PercentSq carries the base state s because the
/// percentage deviation of a successor is measured against the transition
/// origin; the other kinds are stateless.
class TransportCost {
public:
    static TransportCost percent_sq(StateVec base) {
        TransportCost c;
        c.kind_ = CostKind::PercentSq;
        c.base_ = std::move(base);
        return c;
    }
    static TransportCost pnorm_pow(double p) {
        require(p >= 1.0, "TransportCost: p-norm power requires p >= 1");
        TransportCost c;
        c.kind_ = CostKind::PNormPow;
        c.p_ = p;
        return c;
    }
    static TransportCost indicator() {
        TransportCost c;
        c.kind_ = CostKind::Indicator;
        return c;
    }

    CostKind kind() const { return kind_; }
    double p() const { return p_; }
    const StateVec& base() const { return base_; }

private:
    TransportCost() = default;
    CostKind kind_ = CostKind::Indicator;
    double p_ = 2.0;
    StateVec base_;
};

/// Evaluates d(s_hat_prime, s_prime). May return kInf for PercentSq when a
/// coordinate is frozen under the nominal model (s_hat_prime_i == base_i) but
/// the candidate moves it; such successors are unreachable at any budget.
double eval_cost(const TransportCost& cost, const StateVec& s_hat_prime,
                 const StateVec& s_prime);

/// Finitely supported distribution over state vectors.
struct DiscreteDist {
    std::vector<StateVec> support;
    std::vector<double> probs;

    /// Throws unless probs are nonnegative, sum to 1 within 1e-12, sizes
    /// match, and support points are pairwise distinct.
    void validate() const;
};

/// Primal/dual solution of a transportation LP.
struct OtcSolution {
    double value = 0.0;
    Matrix flow;           ///< m x n optimal coupling
    std::vector<double> u; ///< row potentials, u[i] + v[j] <= cost(i,j)
    std::vector<double> v; ///< column potentials
};

/// Solves min sum_ij C(i,j) * flow(i,j) subject to row sums = a, column sums
/// = b (both must sum to the same total). Entries of C may be kInf; throws
/// "infeasible transport" when every coupling must ship mass through an
/// infinite-cost cell.
OtcSolution otc_matrix(const std::vector<double>& a, const std::vector<double>& b,
                       const Matrix& cost);

/// Full solution variant of otc_discrete.
OtcSolution otc_solve(const DiscreteDist& p_hat, const DiscreteDist& p,
                      const TransportCost& cost);

/// Optimal transport cost OTC_d(p_hat, p) between finitely supported
/// distributions: the minimum expected ground cost over all couplings.
double otc_discrete(const DiscreteDist& p_hat, const DiscreteDist& p,
                    const TransportCost& cost);

} // namespace otprl
