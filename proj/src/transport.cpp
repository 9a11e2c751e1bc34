#include "otprl/transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace otprl {

double eval_cost(const TransportCost& cost, const StateVec& s_hat_prime,
                 const StateVec& s_prime) {
    require(s_hat_prime.size() == s_prime.size(), "eval_cost: dimension mismatch");
    require(all_finite(s_hat_prime) && all_finite(s_prime), "eval_cost: non-finite input");
    switch (cost.kind()) {
    case CostKind::Indicator:
        return s_hat_prime == s_prime ? 0.0 : 1.0;
    case CostKind::PNormPow: {
        double s = 0.0;
        for (std::size_t i = 0; i < s_prime.size(); ++i)
            s += std::pow(std::fabs(s_hat_prime[i] - s_prime[i]), cost.p());
        return s;
    }
    case CostKind::PercentSq: {
        const StateVec& base = cost.base();
        require(base.size() == s_prime.size(), "eval_cost: base state dimension mismatch");
        const std::size_t n = s_prime.size();
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double denom = s_hat_prime[i] - base[i];
            const double numer = s_prime[i] - base[i];
            if (denom == 0.0) {
                // Frozen coordinate: the nominal successor did not move it.
                // Keeping it fixed costs nothing (the 0/0 = 1 convention);
                // moving it is not expressible as a percentage deviation.
                if (numer == 0.0) continue;
                return kInf;
            }
            const double dev = numer / denom - 1.0;
            s += dev * dev;
        }
        return s / static_cast<double>(n);
    }
    }
    throw std::logic_error("eval_cost: unknown cost kind");
}

void DiscreteDist::validate() const {
    require(support.size() == probs.size(), "DiscreteDist: support/probs size mismatch");
    require(!support.empty(), "DiscreteDist: empty support");
    double total = 0.0;
    for (double p : probs) {
        require(p >= 0.0 && std::isfinite(p), "DiscreteDist: probabilities must be nonnegative");
        total += p;
    }
    require(std::fabs(total - 1.0) <= 1e-12, "DiscreteDist: probabilities must sum to 1");
    const std::size_t dim = support.front().size();
    for (const StateVec& x : support) {
        require(x.size() == dim, "DiscreteDist: inconsistent support dimensions");
        require(all_finite(x), "DiscreteDist: non-finite support point");
    }
    for (std::size_t i = 0; i < support.size(); ++i)
        for (std::size_t j = i + 1; j < support.size(); ++j)
            require(support[i] != support[j], "DiscreteDist: support points must be distinct");
}

namespace {

/// One basic cell of the transportation tableau.
struct BasicCell {
    std::size_t row, col;
    double flow;
};

/// Transportation simplex on an m x n tableau. Costs may contain kInf;
/// infinite entries are replaced by a large finite penalty and any residual
/// flow on them at optimality signals infeasibility. Pivoting uses Bland's
/// rule (first improving cell in row-major order, lexicographically smallest
/// leaving cell), so the returned vertex is deterministic.
class TransportSimplex {
  public:
    TransportSimplex(const std::vector<double>& a, const std::vector<double>& b,
                     const Matrix& cost)
        : m_(a.size()), n_(b.size()), cost_(cost) {
        require(cost.rows() == m_ && cost.cols() == n_, "otc_matrix: cost shape mismatch");
        double max_finite = 0.0;
        bool any_inf = false;
        for (std::size_t i = 0; i < m_; ++i)
            for (std::size_t j = 0; j < n_; ++j) {
                const double c = cost(i, j);
                require(!std::isnan(c) && c >= 0.0, "otc_matrix: costs must be >= 0");
                if (std::isfinite(c))
                    max_finite = std::max(max_finite, c);
                else
                    any_inf = true;
            }
        // Quick infeasibility screen: a positive-mass row (column) with no
        // finite-cost destination (origin) cannot be routed at all.
        for (std::size_t i = 0; i < m_; ++i) {
            if (a[i] <= 0.0) continue;
            bool ok = false;
            for (std::size_t j = 0; j < n_ && !ok; ++j) ok = std::isfinite(cost(i, j));
            require(ok, "infeasible transport: no finite-cost destination");
        }
        for (std::size_t j = 0; j < n_; ++j) {
            if (b[j] <= 0.0) continue;
            bool ok = false;
            for (std::size_t i = 0; i < m_ && !ok; ++i) ok = std::isfinite(cost(i, j));
            require(ok, "infeasible transport: no finite-cost origin");
        }
        big_ = any_inf ? 1e4 * (1.0 + max_finite) : 0.0;
        work_ = cost;
        if (any_inf)
            for (double& c : work_.data())
                if (!std::isfinite(c)) c = big_;
        northwest_corner(a, b);
    }

    OtcSolution solve() {
        const std::size_t max_pivots = 10000 * (m_ + n_);
        std::vector<double> u(m_), v(n_);
        for (std::size_t pivot = 0;; ++pivot) {
            require(pivot < max_pivots, "otc_matrix: pivot limit exceeded");
            compute_potentials(u, v);
            std::size_t ei = m_, ej = n_;
            if (!find_entering(u, v, ei, ej)) break;
            pivot_on(ei, ej);
        }
        OtcSolution sol;
        sol.flow = Matrix(m_, n_);
        for (const BasicCell& c : basis_) sol.flow(c.row, c.col) = std::max(c.flow, 0.0);
        sol.u = u;
        sol.v = v;
        sol.value = 0.0;
        for (std::size_t i = 0; i < m_; ++i)
            for (std::size_t j = 0; j < n_; ++j) {
                const double f = sol.flow(i, j);
                if (f <= 0.0) continue;
                require(std::isfinite(cost_(i, j)) || f <= 1e-9, "infeasible transport");
                if (std::isfinite(cost_(i, j))) sol.value += cost_(i, j) * f;
            }
        return sol;
    }

  private:
    void northwest_corner(std::vector<double> a, std::vector<double> b) {
        std::size_t i = 0, j = 0;
        while (true) {
            const double flow = std::min(a[i], b[j]);
            basis_.push_back({i, j, std::max(flow, 0.0)});
            a[i] -= flow;
            b[j] -= flow;
            if (i + 1 == m_ && j + 1 == n_) break;
            // advance into the exhausted direction, but never off the grid
            if ((a[i] <= b[j] && i + 1 < m_) || j + 1 == n_) {
                a[i] = 0.0;
                ++i;
            } else {
                b[j] = 0.0;
                ++j;
            }
        }
    }

    /// Solves u[i] + v[j] = work(i,j) over the basis spanning tree.
    void compute_potentials(std::vector<double>& u, std::vector<double>& v) const {
        std::vector<char> udone(m_, 0), vdone(n_, 0);
        u.assign(m_, 0.0);
        v.assign(n_, 0.0);
        udone[0] = 1;
        bool progress = true;
        while (progress) {
            progress = false;
            for (const BasicCell& c : basis_) {
                if (udone[c.row] && !vdone[c.col]) {
                    v[c.col] = work_(c.row, c.col) - u[c.row];
                    vdone[c.col] = 1;
                    progress = true;
                } else if (!udone[c.row] && vdone[c.col]) {
                    u[c.row] = work_(c.row, c.col) - v[c.col];
                    udone[c.row] = 1;
                    progress = true;
                }
            }
        }
        for (char d : udone) require(d, "otc_matrix: basis is not a spanning tree");
        for (char d : vdone) require(d, "otc_matrix: basis is not a spanning tree");
    }

    bool find_entering(const std::vector<double>& u, const std::vector<double>& v,
                       std::size_t& ei, std::size_t& ej) const {
        for (std::size_t i = 0; i < m_; ++i)
            for (std::size_t j = 0; j < n_; ++j) {
                if (is_basic(i, j)) continue;
                if (work_(i, j) - u[i] - v[j] < -1e-9) {
                    ei = i;
                    ej = j;
                    return true;
                }
            }
        return false;
    }

    bool is_basic(std::size_t i, std::size_t j) const {
        for (const BasicCell& c : basis_)
            if (c.row == i && c.col == j) return true;
        return false;
    }

    /// Finds the unique tree path of basic cells linking row node ei to
    /// column node ej. Nodes 0..m-1 are rows, m..m+n-1 are columns.
    std::vector<std::size_t> tree_path(std::size_t ei, std::size_t ej) const {
        const std::size_t nodes = m_ + n_;
        std::vector<std::vector<std::size_t>> adj(nodes); // incident basis indices
        for (std::size_t k = 0; k < basis_.size(); ++k) {
            adj[basis_[k].row].push_back(k);
            adj[m_ + basis_[k].col].push_back(k);
        }
        std::vector<std::size_t> parent_edge(nodes, basis_.size());
        std::vector<char> seen(nodes, 0);
        std::vector<std::size_t> stack{ei};
        seen[ei] = 1;
        while (!stack.empty()) {
            const std::size_t node = stack.back();
            stack.pop_back();
            if (node == m_ + ej) break;
            for (std::size_t k : adj[node]) {
                const std::size_t other =
                    (node < m_) ? m_ + basis_[k].col : basis_[k].row;
                if (seen[other]) continue;
                seen[other] = 1;
                parent_edge[other] = k;
                stack.push_back(other);
            }
        }
        require(seen[m_ + ej], "otc_matrix: entering cell not connected to basis tree");
        std::vector<std::size_t> path;
        std::size_t node = m_ + ej;
        while (node != ei) {
            const std::size_t k = parent_edge[node];
            path.push_back(k);
            node = (node < m_) ? m_ + basis_[k].col : basis_[k].row;
        }
        std::reverse(path.begin(), path.end()); // now runs ei -> ej
        return path;
    }

    void pivot_on(std::size_t ei, std::size_t ej) {
        const std::vector<std::size_t> path = tree_path(ei, ej);
        // Walking the cycle from the entering cell, cells alternate -, +, -,
        // ... along the tree path (the entering cell itself takes +theta).
        double theta = kInf;
        for (std::size_t step = 0; step < path.size(); step += 2)
            theta = std::min(theta, basis_[path[step]].flow);
        // Leaving cell: lexicographically smallest minimizer (deterministic
        // vertex selection under degeneracy).
        std::size_t leave = basis_.size();
        for (std::size_t step = 0; step < path.size(); step += 2) {
            const BasicCell& c = basis_[path[step]];
            if (c.flow > theta + 1e-15) continue;
            if (leave == basis_.size() || c.row < basis_[leave].row ||
                (c.row == basis_[leave].row && c.col < basis_[leave].col))
                leave = path[step];
        }
        for (std::size_t step = 0; step < path.size(); ++step) {
            BasicCell& c = basis_[path[step]];
            c.flow += (step % 2 == 0) ? -theta : theta;
            c.flow = std::max(c.flow, 0.0);
        }
        basis_[leave] = {ei, ej, theta};
    }

    std::size_t m_, n_;
    Matrix cost_; ///< original costs, kInf preserved
    Matrix work_; ///< costs with kInf replaced by big_
    double big_ = 0.0;
    std::vector<BasicCell> basis_;
};

} // namespace

OtcSolution otc_matrix(const std::vector<double>& a, const std::vector<double>& b,
                       const Matrix& cost) {
    require(!a.empty() && !b.empty(), "otc_matrix: empty marginal");
    double ta = 0.0, tb = 0.0;
    for (double x : a) {
        require(x >= 0.0 && std::isfinite(x), "otc_matrix: marginals must be >= 0");
        ta += x;
    }
    for (double x : b) {
        require(x >= 0.0 && std::isfinite(x), "otc_matrix: marginals must be >= 0");
        tb += x;
    }
    require(std::fabs(ta - tb) <= 1e-9, "otc_matrix: marginal totals differ");
    return TransportSimplex(a, b, cost).solve();
}

OtcSolution otc_solve(const DiscreteDist& p_hat, const DiscreteDist& p,
                      const TransportCost& cost) {
    p_hat.validate();
    p.validate();
    Matrix c(p_hat.support.size(), p.support.size());
    for (std::size_t i = 0; i < p_hat.support.size(); ++i)
        for (std::size_t j = 0; j < p.support.size(); ++j)
            c(i, j) = eval_cost(cost, p_hat.support[i], p.support[j]);
    return otc_matrix(p_hat.probs, p.probs, c);
}

double otc_discrete(const DiscreteDist& p_hat, const DiscreteDist& p,
                    const TransportCost& cost) {
    return otc_solve(p_hat, p, cost).value;
}

} // namespace otprl
