#include "otprl/robust_bellman.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace otprl {

namespace {

/// State index encoded in a 1-D support point.
std::size_t index_of(const StateVec& x, std::size_t n_states) {
    require(x.size() == 1, "index distribution: support points must be 1-D");
    const long long i = std::llround(x[0]);
    require(std::fabs(x[0] - static_cast<double>(i)) <= 1e-9,
            "index distribution: support point is not an integer");
    require(i >= 0 && static_cast<std::size_t>(i) < n_states,
            "index distribution: state index out of range");
    return static_cast<std::size_t>(i);
}

/// Budget-constrained transportation LP, Sup direction:
///   max sum_{k,j} V_j nu_{k,j}
///   s.t. sum_j nu_{k,j} = p_hat_k, sum_{k,j} d(i_k,j) nu_{k,j} <= eps, nu >= 0
/// Cells with infinite ground cost are excluded (unreachable at any budget).
/// Dense-tableau primal simplex with Bland's rule; the initial basis of
/// diagonal cells plus the budget slack is already canonical because
/// d(i,i) = 0.
WorstCaseResult solve_sup(const DiscreteDist& p_hat, const std::vector<double>& values,
                          const Matrix& d, double eps) {
    const std::size_t m = p_hat.support.size();
    const std::size_t n = values.size();
    require(d.rows() == n && d.cols() == n, "worst_case_expectation: cost matrix shape");
    require(eps >= 0.0, "worst_case_expectation: eps must be >= 0");
    require(all_finite(values), "worst_case_expectation: values must be finite");

    std::vector<std::size_t> atom(m); // state index of each support atom
    struct Cell {
        std::size_t k, j;
    };
    std::vector<Cell> cells;
    std::vector<std::size_t> diag_var(m);
    for (std::size_t k = 0; k < m; ++k) {
        atom[k] = index_of(p_hat.support[k], n);
        require(d(atom[k], atom[k]) == 0.0,
                "worst_case_expectation: cost matrix diagonal must be 0");
        for (std::size_t j = 0; j < n; ++j) {
            const double dij = d(atom[k], j);
            require(!std::isnan(dij) && dij >= 0.0,
                    "worst_case_expectation: cost matrix entries must be >= 0");
            if (!std::isfinite(dij)) continue;
            if (j == atom[k]) diag_var[k] = cells.size();
            cells.push_back({k, j});
        }
    }
    const std::size_t slack = cells.size();
    const std::size_t n_vars = slack + 1;
    const std::size_t rows = m + 1;
    const std::size_t rhs = n_vars;

    std::vector<std::vector<double>> t(rows, std::vector<double>(n_vars + 1, 0.0));
    for (std::size_t v = 0; v < cells.size(); ++v) {
        t[cells[v].k][v] = 1.0;
        t[m][v] = d(atom[cells[v].k], cells[v].j);
    }
    t[m][slack] = 1.0;
    for (std::size_t k = 0; k < m; ++k) t[k][rhs] = p_hat.probs[k];
    t[m][rhs] = eps;

    // minimize -V (i.e. maximize expected value)
    std::vector<double> c(n_vars, 0.0);
    for (std::size_t v = 0; v < cells.size(); ++v) c[v] = -values[cells[v].j];

    std::vector<std::size_t> basis(rows);
    for (std::size_t k = 0; k < m; ++k) basis[k] = diag_var[k];
    basis[m] = slack;

    std::vector<double> rc = c; // reduced costs; canonicalize over the basis
    for (std::size_t r = 0; r < rows; ++r) {
        const double cb = c[basis[r]];
        if (cb == 0.0) continue;
        for (std::size_t v = 0; v < n_vars; ++v) rc[v] -= cb * t[r][v];
    }

    const double tol = 1e-11;
    for (std::size_t iter = 0;; ++iter) {
        require(iter < 100000, "worst_case_expectation: pivot limit exceeded");
        std::size_t enter = n_vars;
        for (std::size_t v = 0; v < n_vars; ++v)
            if (rc[v] < -tol) {
                enter = v;
                break;
            }
        if (enter == n_vars) break;
        std::size_t leave = rows;
        double best_ratio = kInf;
        for (std::size_t r = 0; r < rows; ++r) {
            if (t[r][enter] <= tol) continue;
            const double ratio = t[r][rhs] / t[r][enter];
            if (ratio < best_ratio - 1e-12 ||
                (ratio <= best_ratio + 1e-12 && (leave == rows || basis[r] < basis[leave]))) {
                best_ratio = std::min(ratio, best_ratio);
                leave = r;
            }
        }
        require(leave < rows, "worst_case_expectation: LP unbounded (solver bug)");
        const double piv = t[leave][enter];
        for (double& x : t[leave]) x /= piv;
        for (std::size_t r = 0; r < rows; ++r) {
            if (r == leave || t[r][enter] == 0.0) continue;
            const double f = t[r][enter];
            for (std::size_t v = 0; v <= n_vars; ++v) t[r][v] -= f * t[leave][v];
        }
        if (rc[enter] != 0.0) {
            const double f = rc[enter];
            for (std::size_t v = 0; v < n_vars; ++v) rc[v] -= f * t[leave][v];
        }
        basis[leave] = enter;
    }

    std::vector<double> x(n_vars, 0.0);
    for (std::size_t r = 0; r < rows; ++r) x[basis[r]] = std::max(t[r][rhs], 0.0);

    WorstCaseResult res;
    std::vector<double> marginal(n, 0.0);
    double value = 0.0, spent = 0.0;
    for (std::size_t v = 0; v < cells.size(); ++v) {
        if (x[v] <= 0.0) continue;
        marginal[cells[v].j] += x[v];
        value += values[cells[v].j] * x[v];
        spent += d(atom[cells[v].k], cells[v].j) * x[v];
    }
    res.value = value;
    res.worst_dist = index_dist(marginal);
    res.budget_slack = eps - spent;
    return res;
}

std::vector<double> negated(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = -v[i];
    return out;
}

/// Sup-direction dual objective at a fixed multiplier.
double dual_objective_sup(const DiscreteDist& p_hat, const std::vector<double>& values,
                          const Matrix& d, double eps, double lambda) {
    const std::size_t n = values.size();
    double acc = lambda * eps;
    for (std::size_t k = 0; k < p_hat.support.size(); ++k) {
        const std::size_t i = index_of(p_hat.support[k], n);
        double best = -kInf;
        for (std::size_t j = 0; j < n; ++j) {
            const double dij = d(i, j);
            if (!std::isfinite(dij)) continue;
            best = std::max(best, values[j] - lambda * dij);
        }
        acc += p_hat.probs[k] * best;
    }
    return acc;
}

/// Golden-section minimization of the convex sup-direction dual over
/// [0, lambda_max]; lambda_max = range(V)/min positive finite cost is large
/// enough that the objective is nondecreasing beyond it.
DualResult solve_dual_sup(const DiscreteDist& p_hat, const std::vector<double>& values,
                          const Matrix& d, double eps) {
    const std::size_t n = values.size();
    double vmin = kInf, vmax = -kInf;
    for (double v : values) {
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
    }
    double min_pos = kInf;
    for (std::size_t k = 0; k < p_hat.support.size(); ++k) {
        const std::size_t i = index_of(p_hat.support[k], n);
        for (std::size_t j = 0; j < n; ++j) {
            const double dij = d(i, j);
            if (std::isfinite(dij) && dij > 0.0) min_pos = std::min(min_pos, dij);
        }
    }
    const double range = vmax - vmin;
    const double lambda_max =
        (std::isfinite(min_pos) && range > 0.0) ? range / min_pos : 0.0;

    auto g = [&](double lam) { return dual_objective_sup(p_hat, values, d, eps, lam); };

    DualResult res;
    if (lambda_max == 0.0) {
        res.value = g(0.0);
        res.lambda = 0.0;
        return res;
    }
    double lo = 0.0, hi = lambda_max;
    double best = std::min(g(lo), g(hi));
    const double invphi = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = hi - invphi * (hi - lo), e = lo + invphi * (hi - lo);
    double fc = g(c), fe = g(e);
    best = std::min(best, std::min(fc, fe));
    while (hi - lo > 1e-10 * std::max(1.0, hi)) {
        if (fc <= fe) {
            hi = e;
            e = c;
            fe = fc;
            c = hi - invphi * (hi - lo);
            fc = g(c);
        } else {
            lo = c;
            c = e;
            fc = fe;
            e = lo + invphi * (hi - lo);
            fe = g(e);
        }
        best = std::min(best, std::min(fc, fe));
    }
    res.value = best;
    res.lambda = 0.5 * (lo + hi);
    return res;
}

} // namespace

DiscreteDist index_dist(const std::vector<double>& probs) {
    DiscreteDist d;
    for (std::size_t j = 0; j < probs.size(); ++j) {
        if (probs[j] <= 0.0) continue;
        d.support.push_back({static_cast<double>(j)});
        d.probs.push_back(probs[j]);
    }
    // absorb accumulation drift (into the largest atom) so downstream
    // validation at 1e-12 passes
    double total = 0.0;
    std::size_t largest = 0;
    for (std::size_t k = 0; k < d.probs.size(); ++k) {
        total += d.probs[k];
        if (d.probs[k] > d.probs[largest]) largest = k;
    }
    require(!d.probs.empty() && std::fabs(total - 1.0) <= 1e-9,
            "index_dist: probabilities must sum to 1");
    d.probs[largest] += 1.0 - total;
    return d;
}

std::vector<double> dense_probs(const DiscreteDist& dist, int n_states) {
    std::vector<double> out(static_cast<std::size_t>(n_states), 0.0);
    for (std::size_t k = 0; k < dist.support.size(); ++k)
        out[index_of(dist.support[k], out.size())] += dist.probs[k];
    return out;
}

void TabularPolicy::validate() const {
    require(probs.rows() > 0 && probs.cols() > 0, "TabularPolicy: empty table");
    for (std::size_t s = 0; s < probs.rows(); ++s) {
        double total = 0.0;
        for (std::size_t a = 0; a < probs.cols(); ++a) {
            require(probs(s, a) >= 0.0, "TabularPolicy: negative probability");
            total += probs(s, a);
        }
        require(std::fabs(total - 1.0) <= 1e-9, "TabularPolicy: rows must sum to 1");
    }
}

void DiscreteRCMDP::validate() const {
    require(n_states > 0 && n_actions > 0, "DiscreteRCMDP: empty state/action space");
    require(gamma >= 0.0 && gamma < 1.0, "DiscreteRCMDP: gamma must lie in [0,1)");
    require(nominal.size() == static_cast<std::size_t>(n_states * n_actions),
            "DiscreteRCMDP: nominal kernel size mismatch");
    for (const DiscreteDist& row : nominal) {
        row.validate();
        for (const StateVec& x : row.support) index_of(x, n_states);
    }
    require(reward.rows() == static_cast<std::size_t>(n_states) &&
                reward.cols() == static_cast<std::size_t>(n_actions),
            "DiscreteRCMDP: reward shape mismatch");
    require(cost.rows() == static_cast<std::size_t>(n_states) &&
                cost.cols() == static_cast<std::size_t>(n_actions),
            "DiscreteRCMDP: cost shape mismatch");
    for (double x : cost.data()) require(x >= 0.0, "DiscreteRCMDP: costs must be >= 0");
    require(radius.rows() == static_cast<std::size_t>(n_states) &&
                radius.cols() == static_cast<std::size_t>(n_actions),
            "DiscreteRCMDP: radius shape mismatch");
    for (double x : radius.data()) require(x >= 0.0, "DiscreteRCMDP: radii must be >= 0");
    rho0.validate();
    for (const StateVec& x : rho0.support) index_of(x, n_states);
    require(cost_matrix.size() == 1 ||
                cost_matrix.size() == static_cast<std::size_t>(n_states * n_actions),
            "DiscreteRCMDP: cost_matrix must be shared or per state-action");
    for (const Matrix& dm : cost_matrix) {
        require(dm.rows() == static_cast<std::size_t>(n_states) &&
                    dm.cols() == static_cast<std::size_t>(n_states),
                "DiscreteRCMDP: cost_matrix shape mismatch");
        for (std::size_t i = 0; i < dm.rows(); ++i) {
            require(dm(i, i) == 0.0, "DiscreteRCMDP: cost_matrix diagonal must be 0");
            for (std::size_t j = 0; j < dm.cols(); ++j)
                require(!std::isnan(dm(i, j)) && dm(i, j) >= 0.0,
                        "DiscreteRCMDP: cost_matrix entries must be >= 0");
        }
    }
}

WorstCaseResult worst_case_expectation_primal(const DiscreteDist& p_hat,
                                              const std::vector<double>& values,
                                              const Matrix& cost_row, double eps,
                                              Direction direction) {
    if (direction == Direction::Sup) return solve_sup(p_hat, values, cost_row, eps);
    WorstCaseResult res = solve_sup(p_hat, negated(values), cost_row, eps);
    res.value = -res.value;
    return res;
}

double dual_objective(const DiscreteDist& p_hat, const std::vector<double>& values,
                      const Matrix& cost_row, double eps, Direction direction,
                      double lambda) {
    require(lambda >= 0.0, "dual_objective: lambda must be >= 0");
    if (direction == Direction::Sup)
        return dual_objective_sup(p_hat, values, cost_row, eps, lambda);
    return -dual_objective_sup(p_hat, negated(values), cost_row, eps, lambda);
}

DualResult worst_case_expectation_dual_full(const DiscreteDist& p_hat,
                                            const std::vector<double>& values,
                                            const Matrix& cost_row, double eps,
                                            Direction direction) {
    require(eps >= 0.0, "worst_case_expectation: eps must be >= 0");
    require(all_finite(values), "worst_case_expectation: values must be finite");
    if (direction == Direction::Sup) return solve_dual_sup(p_hat, values, cost_row, eps);
    DualResult res = solve_dual_sup(p_hat, negated(values), cost_row, eps);
    res.value = -res.value;
    return res;
}

double worst_case_expectation_dual(const DiscreteDist& p_hat,
                                   const std::vector<double>& values,
                                   const Matrix& cost_row, double eps,
                                   Direction direction) {
    return worst_case_expectation_dual_full(p_hat, values, cost_row, eps, direction).value;
}

std::vector<double> state_values(const QTable& q, const TabularPolicy& policy) {
    const std::size_t n_states = q.values.rows(), n_actions = q.values.cols();
    std::vector<double> v(n_states, 0.0);
    for (std::size_t s = 0; s < n_states; ++s)
        for (std::size_t a = 0; a < n_actions; ++a)
            v[s] += policy.probs(s, a) * q.values(s, a);
    return v;
}

QTable robust_bellman_apply(const DiscreteRCMDP& mdp, const TabularPolicy& policy,
                            const QTable& q, SolveMethod method) {
    const Direction dir = q.kind == ValueKind::Reward ? Direction::Inf : Direction::Sup;
    const Matrix& base = q.kind == ValueKind::Reward ? mdp.reward : mdp.cost;
    const std::vector<double> v = state_values(q, policy);
    QTable out;
    out.kind = q.kind;
    out.values = Matrix(q.values.rows(), q.values.cols());
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) {
            const double inner =
                method == SolveMethod::Primal
                    ? worst_case_expectation_primal(mdp.p_hat(s, a), v, mdp.d(s, a),
                                                    mdp.radius(s, a), dir)
                          .value
                    : worst_case_expectation_dual(mdp.p_hat(s, a), v, mdp.d(s, a),
                                                  mdp.radius(s, a), dir);
            out.values(s, a) = base(s, a) + mdp.gamma * inner;
        }
    return out;
}

QTable robust_policy_evaluation(const DiscreteRCMDP& mdp, const TabularPolicy& policy,
                                ValueKind kind, double tol, SolveMethod method) {
    require(mdp.gamma < 1.0, "robust_policy_evaluation: gamma must be < 1");
    require(tol > 0.0, "robust_policy_evaluation: tol must be > 0");
    long max_iters = 4;
    if (mdp.gamma > 0.0)
        max_iters = std::max<long>(
            4, 10 * static_cast<long>(std::ceil(std::log(tol * (1.0 - mdp.gamma)) /
                                                std::log(mdp.gamma))));
    QTable q;
    q.kind = kind;
    q.values = Matrix(mdp.n_states, mdp.n_actions);
    for (long iter = 0; iter < max_iters; ++iter) {
        QTable next = robust_bellman_apply(mdp, policy, q, method);
        const double diff = max_abs_diff(next.values.data(), q.values.data());
        q = std::move(next);
        if (diff <= tol) return q;
    }
    throw std::runtime_error("robust_policy_evaluation: no convergence within max_iters");
}

BruteforceResult solve_rcmdp_bruteforce(const DiscreteRCMDP& mdp, double budget) {
    require(mdp.n_states <= 4 && mdp.n_actions <= 2,
            "solve_rcmdp_bruteforce: instance too large for enumeration");
    mdp.validate();
    const std::vector<double> rho = dense_probs(mdp.rho0, mdp.n_states);
    long n_policies = 1;
    for (int s = 0; s < mdp.n_states; ++s) n_policies *= mdp.n_actions;

    BruteforceResult best;
    double best_jr = -kInf, least_jc = kInf;
    TabularPolicy least_jc_policy;
    double least_jc_jr = 0.0;
    for (long code = 0; code < n_policies; ++code) {
        TabularPolicy pi;
        pi.probs = Matrix(mdp.n_states, mdp.n_actions);
        long rem = code;
        for (int s = 0; s < mdp.n_states; ++s) {
            pi.probs(s, static_cast<int>(rem % mdp.n_actions)) = 1.0;
            rem /= mdp.n_actions;
        }
        const QTable qr = robust_policy_evaluation(mdp, pi, ValueKind::Reward);
        const QTable qc = robust_policy_evaluation(mdp, pi, ValueKind::Cost);
        const double jr = dot(rho, state_values(qr, pi));
        const double jc = dot(rho, state_values(qc, pi));
        if (jc <= budget && jr > best_jr) {
            best_jr = jr;
            best.best_policy = pi;
            best.j_r_worst = jr;
            best.j_c_worst = jc;
            best.feasible = true;
        }
        if (jc < least_jc) {
            least_jc = jc;
            least_jc_policy = pi;
            least_jc_jr = jr;
        }
    }
    if (!best.feasible) {
        best.best_policy = least_jc_policy;
        best.j_r_worst = least_jc_jr;
        best.j_c_worst = least_jc;
    }
    return best;
}

DiscreteRCMDP DiscreteRCMDP::from_json_text(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    DiscreteRCMDP mdp;
    mdp.n_states = j.at("n_states").get<int>();
    mdp.n_actions = j.at("n_actions").get<int>();
    mdp.gamma = j.at("gamma").get<double>();

    auto load_sa_matrix = [&](const char* key) {
        const auto& arr = j.at(key);
        require(arr.size() == static_cast<std::size_t>(mdp.n_states),
                std::string("DiscreteRCMDP json: bad shape for ") + key);
        Matrix m(mdp.n_states, mdp.n_actions);
        for (int s = 0; s < mdp.n_states; ++s) {
            require(arr[s].size() == static_cast<std::size_t>(mdp.n_actions),
                    std::string("DiscreteRCMDP json: bad shape for ") + key);
            for (int a = 0; a < mdp.n_actions; ++a) m(s, a) = arr[s][a].get<double>();
        }
        return m;
    };
    mdp.reward = load_sa_matrix("reward");
    mdp.cost = load_sa_matrix("cost");
    mdp.radius = load_sa_matrix("radius");

    const auto& nom = j.at("nominal");
    require(nom.size() == static_cast<std::size_t>(mdp.n_states),
            "DiscreteRCMDP json: bad nominal shape");
    for (int s = 0; s < mdp.n_states; ++s) {
        require(nom[s].size() == static_cast<std::size_t>(mdp.n_actions),
                "DiscreteRCMDP json: bad nominal shape");
        for (int a = 0; a < mdp.n_actions; ++a) {
            const std::vector<double> row = nom[s][a].get<std::vector<double>>();
            require(row.size() == static_cast<std::size_t>(mdp.n_states),
                    "DiscreteRCMDP json: bad nominal row length");
            mdp.nominal.push_back(index_dist(row));
        }
    }
    mdp.rho0 = index_dist(j.at("rho0").get<std::vector<double>>());

    auto load_state_matrix = [&](const nlohmann::json& arr) {
        require(arr.size() == static_cast<std::size_t>(mdp.n_states),
                "DiscreteRCMDP json: bad cost_matrix shape");
        Matrix m(mdp.n_states, mdp.n_states);
        for (int i = 0; i < mdp.n_states; ++i)
            for (int k = 0; k < mdp.n_states; ++k) m(i, k) = arr[i][k].get<double>();
        return m;
    };
    const auto& cm = j.at("cost_matrix");
    require(cm.is_array() && !cm.empty(), "DiscreteRCMDP json: bad cost_matrix");
    if (cm[0].is_array() && !cm[0].empty() && cm[0][0].is_number()) {
        mdp.cost_matrix.push_back(load_state_matrix(cm)); // shared across (s,a)
    } else {
        require(cm.size() == static_cast<std::size_t>(mdp.n_states),
                "DiscreteRCMDP json: bad cost_matrix shape");
        for (int s = 0; s < mdp.n_states; ++s)
            for (int a = 0; a < mdp.n_actions; ++a)
                mdp.cost_matrix.push_back(load_state_matrix(cm[s][a]));
    }
    mdp.validate();
    return mdp;
}

} // namespace otprl
