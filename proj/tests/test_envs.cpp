#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "otprl/envs.hpp"
#include "otprl/robust_bellman.hpp"
#include "otprl/rng.hpp"

#include "json.hpp"

#include <array>
#include <cmath>
#include <cstdlib>
#include <vector>

using namespace otprl;
using nlohmann::json;

namespace {

/// Hand-written ChainEnv transition law, straight from the config semantics:
/// fork (0) sends action 0 to the safe leg (1) and action 1 to the risky leg
/// (2), a slip crossing over; legs feed the goal (3) but linger on a slip;
/// the goal recycles to the fork but lingers on a slip.
std::array<std::array<std::array<double, 4>, 2>, 4> chain_kernel(double slip) {
    std::array<std::array<std::array<double, 4>, 2>, 4> P{};
    P[0][0][1] = 1.0 - slip;
    P[0][0][2] = slip;
    P[0][1][2] = 1.0 - slip;
    P[0][1][1] = slip;
    for (int a = 0; a < 2; ++a) {
        P[1][a][3] = 1.0 - slip;
        P[1][a][1] = slip;
        P[2][a][3] = 1.0 - slip;
        P[2][a][2] = slip;
        P[3][a][0] = 1.0 - slip;
        P[3][a][3] = slip;
    }
    return P;
}

int argmax_state(const StateVec& one_hot) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(one_hot.size()); ++i)
        if (one_hot[i] > one_hot[best]) best = i;
    return best;
}

class FixedChainActor : public Actor {
  public:
    explicit FixedChainActor(std::array<int, 4> pick) : pick_(pick) {}
    StateVec act(const StateVec& s, Rng&) override {
        return {pick_[argmax_state(s)] == 1 ? 1.0 : -1.0};
    }

  private:
    std::array<int, 4> pick_;
};

/// Saturating PD controller toward a target point.
StateVec pd_toward(const StateVec& s, double tx, double ty) {
    const double ax = 2.0 * (tx - s[0]) - 1.0 * s[2];
    const double ay = 2.0 * (ty - s[1]) - 1.0 * s[3];
    return {std::clamp(ax, -1.0, 1.0), std::clamp(ay, -1.0, 1.0)};
}

class GreedyActor : public Actor {
  public:
    explicit GreedyActor(StateVec goal) : goal_(std::move(goal)) {}
    StateVec act(const StateVec& s, Rng&) override {
        return pd_toward(s, goal_[0], goal_[1]);
    }

  private:
    StateVec goal_;
};

/// Swings above the hazard through a waypoint before heading to the goal.
class DetourActor : public Actor {
  public:
    explicit DetourActor(StateVec goal) : goal_(std::move(goal)) {}
    StateVec act(const StateVec& s, Rng&) override {
        if (s[0] < 0.0) return pd_toward(s, 0.0, 2.0);
        return pd_toward(s, goal_[0], goal_[1]);
    }

  private:
    StateVec goal_;
};

class ZeroActor : public Actor {
  public:
    StateVec act(const StateVec& s, Rng&) override {
        return StateVec(2, 0.0);
    }
};

json load_config(const std::string& name) {
    return json::parse(read_text_file(config_dir() + "/" + name + ".json"));
}

} // namespace

TEST_CASE("test suite sweep is a linspace with the nominal at the center") {
    auto env = make_env("pointgoal");
    CHECK_THROWS(make_test_suite(*env, 1));
    const auto three = make_test_suite(*env, 3);
    REQUIRE(three.size() == 3);
    CHECK(three[0]->param() == 0.5);
    CHECK(three[1]->param() == 1.0); // exactly nominal
    CHECK(three[2]->param() == 1.5);
    const auto five = make_test_suite(*env, 5);
    CHECK(five[1]->param() == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(five[2]->param() == env->perturbation().nominal);
    for (const auto& e : five) {
        // everything except the named parameter is shared
        CHECK(e->horizon() == env->horizon());
        CHECK(e->budget() == env->budget());
        CHECK(e->name() == env->name());
        CHECK(e->perturbation().name == "mass");
    }
    const auto even = make_test_suite(*env, 4);
    CHECK(even[0]->param() == 0.5);
    CHECK(even[3]->param() == 1.5);
}

TEST_CASE("chain kernel accessor matches the hand-written law") {
    auto env_base = make_env("chain");
    auto* env = dynamic_cast<ChainEnv*>(env_base.get());
    REQUIRE(env != nullptr);
    for (double slip : {0.0, 0.1, 0.2}) {
        env->set_param(slip);
        const auto P = chain_kernel(slip);
        for (int s = 0; s < 4; ++s)
            for (int a = 0; a < 2; ++a) {
                const Matrix row = env->kernel_row(s, a);
                for (int t = 0; t < 4; ++t)
                    CHECK(row(0, t) == doctest::Approx(P[s][a][t]).epsilon(1e-15));
            }
    }
}

TEST_CASE("chain empirical transition frequencies match the kernel") {
    auto env_base = make_env("chain");
    auto* env = dynamic_cast<ChainEnv*>(env_base.get());
    REQUIRE(env != nullptr);
    const auto P = chain_kernel(env->param());
    Rng rng(404);
    std::array<std::array<std::array<long, 4>, 2>, 4> counts{};
    std::array<std::array<long, 2>, 4> visits{};
    int s = argmax_state(env->reset(7));
    for (long k = 0; k < 100000; ++k) {
        const int a = rng.uniform() < 0.5 ? 0 : 1;
        const StepResult sr = env->step({a == 1 ? 1.0 : -1.0});
        const int t = argmax_state(sr.s_next);
        ++counts[s][a][t];
        ++visits[s][a];
        s = t;
    }
    for (int i = 0; i < 4; ++i)
        for (int a = 0; a < 2; ++a) {
            REQUIRE(visits[i][a] > 1000);
            for (int t = 0; t < 4; ++t) {
                const double p = P[i][a][t];
                const double n = static_cast<double>(visits[i][a]);
                const double freq = counts[i][a][t] / n;
                if (p == 0.0) {
                    CHECK(counts[i][a][t] == 0); // impossible destinations never occur
                } else {
                    const double se = std::sqrt(p * (1.0 - p) / n);
                    CHECK(std::fabs(freq - p) <= 3.0 * se + 1e-12);
                }
            }
        }
}

TEST_CASE("chain rollouts match the exact Markov recursion over the horizon") {
    auto env_base = make_env("chain");
    auto* env = dynamic_cast<ChainEnv*>(env_base.get());
    REQUIRE(env != nullptr);
    const json cfg = load_config("chain");
    const double r_vals[4] = {cfg["rewards"]["fork"], cfg["rewards"]["safe_leg"],
                              cfg["rewards"]["risky_leg"], cfg["rewards"]["goal"]};
    const double c_vals[4] = {0.0, 0.0, 1.0, 0.0};
    const std::array<int, 4> pick = {0, 1, 1, 1}; // safe at the fork, advance elsewhere
    const auto P = chain_kernel(env->param());

    // exact expected undiscounted totals: sum_t rho_t . r_pi
    std::array<double, 4> rho = {1.0, 0.0, 0.0, 0.0};
    double exact_r = 0.0, exact_c = 0.0;
    for (int t = 0; t < env->horizon(); ++t) {
        std::array<double, 4> next{};
        for (int i = 0; i < 4; ++i) {
            exact_r += rho[i] * r_vals[i];
            exact_c += rho[i] * c_vals[i];
            for (int j = 0; j < 4; ++j) next[j] += rho[i] * P[i][pick[i]][j];
        }
        rho = next;
    }

    FixedChainActor actor(pick);
    const int n = 1000;
    double sum_r = 0.0, sum_c = 0.0, sq_r = 0.0, sq_c = 0.0;
    for (int k = 0; k < n; ++k) {
        const RolloutResult rr = rollout(*env, actor, 9000 + k, false);
        sum_r += rr.total_reward;
        sum_c += rr.total_cost;
        sq_r += rr.total_reward * rr.total_reward;
        sq_c += rr.total_cost * rr.total_cost;
    }
    const double mean_r = sum_r / n, mean_c = sum_c / n;
    const double se_r = std::sqrt((sq_r / n - mean_r * mean_r) / n);
    const double se_c = std::sqrt((sq_c / n - mean_c * mean_c) / n);
    CHECK(std::fabs(mean_r - exact_r) <= 3.0 * se_r);
    CHECK(std::fabs(mean_c - exact_c) <= 3.0 * se_c);
}

TEST_CASE("chain tabular view: kernel, structure, and budget landscape") {
    auto env_base = make_env("chain");
    auto* env = dynamic_cast<ChainEnv*>(env_base.get());
    REQUIRE(env != nullptr);
    const DiscreteRCMDP mdp = env->to_rcmdp(0.05);
    CHECK(mdp.n_states == 4);
    CHECK(mdp.n_actions == 2);
    CHECK(mdp.radius(2, 1) == 0.05);
    for (int s = 0; s < 4; ++s)
        for (int a = 0; a < 2; ++a) {
            const std::vector<double> dense = dense_probs(mdp.p_hat(s, a), 4);
            const Matrix row = env->kernel_row(s, a);
            for (int t = 0; t < 4; ++t)
                CHECK(dense[t] == doctest::Approx(row(0, t)).epsilon(1e-12));
        }
    // the always-risky policy violates the discounted budget, the safe one
    // respects it, so the constraint is active for the bruteforce solver
    const BruteforceResult sol = solve_rcmdp_bruteforce(mdp, env->rcmdp_budget());
    CHECK(sol.feasible);
    TabularPolicy risky;
    risky.probs = Matrix(4, 2);
    for (int s = 0; s < 4; ++s) risky.probs(s, 1) = 1.0;
    const double jc_risky =
        dot(dense_probs(mdp.rho0, 4),
            state_values(robust_policy_evaluation(mdp, risky, ValueKind::Cost),
                         risky));
    CHECK(jc_risky > env->rcmdp_budget());
}

TEST_CASE("chain feasible set shrinks as the transport radius grows") {
    auto env_base = make_env("chain");
    auto* env = dynamic_cast<ChainEnv*>(env_base.get());
    REQUIRE(env != nullptr);
    std::vector<int> feasible_counts;
    for (double eps : {0.0, 0.1, 0.3, 0.6, 1.0}) {
        const DiscreteRCMDP mdp = env->to_rcmdp(eps);
        int count = 0;
        for (int code = 0; code < 16; ++code) {
            TabularPolicy pi;
            pi.probs = Matrix(4, 2);
            for (int s = 0; s < 4; ++s) pi.probs(s, (code >> s) & 1) = 1.0;
            const double jc =
                dot(dense_probs(mdp.rho0, 4),
                    state_values(robust_policy_evaluation(mdp, pi, ValueKind::Cost),
                                 pi));
            if (jc <= env->rcmdp_budget()) ++count;
        }
        feasible_counts.push_back(count);
    }
    for (std::size_t i = 1; i < feasible_counts.size(); ++i)
        CHECK(feasible_counts[i] <= feasible_counts[i - 1]);
    CHECK(feasible_counts.front() > 0);
    CHECK(feasible_counts.front() < 16); // constraint active at eps = 0
}

TEST_CASE("pointgoal physics follows the documented update, literally") {
    auto env_base = make_env("pointgoal");
    auto* env = dynamic_cast<PointGoalEnv*>(env_base.get());
    REQUIRE(env != nullptr);
    const json cfg = load_config("pointgoal");
    const double dt = cfg["dt"], damping = cfg["damping"], box = cfg["pos_box"];
    const double gx = cfg["goal"][0], gy = cfg["goal"][1];
    const double hx = cfg["hazard"]["center"][0], hy = cfg["hazard"]["center"][1];
    const double hr = cfg["hazard"]["radius"];
    for (double mass : {0.5, 1.0, 1.5}) {
        env->set_param(mass);
        Rng rng(11);
        StateVec s = env->reset(99);
        double x = s[0], y = s[1], vx = s[2], vy = s[3];
        for (int t = 0; t < 500; ++t) {
            const double ax = rng.uniform(-1.0, 1.0), ay = rng.uniform(-1.0, 1.0);
            const StepResult sr = env->step({ax, ay});
            vx += dt * (ax / mass - damping * vx);
            vy += dt * (ay / mass - damping * vy);
            x = std::clamp(x + dt * vx, -box, box);
            y = std::clamp(y + dt * vy, -box, box);
            CHECK(sr.s_next[0] == x);
            CHECK(sr.s_next[1] == y);
            CHECK(sr.s_next[2] == vx);
            CHECK(sr.s_next[3] == vy);
            CHECK(sr.reward == std::exp(-std::hypot(x - gx, y - gy)));
            CHECK(sr.cost == (std::hypot(x - hx, y - hy) <= hr ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("pointgoal invariants hold on a million random transitions") {
    auto env = make_env("pointgoal");
    Rng rng(2024);
    int resets = 0;
    StateVec s = env->reset(resets);
    for (long k = 0; k < 1000000; ++k) {
        if (k % env->horizon() == 0) s = env->reset(++resets);
        const StepResult sr =
            env->step({rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)});
        if (!(sr.reward > 0.0 && sr.reward <= 1.0) ||
            !(sr.cost == 0.0 || sr.cost == 1.0) || std::fabs(sr.s_next[0]) > 5.0 ||
            std::fabs(sr.s_next[1]) > 5.0) {
            REQUIRE(false); // report once with full context
        }
        s = sr.s_next;
    }
    CHECK(true);
}

TEST_CASE("chain invariants hold on a million random transitions") {
    auto env = make_env("chain");
    Rng rng(2025);
    env->reset(1);
    for (long k = 0; k < 1000000; ++k) {
        const StepResult sr = env->step({rng.uniform(-1.0, 1.0)});
        if (!(sr.reward >= 0.0 && sr.reward <= 1.0) ||
            !(sr.cost == 0.0 || sr.cost == 1.0)) {
            REQUIRE(false);
        }
    }
    CHECK(true);
}

TEST_CASE("trajectories replay bit-for-bit") {
    for (const char* task : {"chain", "pointgoal"}) {
        auto env = make_env(task);
        Rng rng(55);
        std::vector<StateVec> actions;
        std::vector<StateVec> states;
        StateVec s = env->reset(123);
        states.push_back(s);
        for (int t = 0; t < 50; ++t) {
            StateVec a(env->action_dim());
            for (double& x : a) x = rng.uniform(-1.0, 1.0);
            actions.push_back(a);
            const StepResult sr = env->step(a);
            states.push_back(sr.s_next);
        }
        // replay on a clone constructed from the same config
        auto replay = env->clone();
        StateVec s2 = replay->reset(123);
        CHECK(s2 == states[0]);
        for (int t = 0; t < 50; ++t) {
            const StepResult sr = replay->step(actions[t]);
            CHECK(sr.s_next == states[t + 1]); // exact bitwise match
        }
    }
}

TEST_CASE("zero-length horizon yields zero totals") {
    json cfg = load_config("pointgoal");
    cfg["horizon"] = 0;
    PointGoalEnv env = PointGoalEnv::from_json_text(cfg.dump());
    ZeroActor actor;
    const RolloutResult rr = rollout(env, actor, 3);
    CHECK(rr.total_reward == 0.0);
    CHECK(rr.total_cost == 0.0);
    CHECK(rr.traj.actions.empty());
}

TEST_CASE("zero action from rest never enters the hazard") {
    auto env = make_env("pointgoal");
    ZeroActor actor;
    for (int seed = 0; seed < 10; ++seed) {
        const RolloutResult rr = rollout(*env, actor, seed, false);
        CHECK(rr.total_cost == 0.0);
    }
}

TEST_CASE("hazard camping violates the budget; transit pays; a detour is free") {
    auto env_base = make_env("pointgoal");
    auto* env = dynamic_cast<PointGoalEnv*>(env_base.get());
    REQUIRE(env != nullptr);
    GreedyActor greedy({env->goal()[0], env->goal()[1]});
    GreedyActor camper({env->hazard_center()[0], env->hazard_center()[1]});
    DetourActor detour({env->goal()[0], env->goal()[1]});
    for (int seed = 0; seed < 5; ++seed) {
        const RolloutResult g = rollout(*env, greedy, seed, false);
        const RolloutResult c = rollout(*env, camper, seed, false);
        const RolloutResult d = rollout(*env, detour, seed, false);
        CHECK(c.total_cost > env->budget()); // parked inside the disk until the horizon
        CHECK(g.total_cost >= 0.8 * env->budget()); // straight transit spends most of it
        CHECK(d.total_cost == 0.0);
        CHECK(d.total_reward > 0.25 * g.total_reward); // detour still reaches the goal
    }
}

TEST_CASE("set_param rejects values outside the advertised test range") {
    auto env = make_env("pointgoal");
    CHECK_THROWS(env->set_param(0.4));
    CHECK_THROWS(env->set_param(1.6));
    env->set_param(0.5);
    env->set_param(1.5);
    auto chain = make_env("chain");
    CHECK_THROWS(chain->set_param(-0.01));
    CHECK_THROWS(chain->set_param(0.25));
}
