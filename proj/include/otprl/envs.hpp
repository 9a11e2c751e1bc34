#pragma once

/// Built-in constrained control tasks with a nominal training configuration
/// and a named, parameterized test-time disturbance. Both tasks keep rewards
/// in [0,1] and costs in {0,1}; dynamics are deterministic functions of
/// (state, action, parameter) — ChainEnv's slip draws come from an internal
/// generator seeded at reset, so trajectories replay bit-for-bit.
///
/// Task constants are not compiled in: they ship in configs/<name>.json and
/// are documented there (see make_env / from_json_text).

#include "otprl/common.hpp"
#include "otprl/nn.hpp"
#include "otprl/rng.hpp"
#include "otprl/robust_bellman.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace otprl {

struct StepResult {
    StateVec s_next;
    double reward = 0.0;
    double cost = 0.0;
    bool terminal = false; ///< true terminal, not a horizon timeout
};

/// A single named real parameter that gets varied at test time; the nominal
/// value sits at the center of the test range.
struct PerturbationSpec {
    std::string name;
    double nominal = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

class EnvSpec {
  public:
    virtual ~EnvSpec() = default;

    virtual const std::string& name() const = 0;
    virtual int state_dim() const = 0;
    virtual int action_dim() const = 0;
    virtual double action_low() const = 0;
    virtual double action_high() const = 0;
    virtual int horizon() const = 0;
    /// Per-episode safety budget B the eval harness compares totals against.
    virtual double budget() const = 0;

    virtual const PerturbationSpec& perturbation() const = 0;
    virtual double param() const = 0;
    virtual void set_param(double v) = 0;

    virtual StateVec reset(std::uint64_t seed) = 0;
    virtual StepResult step(const StateVec& a) = 0;

    virtual std::unique_ptr<EnvSpec> clone() const = 0;
};

/// Minimal behavioral policy interface used by rollout; adapters for learned
/// policies live next to the training code.
class Actor {
  public:
    virtual ~Actor() = default;
    virtual StateVec act(const StateVec& s, Rng& rng) = 0;
};

struct Trajectory {
    std::vector<StateVec> states;  ///< length T+1 (includes the reset state)
    std::vector<StateVec> actions; ///< length T
    std::vector<double> rewards;   ///< length T
    std::vector<double> costs;     ///< length T
};

struct RolloutResult {
    double total_reward = 0.0; ///< undiscounted episode total
    double total_cost = 0.0;   ///< undiscounted episode total
    Trajectory traj;
};

/// Runs one episode to horizon or terminal. The seed drives both the env
/// reset and the actor's sampling stream (split deterministically).
RolloutResult rollout(EnvSpec& env, Actor& actor, std::uint64_t seed,
                      bool record_trajectory = true);

/// Convenience overload for learned Gaussian policies; deterministic=true
/// rolls out the mean action.
RolloutResult rollout(EnvSpec& env, GaussianPolicy& policy, bool deterministic,
                      std::uint64_t seed, bool record_trajectory = true);

/// Evenly spaced sweep of the perturbation parameter across its test range;
/// for odd n_points the center entry carries the nominal value exactly.
/// Requires n_points >= 2.
std::vector<std::unique_ptr<EnvSpec>> make_test_suite(const EnvSpec& env,
                                                      int n_points);

/// 4-state, 2-action discrete constrained MDP exposed both behaviorally
/// (one-hot states, scalar action thresholded at 0) and as a DiscreteRCMDP
/// for exact tabular cross-checks. States: 0 fork, 1 safe leg, 2 risky leg
/// (unit cost), 3 goal; the perturbation is the slip probability.
class ChainEnv : public EnvSpec {
  public:
    static ChainEnv from_json_text(const std::string& text);

    const std::string& name() const override { return name_; }
    int state_dim() const override { return 4; }
    int action_dim() const override { return 1; }
    double action_low() const override { return -1.0; }
    double action_high() const override { return 1.0; }
    int horizon() const override { return horizon_; }
    double budget() const override { return budget_; }

    const PerturbationSpec& perturbation() const override { return perturb_; }
    double param() const override { return slip_; }
    void set_param(double v) override;

    StateVec reset(std::uint64_t seed) override;
    StepResult step(const StateVec& a) override;
    std::unique_ptr<EnvSpec> clone() const override;

    /// Tabular view with the current slip as the nominal kernel and an
    /// optimal-transport radius eps on every (s,a); gamma and the chain
    /// metric cost matrix come from the config.
    DiscreteRCMDP to_rcmdp(double eps) const;
    /// Constraint budget used with the tabular (discounted) view.
    double rcmdp_budget() const { return rcmdp_budget_; }
    double gamma_tabular() const { return gamma_; }

    /// Transition law P(s'|s, a) for cross-checks, row-normalized.
    Matrix kernel_row(int s, int a) const;

  private:
    ChainEnv() = default;

    std::string name_;
    int horizon_ = 0;
    double budget_ = 0.0;
    double rcmdp_budget_ = 0.0;
    double gamma_ = 0.0;
    double slip_ = 0.0;
    PerturbationSpec perturb_;

    int state_ = 0;
    Rng rng_{0};

    // reward[s][a], cost[s][a], and the slip destination per state
    Matrix reward_{4, 2};
    Matrix cost_{4, 2};
    std::array<std::array<int, 2>, 4> intended_{};
    std::array<int, 4> slip_dest_{};
};

/// Velocity-damped double integrator on the plane: state (x, y, vx, vy),
/// action = acceleration in [-1,1]^2, v += dt*(a/m - damping*v),
/// pos += dt*v clipped to the box. Reward exp(-||pos-goal||); unit cost
/// inside a fixed hazard disk between start and goal. The perturbation is
/// the mass m. Reset jitters the start position; dynamics are deterministic.
class PointGoalEnv : public EnvSpec {
  public:
    static PointGoalEnv from_json_text(const std::string& text);

    const std::string& name() const override { return name_; }
    int state_dim() const override { return 4; }
    int action_dim() const override { return 2; }
    double action_low() const override { return -1.0; }
    double action_high() const override { return 1.0; }
    int horizon() const override { return horizon_; }
    double budget() const override { return budget_; }

    const PerturbationSpec& perturbation() const override { return perturb_; }
    double param() const override { return mass_; }
    void set_param(double v) override;

    StateVec reset(std::uint64_t seed) override;
    StepResult step(const StateVec& a) override;
    std::unique_ptr<EnvSpec> clone() const override;

    const StateVec& goal() const { return goal_; }
    const StateVec& hazard_center() const { return hazard_center_; }
    double hazard_radius() const { return hazard_radius_; }

  private:
    PointGoalEnv() = default;

    std::string name_;
    int horizon_ = 0;
    double budget_ = 0.0;
    double dt_ = 0.0;
    double damping_ = 0.0;
    double mass_ = 1.0;
    double pos_box_ = 0.0;
    double start_jitter_ = 0.0;
    StateVec start_{0.0, 0.0};
    StateVec goal_{0.0, 0.0};
    StateVec hazard_center_{0.0, 0.0};
    double hazard_radius_ = 0.0;
    PerturbationSpec perturb_;

    StateVec state_{0.0, 0.0, 0.0, 0.0};
};

/// Loads configs/<name>.json from the directory baked in at build time
/// (overridable via the OTPRL_CONFIG_DIR environment variable). Known names:
/// "chain", "pointgoal".
std::unique_ptr<EnvSpec> make_env(const std::string& name);

/// Reads a whole file; throws std::runtime_error when unreadable.
std::string read_text_file(const std::string& path);

/// Directory holding the shipped task configs for this build.
std::string config_dir();

} // namespace otprl
