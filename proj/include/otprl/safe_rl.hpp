#pragma once

/// Off-policy constrained training loop: replay buffer, twin reward/cost
/// critics with EMA targets, perturbation networks supplying worst-case
/// virtual next states for the critic targets, and two safe policy-update
/// rules (CRPO branch switching and a projected Lagrangian ascent).
///
/// Everything here is single-threaded and deterministic: one seeded stream
/// drives exploration, buffer sampling, and action sampling, so identical
/// configs produce bit-identical artifacts.

#include "otprl/common.hpp"
#include "otprl/envs.hpp"
#include "otprl/nn.hpp"
#include "otprl/otp.hpp"
#include "otprl/rng.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace otprl {

struct Transition {
    StateVec s;
    StateVec a;
    double r = 0.0;
    double c = 0.0;
    StateVec s_next;
    bool terminal = false; ///< true terminal; horizon timeouts stay false
};

/// Fixed-capacity ring buffer with seeded uniform sampling.
class ReplayBuffer {
  public:
    explicit ReplayBuffer(std::size_t capacity);

    void push(Transition t);
    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Transition& at(std::size_t i) const { return items_[i]; }

    /// n independent uniform index draws (with replacement).
    std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;
    std::vector<Transition> sample(std::size_t n, Rng& rng) const;

  private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<Transition> items_;
};

/// Reward and cost critics over concat(s, a), each with an EMA target copy
/// and its own optimizer.
struct CriticPair {
    CriticPair(int state_dim, int action_dim, const std::vector<int>& hidden,
               bool first_layer_norm, double lr, Rng& rng);

    int state_dim = 0;
    int action_dim = 0;
    Mlp q_r, q_c;
    Mlp q_r_target, q_c_target;
    Adam opt_r, opt_c;

    double value(Mlp& q, const StateVec& s, const StateVec& a);
};

/// The two perturbation networks of the robust variant (separate nets and
/// separate duals for the reward and cost directions).
struct PerturbPair {
    PerturbPair(int state_dim, int action_dim, const std::vector<int>& hidden,
                const OtpConfig& cfg, Rng& rng);

    PerturbationNet reward;
    PerturbationNet cost;
};

enum class Method { Crpo, Lagrange };

Method parse_method(const std::string& name);
std::string method_name(Method m);

struct TrainConfig {
    double gamma = 0.99;
    double tau = 5e-3;
    int batch = 256;
    int updates_per_step = 1;
    double lr_policy = 1e-4;
    double lr_critic = 1e-4;
    double lr_otp = 1e-4;
    double dual_lr_otp = 0.01;
    double eps_delta = 0.02;
    double budget = 0.0; ///< B, in undiscounted episode-total units
    Method method = Method::Crpo;
    double lagrange_dual_lr = 5e-6;
    bool robust = false;
    long total_steps = 0;
    std::uint64_t seed = 0;

    // loop shape (task configs override the desk-scale defaults)
    int warmup = 1000;             ///< uniform-random env steps before learning
    int constraint_samples = 4;    ///< k action samples in estimate_constraint
    int batch_eval_rollouts = 2;   ///< periodic nominal-env eval rollouts
    long eval_every = 10000;       ///< steps between eval rollouts (0 = off)
    long checkpoint_every = 25000; ///< steps between checkpoints (0 = final only)
    long curve_every = 500;        ///< steps between curve rows
    std::size_t replay_capacity = 200000;
    std::vector<int> hidden_policy{24, 24};
    std::vector<int> hidden_critic{24, 24};
    std::vector<int> hidden_otp{16, 16};
    double init_sigma = 0.3;
    /// Keeps the perturbation nets frozen at their zero initialization while
    /// still running the robust code path; exists to make the ablation
    /// contract testable (robust=false must be byte-identical to this).
    bool freeze_otp = false;

    void validate() const;
    std::string to_json_text() const;
    static TrainConfig from_json_text(const std::string& text);
};

/// One-sample Bellman backup at the (virtual) next state using the target
/// critics and the current policy; terminal transitions drop the bootstrap.
/// robust=true routes the next state through the matching perturbation net.
double bellman_target(ValueKind kind, const Transition& t, CriticPair& critics,
                      GaussianPolicy& policy, PerturbPair* pnets, bool robust,
                      double gamma, Rng& rng);

struct CriticLosses {
    double loss_r = 0.0; ///< mean squared error before the optimizer step
    double loss_c = 0.0;
};

/// One optimizer step per critic toward the stop-gradient targets, then the
/// EMA target update. Throws std::runtime_error on a non-finite loss.
CriticLosses critic_update(CriticPair& critics, const std::vector<Transition>& batch,
                           GaussianPolicy& policy, PerturbPair* pnets,
                           const TrainConfig& cfg, Rng& rng);

/// Monte Carlo estimate of E_s[E_{a~pi}[Q_c(s,a)]] over the batch states with
/// k action samples per state, using the live cost critic.
double estimate_constraint(const std::vector<Transition>& batch, CriticPair& critics,
                           GaussianPolicy& policy, int k, Rng& rng);

enum class Branch { Reward, Cost };

struct CrpoResult {
    Branch branch = Branch::Reward;
    double constraint_estimate = 0.0;
};

/// CRPO switching rule: reward ascent while the batch constraint estimate is
/// within budget, cost descent otherwise. One reparameterized step.
CrpoResult policy_update_crpo(GaussianPolicy& policy, const std::vector<Transition>& batch,
                              CriticPair& critics, const TrainConfig& cfg, Rng& rng,
                              Adam& opt);

struct LagrangeState {
    double lambda = 0.0;
};

struct LagrangeResult {
    double constraint_estimate = 0.0;
    double lambda_after = 0.0;
};

/// Ascent on E[Q_r] - lambda*(E[Q_c] - B) with the pre-update multiplier,
/// then the projected dual step lambda <- max(0, lambda + lr*(estimate - B)).
LagrangeResult policy_update_lagrange(GaussianPolicy& policy,
                                      const std::vector<Transition>& batch,
                                      CriticPair& critics, LagrangeState& state,
                                      const TrainConfig& cfg, Rng& rng, Adam& opt);

struct TrainArtifacts {
    std::string curves_path;
    std::vector<std::string> checkpoint_paths; ///< periodic + final (last entry)
    long steps_completed = 0;
    bool halted_on_nan = false;
    /// Mean undiscounted cost of the last up-to-10 completed training
    /// episodes in the nominal env ("final training cost").
    double final_train_cost = 0.0;
    double final_train_reward = 0.0;
};

/// Runs Algorithm-1-style training on the env's nominal parameter, writing
/// curves.csv and checkpoints under outdir. On NaN the loop halts and the
/// last good checkpoint is retained.
/// run_tag, when non-empty, is copied into the manifest column of every
/// curves row so artifacts can be traced back to their run manifest.
TrainArtifacts train(EnvSpec& env, const TrainConfig& cfg, const std::string& outdir,
                     const std::string& run_tag = "");

/// Reconstructs policy/critics/perturbation nets from a training checkpoint.
struct Agent {
    TrainConfig cfg;
    int state_dim = 0;
    int action_dim = 0;
    GaussianPolicy policy;
    CriticPair critics;
    std::optional<PerturbPair> pnets;
    LagrangeState lagrange;
    long step = 0;

    Agent(int state_dim, int action_dim, const TrainConfig& cfg, Rng& rng);
    Checkpoint to_checkpoint(const std::string& task) const;
    static Agent from_checkpoint(const Checkpoint& ck);
};

} // namespace otprl
