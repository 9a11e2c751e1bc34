#pragma once

#include "otprl/common.hpp"
#include "otprl/nn.hpp"
#include "otprl/rng.hpp"

#include <memory>
#include <vector>

namespace otprl {

enum class PerturbKind { Reward, Cost };

/// How raw network outputs are mapped into the clip box [-2 eps, 2 eps].
/// Soft (tanh-scaled) keeps gradients alive at the boundary and is the
/// training default; Hard and None exist for unit tests and probes.
enum class ClipMode { Soft, Hard, None };

struct OtpConfig {
    double eps_delta = 0.02;  ///< per-coordinate perturbation magnitude
    double lambda_init = 0.1; ///< initial transport-budget multiplier
    ClipMode clip = ClipMode::Soft;
    bool per_sample_budget = false; ///< optional per-sample cost rescaling
};

/// One observed transition fed to the perturbation machinery.
struct OtpSample {
    StateVec s;
    std::vector<double> a;
    StateVec s_hat_prime;
};

/// Virtual transition produced by g_delta: the perturbed successor used in
/// Bellman targets, never in data collection.
struct VirtualTransition {
    StateVec s;
    std::vector<double> a;
    StateVec s_hat_prime;
    StateVec s_tilde_prime;
    std::vector<double> delta; ///< effective (clipped, frozen-masked) delta
    double cost = 0.0;         ///< (1/n) * ||delta||^2
};

/// Differentiable state-value probe V(x) supplied by the caller; the deep
/// pipeline backs this with a critic plus one policy action sample.
class ValueFn {
  public:
    virtual ~ValueFn() = default;
    /// Returns V(x) and writes dV/dx into grad (resized by the callee).
    virtual double value_grad(const StateVec& x, StateVec& grad) = 0;
};

struct OtpUpdateStats {
    double mean_value = 0.0;   ///< E_batch[V(s_tilde_prime)]
    double mean_sq_norm = 0.0; ///< E_batch[||delta||^2]
    double lambda_after = 0.0;
};

/// Perturbation network delta(s, a, s_hat_prime) with its transport-budget
/// Lagrange multiplier. Coordinates the nominal transition leaves unchanged
/// are frozen exactly (the percentage cost makes moving them infinitely
/// expensive), and the zero-initialized output layer makes g_delta the
/// identity before the first update.
class PerturbationNet {
  public:
    PerturbationNet(int state_dim, int action_dim, const std::vector<int>& hidden,
                    PerturbKind kind, const OtpConfig& config, Rng& rng);

    PerturbKind kind() const { return kind_; }
    const OtpConfig& config() const { return config_; }
    double lambda() const { return lambda_; }
    void set_lambda(double v) { lambda_ = std::max(0.0, v); }
    int state_dim() const { return state_dim_; }
    Mlp& net() { return net_; }
    const Mlp& net() const { return net_; }

    /// Clipped, frozen-masked perturbation for one transition. Caches the
    /// forward pass so backward_delta can follow.
    std::vector<double> delta(const StateVec& s, const std::vector<double>& a,
                              const StateVec& s_hat_prime);

    /// Pushes d(loss)/d(delta) of the most recent delta() call through the
    /// clip into network parameter gradients.
    void backward_delta(const std::vector<double>& delta_grad);

  private:
    int state_dim_, action_dim_;
    PerturbKind kind_;
    OtpConfig config_;
    double lambda_;
    Mlp net_;
    std::vector<double> last_raw_;
    std::vector<char> last_frozen_;
    double last_scale_ = 1.0; ///< per-sample budget rescale (stop-gradient)

    friend OtpUpdateStats update_otp(PerturbationNet&, const std::vector<OtpSample>&,
                                     ValueFn&, double, double);
    std::unique_ptr<Adam> opt_;
    double opt_lr_ = 0.0;
};

/// g_delta(s, a, s_hat_prime): the worst-case virtual successor along with
/// its per-sample transport cost.
VirtualTransition apply_perturbation(PerturbationNet& pnet, const StateVec& s,
                                     const std::vector<double>& a,
                                     const StateVec& s_hat_prime);

/// One Lagrangian update (primal gradient step on the network, projected
/// dual ascent on lambda). Reward kind minimizes E[V(g_delta)], cost kind
/// maximizes it, both under the budget E[||delta||^2] <= n * eps_delta^2.
OtpUpdateStats update_otp(PerturbationNet& pnet, const std::vector<OtpSample>& batch,
                          ValueFn& value_fn, double lr, double dual_lr);

/// E_batch[||delta||^2] / n: average per-coordinate squared magnitude.
double average_budget(PerturbationNet& pnet, const std::vector<OtpSample>& batch);

} // namespace otprl
