#pragma once

#include "otprl/common.hpp"
#include "otprl/rng.hpp"

#include <string>
#include <utility>
#include <vector>

namespace otprl {

/// Architecture of a feed-forward network: sizes[0] inputs, sizes.back()
/// outputs, ELU on hidden layers, linear output. When first_layer_norm is
/// set, the first linear layer is followed by layer normalization (learned
/// scale/shift) and tanh instead of ELU.
struct MlpConfig {
    std::vector<int> sizes;
    bool first_layer_norm = false;
};

/// Minimal dense network with analytic backprop. All parameters live in one
/// flat vector (layer order: W row-major, b, then norm scale/shift for the
/// first layer when enabled). backward() consumes the activations recorded
/// by the most recent forward() and accumulates parameter gradients.
class Mlp {
  public:
    Mlp(MlpConfig config, Rng& rng);

    const MlpConfig& config() const { return config_; }
    std::size_t n_params() const { return params_.size(); }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::vector<double>& grad() { return grad_; }
    const std::vector<double>& grad() const { return grad_; }
    void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

    std::vector<double> forward(const std::vector<double>& x);

    /// Returns d(upstream . output)/d(input); adds the corresponding
    /// parameter gradients into grad().
    std::vector<double> backward(const std::vector<double>& upstream);

    /// Flat offset of layer l's weight block (b follows it; the first-layer
    /// norm scale/shift follow b of layer 0). Used by heads that need
    /// targeted initialization.
    std::size_t weight_offset(std::size_t layer) const { return w_off_[layer]; }
    std::size_t bias_offset(std::size_t layer) const { return b_off_[layer]; }

  private:
    MlpConfig config_;
    std::vector<double> params_, grad_;
    std::vector<std::size_t> w_off_, b_off_;
    std::size_t norm_scale_off_ = 0, norm_shift_off_ = 0;

    // forward cache
    bool has_cache_ = false;
    std::vector<std::vector<double>> pre_;  ///< pre-activations per layer
    std::vector<std::vector<double>> post_; ///< inputs to each layer (post_[0] = x)
    std::vector<double> norm_u_;            ///< normalized first-layer units
    double norm_sigma_ = 1.0;               ///< sqrt(var + eps) of first layer
};

/// Diagonal-Gaussian policy head: the backbone outputs [mean, raw sigma] and
/// sigma = softplus(raw) + floor. Sampling is reparameterized so updates
/// can differentiate through the action.
class GaussianPolicy {
  public:
    /// Hidden sizes exclude the input/output layers. The covariance head is
    /// initialized so that sigma == init_sigma for every state.
    GaussianPolicy(int state_dim, int action_dim, const std::vector<int>& hidden,
                   bool first_layer_norm, double init_sigma, Rng& rng);

    int action_dim() const { return action_dim_; }
    Mlp& net() { return net_; }
    const Mlp& net() const { return net_; }

    struct Dist {
        std::vector<double> mean, sigma, raw;
    };
    /// Forward pass; caches activations for backward_action.
    Dist forward(const StateVec& s);

    struct Sample {
        std::vector<double> action;
        double log_prob = 0.0;
    };
    /// a = mean + sigma*noise with the standard-normal noise passed in for
    /// determinism; log_prob is the diagonal-Gaussian density at a.
    Sample sample_action(const StateVec& s, const std::vector<double>& noise);

    /// Pushes d(loss)/d(action) through the reparameterized sample of the
    /// most recent forward (with the given noise) into backbone gradients.
    void backward_action(const std::vector<double>& action_grad,
                         const std::vector<double>& noise);

    static constexpr double kSigmaFloor = 1e-6;

  private:
    int action_dim_;
    Mlp net_;
    Dist last_;
};

/// Adaptive-moment first-order optimizer (decay 0.9/0.999, epsilon 1e-8).
class Adam {
  public:
    Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);
    void step(std::vector<double>& params, const std::vector<double>& grad);
    double lr() const { return lr_; }

  private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<double> m_, v_;
};

/// theta_bar <- (1-tau) theta_bar + tau theta, elementwise.
void ema_update(std::vector<double>& shadow, const std::vector<double>& live, double tau);

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

/// Named parameter blobs with a JSON metadata header, written as a
/// versioned flat binary file (see docs/checkpoint_format.md).
struct Checkpoint {
    std::string meta_json; ///< serialized JSON object
    std::vector<std::pair<std::string, std::vector<double>>> tensors;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

} // namespace otprl
