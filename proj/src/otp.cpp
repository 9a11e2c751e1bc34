#include "otprl/otp.hpp"

#include <cmath>
#include <cstddef>

namespace otprl {

PerturbationNet::PerturbationNet(int state_dim, int action_dim,
                                 const std::vector<int>& hidden, PerturbKind kind,
                                 const OtpConfig& config, Rng& rng)
    : state_dim_(state_dim), action_dim_(action_dim), kind_(kind), config_(config),
      lambda_(config.lambda_init), net_(
                                       [&] {
                                           MlpConfig cfg;
                                           cfg.sizes.push_back(2 * state_dim + action_dim);
                                           for (int h : hidden) cfg.sizes.push_back(h);
                                           cfg.sizes.push_back(state_dim);
                                           return cfg;
                                       }(),
                                       rng) {
    require(config.eps_delta > 0.0, "PerturbationNet: eps_delta must be > 0");
    require(config.lambda_init >= 0.0, "PerturbationNet: lambda_init must be >= 0");
    // zero output layer: g_delta starts as the identity map
    const std::size_t last = net_.config().sizes.size() - 2;
    const int n_in = net_.config().sizes[last];
    for (int o = 0; o < state_dim; ++o) {
        for (int i = 0; i < n_in; ++i)
            net_.params()[net_.weight_offset(last) + static_cast<std::size_t>(o) * n_in + i] =
                0.0;
        net_.params()[net_.bias_offset(last) + o] = 0.0;
    }
}

std::vector<double> PerturbationNet::delta(const StateVec& s, const std::vector<double>& a,
                                           const StateVec& s_hat_prime) {
    require(s.size() == static_cast<std::size_t>(state_dim_) &&
                s_hat_prime.size() == static_cast<std::size_t>(state_dim_) &&
                a.size() == static_cast<std::size_t>(action_dim_),
            "PerturbationNet::delta: dimension mismatch");
    std::vector<double> input;
    input.reserve(2 * state_dim_ + action_dim_);
    input.insert(input.end(), s.begin(), s.end());
    input.insert(input.end(), a.begin(), a.end());
    for (int i = 0; i < state_dim_; ++i) input.push_back(s_hat_prime[i] - s[i]);

    last_raw_ = net_.forward(input);
    last_frozen_.assign(state_dim_, 0);
    const double bound = 2.0 * config_.eps_delta;
    std::vector<double> d(state_dim_, 0.0);
    for (int i = 0; i < state_dim_; ++i) {
        if (s_hat_prime[i] == s[i]) {
            last_frozen_[i] = 1; // frozen coordinate: never perturbed
            continue;
        }
        switch (config_.clip) {
        case ClipMode::Soft: d[i] = bound * std::tanh(last_raw_[i] / bound); break;
        case ClipMode::Hard: d[i] = std::clamp(last_raw_[i], -bound, bound); break;
        case ClipMode::None: d[i] = last_raw_[i]; break;
        }
    }
    last_scale_ = 1.0;
    if (config_.per_sample_budget) {
        const double n = static_cast<double>(state_dim_);
        double sq = 0.0;
        for (double x : d) sq += x * x;
        const double cap = n * config_.eps_delta * config_.eps_delta;
        if (sq > cap) {
            last_scale_ = std::sqrt(cap / sq);
            for (double& x : d) x *= last_scale_;
        }
    }
    return d;
}

void PerturbationNet::backward_delta(const std::vector<double>& delta_grad) {
    require(last_raw_.size() == static_cast<std::size_t>(state_dim_),
            "PerturbationNet::backward_delta: no recorded delta pass");
    const double bound = 2.0 * config_.eps_delta;
    std::vector<double> upstream(state_dim_, 0.0);
    for (int i = 0; i < state_dim_; ++i) {
        if (last_frozen_[i]) continue;
        double g = delta_grad[i] * last_scale_; // rescale treated as constant
        switch (config_.clip) {
        case ClipMode::Soft: {
            const double t = std::tanh(last_raw_[i] / bound);
            g *= 1.0 - t * t;
            break;
        }
        case ClipMode::Hard:
            if (std::fabs(last_raw_[i]) >= bound) g = 0.0;
            break;
        case ClipMode::None: break;
        }
        upstream[i] = g;
    }
    net_.backward(upstream);
}

VirtualTransition apply_perturbation(PerturbationNet& pnet, const StateVec& s,
                                     const std::vector<double>& a,
                                     const StateVec& s_hat_prime) {
    VirtualTransition out;
    out.s = s;
    out.a = a;
    out.s_hat_prime = s_hat_prime;
    out.delta = pnet.delta(s, a, s_hat_prime);
    const std::size_t n = s.size();
    out.s_tilde_prime.resize(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        // computed as s_hat' + (s_hat'-s)*delta (same algebra as Eq-form
        // s + (s_hat'-s)(1+delta)) so that delta = 0 reproduces the observed
        // successor bit-for-bit
        out.s_tilde_prime[i] = out.delta[i] == 0.0
                                   ? s_hat_prime[i]
                                   : s_hat_prime[i] + (s_hat_prime[i] - s[i]) * out.delta[i];
        sq += out.delta[i] * out.delta[i];
    }
    out.cost = sq / static_cast<double>(n);
    return out;
}

OtpUpdateStats update_otp(PerturbationNet& pnet, const std::vector<OtpSample>& batch,
                          ValueFn& value_fn, double lr, double dual_lr) {
    require(!batch.empty(), "update_otp: empty batch");
    require(lr > 0.0 && dual_lr >= 0.0, "update_otp: bad learning rates");
    if (!pnet.opt_) {
        pnet.opt_ = std::make_unique<Adam>(pnet.net_.n_params(), lr);
        pnet.opt_lr_ = lr;
    }
    require(pnet.opt_lr_ == lr, "update_otp: lr must stay constant across updates");

    const double n = static_cast<double>(pnet.state_dim());
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const double sign = pnet.kind() == PerturbKind::Reward ? 1.0 : -1.0;

    pnet.net_.zero_grad();
    OtpUpdateStats stats;
    StateVec vgrad;
    for (const OtpSample& sample : batch) {
        const VirtualTransition vt =
            apply_perturbation(pnet, sample.s, sample.a, sample.s_hat_prime);
        stats.mean_value += inv_b * value_fn.value_grad(vt.s_tilde_prime, vgrad);
        stats.mean_sq_norm += inv_b * n * vt.cost;
        require(vgrad.size() == vt.s_tilde_prime.size(),
                "update_otp: value gradient dimension mismatch");
        // d loss / d delta_i = sign * dV/ds'_i * (s_hat'_i - s_i) / B
        //                      + lambda * 2 delta_i / B
        std::vector<double> dgrad(vt.delta.size());
        for (std::size_t i = 0; i < dgrad.size(); ++i)
            dgrad[i] = inv_b * (sign * vgrad[i] * (sample.s_hat_prime[i] - sample.s[i]) +
                                pnet.lambda() * 2.0 * vt.delta[i]);
        pnet.backward_delta(dgrad);
    }
    for (double g : pnet.net_.grad())
        if (!std::isfinite(g))
            throw std::runtime_error("update_otp: non-finite gradient, update aborted");

    pnet.opt_->step(pnet.net_.params(), pnet.net_.grad());
    const double violation = stats.mean_sq_norm - n * pnet.config().eps_delta *
                                                      pnet.config().eps_delta;
    pnet.set_lambda(pnet.lambda() + dual_lr * violation);
    stats.lambda_after = pnet.lambda();
    return stats;
}

double average_budget(PerturbationNet& pnet, const std::vector<OtpSample>& batch) {
    require(!batch.empty(), "average_budget: empty batch");
    double acc = 0.0;
    for (const OtpSample& sample : batch)
        acc += apply_perturbation(pnet, sample.s, sample.a, sample.s_hat_prime).cost;
    return acc / static_cast<double>(batch.size());
}

} // namespace otprl
