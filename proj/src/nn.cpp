#include "otprl/nn.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <numeric>

namespace otprl {

namespace {

double elu(double z) { return z > 0.0 ? z : std::expm1(z); }
double elu_grad(double z) { return z > 0.0 ? 1.0 : std::exp(z); }

constexpr double kNormEps = 1e-5;

} // namespace

Mlp::Mlp(MlpConfig config, Rng& rng) : config_(std::move(config)) {
    require(config_.sizes.size() >= 2, "Mlp: need at least input and output sizes");
    for (int s : config_.sizes) require(s > 0, "Mlp: layer sizes must be positive");
    const std::size_t n_layers = config_.sizes.size() - 1;
    std::size_t total = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        w_off_.push_back(total);
        total += static_cast<std::size_t>(config_.sizes[l]) * config_.sizes[l + 1];
        b_off_.push_back(total);
        total += config_.sizes[l + 1];
        if (l == 0 && config_.first_layer_norm) {
            norm_scale_off_ = total;
            total += config_.sizes[1];
            norm_shift_off_ = total;
            total += config_.sizes[1];
        }
    }
    params_.assign(total, 0.0);
    grad_.assign(total, 0.0);
    // fan-in-scaled uniform weights and biases
    for (std::size_t l = 0; l < n_layers; ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(config_.sizes[l]));
        const std::size_t n_w = static_cast<std::size_t>(config_.sizes[l]) * config_.sizes[l + 1];
        for (std::size_t k = 0; k < n_w; ++k) params_[w_off_[l] + k] = rng.uniform(-bound, bound);
        for (int k = 0; k < config_.sizes[l + 1]; ++k)
            params_[b_off_[l] + k] = rng.uniform(-bound, bound);
    }
    if (config_.first_layer_norm)
        for (int k = 0; k < config_.sizes[1]; ++k) params_[norm_scale_off_ + k] = 1.0;
}

std::vector<double> Mlp::forward(const std::vector<double>& x) {
    require(x.size() == static_cast<std::size_t>(config_.sizes[0]),
            "Mlp::forward: input dimension mismatch");
    require(all_finite(x), "Mlp::forward: non-finite input");
    const std::size_t n_layers = config_.sizes.size() - 1;
    pre_.assign(n_layers, {});
    post_.assign(n_layers + 1, {});
    post_[0] = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const int n_in = config_.sizes[l], n_out = config_.sizes[l + 1];
        std::vector<double> z(n_out);
        const double* w = params_.data() + w_off_[l];
        for (int o = 0; o < n_out; ++o) {
            double acc = params_[b_off_[l] + o];
            const double* row = w + static_cast<std::size_t>(o) * n_in;
            for (int i = 0; i < n_in; ++i) acc += row[i] * post_[l][i];
            z[o] = acc;
        }
        pre_[l] = z;
        std::vector<double> h(n_out);
        if (l == 0 && config_.first_layer_norm) {
            double mean = 0.0;
            for (double v : z) mean += v;
            mean /= n_out;
            double var = 0.0;
            for (double v : z) var += (v - mean) * (v - mean);
            var /= n_out;
            norm_sigma_ = std::sqrt(var + kNormEps);
            norm_u_.resize(n_out);
            for (int o = 0; o < n_out; ++o) {
                norm_u_[o] = (z[o] - mean) / norm_sigma_;
                h[o] = std::tanh(params_[norm_scale_off_ + o] * norm_u_[o] +
                                 params_[norm_shift_off_ + o]);
            }
        } else if (l + 1 < n_layers) {
            for (int o = 0; o < n_out; ++o) h[o] = elu(z[o]);
        } else {
            h = z; // linear output layer
        }
        post_[l + 1] = std::move(h);
    }
    has_cache_ = true;
    return post_.back();
}

std::vector<double> Mlp::backward(const std::vector<double>& upstream) {
    require(has_cache_, "Mlp::backward: no recorded forward pass");
    const std::size_t n_layers = config_.sizes.size() - 1;
    require(upstream.size() == static_cast<std::size_t>(config_.sizes.back()),
            "Mlp::backward: upstream dimension mismatch");
    std::vector<double> dh = upstream; // gradient w.r.t. layer output
    for (std::size_t l = n_layers; l-- > 0;) {
        const int n_in = config_.sizes[l], n_out = config_.sizes[l + 1];
        std::vector<double> dz(n_out);
        if (l == 0 && config_.first_layer_norm) {
            // through tanh, then scale/shift, then the normalization itself
            std::vector<double> du(n_out);
            for (int o = 0; o < n_out; ++o) {
                const double t = post_[1][o]; // tanh output
                const double dy = dh[o] * (1.0 - t * t);
                grad_[norm_scale_off_ + o] += dy * norm_u_[o];
                grad_[norm_shift_off_ + o] += dy;
                du[o] = dy * params_[norm_scale_off_ + o];
            }
            double mean_du = 0.0, mean_du_u = 0.0;
            for (int o = 0; o < n_out; ++o) {
                mean_du += du[o];
                mean_du_u += du[o] * norm_u_[o];
            }
            mean_du /= n_out;
            mean_du_u /= n_out;
            for (int o = 0; o < n_out; ++o)
                dz[o] = (du[o] - mean_du - norm_u_[o] * mean_du_u) / norm_sigma_;
        } else if (l + 1 < n_layers) {
            for (int o = 0; o < n_out; ++o) dz[o] = dh[o] * elu_grad(pre_[l][o]);
        } else {
            dz = dh;
        }
        std::vector<double> dx(n_in, 0.0);
        const double* w = params_.data() + w_off_[l];
        double* gw = grad_.data() + w_off_[l];
        for (int o = 0; o < n_out; ++o) {
            grad_[b_off_[l] + o] += dz[o];
            const double* row = w + static_cast<std::size_t>(o) * n_in;
            double* grow = gw + static_cast<std::size_t>(o) * n_in;
            for (int i = 0; i < n_in; ++i) {
                grow[i] += dz[o] * post_[l][i];
                dx[i] += dz[o] * row[i];
            }
        }
        dh = std::move(dx);
    }
    return dh;
}

GaussianPolicy::GaussianPolicy(int state_dim, int action_dim,
                               const std::vector<int>& hidden, bool first_layer_norm,
                               double init_sigma, Rng& rng)
    : action_dim_(action_dim),
      net_([&] {
          MlpConfig cfg;
          cfg.sizes.push_back(state_dim);
          for (int h : hidden) cfg.sizes.push_back(h);
          cfg.sizes.push_back(2 * action_dim);
          cfg.first_layer_norm = first_layer_norm;
          return cfg;
      }(),
           rng) {
    require(init_sigma > kSigmaFloor, "GaussianPolicy: init_sigma must exceed the floor");
    // zero the covariance half of the output layer and pick the bias so that
    // softplus(bias) + floor == init_sigma for every state
    const std::size_t last = net_.config().sizes.size() - 2;
    const int n_in = net_.config().sizes[last];
    const double raw0 = std::log(std::expm1(init_sigma - kSigmaFloor));
    for (int o = action_dim_; o < 2 * action_dim_; ++o) {
        for (int i = 0; i < n_in; ++i)
            net_.params()[net_.weight_offset(last) + static_cast<std::size_t>(o) * n_in + i] =
                0.0;
        net_.params()[net_.bias_offset(last) + o] = raw0;
    }
}

GaussianPolicy::Dist GaussianPolicy::forward(const StateVec& s) {
    const std::vector<double> out = net_.forward(s);
    Dist d;
    d.mean.assign(out.begin(), out.begin() + action_dim_);
    d.raw.assign(out.begin() + action_dim_, out.end());
    d.sigma.resize(action_dim_);
    for (int i = 0; i < action_dim_; ++i) d.sigma[i] = softplus(d.raw[i]) + kSigmaFloor;
    last_ = d;
    return d;
}

GaussianPolicy::Sample GaussianPolicy::sample_action(const StateVec& s,
                                                     const std::vector<double>& noise) {
    require(noise.size() == static_cast<std::size_t>(action_dim_),
            "GaussianPolicy: noise dimension mismatch");
    const Dist d = forward(s);
    Sample out;
    out.action.resize(action_dim_);
    double logp = -0.5 * action_dim_ * std::log(2.0 * M_PI);
    for (int i = 0; i < action_dim_; ++i) {
        out.action[i] = d.mean[i] + d.sigma[i] * noise[i];
        logp -= std::log(d.sigma[i]) + 0.5 * noise[i] * noise[i];
    }
    out.log_prob = logp;
    return out;
}

void GaussianPolicy::backward_action(const std::vector<double>& action_grad,
                                     const std::vector<double>& noise) {
    require(last_.mean.size() == static_cast<std::size_t>(action_dim_),
            "GaussianPolicy: backward_action without forward");
    std::vector<double> upstream(2 * action_dim_);
    for (int i = 0; i < action_dim_; ++i) {
        upstream[i] = action_grad[i]; // through the mean
        // through sigma: d sigma/d raw = sigmoid(raw)
        const double sig_grad = 1.0 / (1.0 + std::exp(-last_.raw[i]));
        upstream[action_dim_ + i] = action_grad[i] * noise[i] * sig_grad;
    }
    net_.backward(upstream);
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad) {
    require(params.size() == m_.size() && grad.size() == m_.size(),
            "Adam: size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        params[i] -= lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
    }
}

void ema_update(std::vector<double>& shadow, const std::vector<double>& live, double tau) {
    require(tau > 0.0 && tau <= 1.0, "ema_update: tau must lie in (0, 1]");
    require(shadow.size() == live.size(), "ema_update: size mismatch");
    for (std::size_t i = 0; i < shadow.size(); ++i)
        shadow[i] = (1.0 - tau) * shadow[i] + tau * live[i];
}

namespace {
constexpr char kMagic[4] = {'O', 'T', 'P', 'N'};
constexpr std::uint32_t kVersion = 1;

void write_u32(FILE* f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    require(std::fwrite(b, 1, 4, f) == 4, "checkpoint: write failed");
}

std::uint32_t read_u32(FILE* f) {
    unsigned char b[4];
    require(std::fread(b, 1, 4, f) == 4, "checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}
} // namespace

void Checkpoint::save(const std::string& path) const {
    FILE* f = std::fopen(path.c_str(), "wb");
    require(f != nullptr, "checkpoint: cannot open for writing: " + path);
    std::fwrite(kMagic, 1, 4, f);
    write_u32(f, kVersion);
    write_u32(f, static_cast<std::uint32_t>(meta_json.size()));
    std::fwrite(meta_json.data(), 1, meta_json.size(), f);
    write_u32(f, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, data] : tensors) {
        write_u32(f, static_cast<std::uint32_t>(name.size()));
        std::fwrite(name.data(), 1, name.size(), f);
        write_u32(f, static_cast<std::uint32_t>(data.size()));
        std::fwrite(data.data(), sizeof(double), data.size(), f);
    }
    std::fclose(f);
}

Checkpoint Checkpoint::load(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    require(f != nullptr, "checkpoint: cannot open for reading: " + path);
    char magic[4];
    require(std::fread(magic, 1, 4, f) == 4 && std::memcmp(magic, kMagic, 4) == 0,
            "checkpoint: bad magic");
    require(read_u32(f) == kVersion, "checkpoint: unsupported version");
    Checkpoint ck;
    const std::uint32_t meta_len = read_u32(f);
    ck.meta_json.resize(meta_len);
    require(std::fread(ck.meta_json.data(), 1, meta_len, f) == meta_len,
            "checkpoint: truncated header");
    const std::uint32_t n_tensors = read_u32(f);
    for (std::uint32_t k = 0; k < n_tensors; ++k) {
        const std::uint32_t name_len = read_u32(f);
        std::string name(name_len, '\0');
        require(std::fread(name.data(), 1, name_len, f) == name_len,
                "checkpoint: truncated tensor name");
        const std::uint32_t n = read_u32(f);
        std::vector<double> data(n);
        require(std::fread(data.data(), sizeof(double), n, f) == n,
                "checkpoint: truncated tensor data");
        ck.tensors.emplace_back(std::move(name), std::move(data));
    }
    std::fclose(f);
    return ck;
}

} // namespace otprl
