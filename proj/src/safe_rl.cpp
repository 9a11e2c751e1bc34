#include "otprl/safe_rl.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace otprl {

namespace {

using nlohmann::json;

StateVec concat_sa(const StateVec& s, const StateVec& a) {
    StateVec x;
    x.reserve(s.size() + a.size());
    x.insert(x.end(), s.begin(), s.end());
    x.insert(x.end(), a.begin(), a.end());
    return x;
}

std::vector<double> draw_noise(int n, Rng& rng) {
    std::vector<double> z(n);
    for (double& v : z) v = rng.normal();
    return z;
}

/// V(x) = Q_target(x, mean_action(x)) with a stop-gradient through the
/// action: the perturbation chases the critic landscape in the state
/// argument only. Parameter gradients pushed into the target critic by the
/// backward pass are discarded.
class CriticValue : public ValueFn {
  public:
    CriticValue(Mlp& target_critic, GaussianPolicy& policy, int state_dim)
        : critic_(target_critic), policy_(policy), state_dim_(state_dim) {}

    double value_grad(const StateVec& x, StateVec& grad) override {
        const GaussianPolicy::Dist dist = policy_.forward(x);
        const double v = critic_.forward(concat_sa(x, dist.mean))[0];
        const std::vector<double> gin = critic_.backward({1.0});
        critic_.zero_grad();
        grad.assign(gin.begin(), gin.begin() + state_dim_);
        return v;
    }

  private:
    Mlp& critic_;
    GaussianPolicy& policy_;
    int state_dim_;
};

std::vector<OtpSample> to_otp_batch(const std::vector<Transition>& batch) {
    std::vector<OtpSample> out(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        out[i].s = batch[i].s;
        out[i].a = batch[i].a;
        out[i].s_hat_prime = batch[i].s_next;
    }
    return out;
}

std::uint64_t episode_seed(std::uint64_t base, long episode) {
    return base ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(episode + 1));
}

bool is_nonfinite_error(const std::runtime_error& e) {
    return std::string(e.what()).find("non-finite") != std::string::npos;
}

} // namespace

// ---------------------------------------------------------------------------
// ReplayBuffer

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    require(capacity >= 1, "replay capacity must be positive");
    items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
    if (items_.size() < capacity_) {
        items_.push_back(std::move(t));
    } else {
        items_[next_] = std::move(t); // overwrite the oldest slot
        next_ = (next_ + 1) % capacity_;
    }
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng) const {
    require(!items_.empty(), "cannot sample from an empty buffer");
    std::vector<std::size_t> idx(n);
    for (std::size_t& i : idx) i = rng.uniform_int(items_.size());
    return idx;
}

std::vector<Transition> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
    std::vector<Transition> out;
    out.reserve(n);
    for (std::size_t i : sample_indices(n, rng)) out.push_back(items_[i]);
    return out;
}

// ---------------------------------------------------------------------------
// CriticPair / PerturbPair

namespace {
MlpConfig critic_config(int state_dim, int action_dim, const std::vector<int>& hidden,
                        bool norm) {
    MlpConfig c;
    c.sizes.push_back(state_dim + action_dim);
    c.sizes.insert(c.sizes.end(), hidden.begin(), hidden.end());
    c.sizes.push_back(1);
    c.first_layer_norm = norm;
    return c;
}
} // namespace

CriticPair::CriticPair(int state_dim_in, int action_dim_in,
                       const std::vector<int>& hidden, bool first_layer_norm,
                       double lr, Rng& rng)
    : state_dim(state_dim_in), action_dim(action_dim_in),
      q_r(critic_config(state_dim_in, action_dim_in, hidden, first_layer_norm), rng),
      q_c(critic_config(state_dim_in, action_dim_in, hidden, first_layer_norm), rng),
      q_r_target(q_r), q_c_target(q_c), opt_r(q_r.n_params(), lr),
      opt_c(q_c.n_params(), lr) {}

double CriticPair::value(Mlp& q, const StateVec& s, const StateVec& a) {
    return q.forward(concat_sa(s, a))[0];
}

PerturbPair::PerturbPair(int state_dim, int action_dim, const std::vector<int>& hidden,
                         const OtpConfig& cfg, Rng& rng)
    : reward(state_dim, action_dim, hidden, PerturbKind::Reward, cfg, rng),
      cost(state_dim, action_dim, hidden, PerturbKind::Cost, cfg, rng) {}

// ---------------------------------------------------------------------------
// TrainConfig

Method parse_method(const std::string& name) {
    if (name == "crpo") return Method::Crpo;
    if (name == "lagrange") return Method::Lagrange;
    throw std::runtime_error("unknown method: " + name + " (expected crpo|lagrange)");
}

std::string method_name(Method m) { return m == Method::Crpo ? "crpo" : "lagrange"; }

void TrainConfig::validate() const {
    require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0,1)");
    require(tau > 0.0 && tau <= 1.0, "tau must lie in (0,1]");
    require(batch >= 1, "batch must be positive");
    require(updates_per_step >= 0, "updates_per_step must be nonnegative");
    for (double lr : {lr_policy, lr_critic, lr_otp, dual_lr_otp, lagrange_dual_lr})
        require(lr > 0.0, "all learning rates must be positive");
    require(eps_delta > 0.0, "eps_delta must be positive");
    require(budget >= 0.0, "budget must be nonnegative");
    require(total_steps >= 0, "total_steps must be nonnegative");
    require(warmup >= 0, "warmup must be nonnegative");
    require(constraint_samples >= 1, "constraint_samples must be positive");
    require(replay_capacity >= static_cast<std::size_t>(batch),
            "replay capacity must hold at least one batch");
    require(init_sigma > 0.0, "init_sigma must be positive");
}

std::string TrainConfig::to_json_text() const {
    json j;
    j["gamma"] = gamma;
    j["tau"] = tau;
    j["batch"] = batch;
    j["updates_per_step"] = updates_per_step;
    j["lr_policy"] = lr_policy;
    j["lr_critic"] = lr_critic;
    j["lr_otp"] = lr_otp;
    j["dual_lr_otp"] = dual_lr_otp;
    j["eps_delta"] = eps_delta;
    j["budget"] = budget;
    j["method"] = method_name(method);
    j["lagrange_dual_lr"] = lagrange_dual_lr;
    j["robust"] = robust;
    j["total_steps"] = total_steps;
    j["seed"] = seed;
    j["warmup"] = warmup;
    j["constraint_samples"] = constraint_samples;
    j["batch_eval_rollouts"] = batch_eval_rollouts;
    j["eval_every"] = eval_every;
    j["checkpoint_every"] = checkpoint_every;
    j["curve_every"] = curve_every;
    j["replay_capacity"] = replay_capacity;
    j["hidden_policy"] = hidden_policy;
    j["hidden_critic"] = hidden_critic;
    j["hidden_otp"] = hidden_otp;
    j["init_sigma"] = init_sigma;
    j["freeze_otp"] = freeze_otp;
    return j.dump();
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
    const json j = json::parse(text);
    TrainConfig c;
    c.gamma = j.at("gamma").get<double>();
    c.tau = j.at("tau").get<double>();
    c.batch = j.at("batch").get<int>();
    c.updates_per_step = j.at("updates_per_step").get<int>();
    c.lr_policy = j.at("lr_policy").get<double>();
    c.lr_critic = j.at("lr_critic").get<double>();
    c.lr_otp = j.at("lr_otp").get<double>();
    c.dual_lr_otp = j.at("dual_lr_otp").get<double>();
    c.eps_delta = j.at("eps_delta").get<double>();
    c.budget = j.at("budget").get<double>();
    c.method = parse_method(j.at("method").get<std::string>());
    c.lagrange_dual_lr = j.at("lagrange_dual_lr").get<double>();
    c.robust = j.at("robust").get<bool>();
    c.total_steps = j.at("total_steps").get<long>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.warmup = j.at("warmup").get<int>();
    c.constraint_samples = j.at("constraint_samples").get<int>();
    c.batch_eval_rollouts = j.at("batch_eval_rollouts").get<int>();
    c.eval_every = j.at("eval_every").get<long>();
    c.checkpoint_every = j.at("checkpoint_every").get<long>();
    c.curve_every = j.at("curve_every").get<long>();
    c.replay_capacity = j.at("replay_capacity").get<std::size_t>();
    c.hidden_policy = j.at("hidden_policy").get<std::vector<int>>();
    c.hidden_critic = j.at("hidden_critic").get<std::vector<int>>();
    c.hidden_otp = j.at("hidden_otp").get<std::vector<int>>();
    c.init_sigma = j.at("init_sigma").get<double>();
    c.freeze_otp = j.at("freeze_otp").get<bool>();
    return c;
}

// ---------------------------------------------------------------------------
// targets / critic learning

double bellman_target(ValueKind kind, const Transition& t, CriticPair& critics,
                      GaussianPolicy& policy, PerturbPair* pnets, bool robust,
                      double gamma, Rng& rng) {
    const double immediate = kind == ValueKind::Reward ? t.r : t.c;
    if (t.terminal || gamma == 0.0) return immediate;
    StateVec next = t.s_next;
    if (robust) {
        require(pnets != nullptr, "robust targets need perturbation nets");
        PerturbationNet& pnet =
            kind == ValueKind::Reward ? pnets->reward : pnets->cost;
        next = apply_perturbation(pnet, t.s, t.a, t.s_next).s_tilde_prime;
    }
    const std::vector<double> noise = draw_noise(policy.action_dim(), rng);
    const GaussianPolicy::Sample a_next = policy.sample_action(next, noise);
    Mlp& target = kind == ValueKind::Reward ? critics.q_r_target : critics.q_c_target;
    const double v_next = target.forward(concat_sa(next, a_next.action))[0];
    return immediate + gamma * v_next;
}

CriticLosses critic_update(CriticPair& critics, const std::vector<Transition>& batch,
                           GaussianPolicy& policy, PerturbPair* pnets,
                           const TrainConfig& cfg, Rng& rng) {
    require(!batch.empty(), "critic_update needs a nonempty batch");
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    critics.q_r.zero_grad();
    critics.q_c.zero_grad();
    CriticLosses losses;
    for (const Transition& t : batch) {
        const double y_r = bellman_target(ValueKind::Reward, t, critics, policy,
                                          pnets, cfg.robust, cfg.gamma, rng);
        const double y_c = bellman_target(ValueKind::Cost, t, critics, policy,
                                          pnets, cfg.robust, cfg.gamma, rng);
        const StateVec xa = concat_sa(t.s, t.a);
        const double p_r = critics.q_r.forward(xa)[0];
        critics.q_r.backward({2.0 * (p_r - y_r) * inv_n});
        const double p_c = critics.q_c.forward(xa)[0];
        critics.q_c.backward({2.0 * (p_c - y_c) * inv_n});
        losses.loss_r += (p_r - y_r) * (p_r - y_r) * inv_n;
        losses.loss_c += (p_c - y_c) * (p_c - y_c) * inv_n;
    }
    if (!std::isfinite(losses.loss_r) || !std::isfinite(losses.loss_c))
        throw std::runtime_error("critic_update: non-finite loss, update aborted");
    critics.opt_r.step(critics.q_r.params(), critics.q_r.grad());
    critics.opt_c.step(critics.q_c.params(), critics.q_c.grad());
    ema_update(critics.q_r_target.params(), critics.q_r.params(), cfg.tau);
    ema_update(critics.q_c_target.params(), critics.q_c.params(), cfg.tau);
    return losses;
}

double estimate_constraint(const std::vector<Transition>& batch, CriticPair& critics,
                           GaussianPolicy& policy, int k, Rng& rng) {
    require(!batch.empty(), "estimate_constraint needs a nonempty batch");
    require(k >= 1, "estimate_constraint needs k >= 1");
    double acc = 0.0;
    for (const Transition& t : batch) {
        for (int j = 0; j < k; ++j) {
            const std::vector<double> noise = draw_noise(policy.action_dim(), rng);
            const GaussianPolicy::Sample a = policy.sample_action(t.s, noise);
            acc += critics.q_c.forward(concat_sa(t.s, a.action))[0];
        }
    }
    return acc / (static_cast<double>(batch.size()) * k);
}

namespace {

/// One reparameterized step on sign * E[Q(s, pi(s))] (sign=-1 maximizes).
/// For the Lagrangian, both critics contribute with their own scales.
void reparam_policy_step(GaussianPolicy& policy, const std::vector<Transition>& batch,
                         CriticPair& critics, double scale_r, double scale_c,
                         Rng& rng, Adam& opt) {
    const int state_dim = critics.state_dim;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    policy.net().zero_grad();
    for (const Transition& t : batch) {
        const std::vector<double> noise = draw_noise(policy.action_dim(), rng);
        const GaussianPolicy::Sample sample = policy.sample_action(t.s, noise);
        const StateVec xa = concat_sa(t.s, sample.action);
        std::vector<double> ga(policy.action_dim(), 0.0);
        if (scale_r != 0.0) {
            critics.q_r.forward(xa);
            const std::vector<double> gin = critics.q_r.backward({scale_r * inv_n});
            for (int i = 0; i < policy.action_dim(); ++i) ga[i] += gin[state_dim + i];
        }
        if (scale_c != 0.0) {
            critics.q_c.forward(xa);
            const std::vector<double> gin = critics.q_c.backward({scale_c * inv_n});
            for (int i = 0; i < policy.action_dim(); ++i) ga[i] += gin[state_dim + i];
        }
        policy.backward_action(ga, noise);
    }
    // the critics were only used as a differentiable landscape here
    critics.q_r.zero_grad();
    critics.q_c.zero_grad();
    if (!all_finite(policy.net().grad()))
        throw std::runtime_error("policy update: non-finite gradient, update aborted");
    opt.step(policy.net().params(), policy.net().grad());
}

} // namespace

CrpoResult policy_update_crpo(GaussianPolicy& policy, const std::vector<Transition>& batch,
                              CriticPair& critics, const TrainConfig& cfg, Rng& rng,
                              Adam& opt) {
    CrpoResult res;
    res.constraint_estimate =
        estimate_constraint(batch, critics, policy, cfg.constraint_samples, rng);
    res.branch = res.constraint_estimate <= cfg.budget ? Branch::Reward : Branch::Cost;
    if (res.branch == Branch::Reward)
        reparam_policy_step(policy, batch, critics, -1.0, 0.0, rng, opt);
    else
        reparam_policy_step(policy, batch, critics, 0.0, 1.0, rng, opt);
    return res;
}

LagrangeResult policy_update_lagrange(GaussianPolicy& policy,
                                      const std::vector<Transition>& batch,
                                      CriticPair& critics, LagrangeState& state,
                                      const TrainConfig& cfg, Rng& rng, Adam& opt) {
    // ascent with the pre-update multiplier, then the projected dual step
    reparam_policy_step(policy, batch, critics, -1.0, state.lambda, rng, opt);
    LagrangeResult res;
    res.constraint_estimate =
        estimate_constraint(batch, critics, policy, cfg.constraint_samples, rng);
    state.lambda = std::max(
        0.0, state.lambda + cfg.lagrange_dual_lr * (res.constraint_estimate - cfg.budget));
    res.lambda_after = state.lambda;
    return res;
}

// ---------------------------------------------------------------------------
// Agent / checkpoints

Agent::Agent(int state_dim_in, int action_dim_in, const TrainConfig& cfg_in, Rng& rng)
    : cfg(cfg_in), state_dim(state_dim_in), action_dim(action_dim_in),
      policy(state_dim_in, action_dim_in, cfg_in.hidden_policy,
             /*first_layer_norm=*/true, cfg_in.init_sigma, rng),
      critics(state_dim_in, action_dim_in, cfg_in.hidden_critic,
              /*first_layer_norm=*/true, cfg_in.lr_critic, rng) {
    // The perturbation nets draw from a spawned child stream so that the
    // caller's stream advances identically whether or not they exist; the
    // robust-off and robust-frozen configurations must see the same
    // exploration and batch draws bit for bit.
    Rng otp_rng = rng.spawn();
    if (cfg.robust) {
        OtpConfig ocfg;
        ocfg.eps_delta = cfg.eps_delta;
        pnets.emplace(state_dim, action_dim, cfg.hidden_otp, ocfg, otp_rng);
    }
}

Checkpoint Agent::to_checkpoint(const std::string& task) const {
    json meta;
    meta["format_version"] = 1;
    meta["kind"] = "agent";
    meta["task"] = task;
    meta["state_dim"] = state_dim;
    meta["action_dim"] = action_dim;
    meta["step"] = step;
    meta["config"] = json::parse(cfg.to_json_text());
    Checkpoint ck;
    ck.meta_json = meta.dump();
    ck.tensors.emplace_back("policy", policy.net().params());
    ck.tensors.emplace_back("q_r", critics.q_r.params());
    ck.tensors.emplace_back("q_c", critics.q_c.params());
    ck.tensors.emplace_back("q_r_target", critics.q_r_target.params());
    ck.tensors.emplace_back("q_c_target", critics.q_c_target.params());
    ck.tensors.emplace_back("lagrange", std::vector<double>{lagrange.lambda});
    if (pnets) {
        ck.tensors.emplace_back("otp_r", pnets->reward.net().params());
        ck.tensors.emplace_back("otp_c", pnets->cost.net().params());
        ck.tensors.emplace_back(
            "otp_lambdas", std::vector<double>{pnets->reward.lambda(),
                                               pnets->cost.lambda()});
    }
    return ck;
}

Agent Agent::from_checkpoint(const Checkpoint& ck) {
    const json meta = json::parse(ck.meta_json);
    require(meta.at("kind").get<std::string>() == "agent",
            "checkpoint is not an agent checkpoint");
    const TrainConfig cfg = TrainConfig::from_json_text(meta.at("config").dump());
    Rng rng(0); // construction randomness is overwritten below
    Agent agent(meta.at("state_dim").get<int>(), meta.at("action_dim").get<int>(), cfg,
                rng);
    agent.step = meta.at("step").get<long>();
    auto find = [&](const std::string& name) -> const std::vector<double>& {
        for (const auto& [key, blob] : ck.tensors)
            if (key == name) return blob;
        throw std::runtime_error("checkpoint missing tensor: " + name);
    };
    auto load_into = [&](Mlp& net, const std::string& name) {
        const std::vector<double>& blob = find(name);
        require(blob.size() == net.n_params(),
                "checkpoint tensor size mismatch: " + name);
        net.params() = blob;
    };
    load_into(agent.policy.net(), "policy");
    load_into(agent.critics.q_r, "q_r");
    load_into(agent.critics.q_c, "q_c");
    load_into(agent.critics.q_r_target, "q_r_target");
    load_into(agent.critics.q_c_target, "q_c_target");
    agent.lagrange.lambda = find("lagrange").at(0);
    if (agent.pnets) {
        load_into(agent.pnets->reward.net(), "otp_r");
        load_into(agent.pnets->cost.net(), "otp_c");
        const std::vector<double>& duals = find("otp_lambdas");
        require(duals.size() == 2, "otp_lambdas must hold two duals");
        agent.pnets->reward.set_lambda(duals[0]);
        agent.pnets->cost.set_lambda(duals[1]);
    }
    return agent;
}

// ---------------------------------------------------------------------------
// training loop

namespace {

constexpr const char* kCurvesSchema = "curves_v1";

std::string csv_cell(double v) { return format_double(v); }

struct EpisodeWindow {
    std::deque<std::pair<double, double>> last; // (reward, cost), newest back

    void add(double r, double c) {
        last.emplace_back(r, c);
        if (last.size() > 10) last.pop_front();
    }
    bool empty() const { return last.empty(); }
    double mean_reward() const {
        double s = 0.0;
        for (const auto& [r, c] : last) s += r;
        return s / last.size();
    }
    double mean_cost() const {
        double s = 0.0;
        for (const auto& [r, c] : last) s += c;
        return s / last.size();
    }
};

std::string checkpoint_name(long step) {
    std::ostringstream ss;
    ss << "ckpt_";
    ss.width(10);
    ss.fill('0');
    ss << step;
    ss << ".bin";
    return ss.str();
}

} // namespace

TrainArtifacts train(EnvSpec& env, const TrainConfig& cfg, const std::string& outdir,
                     const std::string& run_tag) {
    cfg.validate();
    require(!outdir.empty(), "train needs an output directory");
    std::filesystem::create_directories(outdir);

    Rng rng(cfg.seed);
    Agent agent(env.state_dim(), env.action_dim(), cfg, rng);
    Adam policy_opt(agent.policy.net().n_params(), cfg.lr_policy);
    ReplayBuffer buffer(cfg.replay_capacity);

    TrainArtifacts artifacts;
    artifacts.curves_path = outdir + "/curves.csv";
    std::ofstream csv(artifacts.curves_path, std::ios::binary);
    require(csv.good(), "cannot write " + artifacts.curves_path);
    csv << "schema,step,episode,branch,constraint_estimate,loss_r,loss_c,"
           "budget_r,budget_c,lambda_otp_r,lambda_otp_c,lambda_policy,"
           "ep_reward,ep_cost,eval_reward,eval_cost,manifest\n";

    long last_checkpoint_step = -1;
    auto write_checkpoint = [&](long step) {
        if (step == last_checkpoint_step) return;
        const std::string path = outdir + "/" + checkpoint_name(step);
        agent.step = step;
        agent.to_checkpoint(env.name()).save(path);
        artifacts.checkpoint_paths.push_back(path);
        last_checkpoint_step = step;
    };
    write_checkpoint(0);

    long episode = 0;
    int t_ep = 0;
    double ep_r = 0.0, ep_c = 0.0;
    EpisodeWindow window;
    StateVec s = env.reset(episode_seed(cfg.seed, episode));

    // last-update diagnostics for the curve rows
    std::string branch_label;
    double constraint_estimate = 0.0;
    CriticLosses losses;
    OtpUpdateStats otp_stats_r, otp_stats_c;
    bool have_update = false;

    long t = 0;
    for (; t < cfg.total_steps; ++t) {
        StateVec a(env.action_dim());
        if (t < cfg.warmup) {
            for (double& x : a) x = rng.uniform(env.action_low(), env.action_high());
        } else {
            const std::vector<double> noise = draw_noise(env.action_dim(), rng);
            a = agent.policy.sample_action(s, noise).action;
        }
        const StepResult sr = env.step(a);
        buffer.push({s, a, sr.reward, sr.cost, sr.s_next, sr.terminal});
        ep_r += sr.reward;
        ep_c += sr.cost;
        ++t_ep;
        if (sr.terminal || t_ep >= env.horizon()) {
            window.add(ep_r, ep_c);
            ++episode;
            t_ep = 0;
            ep_r = ep_c = 0.0;
            s = env.reset(episode_seed(cfg.seed, episode));
        } else {
            s = sr.s_next;
        }

        if (t + 1 > cfg.warmup && buffer.size() >= static_cast<std::size_t>(cfg.batch)) {
            try {
                for (int u = 0; u < cfg.updates_per_step; ++u) {
                    const std::vector<Transition> batch = buffer.sample(cfg.batch, rng);
                    if (cfg.robust && agent.pnets && !cfg.freeze_otp) {
                        const std::vector<OtpSample> obatch = to_otp_batch(batch);
                        CriticValue vr(agent.critics.q_r_target, agent.policy,
                                       agent.state_dim);
                        otp_stats_r = update_otp(agent.pnets->reward, obatch, vr,
                                                 cfg.lr_otp, cfg.dual_lr_otp);
                        CriticValue vc(agent.critics.q_c_target, agent.policy,
                                       agent.state_dim);
                        otp_stats_c = update_otp(agent.pnets->cost, obatch, vc,
                                                 cfg.lr_otp, cfg.dual_lr_otp);
                    }
                    losses = critic_update(agent.critics, batch, agent.policy,
                                           agent.pnets ? &*agent.pnets : nullptr, cfg,
                                           rng);
                    if (cfg.method == Method::Crpo) {
                        const CrpoResult res = policy_update_crpo(
                            agent.policy, batch, agent.critics, cfg, rng, policy_opt);
                        branch_label = res.branch == Branch::Reward ? "reward" : "cost";
                        constraint_estimate = res.constraint_estimate;
                    } else {
                        const LagrangeResult res = policy_update_lagrange(
                            agent.policy, batch, agent.critics, agent.lagrange, cfg,
                            rng, policy_opt);
                        branch_label = "lagrange";
                        constraint_estimate = res.constraint_estimate;
                    }
                    have_update = true;
                }
            } catch (const std::runtime_error& e) {
                if (!is_nonfinite_error(e)) throw;
                artifacts.halted_on_nan = true;
            }
        }
        if (artifacts.halted_on_nan) break;

        const long step = t + 1;
        if (cfg.curve_every > 0 && step % cfg.curve_every == 0 && have_update) {
            std::string eval_r_cell, eval_c_cell;
            if (cfg.eval_every > 0 && step % cfg.eval_every == 0 &&
                cfg.batch_eval_rollouts > 0) {
                auto eval_env = env.clone();
                double er = 0.0, ec = 0.0;
                for (int i = 0; i < cfg.batch_eval_rollouts; ++i) {
                    const RolloutResult rr = rollout(
                        *eval_env, agent.policy, /*deterministic=*/true,
                        episode_seed(cfg.seed ^ 0xE7A1ULL, step + i), false);
                    er += rr.total_reward;
                    ec += rr.total_cost;
                }
                eval_r_cell = csv_cell(er / cfg.batch_eval_rollouts);
                eval_c_cell = csv_cell(ec / cfg.batch_eval_rollouts);
            }
            csv << kCurvesSchema << ',' << step << ',' << episode << ','
                << branch_label << ',' << csv_cell(constraint_estimate) << ','
                << csv_cell(losses.loss_r) << ',' << csv_cell(losses.loss_c) << ',';
            if (cfg.robust && agent.pnets) {
                const int n = agent.state_dim;
                csv << csv_cell(otp_stats_r.mean_sq_norm / n) << ','
                    << csv_cell(otp_stats_c.mean_sq_norm / n) << ','
                    << csv_cell(agent.pnets->reward.lambda()) << ','
                    << csv_cell(agent.pnets->cost.lambda()) << ',';
            } else {
                csv << ",,,,";
            }
            csv << csv_cell(agent.lagrange.lambda) << ',';
            if (!window.empty())
                csv << csv_cell(window.mean_reward()) << ','
                    << csv_cell(window.mean_cost());
            else
                csv << ',';
            csv << ',' << eval_r_cell << ',' << eval_c_cell << ',' << run_tag << '\n';
        }
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
            step < cfg.total_steps)
            write_checkpoint(step);
    }

    artifacts.steps_completed = t;
    if (!artifacts.halted_on_nan) write_checkpoint(cfg.total_steps);
    if (!window.empty()) {
        artifacts.final_train_reward = window.mean_reward();
        artifacts.final_train_cost = window.mean_cost();
    }
    return artifacts;
}

} // namespace otprl
