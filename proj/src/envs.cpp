#include "otprl/envs.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace otprl {

namespace {

using nlohmann::json;

StateVec one_hot(int i, int n) {
    StateVec v(n, 0.0);
    v[i] = 1.0;
    return v;
}

double clamp(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

PerturbationSpec parse_perturbation(const json& j, const std::string& name) {
    PerturbationSpec p;
    p.name = name;
    p.nominal = j.at("nominal").get<double>();
    p.lo = j.at("range").at(0).get<double>();
    p.hi = j.at("range").at(1).get<double>();
    require(p.lo < p.hi, "perturbation range must be nonempty");
    require(std::fabs(p.nominal - 0.5 * (p.lo + p.hi)) <= 1e-12,
            "nominal perturbation value must sit at the center of the test range");
    return p;
}

} // namespace

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot read file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string config_dir() {
    if (const char* env = std::getenv("OTPRL_CONFIG_DIR")) return env;
    return OTPRL_CONFIG_DIR;
}

// ---------------------------------------------------------------------------
// ChainEnv

ChainEnv ChainEnv::from_json_text(const std::string& text) {
    const json j = json::parse(text);
    ChainEnv env;
    env.name_ = j.at("name").get<std::string>();
    env.horizon_ = j.at("horizon").get<int>();
    env.budget_ = j.at("budget").get<double>();
    env.rcmdp_budget_ = j.at("rcmdp_budget").get<double>();
    env.gamma_ = j.at("gamma_tabular").get<double>();
    env.perturb_ = parse_perturbation(j.at("slip"), "slip");
    env.slip_ = env.perturb_.nominal;
    require(env.horizon_ >= 0, "horizon must be nonnegative");
    require(env.perturb_.lo >= 0.0 && env.perturb_.hi <= 1.0,
            "slip range must lie in [0,1]");

    const json& r = j.at("rewards");
    const double r_fork = r.at("fork").get<double>();
    const double r_safe = r.at("safe_leg").get<double>();
    const double r_risky = r.at("risky_leg").get<double>();
    const double r_goal = r.at("goal").get<double>();
    for (double x : {r_fork, r_safe, r_risky, r_goal})
        require(x >= 0.0 && x <= 1.0, "chain rewards must lie in [0,1]");

    for (int a = 0; a < 2; ++a) {
        env.reward_(0, a) = r_fork;
        env.reward_(1, a) = r_safe;
        env.reward_(2, a) = r_risky;
        env.reward_(3, a) = r_goal;
        env.cost_(0, a) = 0.0;
        env.cost_(1, a) = 0.0;
        env.cost_(2, a) = 1.0;
        env.cost_(3, a) = 0.0;
    }
    // fork: action 0 -> safe leg, action 1 -> risky leg; slips cross over.
    // Legs feed the goal but linger on a slip; the goal recycles to the fork.
    env.intended_ = {{{1, 2}, {3, 3}, {3, 3}, {0, 0}}};
    env.slip_dest_ = {0 /*unused, see step()*/, 1, 2, 3};
    return env;
}

void ChainEnv::set_param(double v) {
    require(v >= perturb_.lo - 1e-12 && v <= perturb_.hi + 1e-12,
            "slip outside the test range");
    slip_ = clamp(v, perturb_.lo, perturb_.hi);
}

StateVec ChainEnv::reset(std::uint64_t seed) {
    rng_ = Rng(seed);
    state_ = 0;
    return one_hot(state_, 4);
}

StepResult ChainEnv::step(const StateVec& a) {
    require(a.size() == 1 && std::isfinite(a[0]), "chain action must be a finite scalar");
    const int act = a[0] >= 0.0 ? 1 : 0;
    const bool slipped = rng_.uniform() < slip_;
    int next;
    if (state_ == 0)
        next = slipped ? intended_[0][1 - act] : intended_[0][act];
    else
        next = slipped ? slip_dest_[state_] : intended_[state_][act];
    StepResult out;
    out.reward = reward_(state_, act);
    out.cost = cost_(state_, act);
    out.s_next = one_hot(next, 4);
    out.terminal = false;
    state_ = next;
    return out;
}

std::unique_ptr<EnvSpec> ChainEnv::clone() const {
    auto copy = std::make_unique<ChainEnv>(*this);
    copy->state_ = 0;
    return copy;
}

Matrix ChainEnv::kernel_row(int s, int a) const {
    require(s >= 0 && s < 4 && a >= 0 && a < 2, "kernel_row: index out of range");
    Matrix row(1, 4);
    const int hit = intended_[s][a];
    const int miss = s == 0 ? intended_[0][1 - a] : slip_dest_[s];
    row(0, hit) += 1.0 - slip_;
    row(0, miss) += slip_;
    return row;
}

DiscreteRCMDP ChainEnv::to_rcmdp(double eps) const {
    require(eps >= 0.0, "radius must be nonnegative");
    DiscreteRCMDP mdp;
    mdp.n_states = 4;
    mdp.n_actions = 2;
    mdp.gamma = gamma_;
    mdp.reward = reward_;
    mdp.cost = cost_;
    mdp.rho0 = index_dist({1.0, 0.0, 0.0, 0.0});
    mdp.radius = Matrix(4, 2);
    for (int s = 0; s < 4; ++s)
        for (int a = 0; a < 2; ++a) {
            mdp.radius(s, a) = eps;
            const Matrix row = kernel_row(s, a);
            mdp.nominal.push_back(
                index_dist({row(0, 0), row(0, 1), row(0, 2), row(0, 3)}));
        }
    Matrix metric(4, 4); // chain metric |i - j|
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) metric(i, j) = std::fabs(i - j);
    mdp.cost_matrix = {metric};
    mdp.validate();
    return mdp;
}

// ---------------------------------------------------------------------------
// PointGoalEnv

PointGoalEnv PointGoalEnv::from_json_text(const std::string& text) {
    const json j = json::parse(text);
    PointGoalEnv env;
    env.name_ = j.at("name").get<std::string>();
    env.horizon_ = j.at("horizon").get<int>();
    env.budget_ = j.at("budget").get<double>();
    env.dt_ = j.at("dt").get<double>();
    env.damping_ = j.at("damping").get<double>();
    env.perturb_ = parse_perturbation(j.at("mass"), "mass");
    env.mass_ = env.perturb_.nominal;
    env.start_ = {j.at("start").at(0).get<double>(), j.at("start").at(1).get<double>()};
    env.goal_ = {j.at("goal").at(0).get<double>(), j.at("goal").at(1).get<double>()};
    env.start_jitter_ = j.at("start_jitter").get<double>();
    env.hazard_center_ = {j.at("hazard").at("center").at(0).get<double>(),
                          j.at("hazard").at("center").at(1).get<double>()};
    env.hazard_radius_ = j.at("hazard").at("radius").get<double>();
    env.pos_box_ = j.at("pos_box").get<double>();
    require(env.horizon_ >= 0, "horizon must be nonnegative");
    require(env.dt_ > 0.0 && env.damping_ >= 0.0, "invalid dynamics constants");
    require(env.perturb_.lo > 0.0, "mass range must be positive");
    require(env.hazard_radius_ > 0.0 && env.pos_box_ > 0.0,
            "hazard radius and box must be positive");
    return env;
}

void PointGoalEnv::set_param(double v) {
    require(v >= perturb_.lo - 1e-12 && v <= perturb_.hi + 1e-12,
            "mass outside the test range");
    mass_ = clamp(v, perturb_.lo, perturb_.hi);
}

StateVec PointGoalEnv::reset(std::uint64_t seed) {
    Rng rng(seed);
    state_ = {start_[0] + rng.uniform(-start_jitter_, start_jitter_),
              start_[1] + rng.uniform(-start_jitter_, start_jitter_), 0.0, 0.0};
    return state_;
}

StepResult PointGoalEnv::step(const StateVec& a) {
    require(a.size() == 2 && all_finite(a), "pointgoal action must be a finite pair");
    const double ax = clamp(a[0], -1.0, 1.0);
    const double ay = clamp(a[1], -1.0, 1.0);
    double& x = state_[0];
    double& y = state_[1];
    double& vx = state_[2];
    double& vy = state_[3];
    vx += dt_ * (ax / mass_ - damping_ * vx);
    vy += dt_ * (ay / mass_ - damping_ * vy);
    x = clamp(x + dt_ * vx, -pos_box_, pos_box_);
    y = clamp(y + dt_ * vy, -pos_box_, pos_box_);

    const double dist_goal = std::hypot(x - goal_[0], y - goal_[1]);
    const double dist_hazard =
        std::hypot(x - hazard_center_[0], y - hazard_center_[1]);
    StepResult out;
    out.reward = std::exp(-dist_goal);
    out.cost = dist_hazard <= hazard_radius_ ? 1.0 : 0.0;
    out.s_next = state_;
    out.terminal = false;
    return out;
}

std::unique_ptr<EnvSpec> PointGoalEnv::clone() const {
    auto copy = std::make_unique<PointGoalEnv>(*this);
    copy->state_ = {0.0, 0.0, 0.0, 0.0};
    return copy;
}

// ---------------------------------------------------------------------------
// rollout / sweeps / factory

RolloutResult rollout(EnvSpec& env, Actor& actor, std::uint64_t seed,
                      bool record_trajectory) {
    RolloutResult out;
    StateVec s = env.reset(seed);
    Rng actor_rng(seed ^ 0xA5A5A5A55A5A5A5AULL); // actor stream split from seed
    if (record_trajectory) out.traj.states.push_back(s);
    for (int t = 0; t < env.horizon(); ++t) {
        const StateVec a = actor.act(s, actor_rng);
        const StepResult sr = env.step(a);
        out.total_reward += sr.reward;
        out.total_cost += sr.cost;
        if (record_trajectory) {
            out.traj.actions.push_back(a);
            out.traj.rewards.push_back(sr.reward);
            out.traj.costs.push_back(sr.cost);
            out.traj.states.push_back(sr.s_next);
        }
        if (sr.terminal) break;
        s = sr.s_next;
    }
    return out;
}

namespace {

class PolicyActor : public Actor {
  public:
    PolicyActor(GaussianPolicy& policy, bool deterministic)
        : policy_(policy), deterministic_(deterministic) {}
    StateVec act(const StateVec& s, Rng& rng) override {
        if (deterministic_) return policy_.forward(s).mean;
        std::vector<double> noise(policy_.action_dim());
        for (double& z : noise) z = rng.normal();
        return policy_.sample_action(s, noise).action;
    }

  private:
    GaussianPolicy& policy_;
    bool deterministic_;
};

} // namespace

RolloutResult rollout(EnvSpec& env, GaussianPolicy& policy, bool deterministic,
                      std::uint64_t seed, bool record_trajectory) {
    PolicyActor actor(policy, deterministic);
    return rollout(env, actor, seed, record_trajectory);
}

std::vector<std::unique_ptr<EnvSpec>> make_test_suite(const EnvSpec& env,
                                                      int n_points) {
    require(n_points >= 2, "make_test_suite requires n_points >= 2");
    const PerturbationSpec& p = env.perturbation();
    std::vector<std::unique_ptr<EnvSpec>> suite;
    for (int i = 0; i < n_points; ++i) {
        double v = p.lo + (p.hi - p.lo) * i / (n_points - 1);
        if (n_points % 2 == 1 && i == n_points / 2) v = p.nominal; // exact center
        auto e = env.clone();
        e->set_param(v);
        suite.push_back(std::move(e));
    }
    return suite;
}

std::unique_ptr<EnvSpec> make_env(const std::string& name) {
    const std::string path = config_dir() + "/" + name + ".json";
    const std::string text = read_text_file(path);
    if (name == "chain")
        return std::make_unique<ChainEnv>(ChainEnv::from_json_text(text));
    if (name == "pointgoal")
        return std::make_unique<PointGoalEnv>(PointGoalEnv::from_json_text(text));
    throw std::runtime_error("unknown task: " + name);
}

} // namespace otprl
