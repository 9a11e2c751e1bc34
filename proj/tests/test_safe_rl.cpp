#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "otprl/envs.hpp"
#include "otprl/robust_bellman.hpp"
#include "otprl/safe_rl.hpp"
#include "otprl/stats.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace otprl;

namespace {

Transition random_transition(Rng& rng, int state_dim, int action_dim) {
    Transition t;
    t.s.resize(state_dim);
    t.s_next.resize(state_dim);
    t.a.resize(action_dim);
    for (double& x : t.s) x = rng.uniform(-1.0, 1.0);
    for (double& x : t.s_next) x = rng.uniform(-1.0, 1.0);
    for (double& x : t.a) x = rng.uniform(-1.0, 1.0);
    t.r = rng.uniform();
    t.c = rng.uniform() < 0.3 ? 1.0 : 0.0;
    t.terminal = false;
    return t;
}

/// Zeroes the last layer and plants a constant output value.
void set_const_output(Mlp& net, double v) {
    const std::size_t last = net.config().sizes.size() - 2;
    const int n_in = net.config().sizes[last];
    const int n_out = net.config().sizes.back();
    for (int o = 0; o < n_out; ++o) {
        for (int i = 0; i < n_in; ++i)
            net.params()[net.weight_offset(last) + static_cast<std::size_t>(o) * n_in + i] =
                0.0;
        net.params()[net.bias_offset(last) + o] = v;
    }
}

/// Builds Q(s,a) = w.a exactly: one hidden unit per action coordinate kept
/// in the identity region of ELU by a large bias, undone at the output.
void make_linear_action_probe(Mlp& net, int state_dim, const std::vector<double>& w) {
    const int ad = static_cast<int>(w.size());
    REQUIRE(net.config().sizes.size() == 3);
    REQUIRE(net.config().sizes[1] == ad);
    REQUIRE(!net.config().first_layer_norm);
    std::fill(net.params().begin(), net.params().end(), 0.0);
    double wsum = 0.0;
    for (int j = 0; j < ad; ++j) {
        net.params()[net.weight_offset(0) + static_cast<std::size_t>(j) * (state_dim + ad) +
                     state_dim + j] = 1.0;
        net.params()[net.bias_offset(0) + j] = 10.0;
        net.params()[net.weight_offset(1) + j] = w[j];
        wsum += w[j];
    }
    net.params()[net.bias_offset(1)] = -10.0 * wsum;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cell);
            cell.clear();
        } else {
            cell += ch;
        }
    }
    cells.push_back(cell);
    return cells;
}

const std::vector<double>& tensor_of(const Checkpoint& ck, const std::string& name) {
    for (const auto& [key, blob] : ck.tensors)
        if (key == name) return blob;
    REQUIRE(false);
    static std::vector<double> empty;
    return empty;
}

std::string fresh_dir(const std::string& tag) {
    const std::string dir =
        (std::filesystem::temp_directory_path() / ("otprl_" + tag)).string();
    std::filesystem::remove_all(dir);
    return dir;
}

TrainConfig small_chain_config() {
    TrainConfig cfg;
    cfg.batch = 16;
    cfg.warmup = 100;
    cfg.total_steps = 600;
    cfg.curve_every = 100;
    cfg.eval_every = 300;
    cfg.batch_eval_rollouts = 1;
    cfg.checkpoint_every = 0;
    cfg.replay_capacity = 10000;
    cfg.budget = 12.0;
    cfg.hidden_policy = {8, 8};
    cfg.hidden_critic = {8, 8};
    cfg.hidden_otp = {8};
    cfg.seed = 17;
    return cfg;
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

} // namespace

TEST_CASE("replay buffer is a ring that overwrites the oldest slots") {
    ReplayBuffer buf(5);
    Rng rng(1);
    for (int i = 0; i < 8; ++i) {
        Transition t = random_transition(rng, 2, 1);
        t.r = i;
        buf.push(t);
    }
    CHECK(buf.size() == 5);
    // slots after wrap: 5,6,7 replaced 0,1,2 in order
    CHECK(buf.at(0).r == 5.0);
    CHECK(buf.at(1).r == 6.0);
    CHECK(buf.at(2).r == 7.0);
    CHECK(buf.at(3).r == 3.0);
    CHECK(buf.at(4).r == 4.0);
}

TEST_CASE("replay sampling is uniform (chi-squared at 0.001) and seeded") {
    ReplayBuffer buf(100);
    Rng fill(2);
    for (int i = 0; i < 100; ++i) buf.push(random_transition(fill, 2, 1));
    Rng rng(42);
    const std::vector<std::size_t> idx = buf.sample_indices(100000, rng);
    std::vector<long> counts(100, 0);
    for (std::size_t i : idx) ++counts[i];
    double chi2 = 0.0;
    const double expect = 1000.0;
    for (long c : counts) chi2 += (c - expect) * (c - expect) / expect;
    CHECK(chi2 < stats::chi2_critical(99.0, 0.001));

    Rng rng2(42);
    CHECK(buf.sample_indices(1000, rng2) ==
          std::vector<std::size_t>(idx.begin(), idx.begin() + 1000));
}

TEST_CASE("bellman_target: gamma=0, terminals, and the target-critic contract") {
    Rng rng(3);
    CriticPair critics(3, 2, {8}, false, 1e-3, rng);
    GaussianPolicy policy(3, 2, {8}, false, 0.3, rng);
    Transition t = random_transition(rng, 3, 2);
    t.r = 0.37;
    t.c = 1.0;

    Rng r1(7);
    CHECK(bellman_target(ValueKind::Reward, t, critics, policy, nullptr, false, 0.0,
                         r1) == 0.37);
    CHECK(bellman_target(ValueKind::Cost, t, critics, policy, nullptr, false, 0.0, r1) ==
          1.0);
    t.terminal = true;
    CHECK(bellman_target(ValueKind::Reward, t, critics, policy, nullptr, false, 0.9,
                         r1) == 0.37);
    t.terminal = false;

    // plant a constant 5.0 in the target critic: the bootstrap must read the
    // target copy, not the live critic
    set_const_output(critics.q_r_target, 5.0);
    set_const_output(critics.q_r, 77.0);
    Rng r2(7);
    CHECK(bellman_target(ValueKind::Reward, t, critics, policy, nullptr, false, 0.9,
                         r2) == 0.37 + 0.9 * 5.0);
}

TEST_CASE("zero-initialized perturbation nets leave targets bit-identical") {
    Rng rng(4);
    TrainConfig cfg;
    cfg.robust = true;
    cfg.hidden_policy = {8};
    cfg.hidden_critic = {8};
    cfg.hidden_otp = {8};
    Agent agent(3, 2, cfg, rng);
    REQUIRE(agent.pnets.has_value());
    for (int i = 0; i < 50; ++i) {
        Transition t = random_transition(rng, 3, 2);
        for (ValueKind kind : {ValueKind::Reward, ValueKind::Cost}) {
            Rng ra(100 + i), rb(100 + i);
            const double robust = bellman_target(kind, t, agent.critics, agent.policy,
                                                 &*agent.pnets, true, 0.97, ra);
            const double plain = bellman_target(kind, t, agent.critics, agent.policy,
                                                nullptr, false, 0.97, rb);
            CHECK(robust == plain); // bitwise
        }
    }
}

TEST_CASE("critic loss is exactly 1 on terminal r=1 transitions from zero init") {
    Rng rng(5);
    CriticPair critics(3, 1, {8}, false, 1e-3, rng);
    std::fill(critics.q_r.params().begin(), critics.q_r.params().end(), 0.0);
    std::fill(critics.q_c.params().begin(), critics.q_c.params().end(), 0.0);
    GaussianPolicy policy(3, 1, {8}, false, 0.3, rng);
    TrainConfig cfg;
    cfg.gamma = 0.99;
    std::vector<Transition> batch;
    for (int i = 0; i < 8; ++i) {
        Transition t = random_transition(rng, 3, 1);
        t.r = 1.0;
        t.c = 0.0;
        t.terminal = true;
        batch.push_back(t);
    }
    Rng ur(6);
    const CriticLosses losses = critic_update(critics, batch, policy, nullptr, cfg, ur);
    CHECK(losses.loss_r == 1.0);
    CHECK(losses.loss_c == 0.0);
}

TEST_CASE("gamma=0 regression drives Q_r to the observed reward") {
    Rng rng(6);
    CriticPair critics(2, 1, {16, 16}, false, 1e-2, rng);
    GaussianPolicy policy(2, 1, {8}, false, 0.3, rng);
    TrainConfig cfg;
    cfg.gamma = 0.0;
    cfg.tau = 5e-3;
    Transition t = random_transition(rng, 2, 1);
    t.r = 0.62;
    const std::vector<Transition> batch(8, t);
    Rng ur(7);
    for (int k = 0; k < 3000; ++k) critic_update(critics, batch, policy, nullptr, cfg, ur);
    CHECK(std::fabs(critics.value(critics.q_r, t.s, t.a) - 0.62) <= 1e-3);
}

TEST_CASE("critic_update aborts on a poisoned target") {
    Rng rng(7);
    CriticPair critics(2, 1, {8}, false, 1e-3, rng);
    GaussianPolicy policy(2, 1, {8}, false, 0.3, rng);
    set_const_output(critics.q_c_target, std::numeric_limits<double>::quiet_NaN());
    TrainConfig cfg;
    std::vector<Transition> batch = {random_transition(rng, 2, 1)};
    Rng ur(8);
    CHECK_THROWS_WITH_AS(critic_update(critics, batch, policy, nullptr, cfg, ur),
                         doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("estimate_constraint: zero, constant, and high-sample agreement") {
    Rng rng(8);
    CriticPair critics(3, 2, {8}, false, 1e-3, rng);
    GaussianPolicy policy(3, 2, {8}, false, 0.3, rng);
    std::vector<Transition> batch;
    for (int i = 0; i < 16; ++i) batch.push_back(random_transition(rng, 3, 2));

    set_const_output(critics.q_c, 0.0);
    Rng r0(9);
    CHECK(estimate_constraint(batch, critics, policy, 4, r0) == 0.0);

    set_const_output(critics.q_c, 2.5);
    Rng r1(9);
    CHECK(estimate_constraint(batch, critics, policy, 4, r1) == 2.5);

    // restore a random critic; the k=4 default must agree with a high-sample
    // estimate within 3 standard errors of the k=4 estimator
    Rng rinit(10);
    CriticPair fresh(3, 2, {8}, false, 1e-3, rinit);
    critics.q_c.params() = fresh.q_c.params();
    std::vector<double> reps;
    for (int i = 0; i < 50; ++i) {
        Rng rr(200 + i);
        reps.push_back(estimate_constraint(batch, critics, policy, 4, rr));
    }
    Rng rbig(999);
    const double big = estimate_constraint(batch, critics, policy, 1024, rbig);
    const double sd = std::sqrt(stats::sample_var(reps));
    Rng rone(201);
    const double one = estimate_constraint(batch, critics, policy, 4, rone);
    CHECK(std::fabs(one - big) <= 3.0 * sd);
}

TEST_CASE("crpo branches follow the constraint estimate exactly") {
    Rng rng(9);
    CriticPair critics(3, 2, {8}, false, 1e-3, rng);
    GaussianPolicy policy(3, 2, {8}, false, 0.3, rng);
    Adam opt(policy.net().n_params(), 1e-3);
    TrainConfig cfg;
    cfg.budget = 2.0;
    std::vector<Transition> batch;
    for (int i = 0; i < 16; ++i) batch.push_back(random_transition(rng, 3, 2));

    set_const_output(critics.q_c, 0.0);
    Rng r0(11);
    CHECK(policy_update_crpo(policy, batch, critics, cfg, r0, opt).branch ==
          Branch::Reward);
    set_const_output(critics.q_c, 4.0); // 2B
    Rng r1(11);
    CHECK(policy_update_crpo(policy, batch, critics, cfg, r1, opt).branch ==
          Branch::Cost);

    // random critics: the returned branch must match the returned estimate
    for (int trial = 0; trial < 20; ++trial) {
        Rng ri(300 + trial);
        CriticPair rc(3, 2, {8}, false, 1e-3, ri);
        critics.q_c.params() = rc.q_c.params();
        Rng ru(400 + trial);
        const CrpoResult res = policy_update_crpo(policy, batch, critics, cfg, ru, opt);
        CHECK((res.branch == Branch::Reward) == (res.constraint_estimate <= cfg.budget));
    }
}

TEST_CASE("linear probe critic: policy gradient matches the hand derivation") {
    Rng rng(10);
    const int sd = 3, ad = 2;
    CriticPair critics(sd, ad, {ad}, false, 1e-3, rng);
    const std::vector<double> w = {0.7, -0.4};
    make_linear_action_probe(critics.q_r, sd, w);
    // verify the probe is exact before using it as an oracle
    Rng check(12);
    for (int i = 0; i < 20; ++i) {
        StateVec s = {check.uniform(-1.0, 1.0), check.uniform(-1.0, 1.0),
                      check.uniform(-1.0, 1.0)};
        StateVec a = {check.uniform(-2.0, 2.0), check.uniform(-2.0, 2.0)};
        CHECK(critics.value(critics.q_r, s, a) ==
              doctest::Approx(w[0] * a[0] + w[1] * a[1]).epsilon(1e-12));
    }

    GaussianPolicy policy(sd, ad, {8}, false, 0.3, rng);
    const std::vector<double> before = policy.net().params();
    Adam opt(policy.net().n_params(), 1e-3);
    TrainConfig cfg;
    cfg.budget = 1e9; // always the reward branch
    std::vector<Transition> batch;
    for (int i = 0; i < 16; ++i) batch.push_back(random_transition(rng, sd, ad));
    Rng ur(13);
    const CrpoResult res = policy_update_crpo(policy, batch, critics, cfg, ur, opt);
    CHECK(res.branch == Branch::Reward);

    // d(-E[w.a])/d(mean bias_j) = -w_j independent of state and noise
    const Mlp& net = policy.net();
    const std::size_t last = net.config().sizes.size() - 2;
    for (int j = 0; j < ad; ++j) {
        CHECK(net.grad()[net.bias_offset(last) + j] ==
              doctest::Approx(-w[j]).epsilon(1e-12));
        // Adam's first step moves along sign(w) with magnitude ~ lr
        const double delta =
            net.params()[net.bias_offset(last) + j] - before[net.bias_offset(last) + j];
        CHECK(delta * w[j] > 0.0);
        CHECK(std::fabs(delta) <= 1.01e-3);
    }
}

TEST_CASE("lagrange at lambda=0 reproduces pure reward ascent bitwise") {
    Rng rng_a(14), rng_b(14);
    const int sd = 3, ad = 2;
    GaussianPolicy pol_a(sd, ad, {8}, false, 0.3, rng_a);
    GaussianPolicy pol_b(sd, ad, {8}, false, 0.3, rng_b);
    REQUIRE(pol_a.net().params() == pol_b.net().params());

    Rng crng(15);
    CriticPair critics(sd, ad, {8}, false, 1e-3, crng);
    std::vector<Transition> batch;
    Rng brng(16);
    for (int i = 0; i < 16; ++i) batch.push_back(random_transition(brng, sd, ad));

    TrainConfig cfg;
    cfg.budget = 3.0;
    Adam opt_a(pol_a.net().n_params(), 1e-3), opt_b(pol_b.net().n_params(), 1e-3);
    LagrangeState state; // lambda = 0
    Rng ra(17);
    policy_update_lagrange(pol_a, batch, critics, state, cfg, ra, opt_a);

    // manual reward-only reparameterized ascent with the same stream
    Rng rb(17);
    const double inv_n = 1.0 / batch.size();
    pol_b.net().zero_grad();
    for (const Transition& t : batch) {
        std::vector<double> noise(ad);
        for (double& z : noise) z = rb.normal();
        const GaussianPolicy::Sample s = pol_b.sample_action(t.s, noise);
        StateVec xa = t.s;
        xa.insert(xa.end(), s.action.begin(), s.action.end());
        critics.q_r.forward(xa);
        const std::vector<double> gin = critics.q_r.backward({-inv_n});
        std::vector<double> ga(gin.begin() + sd, gin.end());
        pol_b.backward_action(ga, noise);
    }
    critics.q_r.zero_grad();
    opt_b.step(pol_b.net().params(), pol_b.net().grad());

    CHECK(pol_a.net().params() == pol_b.net().params());
}

TEST_CASE("lagrange dual: fixed point and exact accumulation") {
    Rng rng(18);
    const int sd = 2, ad = 1;
    GaussianPolicy policy(sd, ad, {8}, false, 0.3, rng);
    CriticPair critics(sd, ad, {8}, false, 1e-3, rng);
    Adam opt(policy.net().n_params(), 1e-3);
    std::vector<Transition> batch;
    for (int i = 0; i < 16; ++i) batch.push_back(random_transition(rng, sd, ad));
    TrainConfig cfg;
    cfg.budget = 2.5;
    cfg.lagrange_dual_lr = 5e-6;

    set_const_output(critics.q_c, 2.5); // estimate == B exactly
    LagrangeState state;
    state.lambda = 0.3;
    Rng r0(19);
    const LagrangeResult res =
        policy_update_lagrange(policy, batch, critics, state, cfg, r0, opt);
    CHECK(res.constraint_estimate == 2.5);
    CHECK(state.lambda == 0.3);

    set_const_output(critics.q_c, cfg.budget + 1000.0);
    state.lambda = 0.0;
    Rng r1(20);
    for (int k = 0; k < 7; ++k)
        policy_update_lagrange(policy, batch, critics, state, cfg, r1, opt);
    CHECK(state.lambda == doctest::Approx(7 * 5e-6 * 1000.0).epsilon(1e-12));
}

TEST_CASE("train with zero steps emits only the initial checkpoint") {
    auto env = make_env("chain");
    TrainConfig cfg = small_chain_config();
    cfg.total_steps = 0;
    const std::string dir = fresh_dir("train_zero");
    const TrainArtifacts art = train(*env, cfg, dir);
    CHECK(art.steps_completed == 0);
    REQUIRE(art.checkpoint_paths.size() == 1);
    const Checkpoint ck = Checkpoint::load(art.checkpoint_paths[0]);
    // no parameter changes: the checkpoint equals a fresh seeded agent
    Rng rng(cfg.seed);
    Agent fresh(env->state_dim(), env->action_dim(), cfg, rng);
    CHECK(tensor_of(ck, "policy") == fresh.policy.net().params());
    CHECK(tensor_of(ck, "q_r") == fresh.critics.q_r.params());
    CHECK(tensor_of(ck, "q_r_target") == fresh.critics.q_r.params());
}

TEST_CASE("training is deterministic: identical seeds, identical bytes") {
    auto env1 = make_env("chain");
    auto env2 = make_env("chain");
    TrainConfig cfg = small_chain_config();
    const std::string d1 = fresh_dir("det_a"), d2 = fresh_dir("det_b");
    const TrainArtifacts a1 = train(*env1, cfg, d1);
    const TrainArtifacts a2 = train(*env2, cfg, d2);
    CHECK(slurp(a1.curves_path) == slurp(a2.curves_path));
    REQUIRE(a1.checkpoint_paths.size() == a2.checkpoint_paths.size());
    for (std::size_t i = 0; i < a1.checkpoint_paths.size(); ++i)
        CHECK(slurp(a1.checkpoint_paths[i]) == slurp(a2.checkpoint_paths[i]));
}

TEST_CASE("robust-off equals robust-frozen on every shared artifact column") {
    auto env1 = make_env("chain");
    auto env2 = make_env("chain");
    TrainConfig plain = small_chain_config();
    plain.robust = false;
    TrainConfig frozen = small_chain_config();
    frozen.robust = true;
    frozen.freeze_otp = true;
    const std::string d1 = fresh_dir("ab_plain"), d2 = fresh_dir("ab_frozen");
    const TrainArtifacts a1 = train(*env1, plain, d1);
    const TrainArtifacts a2 = train(*env2, frozen, d2);

    const Checkpoint c1 = Checkpoint::load(a1.checkpoint_paths.back());
    const Checkpoint c2 = Checkpoint::load(a2.checkpoint_paths.back());
    for (const char* name : {"policy", "q_r", "q_c", "q_r_target", "q_c_target"})
        CHECK(tensor_of(c1, name) == tensor_of(c2, name)); // bitwise

    // curve rows agree except in the four robust-only columns (7..10)
    auto read_lines = [](const std::string& text) {
        std::istringstream in(text);
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
        return lines;
    };
    const auto rows1 = read_lines(slurp(a1.curves_path));
    const auto rows2 = read_lines(slurp(a2.curves_path));
    REQUIRE(rows1.size() == rows2.size());
    CHECK(rows1.size() > 4);
    for (std::size_t row = 0; row < rows1.size(); ++row) {
        const auto f1 = split_csv_line(rows1[row]), f2 = split_csv_line(rows2[row]);
        REQUIRE(f1.size() == 17);
        REQUIRE(f2.size() == 17);
        for (std::size_t col = 0; col < 17; ++col)
            if (col < 7 || col > 10) CHECK(f1[col] == f2[col]);
    }
}

TEST_CASE("a diverging run halts on NaN and keeps the last good checkpoint") {
    auto env = make_env("chain");
    TrainConfig cfg = small_chain_config();
    cfg.lr_critic = 1e200;
    cfg.warmup = 50;
    cfg.batch = 8;
    cfg.total_steps = 400;
    const std::string dir = fresh_dir("nan_halt");
    const TrainArtifacts art = train(*env, cfg, dir);
    CHECK(art.halted_on_nan);
    CHECK(art.steps_completed < 400);
    REQUIRE(!art.checkpoint_paths.empty());
    const Checkpoint ck = Checkpoint::load(art.checkpoint_paths.back());
    for (const auto& [name, blob] : ck.tensors) CHECK(all_finite(blob));
}

TEST_CASE("converged cost critic agrees with the tabular oracle at eps=0") {
    auto env_base = make_env("chain");
    auto* chain = dynamic_cast<ChainEnv*>(env_base.get());
    REQUIRE(chain != nullptr);
    const double gamma = 0.8;

    Rng rng(21);
    GaussianPolicy policy(4, 1, {8}, false, 0.3, rng);
    CriticPair critics(4, 1, {32, 32}, false, 3e-3, rng);

    // tabular image of the frozen policy: P(a >= 0) per one-hot state
    TabularPolicy tab;
    tab.probs = Matrix(4, 2);
    for (int s = 0; s < 4; ++s) {
        StateVec x(4, 0.0);
        x[s] = 1.0;
        const GaussianPolicy::Dist d = policy.forward(x);
        const double p1 = 1.0 - norm_cdf(-d.mean[0] / d.sigma[0]);
        tab.probs(s, 0) = 1.0 - p1;
        tab.probs(s, 1) = p1;
    }

    // off-policy experience with uniform exploration so the critic sees the
    // whole action range, not just the policy's neighborhood; the backup
    // itself still bootstraps with the frozen policy
    ReplayBuffer buffer(40000);
    StateVec s = chain->reset(777);
    for (int t = 0; t < 30000; ++t) {
        const StateVec a = {rng.uniform(chain->action_low(), chain->action_high())};
        const StepResult sr = chain->step(a);
        buffer.push({s, a, sr.reward, sr.cost, sr.s_next, false});
        s = sr.s_next;
    }

    TrainConfig cfg;
    cfg.gamma = gamma;
    cfg.tau = 5e-3;
    Rng ur(22);
    for (int k = 0; k < 12000; ++k) {
        const std::vector<Transition> batch = buffer.sample(64, ur);
        critic_update(critics, batch, policy, nullptr, cfg, ur);
    }

    DiscreteRCMDP mdp = chain->to_rcmdp(0.0);
    mdp.gamma = gamma;
    const QTable q_tab = robust_policy_evaluation(mdp, tab, ValueKind::Cost);
    for (int st = 0; st < 4; ++st) {
        StateVec x(4, 0.0);
        x[st] = 1.0;
        for (double a : {-0.6, -0.3, 0.3, 0.6}) {
            const int dis = a >= 0.0 ? 1 : 0;
            // the EMA target averages out optimizer jitter around the fixpoint
            const double q_net = critics.value(critics.q_c_target, x, {a});
            CHECK(std::fabs(q_net - q_tab.values(st, dis)) <= 0.05);
        }
    }
}

TEST_CASE("trained perturbation nets push mean targets in the robust direction") {
    Rng rng(23);
    TrainConfig cfg;
    cfg.robust = true;
    cfg.eps_delta = 0.05;
    cfg.hidden_policy = {12};
    cfg.hidden_critic = {16, 16};
    cfg.hidden_otp = {16, 16};
    cfg.gamma = 0.95;
    Agent agent(4, 2, cfg, rng);
    REQUIRE(agent.pnets.has_value());
    // non-trivial critics so the adversary has a landscape to climb
    for (double& p : agent.critics.q_r_target.params()) p = rng.uniform(-0.4, 0.4);
    for (double& p : agent.critics.q_c_target.params()) p = rng.uniform(-0.4, 0.4);

    std::vector<Transition> batch;
    for (int i = 0; i < 32; ++i) batch.push_back(random_transition(rng, 4, 2));
    std::vector<OtpSample> obatch(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
        obatch[i] = {batch[i].s, batch[i].a, batch[i].s_next};

    for (int k = 0; k < 400; ++k) {
        class Probe : public ValueFn {
          public:
            Probe(Mlp& critic, GaussianPolicy& pol) : critic_(critic), pol_(pol) {}
            double value_grad(const StateVec& x, StateVec& grad) override {
                const GaussianPolicy::Dist d = pol_.forward(x);
                StateVec xa = x;
                xa.insert(xa.end(), d.mean.begin(), d.mean.end());
                const double v = critic_.forward(xa)[0];
                const std::vector<double> gin = critic_.backward({1.0});
                critic_.zero_grad();
                grad.assign(gin.begin(), gin.begin() + 4);
                return v;
            }

          private:
            Mlp& critic_;
            GaussianPolicy& pol_;
        };
        Probe pr(agent.critics.q_r_target, agent.policy);
        Probe pc(agent.critics.q_c_target, agent.policy);
        update_otp(agent.pnets->reward, obatch, pr, 1e-3, 0.05);
        update_otp(agent.pnets->cost, obatch, pc, 1e-3, 0.05);
    }

    double rob_r = 0.0, plain_r = 0.0, rob_c = 0.0, plain_c = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Rng ra(500 + i), rb(500 + i), rc(500 + i), rd(500 + i);
        rob_r += bellman_target(ValueKind::Reward, batch[i], agent.critics, agent.policy,
                                &*agent.pnets, true, cfg.gamma, ra);
        plain_r += bellman_target(ValueKind::Reward, batch[i], agent.critics,
                                  agent.policy, nullptr, false, cfg.gamma, rb);
        rob_c += bellman_target(ValueKind::Cost, batch[i], agent.critics, agent.policy,
                                &*agent.pnets, true, cfg.gamma, rc);
        plain_c += bellman_target(ValueKind::Cost, batch[i], agent.critics, agent.policy,
                                  nullptr, false, cfg.gamma, rd);
    }
    CHECK(rob_c >= plain_c - 1e-9); // sup direction for costs
    CHECK(rob_r <= plain_r + 1e-9); // inf direction for rewards
}

TEST_CASE("checkpoint round trip restores the agent exactly") {
    Rng rng(24);
    TrainConfig cfg;
    cfg.robust = true;
    cfg.hidden_policy = {8};
    cfg.hidden_critic = {8};
    cfg.hidden_otp = {8};
    Agent agent(3, 2, cfg, rng);
    for (double& p : agent.policy.net().params()) p = rng.uniform(-1.0, 1.0);
    agent.lagrange.lambda = 0.125;
    agent.pnets->reward.set_lambda(0.5);
    agent.step = 4242;

    const std::string path = fresh_dir("ckpt") + "/agent.bin";
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    agent.to_checkpoint("chain").save(path);
    const Agent back = Agent::from_checkpoint(Checkpoint::load(path));
    CHECK(back.step == 4242);
    CHECK(back.policy.net().params() == agent.policy.net().params());
    CHECK(back.critics.q_c_target.params() == agent.critics.q_c_target.params());
    CHECK(back.lagrange.lambda == 0.125);
    CHECK(back.pnets->reward.lambda() == 0.5);
    CHECK(back.cfg.method == cfg.method);
    CHECK(back.cfg.eps_delta == cfg.eps_delta);
}
