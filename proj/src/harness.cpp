#include "otprl/harness.hpp"

#include "otprl/otp.hpp"
#include "otprl/robust_bellman.hpp"
#include "otprl/stats.hpp"
#include "otprl/transport.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace otprl {

using json = nlohmann::json;

namespace {

constexpr const char* kVerifySchema = "verify_v1";
constexpr const char* kEvalSchema = "eval_v1";
constexpr const char* kEvalHeader =
    "schema,row_type,manifest,task,method,robust,param_name,param_value,"
    "train_seed,rollouts,total_reward,total_cost,safe,group,n_cells,pct_safe,"
    "mean_reward,mean_cost,norm_reward,norm_cost";

std::string timestamp_utc() {
    const std::time_t now =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write " + path);
    out << content;
}

// RFC-4180: quote fields containing separators or quotes, double inner quotes
std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += "\"\"";
        else out += ch;
    }
    out += '"';
    return out;
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

} // namespace

std::string code_version() {
#ifdef OTPRL_CODE_HASH
    return OTPRL_CODE_HASH;
#else
    return "unversioned";
#endif
}

// ---------------------------------------------------------------------------
// RunManifest

RunManifest::RunManifest(std::string command_in, std::string task_in)
    : command(std::move(command_in)), task(std::move(task_in)), code(code_version()),
      created(timestamp_utc()) {}

std::string RunManifest::hash() const {
    // canonical serialization: nlohmann objects order keys, and the
    // timestamp and output directory stay out so that re-running the same
    // configuration reproduces the hash (and the tagged artifact bytes)
    json j;
    j["command"] = command;
    j["task"] = task;
    j["seeds"] = seeds;
    j["config"] = json::parse(config_json);
    j["code"] = code;
    return fnv1a_hex(j.dump());
}

std::string RunManifest::to_json_text() const {
    json j;
    j["command"] = command;
    j["task"] = task;
    j["seeds"] = seeds;
    j["config"] = json::parse(config_json);
    j["code"] = code;
    j["created"] = created;
    j["outdir"] = outdir;
    j["hash"] = hash();
    return j.dump(2) + "\n";
}

void RunManifest::save(const std::string& path) const {
    write_file(path, to_json_text());
}

// ---------------------------------------------------------------------------
// cmd_verify: seeded property suites over the exact solvers

namespace {

struct CheckSink {
    std::vector<VerifyCheck> checks;

    void add(const std::string& suite, const std::string& check, long instance,
             double value, double tolerance, const json& detail) {
        VerifyCheck c;
        c.suite = suite;
        c.check = check;
        c.instance = instance;
        c.value = value;
        c.tolerance = tolerance;
        c.pass = value <= tolerance;
        if (!c.pass) c.detail = detail.dump();
        checks.push_back(std::move(c));
    }
};

DiscreteDist random_index_dist(Rng& rng, int m) {
    std::vector<double> p(m);
    double sum = 0.0;
    for (double& x : p) {
        x = 0.05 + rng.uniform();
        sum += x;
    }
    for (double& x : p) x /= sum;
    return index_dist(p);
}

/// kind 0: chain metric |i-j|; 1: squared metric; 2: indicator; 3: random
/// symmetric with zero diagonal.
Matrix index_cost_matrix(int kind, int m, Rng& rng) {
    Matrix d(m, m);
    for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) {
            double v = 0.0;
            switch (kind % 4) {
            case 0: v = std::fabs(i - j); break;
            case 1: v = static_cast<double>((i - j) * (i - j)); break;
            case 2: v = 1.0; break;
            default: v = rng.uniform(0.2, 2.0); break;
            }
            d(i, j) = d(j, i) = v;
        }
    }
    return d;
}

json dist_to_json(const DiscreteDist& dist) {
    json j;
    j["support"] = json::array();
    for (const StateVec& s : dist.support) j["support"].push_back(s);
    j["probs"] = dist.probs;
    return j;
}

void suite_duality(CheckSink& sink, std::uint64_t seed, int n_instances) {
    Rng rng(mix64(seed, 0xD7A1));
    const double eps_grid[] = {0.0, 0.02, 0.1, 0.5, 2.0};
    for (long i = 0; i < n_instances; ++i) {
        const int m = 2 + static_cast<int>(rng.uniform_int(7));
        const int kind = static_cast<int>(i % 4);
        const double eps = eps_grid[rng.uniform_int(5)];
        const Direction dir = (i / 4) % 2 == 0 ? Direction::Sup : Direction::Inf;
        const DiscreteDist p_hat = random_index_dist(rng, m);
        std::vector<double> values(m);
        for (double& v : values) v = rng.uniform(-1.0, 1.0);
        const Matrix d = index_cost_matrix(kind, m, rng);

        const WorstCaseResult primal =
            worst_case_expectation_primal(p_hat, values, d, eps, dir);
        const double dual = worst_case_expectation_dual(p_hat, values, d, eps, dir);

        json detail;
        detail["p_hat"] = dist_to_json(p_hat);
        detail["values"] = values;
        detail["cost_matrix"] = d.data();
        detail["cost_kind"] = kind;
        detail["eps"] = eps;
        detail["direction"] = dir == Direction::Sup ? "sup" : "inf";
        detail["primal"] = primal.value;
        detail["dual"] = dual;
        sink.add("duality", "primal_dual_gap", i, std::fabs(primal.value - dual),
                 1e-5, detail);
    }
}

DiscreteRCMDP random_rcmdp(Rng& rng) {
    DiscreteRCMDP mdp;
    mdp.n_states = 2 + static_cast<int>(rng.uniform_int(4));
    mdp.n_actions = 2 + static_cast<int>(rng.uniform_int(2));
    mdp.gamma = 0.9;
    mdp.reward = Matrix(mdp.n_states, mdp.n_actions);
    mdp.cost = Matrix(mdp.n_states, mdp.n_actions);
    mdp.radius = Matrix(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            mdp.reward(s, a) = rng.uniform(-1.0, 1.0);
            mdp.cost(s, a) = rng.uniform();
            mdp.radius(s, a) = rng.uniform(0.0, 0.5);
        }
    }
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a)
            mdp.nominal.push_back(random_index_dist(rng, mdp.n_states));
    mdp.cost_matrix = {index_cost_matrix(static_cast<int>(rng.uniform_int(4)),
                                         mdp.n_states, rng)};
    mdp.rho0 = random_index_dist(rng, mdp.n_states);
    mdp.validate();
    return mdp;
}

TabularPolicy random_tab_policy(Rng& rng, int n_states, int n_actions) {
    TabularPolicy pol;
    pol.probs = Matrix(n_states, n_actions);
    for (int s = 0; s < n_states; ++s) {
        double sum = 0.0;
        for (int a = 0; a < n_actions; ++a) {
            pol.probs(s, a) = 0.05 + rng.uniform();
            sum += pol.probs(s, a);
        }
        for (int a = 0; a < n_actions; ++a) pol.probs(s, a) /= sum;
    }
    return pol;
}

json rcmdp_to_json(const DiscreteRCMDP& mdp) {
    json j;
    j["n_states"] = mdp.n_states;
    j["n_actions"] = mdp.n_actions;
    j["gamma"] = mdp.gamma;
    j["reward"] = mdp.reward.data();
    j["cost"] = mdp.cost.data();
    j["radius"] = mdp.radius.data();
    j["cost_matrix"] = mdp.cost_matrix[0].data();
    j["nominal"] = json::array();
    for (const DiscreteDist& d : mdp.nominal) j["nominal"].push_back(dist_to_json(d));
    j["rho0"] = dist_to_json(mdp.rho0);
    return j;
}

double sup_diff(const Matrix& a, const Matrix& b) {
    return max_abs_diff(a.data(), b.data());
}

void suite_contraction(CheckSink& sink, std::uint64_t seed, int n_instances) {
    Rng rng(mix64(seed, 0xC047));
    for (long i = 0; i < n_instances; ++i) {
        const DiscreteRCMDP mdp = random_rcmdp(rng);
        const TabularPolicy pol = random_tab_policy(rng, mdp.n_states, mdp.n_actions);
        const ValueKind kind = i % 2 == 0 ? ValueKind::Reward : ValueKind::Cost;

        QTable q1, q2;
        q1.kind = q2.kind = kind;
        q1.values = Matrix(mdp.n_states, mdp.n_actions);
        q2.values = Matrix(mdp.n_states, mdp.n_actions);
        for (double& v : q1.values.data()) v = rng.uniform(-2.0, 2.0);
        for (double& v : q2.values.data()) v = rng.uniform(-2.0, 2.0);

        const QTable t1 = robust_bellman_apply(mdp, pol, q1);
        const QTable t2 = robust_bellman_apply(mdp, pol, q2);
        const double lhs = sup_diff(t1.values, t2.values);
        const double rhs = mdp.gamma * sup_diff(q1.values, q2.values);

        json detail = rcmdp_to_json(mdp);
        detail["policy"] = pol.probs.data();
        detail["q1"] = q1.values.data();
        detail["q2"] = q2.values.data();
        detail["lhs"] = lhs;
        detail["rhs"] = rhs;
        sink.add("contraction", "gamma_contraction", i, lhs - rhs, 1e-9, detail);

        if (i % 4 == 0) {
            // radius monotonicity of the fixed point: larger uncertainty sets
            // can only hurt (reward down, cost up)
            DiscreteRCMDP scaled = mdp;
            double prev = 0.0;
            double worst = -kInf;
            bool first = true;
            for (double scale : {0.0, 0.5, 1.0, 2.0}) {
                for (int s = 0; s < mdp.n_states; ++s)
                    for (int a = 0; a < mdp.n_actions; ++a)
                        scaled.radius(s, a) = mdp.radius(s, a) * scale;
                const QTable fp = robust_policy_evaluation(scaled, pol, kind);
                const std::vector<double> v = state_values(fp, pol);
                double j_val = 0.0;
                const std::vector<double> rho = dense_probs(mdp.rho0, mdp.n_states);
                for (int s = 0; s < mdp.n_states; ++s) j_val += rho[s] * v[s];
                if (!first) {
                    const double violation = kind == ValueKind::Cost
                                                 ? prev - j_val   // must not shrink
                                                 : j_val - prev;  // must not grow
                    worst = std::max(worst, violation);
                }
                prev = j_val;
                first = false;
            }
            json mono = rcmdp_to_json(mdp);
            mono["kind"] = kind == ValueKind::Cost ? "cost" : "reward";
            mono["worst_violation"] = worst;
            sink.add("contraction", "radius_monotonicity", i, worst, 1e-8, mono);
        }
    }
}

/// Central-difference reference for a scalar function of one parameter.
template <typename F>
double central_diff(std::vector<double>& params, std::size_t idx, F&& f) {
    const double h = 1e-6 * std::max(1.0, std::fabs(params[idx]));
    const double saved = params[idx];
    params[idx] = saved + h;
    const double hi = f();
    params[idx] = saved - h;
    const double lo = f();
    params[idx] = saved;
    return (hi - lo) / (2.0 * h);
}

double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

void suite_gradients(CheckSink& sink, std::uint64_t seed, int n_instances) {
    Rng rng(mix64(seed, 0x96AD));
    for (long i = 0; i < n_instances; ++i) {
        const int variant = static_cast<int>(i % 3);
        const int in_dim = 2 + static_cast<int>(rng.uniform_int(3));
        const int out_dim = 1 + static_cast<int>(rng.uniform_int(2));
        const bool norm = i % 2 == 0;

        if (variant == 0) {
            Mlp net({{in_dim, 6, out_dim}, norm}, rng);
            std::vector<double> x(in_dim), upstream(out_dim);
            for (double& v : x) v = rng.uniform(-1.0, 1.0);
            for (double& v : upstream) v = rng.uniform(-1.0, 1.0);
            auto loss = [&] { return dot(net.forward(x), upstream); };
            loss();
            net.zero_grad();
            net.backward(upstream);
            const std::vector<double> grad = net.grad();
            double worst = 0.0;
            for (int k = 0; k < 8; ++k) {
                const std::size_t idx = rng.uniform_int(net.n_params());
                worst = std::max(worst,
                                 rel_err(grad[idx], central_diff(net.params(), idx, loss)));
            }
            json detail;
            detail["variant"] = "mlp";
            detail["layer_norm"] = norm;
            detail["worst_rel_err"] = worst;
            sink.add("gradients", "mlp_param_grad", i, worst, 1e-4, detail);
        } else if (variant == 1) {
            GaussianPolicy pol(in_dim, out_dim, {6}, norm, 0.4, rng);
            std::vector<double> s(in_dim), g(out_dim), noise(out_dim);
            for (double& v : s) v = rng.uniform(-1.0, 1.0);
            for (double& v : g) v = rng.uniform(-1.0, 1.0);
            for (double& v : noise) v = rng.normal();
            auto loss = [&] {
                return dot(pol.sample_action(s, noise).action, g);
            };
            loss();
            pol.net().zero_grad();
            pol.backward_action(g, noise);
            const std::vector<double> grad = pol.net().grad();
            double worst = 0.0;
            for (int k = 0; k < 8; ++k) {
                const std::size_t idx = rng.uniform_int(pol.net().n_params());
                worst = std::max(
                    worst, rel_err(grad[idx], central_diff(pol.net().params(), idx, loss)));
            }
            json detail;
            detail["variant"] = "policy_reparam";
            detail["worst_rel_err"] = worst;
            sink.add("gradients", "policy_action_grad", i, worst, 1e-4, detail);
        } else {
            OtpConfig ocfg;
            ocfg.eps_delta = 0.1;
            PerturbationNet pnet(in_dim, out_dim, {6}, PerturbKind::Cost, ocfg, rng);
            // move off the zero-initialized output layer so the clip is active
            for (double& p : pnet.net().params()) p += rng.uniform(-0.3, 0.3);
            StateVec s(in_dim), sp(in_dim);
            std::vector<double> a(out_dim), g(in_dim);
            for (double& v : s) v = rng.uniform(-1.0, 1.0);
            for (double& v : a) v = rng.uniform(-1.0, 1.0);
            for (double& v : g) v = rng.uniform(-1.0, 1.0);
            for (int k = 0; k < in_dim; ++k) sp[k] = s[k] + rng.uniform(0.1, 0.5);
            auto loss = [&] { return dot(pnet.delta(s, a, sp), g); };
            loss();
            pnet.net().zero_grad();
            pnet.backward_delta(g);
            const std::vector<double> grad = pnet.net().grad();
            double worst = 0.0;
            for (int k = 0; k < 8; ++k) {
                const std::size_t idx = rng.uniform_int(pnet.net().n_params());
                worst = std::max(
                    worst,
                    rel_err(grad[idx], central_diff(pnet.net().params(), idx, loss)));
            }
            json detail;
            detail["variant"] = "perturbation_net";
            detail["worst_rel_err"] = worst;
            sink.add("gradients", "delta_param_grad", i, worst, 1e-4, detail);
        }
    }
}

/// Quadratic state-value probe with analytic gradient.
class QuadraticProbe : public ValueFn {
  public:
    QuadraticProbe(Rng& rng, int n) : w_(n), q_(n) {
        for (double& v : w_) v = rng.uniform(-1.0, 1.0);
        for (double& v : q_) v = rng.uniform(-0.5, 0.5);
    }
    double value_grad(const StateVec& x, StateVec& grad) override {
        grad.assign(x.size(), 0.0);
        double v = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            v += w_[i] * x[i] + q_[i] * x[i] * x[i];
            grad[i] = w_[i] + 2.0 * q_[i] * x[i];
        }
        return v;
    }

  private:
    std::vector<double> w_, q_;
};

void suite_otp_identities(CheckSink& sink, std::uint64_t seed, int n_instances) {
    Rng rng(mix64(seed, 0x07F1));
    for (long i = 0; i < n_instances; ++i) {
        const int sd = 2 + static_cast<int>(rng.uniform_int(3));
        const int ad = 1 + static_cast<int>(rng.uniform_int(2));
        OtpConfig ocfg;
        ocfg.eps_delta = 0.02 + 0.08 * rng.uniform();
        PerturbationNet pnet(sd, ad, {8}, i % 2 == 0 ? PerturbKind::Cost : PerturbKind::Reward,
                             ocfg, rng);

        std::vector<OtpSample> batch(16);
        for (OtpSample& smp : batch) {
            smp.s.resize(sd);
            smp.s_hat_prime.resize(sd);
            smp.a.resize(ad);
            for (double& v : smp.s) v = rng.uniform(-1.0, 1.0);
            for (double& v : smp.a) v = rng.uniform(-1.0, 1.0);
            for (int k = 0; k < sd; ++k)
                smp.s_hat_prime[k] = rng.uniform() < 0.2
                                         ? smp.s[k] // frozen coordinate
                                         : smp.s[k] + rng.uniform(-0.5, 0.5);
        }

        // identity at init: zero-initialized head leaves every successor and
        // cost bit-exactly untouched
        double init_dev = 0.0;
        for (const OtpSample& smp : batch) {
            const VirtualTransition vt =
                apply_perturbation(pnet, smp.s, smp.a, smp.s_hat_prime);
            for (int k = 0; k < sd; ++k)
                if (vt.s_tilde_prime[k] != smp.s_hat_prime[k]) init_dev = kInf;
            init_dev = std::max(init_dev, std::fabs(vt.cost));
        }
        json detail;
        detail["eps_delta"] = ocfg.eps_delta;
        sink.add("otp-identities", "identity_at_init", i, init_dev, 0.0, detail);

        // train a little against a quadratic probe so deltas are non-trivial
        QuadraticProbe probe(rng, sd);
        for (int u = 0; u < 60; ++u) update_otp(pnet, batch, probe, 3e-3, 0.05);

        double cost_dev = 0.0, clip_dev = 0.0, percent_dev = 0.0;
        for (const OtpSample& smp : batch) {
            const VirtualTransition vt =
                apply_perturbation(pnet, smp.s, smp.a, smp.s_hat_prime);
            double sq = 0.0;
            for (int k = 0; k < sd; ++k) {
                sq += vt.delta[k] * vt.delta[k];
                clip_dev = std::max(clip_dev,
                                    std::fabs(vt.delta[k]) - 2.0 * ocfg.eps_delta);
            }
            cost_dev = std::max(cost_dev, std::fabs(vt.cost - sq / sd));
            const double ground =
                eval_cost(TransportCost::percent_sq(smp.s), smp.s_hat_prime,
                          vt.s_tilde_prime);
            percent_dev = std::max(percent_dev, std::fabs(vt.cost - ground));
        }
        sink.add("otp-identities", "cost_identity", i, cost_dev, 1e-12, detail);
        sink.add("otp-identities", "clip_box", i, clip_dev, 1e-12, detail);
        sink.add("otp-identities", "percent_ground_cost", i, percent_dev, 1e-12,
                 detail);
    }
}

} // namespace

VerifyOutcome cmd_verify(const std::string& suite, std::uint64_t seed,
                         int n_instances, const std::string& outdir) {
    require(n_instances > 0, "verify needs a positive instance count");
    const std::set<std::string> known = {"duality", "contraction", "gradients",
                                         "otp-identities", "all"};
    require(known.count(suite) == 1, "unknown verify suite: " + suite);
    require(!outdir.empty(), "verify needs an output directory");
    std::filesystem::create_directories(outdir);

    RunManifest man("verify", "");
    man.seeds = {seed};
    json cfg;
    cfg["suite"] = suite;
    cfg["n_instances"] = n_instances;
    man.config_json = cfg.dump();
    man.outdir = outdir;
    man.save(outdir + "/manifest.json");
    const std::string tag = man.hash();

    CheckSink sink;
    if (suite == "duality" || suite == "all") suite_duality(sink, seed, n_instances);
    if (suite == "contraction" || suite == "all")
        suite_contraction(sink, seed, n_instances);
    if (suite == "gradients" || suite == "all")
        suite_gradients(sink, seed, n_instances);
    if (suite == "otp-identities" || suite == "all")
        suite_otp_identities(sink, seed, n_instances);

    VerifyOutcome out;
    out.checks = std::move(sink.checks);
    out.csv_path = outdir + "/verify.csv";

    std::ostringstream csv;
    csv << "schema,manifest,suite,check,instance,value,tolerance,pass\n";
    for (const VerifyCheck& c : out.checks) {
        csv << kVerifySchema << ',' << tag << ',' << c.suite << ',' << c.check << ','
            << c.instance << ',' << format_double(c.value) << ','
            << format_double(c.tolerance) << ',' << (c.pass ? 1 : 0) << '\n';
        if (!c.pass) {
            ++out.n_failed;
            const std::string replay = outdir + "/failing_" + c.suite + "_" +
                                       std::to_string(c.instance) + ".json";
            json j = json::parse(c.detail);
            j["suite"] = c.suite;
            j["check"] = c.check;
            j["instance"] = c.instance;
            j["value"] = c.value;
            j["tolerance"] = c.tolerance;
            j["manifest"] = tag;
            j["seed"] = seed;
            write_file(replay, j.dump(2) + "\n");
            out.replay_paths.push_back(replay);
        }
    }
    write_file(out.csv_path, csv.str());
    return out;
}

// ---------------------------------------------------------------------------
// cmd_train

namespace {

void apply_train_block(TrainConfig& cfg, const json& t) {
    if (t.contains("gamma")) cfg.gamma = t["gamma"].get<double>();
    if (t.contains("tau")) cfg.tau = t["tau"].get<double>();
    if (t.contains("batch")) cfg.batch = t["batch"].get<int>();
    if (t.contains("updates_per_step"))
        cfg.updates_per_step = t["updates_per_step"].get<int>();
    if (t.contains("lr_policy")) cfg.lr_policy = t["lr_policy"].get<double>();
    if (t.contains("lr_critic")) cfg.lr_critic = t["lr_critic"].get<double>();
    if (t.contains("lr_otp")) cfg.lr_otp = t["lr_otp"].get<double>();
    if (t.contains("dual_lr_otp")) cfg.dual_lr_otp = t["dual_lr_otp"].get<double>();
    if (t.contains("eps_delta")) cfg.eps_delta = t["eps_delta"].get<double>();
    if (t.contains("budget")) cfg.budget = t["budget"].get<double>();
    if (t.contains("method")) cfg.method = parse_method(t["method"].get<std::string>());
    if (t.contains("lagrange_dual_lr"))
        cfg.lagrange_dual_lr = t["lagrange_dual_lr"].get<double>();
    if (t.contains("robust")) cfg.robust = t["robust"].get<bool>();
    if (t.contains("total_steps")) cfg.total_steps = t["total_steps"].get<long>();
    if (t.contains("seed")) cfg.seed = t["seed"].get<std::uint64_t>();
    if (t.contains("warmup")) cfg.warmup = t["warmup"].get<int>();
    if (t.contains("constraint_samples"))
        cfg.constraint_samples = t["constraint_samples"].get<int>();
    if (t.contains("batch_eval_rollouts"))
        cfg.batch_eval_rollouts = t["batch_eval_rollouts"].get<int>();
    if (t.contains("eval_every")) cfg.eval_every = t["eval_every"].get<long>();
    if (t.contains("checkpoint_every"))
        cfg.checkpoint_every = t["checkpoint_every"].get<long>();
    if (t.contains("curve_every")) cfg.curve_every = t["curve_every"].get<long>();
    if (t.contains("replay_capacity"))
        cfg.replay_capacity = t["replay_capacity"].get<std::size_t>();
    if (t.contains("hidden_policy"))
        cfg.hidden_policy = t["hidden_policy"].get<std::vector<int>>();
    if (t.contains("hidden_critic"))
        cfg.hidden_critic = t["hidden_critic"].get<std::vector<int>>();
    if (t.contains("hidden_otp"))
        cfg.hidden_otp = t["hidden_otp"].get<std::vector<int>>();
    if (t.contains("init_sigma")) cfg.init_sigma = t["init_sigma"].get<double>();
    if (t.contains("freeze_otp")) cfg.freeze_otp = t["freeze_otp"].get<bool>();
}

} // namespace

TrainConfig task_train_defaults(const std::string& task) {
    const auto env = make_env(task); // validates the task name
    TrainConfig cfg;
    cfg.budget = env->budget(); // fallback; tasks normally override with the
                                // discounted-units threshold in their train block
    const json root = json::parse(read_text_file(config_dir() + "/" + task + ".json"));
    if (root.contains("train")) apply_train_block(cfg, root["train"]);
    return cfg;
}

void apply_train_overrides(TrainConfig& cfg, const std::string& json_text) {
    apply_train_block(cfg, json::parse(json_text));
}

TrainOutcome cmd_train(const std::string& task, const TrainConfig& cfg,
                       const std::string& outdir) {
    // usage errors surface before any compute
    auto env = make_env(task);
    cfg.validate();
    require(!outdir.empty(), "train needs an output directory");
    std::filesystem::create_directories(outdir);

    RunManifest man("train", task);
    man.seeds = {cfg.seed};
    man.config_json = cfg.to_json_text();
    man.outdir = outdir;
    man.save(outdir + "/manifest.json");

    TrainOutcome out{man, {}};
    out.artifacts = train(*env, cfg, outdir, man.hash());
    return out;
}

// ---------------------------------------------------------------------------
// cmd_eval

namespace {

int eval_workers(std::size_t n_jobs) {
    const char* raw = std::getenv("OTP_NUM_WORKERS");
    long w = 1;
    if (raw != nullptr && *raw != '\0') {
        w = std::strtol(raw, nullptr, 10);
        if (w < 1) w = 1;
        if (w > 64) w = 64;
    }
    return static_cast<int>(std::min<std::size_t>(w, std::max<std::size_t>(n_jobs, 1)));
}

std::string bool_cell(bool b) { return b ? "1" : "0"; }

} // namespace

std::vector<EvalAggregate> EvalReport::aggregate(const std::vector<EvalCell>& cells,
                                                 const std::string& baseline_group) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const EvalCell*>> by_group;
    for (const EvalCell& c : cells) {
        auto& bucket = by_group[c.group()];
        if (bucket.empty()) order.push_back(c.group());
        bucket.push_back(&c);
    }
    require(by_group.count(baseline_group) == 1,
            "aggregate: baseline group '" + baseline_group + "' has no cells");

    using ParamKey = std::pair<std::string, double>; // (task|param_name, value)
    auto param_key = [](const EvalCell& c) {
        return ParamKey{c.task + "|" + c.param_name, c.param_value};
    };
    std::set<ParamKey> base_params;
    for (const EvalCell* c : by_group[baseline_group]) base_params.insert(param_key(*c));

    std::vector<EvalAggregate> aggs;
    for (const std::string& g : order) {
        const auto& bucket = by_group[g];
        EvalAggregate agg;
        agg.group = g;
        agg.n_cells = static_cast<int>(bucket.size());
        int safe = 0;
        double r = 0.0, c_sum = 0.0;
        std::set<ParamKey> own_params;
        for (const EvalCell* c : bucket) {
            safe += c->safe ? 1 : 0;
            r += c->total_reward;
            c_sum += c->total_cost;
            own_params.insert(param_key(*c));
        }
        agg.pct_safe = 100.0 * safe / bucket.size();
        agg.mean_reward = r / bucket.size();
        agg.mean_cost = c_sum / bucket.size();

        // normalization over the shared parameter grid only, per Table-1-style
        // matched-cell comparison
        double gr = 0.0, gc = 0.0, br = 0.0, bc = 0.0;
        long gn = 0, bn = 0;
        for (const EvalCell* c : bucket)
            if (base_params.count(param_key(*c)) == 1) {
                gr += c->total_reward;
                gc += c->total_cost;
                ++gn;
            }
        for (const EvalCell* c : by_group[baseline_group])
            if (own_params.count(param_key(*c)) == 1) {
                br += c->total_reward;
                bc += c->total_cost;
                ++bn;
            }
        auto norm = [](double num, long nn, double den, long dn) {
            if (nn == 0 || dn == 0) return 1.0; // disjoint grids: undefined, report 1
            const double a = num / nn, b = den / dn;
            if (a == b) return 1.0; // exact by construction for baseline vs itself
            if (b == 0.0) return a == 0.0 ? 1.0 : kInf;
            return a / b;
        };
        agg.norm_reward = norm(gr, gn, br, bn);
        agg.norm_cost = norm(gc, gn, bc, bn);
        aggs.push_back(agg);
    }
    return aggs;
}

std::string EvalReport::to_csv_text() const {
    std::ostringstream csv;
    csv << kEvalHeader << '\n';
    for (const EvalCell& c : cells) {
        csv << kEvalSchema << ",cell," << manifest_hash << ',' << csv_field(c.task)
            << ',' << csv_field(c.method) << ',' << (c.robust ? "on" : "off") << ','
            << csv_field(c.param_name) << ',' << format_double(c.param_value) << ','
            << c.train_seed << ',' << c.rollouts << ','
            << format_double(c.total_reward) << ',' << format_double(c.total_cost)
            << ',' << bool_cell(c.safe) << ',' << csv_field(c.group())
            << ",,,,,,\n";
    }
    for (const EvalAggregate& a : aggregates) {
        csv << kEvalSchema << ",aggregate," << manifest_hash << ",,,,,,,,,,,"
            << csv_field(a.group) << ',' << a.n_cells << ','
            << format_double(a.pct_safe) << ',' << format_double(a.mean_reward) << ','
            << format_double(a.mean_cost) << ',' << format_double(a.norm_reward)
            << ',' << format_double(a.norm_cost) << '\n';
    }
    return csv.str();
}

EvalReport EvalReport::from_csv_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "eval csv: empty input");
    const std::vector<std::string> header = csv_split(line);
    const std::vector<std::string> expected = csv_split(kEvalHeader);
    for (std::size_t i = 0; i < std::max(header.size(), expected.size()); ++i) {
        const std::string got = i < header.size() ? header[i] : "<missing>";
        const std::string want = i < expected.size() ? expected[i] : "<none>";
        if (got != want)
            throw std::invalid_argument("eval csv schema mismatch at column " +
                                        std::to_string(i + 1) + ": expected '" + want +
                                        "', found '" + got + "'");
    }

    EvalReport rep;
    long row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const std::vector<std::string> f = csv_split(line);
        require(f.size() == expected.size(),
                "eval csv row " + std::to_string(row) + ": expected " +
                    std::to_string(expected.size()) + " columns, found " +
                    std::to_string(f.size()));
        require(f[0] == kEvalSchema, "eval csv row " + std::to_string(row) +
                                         ": unknown schema tag '" + f[0] + "'");
        if (rep.manifest_hash.empty()) rep.manifest_hash = f[2];
        if (f[1] == "cell") {
            EvalCell c;
            c.task = f[3];
            c.method = f[4];
            c.robust = f[5] == "on";
            c.param_name = f[6];
            c.param_value = std::strtod(f[7].c_str(), nullptr);
            c.train_seed = std::strtoull(f[8].c_str(), nullptr, 10);
            c.rollouts = static_cast<int>(std::strtol(f[9].c_str(), nullptr, 10));
            c.total_reward = std::strtod(f[10].c_str(), nullptr);
            c.total_cost = std::strtod(f[11].c_str(), nullptr);
            c.safe = f[12] == "1";
            rep.cells.push_back(c);
        } else if (f[1] == "aggregate") {
            EvalAggregate a;
            a.group = f[13];
            a.n_cells = static_cast<int>(std::strtol(f[14].c_str(), nullptr, 10));
            a.pct_safe = std::strtod(f[15].c_str(), nullptr);
            a.mean_reward = std::strtod(f[16].c_str(), nullptr);
            a.mean_cost = std::strtod(f[17].c_str(), nullptr);
            a.norm_reward = std::strtod(f[18].c_str(), nullptr);
            a.norm_cost = std::strtod(f[19].c_str(), nullptr);
            require(a.pct_safe >= 0.0 && a.pct_safe <= 100.0,
                    "eval csv row " + std::to_string(row) +
                        ": pct_safe outside [0, 100]");
            rep.aggregates.push_back(a);
        } else {
            throw std::invalid_argument("eval csv row " + std::to_string(row) +
                                        ": unknown row_type '" + f[1] + "'");
        }
    }
    return rep;
}

EvalReport cmd_eval(const std::vector<std::string>& checkpoint_paths,
                    const std::string& task, int n_points, int rollouts,
                    std::uint64_t seed, const std::string& outdir) {
    require(!checkpoint_paths.empty(), "eval needs at least one checkpoint");
    require(n_points >= 2, "eval needs n_points >= 2");
    require(rollouts >= 1, "eval needs rollouts >= 1");
    require(!outdir.empty(), "eval needs an output directory");

    std::string missing;
    for (const std::string& p : checkpoint_paths)
        if (!std::filesystem::exists(p)) missing += "\n  " + p;
    require(missing.empty(), "missing checkpoint(s):" + missing);

    struct Source {
        Checkpoint ck;
        std::string path;
        std::string method;
        bool robust = false;
        std::uint64_t train_seed = 0;
    };
    std::vector<Source> sources;
    for (const std::string& p : checkpoint_paths) {
        Source src;
        src.ck = Checkpoint::load(p);
        src.path = p;
        const json meta = json::parse(src.ck.meta_json);
        const std::string ck_task = meta.at("task").get<std::string>();
        require(ck_task == task, "checkpoint " + p + " was trained on task '" +
                                     ck_task + "', not '" + task + "'");
        const json& cfg = meta.at("config");
        src.method = cfg.at("method").get<std::string>();
        src.robust = cfg.at("robust").get<bool>();
        src.train_seed = cfg.at("seed").get<std::uint64_t>();
        sources.push_back(std::move(src));
    }

    auto env = make_env(task);
    const auto suite = make_test_suite(*env, n_points);
    const std::string pname = env->perturbation().name;
    const double budget = env->budget();

    struct Job {
        std::size_t src;
        std::size_t point;
    };
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < sources.size(); ++s)
        for (std::size_t p = 0; p < suite.size(); ++p) jobs.push_back({s, p});

    std::vector<EvalCell> cells(jobs.size());
    auto run_job = [&](std::size_t idx) {
        const Job& job = jobs[idx];
        const Source& src = sources[job.src];
        Agent agent = Agent::from_checkpoint(src.ck);
        auto cell_env = suite[job.point]->clone();
        double r = 0.0, c = 0.0;
        for (int j = 0; j < rollouts; ++j) {
            // seeds shared across checkpoints: methods face matched episodes
            const std::uint64_t rs = mix64(mix64(seed, job.point), j);
            const RolloutResult rr =
                rollout(*cell_env, agent.policy, /*deterministic=*/true, rs, false);
            r += rr.total_reward;
            c += rr.total_cost;
        }
        EvalCell cell;
        cell.task = task;
        cell.method = src.method;
        cell.robust = src.robust;
        cell.param_name = pname;
        cell.param_value = suite[job.point]->param();
        cell.train_seed = src.train_seed;
        cell.rollouts = rollouts;
        cell.total_reward = r / rollouts;
        cell.total_cost = c / rollouts;
        cell.safe = cell.total_cost <= budget;
        cells[idx] = std::move(cell);
    };

    const int workers = eval_workers(jobs.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i) run_job(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < jobs.size();
                     i = next.fetch_add(1))
                    run_job(i);
            });
        for (std::thread& t : pool) t.join();
    }

    std::filesystem::create_directories(outdir);
    RunManifest man("eval", task);
    man.seeds = {seed};
    for (const Source& src : sources) man.seeds.push_back(src.train_seed);
    json cfg;
    cfg["n_points"] = n_points;
    cfg["rollouts"] = rollouts;
    cfg["checkpoints"] = checkpoint_paths;
    man.config_json = cfg.dump();
    man.outdir = outdir;
    man.save(outdir + "/manifest.json");

    EvalReport rep;
    rep.manifest_hash = man.hash();
    rep.cells = std::move(cells);
    rep.aggregates = EvalReport::aggregate(rep.cells, rep.cells.front().group());
    write_file(outdir + "/eval.csv", rep.to_csv_text());
    return rep;
}

// ---------------------------------------------------------------------------
// cmd_report

namespace {

std::string fmt2(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string fmt1(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

std::string fmt3g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points; ///< sorted by x
};

std::string line_chart_svg(const std::string& title, const std::string& xlabel,
                           const std::string& ylabel,
                           const std::vector<Series>& series,
                           const std::string& manifest_hash) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                    "#9467bd", "#ff7f0e", "#8c564b"};
    const double w = 640.0, h = 420.0;
    const double x0 = 72.0, x1 = 600.0, y0 = 360.0, y1 = 48.0; // y grows upward

    double xmin = kInf, xmax = -kInf, ymin = kInf, ymax = -kInf;
    for (const Series& s : series)
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (!(xmax > xmin)) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (!(ymax > ymin)) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto sx = [&](double x) { return x0 + (x - xmin) / (xmax - xmin) * (x1 - x0); };
    auto sy = [&](double y) { return y0 + (y - ymin) / (ymax - ymin) * (y1 - y0); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
        << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
    svg << "<!-- manifest " << manifest_hash << " -->\n";
    svg << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << (w / 2) << "\" y=\"24\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"16\">"
        << title << "</text>\n";
    // axes
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\""
        << y0 << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\""
        << y1 << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 3; ++t) {
        const double xv = xmin + t * (xmax - xmin) / 3.0;
        const double yv = ymin + t * (ymax - ymin) / 3.0;
        svg << "<text x=\"" << sx(xv) << "\" y=\"" << (y0 + 18)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
               "font-size=\"11\">"
            << fmt3g(xv) << "</text>\n";
        svg << "<text x=\"" << (x0 - 8) << "\" y=\"" << (sy(yv) + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
            << fmt3g(yv) << "</text>\n";
        svg << "<line x1=\"" << x0 << "\" y1=\"" << sy(yv) << "\" x2=\"" << x1
            << "\" y2=\"" << sy(yv) << "\" stroke=\"#dddddd\"/>\n";
    }
    svg << "<text x=\"" << ((x0 + x1) / 2) << "\" y=\"" << (h - 10)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
        << xlabel << "</text>\n";
    svg << "<text x=\"18\" y=\"" << ((y0 + y1) / 2)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
           "transform=\"rotate(-90 18 "
        << ((y0 + y1) / 2) << ")\">" << ylabel << "</text>\n";

    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = palette[i % 6];
        svg << "<polyline fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : series[i].points)
            svg << fmt3g(sx(x)) << ',' << fmt3g(sy(y)) << ' ';
        svg << "\"/>\n";
        for (const auto& [x, y] : series[i].points)
            svg << "<circle cx=\"" << fmt3g(sx(x)) << "\" cy=\"" << fmt3g(sy(y))
                << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        svg << "<text x=\"" << (x1 - 4) << "\" y=\"" << (y1 + 16 * (i + 1))
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" "
               "fill=\""
            << color << "\">" << series[i].name << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

} // namespace

ReportOutcome cmd_report(const std::vector<std::string>& eval_csv_paths,
                         const std::string& outdir) {
    require(!eval_csv_paths.empty(), "report needs at least one eval csv");
    require(!outdir.empty(), "report needs an output directory");

    std::vector<EvalCell> cells;
    std::string baseline_group;
    for (const std::string& path : eval_csv_paths) {
        const EvalReport rep = EvalReport::from_csv_text(read_text_file(path));
        if (baseline_group.empty() && !rep.cells.empty())
            baseline_group = rep.cells.front().group();
        cells.insert(cells.end(), rep.cells.begin(), rep.cells.end());
    }
    require(!cells.empty(), "report: the inputs contain no cell rows");

    // the report recomputes every aggregate from cell rows; input aggregate
    // rows are never trusted or reused
    const std::vector<EvalAggregate> aggs =
        EvalReport::aggregate(cells, baseline_group);

    std::set<std::string> task_set;
    for (const EvalCell& c : cells) task_set.insert(c.task);
    std::string tasks_joined;
    for (const std::string& t : task_set)
        tasks_joined += (tasks_joined.empty() ? "" : "+") + t;

    std::filesystem::create_directories(outdir);
    std::filesystem::create_directories(outdir + "/figures");
    RunManifest man("report", tasks_joined);
    json cfg;
    cfg["inputs"] = eval_csv_paths;
    man.config_json = cfg.dump();
    man.outdir = outdir;
    man.save(outdir + "/manifest.json");
    const std::string tag = man.hash();

    std::ostringstream md;
    md << "# Evaluation report\n\n";
    md << "Aggregate performance over " << cells.size()
       << " cells (task x test parameter x training seed); reward and cost are "
          "normalized against the `"
       << baseline_group << "` baseline over the shared parameter grid.\n\n";
    md << "| method | cells | % safe | normalized reward | normalized cost |\n";
    md << "|---|---:|---:|---:|---:|\n";
    for (const EvalAggregate& a : aggs)
        md << "| `" << a.group << "` | " << a.n_cells << " | " << fmt1(a.pct_safe)
           << " | " << fmt2(a.norm_reward) << " | " << fmt2(a.norm_cost) << " |\n";

    // paired comparisons vs the baseline on matched cells
    std::map<std::string, std::map<std::string, const EvalCell*>> by_group_key;
    for (const EvalCell& c : cells) {
        const std::string key = c.task + "|" + c.param_name + "|" +
                                format_double(c.param_value) + "|" +
                                std::to_string(c.train_seed);
        by_group_key[c.group()][key] = &c;
    }
    md << "\n## Paired comparisons vs `" << baseline_group << "`\n\n";
    md << "Cells matched on (task, parameter value, training seed); sign test "
          "counts cost wins (lower is better), and Welch's t tests the "
          "one-sided hypothesis that the method's mean cost exceeds the "
          "baseline's.\n\n";
    bool any_pair = false;
    for (const EvalAggregate& a : aggs) {
        if (a.group == baseline_group) continue;
        std::vector<double> g_cost, b_cost;
        for (const auto& [key, cell] : by_group_key[a.group]) {
            const auto it = by_group_key[baseline_group].find(key);
            if (it == by_group_key[baseline_group].end()) continue;
            g_cost.push_back(cell->total_cost);
            b_cost.push_back(it->second->total_cost);
        }
        md << "- `" << a.group << "`: ";
        if (g_cost.size() < 2) {
            md << "fewer than 2 matched cells; no test performed.\n";
            continue;
        }
        any_pair = true;
        const stats::SignTestResult st = stats::sign_test(g_cost, b_cost);
        const stats::WelchResult wt = stats::welch_t_test(g_cost, b_cost);
        md << st.wins << " cost wins / " << st.losses << " losses / " << st.ties
           << " ties over " << g_cost.size() << " matched cells"
           << " (sign test p = " << fmt3g(st.p_two_sided) << "); Welch t = "
           << fmt3g(wt.t) << ", df = " << fmt3g(wt.df)
           << ", one-sided p = " << fmt3g(wt.p_one_sided) << ".\n";
    }
    if (aggs.size() == 1) md << "- only one method present; nothing to compare.\n";
    else if (!any_pair) md << "\n";

    // figures: mean reward / cost vs parameter, one chart pair per task
    ReportOutcome out;
    md << "\n## Figures\n\n";
    for (const std::string& task : task_set) {
        for (const char* metric : {"reward", "cost"}) {
            std::vector<Series> series;
            std::string param_label;
            for (const EvalAggregate& a : aggs) {
                std::map<double, std::pair<double, long>> acc;
                for (const EvalCell& c : cells) {
                    if (c.group() != a.group || c.task != task) continue;
                    param_label = c.param_name;
                    auto& slot = acc[c.param_value];
                    slot.first +=
                        std::strcmp(metric, "reward") == 0 ? c.total_reward
                                                           : c.total_cost;
                    slot.second += 1;
                }
                if (acc.empty()) continue;
                Series s;
                s.name = a.group;
                for (const auto& [x, sum_n] : acc)
                    s.points.emplace_back(x, sum_n.first / sum_n.second);
                series.push_back(std::move(s));
            }
            if (series.empty()) continue;
            const std::string fname = task + "_" + metric + ".svg";
            const std::string fpath = outdir + "/figures/" + fname;
            write_file(fpath,
                       line_chart_svg("mean total " + std::string(metric) + " - " +
                                          task,
                                      param_label, std::string("total ") + metric,
                                      series, tag));
            out.figure_paths.push_back(fpath);
            md << "![" << task << ' ' << metric << "](figures/" << fname << ")\n";
        }
    }

    md << "\nmanifest: " << tag << "\n";
    out.markdown = md.str();
    out.markdown_path = outdir + "/report.md";
    write_file(out.markdown_path, out.markdown);
    return out;
}

} // namespace otprl
