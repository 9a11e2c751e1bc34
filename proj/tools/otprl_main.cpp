// otprl: command-line front end over the library's four harness entry
// points. See `otprl --help` and README.md for usage; every run writes a
// manifest.json that fingerprints the command, config, and code version.

#include "otprl/harness.hpp"
#include "otprl/safe_rl.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

using namespace otprl;

namespace {

int run_verify(const std::string& suite, std::uint64_t seed, int instances,
               const std::string& outdir) {
    const VerifyOutcome out = cmd_verify(suite, seed, instances, outdir);
    int shown = 0;
    for (const VerifyCheck& c : out.checks) {
        if (c.pass) continue;
        if (++shown <= 20)
            std::printf("FAIL %s/%s #%ld  value %.3g > tol %.3g\n", c.suite.c_str(),
                        c.check.c_str(), c.instance, c.value, c.tolerance);
    }
    if (shown > 20) std::printf("... %d further failures\n", shown - 20);
    std::printf("%s: %zu checks, %d failed  ->  %s\n",
                out.n_failed == 0 ? "PASS" : "FAIL", out.checks.size(), out.n_failed,
                out.csv_path.c_str());
    for (const std::string& p : out.replay_paths)
        std::printf("replay: %s\n", p.c_str());
    return out.n_failed == 0 ? 0 : 1;
}

std::string load_overrides(const std::string& arg) {
    // inline JSON or a path to a JSON file
    if (!arg.empty() && arg.front() == '{') return arg;
    return read_text_file(arg);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"otprl: optimal-transport-perturbed safe RL toolkit"};
    app.set_version_flag("--version", code_version());
    app.require_subcommand(1);

    // verify ----------------------------------------------------------------
    auto* verify = app.add_subcommand(
        "verify", "run seeded property suites over the exact solvers");
    std::string v_suite = "all";
    std::uint64_t v_seed = 0;
    int v_instances = 50;
    std::string v_outdir = "runs/verify";
    verify->add_option("--suite", v_suite,
                       "duality | contraction | gradients | otp-identities | all")
        ->capture_default_str();
    verify->add_option("--seed", v_seed, "suite RNG seed")->capture_default_str();
    verify->add_option("--instances", v_instances, "instances per suite")
        ->capture_default_str();
    verify->add_option("--outdir", v_outdir, "artifact directory")
        ->capture_default_str();

    // train -----------------------------------------------------------------
    auto* train = app.add_subcommand(
        "train", "train one agent on a task's nominal parameter");
    std::string t_task;
    std::string t_method = "crpo";
    std::string t_robust = "off";
    std::uint64_t t_seed = 0;
    long t_steps = 150000;
    double t_eps = -1.0, t_budget = -1.0;
    std::string t_config, t_outdir = "runs/train";
    train->add_option("--task", t_task, "chain | pointgoal")->required();
    train->add_option("--method", t_method, "crpo | lagrange")
        ->check(CLI::IsMember({"crpo", "lagrange"}))
        ->capture_default_str();
    train->add_option("--robust", t_robust, "perturbation networks on | off")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();
    train->add_option("--seed", t_seed, "training seed")->capture_default_str();
    train->add_option("--steps", t_steps, "environment steps")
        ->capture_default_str();
    train->add_option("--eps-delta", t_eps,
                      "per-coordinate perturbation magnitude (robust runs)");
    train->add_option("--budget", t_budget,
                      "constraint threshold in discounted-return units "
                      "(default: the task config's train block)");
    train->add_option("--config", t_config,
                      "TrainConfig overrides: inline JSON or a JSON file path");
    train->add_option("--outdir", t_outdir, "artifact directory")
        ->capture_default_str();

    // eval ------------------------------------------------------------------
    auto* eval = app.add_subcommand(
        "eval", "sweep checkpoints over a task's perturbation range");
    std::vector<std::string> e_ckpts;
    std::string e_task;
    int e_points = 5, e_rollouts = 10;
    std::uint64_t e_seed = 0;
    std::string e_outdir = "runs/eval";
    eval->add_option("--checkpoint", e_ckpts, "checkpoint file (repeatable)")
        ->required();
    eval->add_option("--task", e_task, "chain | pointgoal")->required();
    eval->add_option("--n-points", e_points, "sweep points across the test range")
        ->capture_default_str();
    eval->add_option("--rollouts", e_rollouts, "episodes per sweep point")
        ->capture_default_str();
    eval->add_option("--seed", e_seed, "rollout seed base")->capture_default_str();
    eval->add_option("--outdir", e_outdir, "artifact directory")
        ->capture_default_str();

    // report ----------------------------------------------------------------
    auto* report = app.add_subcommand(
        "report", "merge eval CSVs into a markdown report with figures");
    std::vector<std::string> r_inputs;
    std::string r_outdir = "runs/report";
    report->add_option("--input", r_inputs, "eval.csv produced by eval (repeatable)")
        ->required();
    report->add_option("--outdir", r_outdir, "artifact directory")
        ->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*verify) return run_verify(v_suite, v_seed, v_instances, v_outdir);

        if (*train) {
            TrainConfig cfg = task_train_defaults(t_task);
            cfg.method = parse_method(t_method);
            cfg.robust = t_robust == "on";
            cfg.seed = t_seed;
            cfg.total_steps = t_steps;
            if (t_eps >= 0.0) cfg.eps_delta = t_eps;
            if (t_budget >= 0.0) cfg.budget = t_budget;
            if (!t_config.empty()) apply_train_overrides(cfg, load_overrides(t_config));
            const TrainOutcome out = cmd_train(t_task, cfg, t_outdir);
            std::printf("trained %s for %ld steps (%s%s, seed %llu)%s\n",
                        t_task.c_str(), out.artifacts.steps_completed,
                        method_name(cfg.method).c_str(), cfg.robust ? "+otp" : "",
                        static_cast<unsigned long long>(cfg.seed),
                        out.artifacts.halted_on_nan ? "  [halted on NaN]" : "");
            std::printf("final train reward %.2f  cost %.2f\n",
                        out.artifacts.final_train_reward,
                        out.artifacts.final_train_cost);
            std::printf("curves:     %s\n", out.artifacts.curves_path.c_str());
            std::printf("checkpoint: %s\n",
                        out.artifacts.checkpoint_paths.back().c_str());
            return out.artifacts.halted_on_nan ? 1 : 0;
        }

        if (*eval) {
            const EvalReport rep =
                cmd_eval(e_ckpts, e_task, e_points, e_rollouts, e_seed, e_outdir);
            std::printf("%-16s %7s %8s %12s %10s\n", "group", "cells", "% safe",
                        "mean reward", "mean cost");
            for (const EvalAggregate& a : rep.aggregates)
                std::printf("%-16s %7d %8.1f %12.2f %10.2f\n", a.group.c_str(),
                            a.n_cells, a.pct_safe, a.mean_reward, a.mean_cost);
            std::printf("eval csv: %s/eval.csv\n", e_outdir.c_str());
            return 0;
        }

        if (*report) {
            const ReportOutcome out = cmd_report(r_inputs, r_outdir);
            std::printf("report:  %s\n", out.markdown_path.c_str());
            for (const std::string& f : out.figure_paths)
                std::printf("figure:  %s\n", f.c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
