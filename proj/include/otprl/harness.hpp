#pragma once

/// Command layer behind the CLI: verification suites over the exact solvers,
/// training runs with manifests, perturbation-sweep evaluation, and report
/// generation. Commands are plain functions so tests can drive them without
/// spawning processes; the CLI binary is a thin argument parser on top.
///
/// Artifact layout under --outdir:
///   manifest.json   provenance (config snapshot, seeds, code version, hash)
///   curves.csv      training diagnostics (written by safe_rl::train)
///   verify.csv      per-check results of cmd_verify
///   eval.csv        per-cell sweep results + aggregate rows of cmd_eval
///   report.md       cmd_report summary table and paired comparisons
///   figures/*.svg   hand-written line charts referenced by report.md
///
/// Every emitted file carries the manifest hash: CSVs in a manifest column,
/// report.md in a footer line, SVGs in an XML comment.

#include "otprl/envs.hpp"
#include "otprl/safe_rl.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace otprl {

/// Content hash of the source tree, baked in at build time; "unversioned"
/// in ad-hoc builds.
std::string code_version();

/// Provenance record for one command invocation. The hash covers everything
/// except the timestamp, so re-running the same configuration yields the
/// same hash (and therefore byte-identical tagged CSVs) while manifest.json
/// still records when the run happened.
struct RunManifest {
    std::string command; ///< verify | train | eval | report
    std::string task;
    std::vector<std::uint64_t> seeds;
    std::string config_json = "{}"; ///< resolved config snapshot
    std::string code;               ///< code_version() at construction
    std::string created;            ///< UTC timestamp; excluded from hash()
    std::string outdir;

    RunManifest(std::string command_in, std::string task_in);

    std::string hash() const;
    std::string to_json_text() const;
    void save(const std::string& path) const;
};

// ---------------------------------------------------------------------------
// verify

struct VerifyCheck {
    std::string suite;
    std::string check;
    long instance = 0;
    double value = 0.0;     ///< measured quantity (gap, error, count, ...)
    double tolerance = 0.0; ///< pass iff value <= tolerance
    bool pass = false;
    std::string detail; ///< failing instance as JSON; empty when passing
};

struct VerifyOutcome {
    std::vector<VerifyCheck> checks;
    std::string csv_path;
    std::vector<std::string> replay_paths; ///< serialized failing instances
    int n_failed = 0;
};

/// Runs one of the named property suites {duality, contraction, gradients,
/// otp-identities, all} with seeded instance generation. Writes verify.csv
/// and manifest.json under outdir; failing instances additionally land in
/// outdir/failing_<suite>_<instance>.json for replay.
VerifyOutcome cmd_verify(const std::string& suite, std::uint64_t seed,
                         int n_instances, const std::string& outdir);

// ---------------------------------------------------------------------------
// train

/// Task-tuned training defaults from the "train" block of
/// configs/<task>.json, on top of the TrainConfig field defaults. Note the
/// block's "budget" is the constraint threshold in discounted-return units
/// (what the critics estimate), not the env's per-episode budget.
TrainConfig task_train_defaults(const std::string& task);

/// Patches cfg with whatever subset of TrainConfig keys the JSON object
/// carries (the CLI's --config escape hatch); unknown keys are ignored.
void apply_train_overrides(TrainConfig& cfg, const std::string& json_text);

struct TrainOutcome {
    RunManifest manifest;
    TrainArtifacts artifacts;
};

/// Validates the fully resolved config, writes the manifest, then delegates
/// to safe_rl::train with the manifest hash as the curves run tag.
TrainOutcome cmd_train(const std::string& task, const TrainConfig& cfg,
                       const std::string& outdir);

// ---------------------------------------------------------------------------
// eval

/// One sweep cell: a trained policy evaluated at one test-env parameter
/// value, averaged over a fixed set of deterministic rollouts.
struct EvalCell {
    std::string task;
    std::string method; ///< crpo | lagrange
    bool robust = false;
    std::string param_name;
    double param_value = 0.0;
    std::uint64_t train_seed = 0;
    int rollouts = 0;
    double total_reward = 0.0; ///< mean undiscounted episode total
    double total_cost = 0.0;   ///< mean undiscounted episode total
    bool safe = false;         ///< total_cost <= env budget

    /// Row identity used for grouping and pairing: "crpo", "crpo+otp", ...
    std::string group() const { return robust ? method + "+otp" : method; }
};

/// Per-group aggregate in the shape of the headline table: % safe plus
/// reward/cost normalized against the baseline group over shared parameter
/// values (baseline vs itself is exactly 1).
struct EvalAggregate {
    std::string group;
    int n_cells = 0;
    double pct_safe = 0.0;
    double mean_reward = 0.0;
    double mean_cost = 0.0;
    double norm_reward = 1.0;
    double norm_cost = 1.0;
};

struct EvalReport {
    std::string manifest_hash;
    std::vector<EvalCell> cells;
    std::vector<EvalAggregate> aggregates;

    std::string to_csv_text() const;
    /// Strict schema check; a mismatched header names the offending column.
    static EvalReport from_csv_text(const std::string& text);

    /// Recomputes aggregates from cells; group order follows first
    /// appearance, the baseline group normalizes everyone (including itself).
    static std::vector<EvalAggregate> aggregate(const std::vector<EvalCell>& cells,
                                                const std::string& baseline_group);
};

/// Sweeps make_test_suite(task, n_points) for every checkpoint, running
/// `rollouts` deterministic rollouts per cell with seeds derived from `seed`
/// (shared across checkpoints so methods are compared on matched episodes).
/// The baseline group for normalization is the first checkpoint's group.
/// Cells fan out to a worker pool capped by OTP_NUM_WORKERS (default 1);
/// results are merged in deterministic cell order. Writes eval.csv and
/// manifest.json under outdir.
EvalReport cmd_eval(const std::vector<std::string>& checkpoint_paths,
                    const std::string& task, int n_points, int rollouts,
                    std::uint64_t seed, const std::string& outdir);

// ---------------------------------------------------------------------------
// report

struct ReportOutcome {
    std::string markdown;
    std::string markdown_path;
    std::vector<std::string> figure_paths;
};

/// Merges one or more eval.csv files, recomputes aggregates (the report
/// carries no state of its own), and writes report.md plus per-task SVG
/// line charts. The baseline group is the first cell row's group of the
/// first CSV. Paired sign tests and Welch t tests are reported per method
/// pair over matched (task, parameter, seed) cells.
ReportOutcome cmd_report(const std::vector<std::string>& eval_csv_paths,
                         const std::string& outdir);

} // namespace otprl
