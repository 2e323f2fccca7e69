#pragma once

#include "loopkit/orchestrator.hpp"

namespace loopkit {

// ---------------------------------------------------------------------------
// Synthetic product
// ---------------------------------------------------------------------------

struct DefectSpec {
    std::string signature;
    std::int64_t fix_cost = 1;  // execute attempts until a PR appears
    std::optional<FeatureCombo> regression_seed;  // combo this fix breaks

    bool operator==(const DefectSpec&) const = default;
};

void to_json(json& j, const DefectSpec& d);
void from_json(const json& j, DefectSpec& d);

struct SimProduct {
    SpecSurface surface;
    std::map<FeatureCombo, DefectSpec> defects;

    bool operator==(const SimProduct&) const = default;
};

void to_json(json& j, const SimProduct& p);
void from_json(const json& j, SimProduct& p);

/// Deterministic per seed: every cell of the full product is supported;
/// each cell is defective with probability defect_rate and each defect is
/// regression-linked with probability regression_link_rate.
SimProduct build_sim(std::uint64_t seed,
                     std::size_t features, std::size_t platforms,
                     std::size_t actions, double defect_rate,
                     double regression_link_rate);

// ---------------------------------------------------------------------------
// Scripted adapter behavior
// ---------------------------------------------------------------------------

struct ScriptedAdapterConfig {
    std::uint64_t seed = 1;
    // Oracle scenarios that fail on every revision during these iterations;
    // the pre-merge rerun fails too, so they classify environmental.
    std::set<std::int64_t> environmental_failure_iterations;
    // Phases that report a simulated duration beyond any budget at these
    // iterations (forces TimedOut outcomes deterministically).
    std::map<Phase, std::set<std::int64_t>> timeout_iterations;
    // Synthetic execute output: emit exactly N ticket-less PRs per
    // iteration instead of working tickets. -1 = work from tickets.
    std::int64_t execute_prs_per_iteration = -1;
    // PR ids the polish review rejects (everything else is approved).
    std::set<std::string> review_reject_prs;
    // Regress metric overrides per iteration, e.g. {"layer_pass_rates":
    // {"l2": 0.9}} or {"canary_escapes": {"t1": 1}}.
    std::map<std::int64_t, json> regress_metric_overrides;
    // Iterations where the oracle rerun on a pre-merge revision errors out
    // (classification becomes deferred).
    std::set<std::int64_t> rerun_unavailable_iterations;

    bool operator==(const ScriptedAdapterConfig&) const = default;
};

void to_json(json& j, const ScriptedAdapterConfig& c);
void from_json(const json& j, ScriptedAdapterConfig& c);

// ---------------------------------------------------------------------------
// The simulated world behind all scripted adapters
// ---------------------------------------------------------------------------

class SimWorld {
public:
    SimWorld() = default;
    SimWorld(SimProduct product, ScriptedAdapterConfig script);

    SimProduct product;
    ScriptedAdapterConfig script;

    std::map<std::string, std::set<FeatureCombo>> broken_by_revision;
    std::set<FeatureCombo> broken_current;
    std::map<FeatureCombo, std::int64_t> fix_cost_remaining;
    std::map<std::string, FeatureCombo> pending_fix_by_head;
    std::int64_t revision_counter = 0;
    std::int64_t merge_count = 0;
    // Merge-introduced breakages: (revision that introduced it, combo).
    std::vector<std::pair<std::string, FeatureCombo>> regression_events;

    std::string current_revision() const {
        return "r" + std::to_string(revision_counter);
    }
    /// Fix lands: the combo heals at a new revision; a linked seed breaks.
    std::string apply_fix(const FeatureCombo& combo);
    std::string bump_revision();  // merge with no product effect

    void persist(const std::string& path) const;
    static SimWorld load(const std::string& path, SimProduct product,
                         ScriptedAdapterConfig script);

    json to_document() const;
};

// ---------------------------------------------------------------------------
// Scripted adapters (in-process, behind the same SkillAdapter interface
// as external processes)
// ---------------------------------------------------------------------------

class SimBacklogAdapter : public SkillAdapter {
public:
    explicit SimBacklogAdapter(SimWorld& world) : world_(world) {}
    SkillResponse invoke(const SkillRequest& request) override;

private:
    SimWorld& world_;
};

class SimIdeateAdapter : public SkillAdapter {
public:
    explicit SimIdeateAdapter(SimWorld& world) : world_(world) {}
    SkillResponse invoke(const SkillRequest& request) override;

private:
    SimWorld& world_;
};

class SimTriageAdapter : public SkillAdapter {
public:
    explicit SimTriageAdapter(SimWorld& world) : world_(world) {}
    SkillResponse invoke(const SkillRequest& request) override;

private:
    SimWorld& world_;
};

class SimExecuteAdapter : public SkillAdapter {
public:
    explicit SimExecuteAdapter(SimWorld& world) : world_(world) {}
    SkillResponse invoke(const SkillRequest& request) override;

private:
    SimWorld& world_;
};

class SimPolishAdapter : public SkillAdapter {
public:
    explicit SimPolishAdapter(SimWorld& world) : world_(world) {}
    SkillResponse invoke(const SkillRequest& request) override;

private:
    SimWorld& world_;
};

class SimRegressAdapter : public SkillAdapter {
public:
    explicit SimRegressAdapter(SimWorld& world) : world_(world) {}
    SkillResponse invoke(const SkillRequest& request) override;

private:
    SimWorld& world_;
};

class SimMergeSink : public MergeSink {
public:
    explicit SimMergeSink(SimWorld& world) : world_(world) {}
    std::string apply_merge(const PullRequest& pr) override;

private:
    SimWorld& world_;
};

class SimChangeInspector : public ChangeInspector {
public:
    std::vector<FileChange> recompute_changes(const PullRequest& pr) override;
    /// Extra changes a later push sneaks in; what the TOCTOU check is for.
    std::map<std::string, std::vector<FileChange>> injected;
};

/// Stub workspaces: an id, no real directory, an empty diff.
class SimWorkspaceProvider : public WorkspaceProvider {
public:
    std::unique_ptr<Workspace> create(const std::string& base_revision) override;

private:
    std::int64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

struct SimulationReport {
    std::vector<IterationRecord> history;
    std::vector<std::string> merged_prs;
    json canary_reports;  // per-iteration escape counts
    json final_surface;
    StopReason stop = StopReason::Completed;
    std::int64_t iterations_run = 0;
};

void to_json(json& j, const SimulationReport& r);

/// Owns the world, the scripted adapters and the engine; resumable from a
/// state directory, so a kill-and-restart continues exactly where the
/// previous process stopped.
class SimHarness {
public:
    SimHarness(SimProduct product, ScriptedAdapterConfig script,
               LoopConfig config, std::string state_dir);

    SimulationReport run(std::int64_t iterations);
    LoopEngine& engine() { return *engine_; }
    SimWorld& world() { return world_; }
    SimulationReport report() const;

private:
    SimWorld world_;
    SimBacklogAdapter backlog_;
    SimIdeateAdapter ideate_;
    SimTriageAdapter triage_;
    SimExecuteAdapter execute_;
    SimPolishAdapter polish_;
    SimRegressAdapter regress_;
    SimMergeSink merge_sink_;
    SimChangeInspector inspector_;
    SimWorkspaceProvider workspaces_;
    std::string state_dir_;
    std::unique_ptr<LoopEngine> engine_;
};

/// Convenience wrapper: build, run, report.
SimulationReport run_simulation(const SimProduct& product,
                                const ScriptedAdapterConfig& script,
                                const LoopConfig& config,
                                std::int64_t iterations,
                                const std::string& state_dir);

}  // namespace loopkit
