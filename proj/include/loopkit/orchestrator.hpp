#pragma once

#include "loopkit/adapters.hpp"
#include "loopkit/domain.hpp"
#include "loopkit/drift_guard.hpp"
#include "loopkit/pr_pipeline.hpp"
#include "loopkit/scheduler.hpp"
#include "loopkit/ticket_store.hpp"
#include "loopkit/uat_gate.hpp"
#include "loopkit/verification.hpp"

namespace loopkit {

struct AdapterMissing : std::runtime_error {
    explicit AdapterMissing(Phase phase)
        : std::runtime_error("no adapter registered for phase " +
                             json(phase).get<std::string>()) {}
};

struct CorruptState : std::runtime_error {
    explicit CorruptState(const std::string& what) : std::runtime_error(what) {}
};

struct AlreadyInDrain : std::runtime_error {
    AlreadyInDrain() : std::runtime_error("loop is already in drain mode") {}
};

struct NotInDrain : std::runtime_error {
    NotInDrain() : std::runtime_error("loop is not in drain mode") {}
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct LoopConfig {
    Mode mode = Mode::Strategy;
    std::map<Phase, std::int64_t> phase_budgets_ms;  // absent or 0: no budget
    std::int64_t drain_enter_threshold = 10;
    std::int64_t drain_exit_threshold = 5;
    std::int64_t starvation_threshold = 10;
    std::int64_t regression_pause_threshold = 3;
    std::int64_t needs_attention_threshold = 1;
    std::int64_t drift_decline_streak = 3;
    std::int64_t polish_pr_limit = 5;
    std::int64_t drain_pr_limit = 10;
    std::int64_t execute_ticket_limit = 3;
    std::int64_t needs_attention_ttl = 10;
    TierWeights tier_weights;
    std::string quality_bar_path;
    std::vector<std::string> frontier_candidates;
    std::uint64_t seed = 1;
    bool uat_required = false;
};

void to_json(json& j, const LoopConfig& c);
void from_json(const json& j, LoopConfig& c);

std::vector<std::string> validate_config(const LoopConfig& config);

// ---------------------------------------------------------------------------
// Phase plans
// ---------------------------------------------------------------------------

struct PhasePlan {
    std::vector<Phase> phases;
    bool quick_oracle = false;
    bool browser_flow_hint = false;
};

PhasePlan phase_sequence(Mode mode);

// ---------------------------------------------------------------------------
// Loop state
// ---------------------------------------------------------------------------

/// A classification that could not be answered yet: retried next iteration,
/// at most 3 times, then counted environmental.
struct DeferredClassification {
    std::int64_t origin_iteration = 0;
    std::string head_revision;
    std::string premerge_revision;
    std::vector<std::string> scenario_ids;  // empty: the whole failing run
    std::int64_t retries = 0;

    bool operator==(const DeferredClassification&) const = default;
};

void to_json(json& j, const DeferredClassification& d);
void from_json(const json& j, DeferredClassification& d);

struct LoopState {
    std::int64_t iteration = 0;
    std::int64_t starvation_counter = 0;
    std::int64_t drain_entries = 0;
    std::int64_t no_work_loops = 0;
    bool in_drain = false;
    std::optional<std::vector<Phase>> saved_phase_config;
    std::int64_t regression_failure_streak = 0;
    std::vector<IterationRecord> history;
    std::int64_t state_revision = 0;  // revision this copy was loaded at
    std::vector<DeferredClassification> deferred;

    bool operator==(const LoopState&) const = default;
};

void to_json(json& j, const LoopState& s);
void from_json(const json& j, LoopState& s);

/// Stale-overwrite-safe commit: re-reads the on-disk revision, merges when
/// someone else committed in between (history rows union, counters max),
/// then writes at revision+1. Returns the committed revision.
std::int64_t persist_state(LoopState& state, const std::string& path);

LoopState load_state(const std::string& path);

/// Every index in [1, iteration] missing from history.
std::vector<std::int64_t> verify_history(const LoopState& state);

/// Inserts placeholder records flagged as backfilled (empty metrics,
/// excluded from drift baselines) for the given indices.
void backfill(LoopState& state, const std::vector<std::int64_t>& indices);

void enter_drain(LoopState& state, const std::vector<Phase>& active_phases);
std::vector<Phase> exit_drain(LoopState& state);  // returns the restored list

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

struct Stores {
    TicketStore tickets;
    PrStore prs;
    BlockedCombosRegistry registry;
    SpecSurface surface;
    ExerciseHistory exercise;
    std::vector<MergeEntry> merge_log;
    std::vector<std::string> frontier_pool;  // config candidates + gap reports
    std::string head_revision = "r0";
};

struct AdapterSet {
    std::map<Phase, SkillAdapter*> skills;
    WorkspaceProvider* workspaces = nullptr;
    MergeSink* merge_sink = nullptr;
    ChangeInspector* inspector = nullptr;
    UatEvaluator* uat_evaluator = nullptr;
};

enum class StopReason { Completed, Pause, MonitorOnly };

NLOHMANN_JSON_SERIALIZE_ENUM(StopReason, {
    {StopReason::Completed, "completed"}, {StopReason::Pause, "pause"},
    {StopReason::MonitorOnly, "monitor_only"}})

class LoopEngine {
public:
    LoopEngine(LoopConfig config, AdapterSet adapters, std::string state_dir);

    /// Loads persisted state and stores when the state directory has them,
    /// otherwise seeds the stores with the given surface.
    void initialize(const SpecSurface& initial_surface);

    IterationRecord run_iteration();
    StopReason run(std::int64_t max_iterations);

    LoopState& state() { return state_; }
    const LoopState& state() const { return state_; }
    Stores& stores() { return stores_; }
    const LoopConfig& config() const { return config_; }
    const std::vector<Phase>& active_phases() const { return active_phases_; }
    std::optional<StopReason> stop_requested() const { return stop_; }

    void persist_all();

    std::filesystem::path state_file() const;
    std::filesystem::path alerts_dir() const;
    std::filesystem::path reports_dir() const;

private:
    struct IterationContext;

    SkillAdapter& adapter_for(Phase phase);
    SkillResponse invoke_phase(Phase phase, json payload,
                               std::optional<WorkspaceRef> workspace);
    void run_backlog(IterationContext& ctx);
    void run_ideate(IterationContext& ctx, Rng& rng);
    void run_triage(IterationContext& ctx);
    void run_execute(IterationContext& ctx);
    void run_polish(IterationContext& ctx);
    void run_regress(IterationContext& ctx);
    void process_deferred(IterationContext& ctx);
    void apply_polish_plan(IterationContext& ctx, const PolishPlan& plan);
    bool merge_pr(IterationContext& ctx, const std::string& pr_id,
                  const std::string& reason);
    MetricSnapshot build_snapshot(const IterationContext& ctx) const;
    void write_alert(std::int64_t iteration, const GateDecision& decision,
                     int sequence);
    void append_mirror_row(const IterationRecord& record);

    LoopConfig config_;
    AdapterSet adapters_;
    std::string state_dir_;
    LoopState state_;
    Stores stores_;
    std::vector<Phase> active_phases_;
    PhasePlan plan_;
    std::string quality_bar_;
    std::optional<StopReason> stop_;
};

}  // namespace loopkit
