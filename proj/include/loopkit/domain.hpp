#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace loopkit {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Enumerations. All serialize as lowercase snake_case strings.
// ---------------------------------------------------------------------------

enum class CellPriority { P0, P1, P2, P3 };
enum class CellStatus { Untested, Passing, Failing, Blocked };
enum class Tier { Foundation, Composition, Frontier };
enum class Deliverable { WorkingScenario, GapAnalysis };

enum class TicketLabel { Bug, Feature, Improvement, Exploration };
enum class TicketPriority { Critical, High, Medium, Low };
enum class TicketState { Backlog, Todo, InProgress, InReview, Done };
enum class TicketSource { Human, Loop };

enum class PrState { Open, NeedsAttention, Merged, Retired };
enum class ChangeKind { Added, Modified, Deleted };

enum class Phase { Backlog, Ideate, Triage, Execute, Polish, Regress };
enum class Mode { Strategy, UserOnly, DevOnly, Drain, RegressQuick, Ui };
enum class PhaseOutcome { Completed, TimedOut, Skipped, Failed };

enum class OracleValue { Pass, PassHold, PassCaveat, Fail };

enum class GateValue { Continue, Warn, Drain, MonitorOnly, Pause };
enum class GateKind {
    RegressionFailure,
    CanaryEscape,
    DriftThreshold,
    Backpressure,
    Starvation
};

NLOHMANN_JSON_SERIALIZE_ENUM(CellPriority, {
    {CellPriority::P0, "p0"}, {CellPriority::P1, "p1"},
    {CellPriority::P2, "p2"}, {CellPriority::P3, "p3"}})
NLOHMANN_JSON_SERIALIZE_ENUM(CellStatus, {
    {CellStatus::Untested, "untested"}, {CellStatus::Passing, "passing"},
    {CellStatus::Failing, "failing"}, {CellStatus::Blocked, "blocked"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Tier, {
    {Tier::Foundation, "foundation"}, {Tier::Composition, "composition"},
    {Tier::Frontier, "frontier"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Deliverable, {
    {Deliverable::WorkingScenario, "working_scenario"},
    {Deliverable::GapAnalysis, "gap_analysis"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TicketLabel, {
    {TicketLabel::Bug, "bug"}, {TicketLabel::Feature, "feature"},
    {TicketLabel::Improvement, "improvement"},
    {TicketLabel::Exploration, "exploration"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TicketPriority, {
    {TicketPriority::Critical, "critical"}, {TicketPriority::High, "high"},
    {TicketPriority::Medium, "medium"}, {TicketPriority::Low, "low"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TicketState, {
    {TicketState::Backlog, "backlog"}, {TicketState::Todo, "todo"},
    {TicketState::InProgress, "in_progress"},
    {TicketState::InReview, "in_review"}, {TicketState::Done, "done"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TicketSource, {
    {TicketSource::Human, "human"}, {TicketSource::Loop, "loop"}})
NLOHMANN_JSON_SERIALIZE_ENUM(PrState, {
    {PrState::Open, "open"}, {PrState::NeedsAttention, "needs_attention"},
    {PrState::Merged, "merged"}, {PrState::Retired, "retired"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ChangeKind, {
    {ChangeKind::Added, "added"}, {ChangeKind::Modified, "modified"},
    {ChangeKind::Deleted, "deleted"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Phase, {
    {Phase::Backlog, "backlog"}, {Phase::Ideate, "ideate"},
    {Phase::Triage, "triage"}, {Phase::Execute, "execute"},
    {Phase::Polish, "polish"}, {Phase::Regress, "regress"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Mode, {
    {Mode::Strategy, "strategy"}, {Mode::UserOnly, "user_only"},
    {Mode::DevOnly, "dev_only"}, {Mode::Drain, "drain"},
    {Mode::RegressQuick, "regress_quick"}, {Mode::Ui, "ui"}})
NLOHMANN_JSON_SERIALIZE_ENUM(PhaseOutcome, {
    {PhaseOutcome::Completed, "completed"},
    {PhaseOutcome::TimedOut, "timed_out"},
    {PhaseOutcome::Skipped, "skipped"}, {PhaseOutcome::Failed, "failed"}})
NLOHMANN_JSON_SERIALIZE_ENUM(OracleValue, {
    {OracleValue::Pass, "pass"}, {OracleValue::PassHold, "pass_hold"},
    {OracleValue::PassCaveat, "pass_caveat"}, {OracleValue::Fail, "fail"}})
NLOHMANN_JSON_SERIALIZE_ENUM(GateValue, {
    {GateValue::Continue, "continue"}, {GateValue::Warn, "warn"},
    {GateValue::Drain, "drain"}, {GateValue::MonitorOnly, "monitor_only"},
    {GateValue::Pause, "pause"}})
NLOHMANN_JSON_SERIALIZE_ENUM(GateKind, {
    {GateKind::RegressionFailure, "regression_failure"},
    {GateKind::CanaryEscape, "canary_escape"},
    {GateKind::DriftThreshold, "drift_threshold"},
    {GateKind::Backpressure, "backpressure"},
    {GateKind::Starvation, "starvation"}})

// ---------------------------------------------------------------------------
// Coverage matrix
// ---------------------------------------------------------------------------

/// One claim coordinate: "feature X works on platform Y for action Z".
/// A combo is a value; equality is componentwise.
struct FeatureCombo {
    std::string feature;
    std::string platform;
    std::string action;

    auto operator<=>(const FeatureCombo&) const = default;
};

void to_json(json& j, const FeatureCombo& c);
void from_json(const json& j, FeatureCombo& c);

struct CoverageCell {
    FeatureCombo combo;
    CellPriority priority = CellPriority::P3;
    CellStatus status = CellStatus::Untested;
    std::optional<std::int64_t> last_exercised;
    // false marks a declared non-goal (a "-" cell), distinct from untested.
    bool supported = true;

    bool operator==(const CoverageCell&) const = default;
};

void to_json(json& j, const CoverageCell& c);
void from_json(const json& j, CoverageCell& c);

struct SpecSurface {
    std::vector<std::string> features;
    std::vector<std::string> platforms;
    std::vector<std::string> actions;
    std::map<FeatureCombo, CoverageCell> cells;

    bool operator==(const SpecSurface&) const = default;
};

void to_json(json& j, const SpecSurface& s);
void from_json(const json& j, SpecSurface& s);

/// Empty iff all SpecSurface invariants hold; each violation names the
/// offending cell or dimension entry. Violations are data, not errors.
std::vector<std::string> validate_surface(const SpecSurface& surface);

/// |features| x |platforms| x |actions|. The full claim universe; the
/// supported subset is a separate filter.
std::uint64_t combo_universe(const SpecSurface& surface);

/// Loads the human-editable tabular form: header row
/// `feature | platform | <action> ...`, one row per feature x platform,
/// cell values P0..P3 or "-" (non-goal). '#' starts a comment line.
SpecSurface load_surface_table(const std::string& text);
std::string render_surface_table(const SpecSurface& surface);

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

struct Scenario {
    std::string id;
    Tier tier = Tier::Foundation;
    std::vector<FeatureCombo> combos;
    // Frontier scenarios target capabilities absent from the surface.
    std::vector<std::string> gap_targets;
    Deliverable deliverable = Deliverable::WorkingScenario;
    std::string description;

    bool operator==(const Scenario&) const = default;
};

void to_json(json& j, const Scenario& s);
void from_json(const json& j, Scenario& s);

/// Empty iff tier/deliverable/combo-count invariants hold.
std::vector<std::string> validate_scenario(const Scenario& s);

// ---------------------------------------------------------------------------
// Tickets and pull requests
// ---------------------------------------------------------------------------

struct Ticket {
    std::string id;
    std::string title;
    std::string body;
    TicketLabel label = TicketLabel::Bug;
    TicketPriority priority = TicketPriority::Medium;
    TicketState state = TicketState::Backlog;
    std::set<std::string> blocks;
    std::set<std::string> blocked_by;
    TicketSource source = TicketSource::Loop;
    std::string dedup_key;
    std::set<std::string> linked_prs;
    std::int64_t confirmations = 1;
    std::int64_t created_at_iteration = 0;

    bool operator==(const Ticket&) const = default;
};

void to_json(json& j, const Ticket& t);
void from_json(const json& j, Ticket& t);

/// Pure function of (title, body): lowercase, whitespace collapsed,
/// punctuation stripped, plus a stable digest of the first 200 normalized
/// body characters. Same inputs give the same key across restarts.
std::string dedup_key(const std::string& title, const std::string& body);

struct FileChange {
    std::string path;
    ChangeKind kind = ChangeKind::Modified;

    auto operator<=>(const FileChange&) const = default;
};

void to_json(json& j, const FileChange& c);
void from_json(const json& j, FileChange& c);

struct UatPin {
    std::string verdict;   // lowercase verdict name
    std::string revision;  // head revision the verdict applies to

    bool operator==(const UatPin&) const = default;
};

void to_json(json& j, const UatPin& p);
void from_json(const json& j, UatPin& p);

struct PullRequest {
    std::string id;
    std::optional<std::string> ticket_id;
    PrState state = PrState::Open;
    std::string head_revision;
    std::int64_t attempt_count = 0;
    std::optional<std::string> last_rejected_revision;
    std::optional<std::int64_t> needs_attention_since;
    std::vector<FileChange> changed_files;
    bool includes_tests = false;
    // Deletions the execute adapter declared; absent means "expect none".
    std::vector<std::string> declared_deletions;
    std::optional<UatPin> last_uat;

    bool terminal() const {
        return state == PrState::Merged || state == PrState::Retired;
    }

    bool operator==(const PullRequest&) const = default;
};

void to_json(json& j, const PullRequest& p);
void from_json(const json& j, PullRequest& p);

// ---------------------------------------------------------------------------
// Oracle, gates, iteration history
// ---------------------------------------------------------------------------

struct OracleOutcome {
    OracleValue value = OracleValue::Pass;
    std::string detail;

    bool operator==(const OracleOutcome&) const = default;
};

void to_json(json& j, const OracleOutcome& o);
void from_json(const json& j, OracleOutcome& o);

struct GateDecision {
    GateValue value = GateValue::Continue;
    GateKind gate = GateKind::RegressionFailure;
    std::string evidence;

    bool operator==(const GateDecision&) const = default;
};

void to_json(json& j, const GateDecision& d);
void from_json(const json& j, GateDecision& d);

struct MetricSnapshot {
    std::int64_t iteration = 0;
    std::int64_t test_count = 0;
    std::map<std::string, double> layer_pass_rates;  // keys l1, l2, l3
    double unverifiable_rate = 0.0;
    double oracle_pass_rate = 1.0;  // per-scenario pass fraction of the run
    OracleOutcome oracle_outcome;
    std::int64_t bug_discovery_count = 0;
    std::int64_t blocked_combo_count = 0;
    std::int64_t blocked_without_fix_count = 0;
    std::map<std::string, std::int64_t> canary_escapes;  // keys t1..t4
    std::int64_t open_pr_count = 0;
    std::int64_t execute_output_count = 0;
    bool backfilled = false;

    bool operator==(const MetricSnapshot&) const = default;
};

void to_json(json& j, const MetricSnapshot& m);
void from_json(const json& j, MetricSnapshot& m);

struct IterationRecord {
    std::int64_t index = 0;
    Mode mode = Mode::Strategy;
    std::map<Phase, PhaseOutcome> phase_outcomes;
    MetricSnapshot metrics;
    std::int64_t prs_created = 0;
    std::int64_t prs_merged = 0;
    std::int64_t tickets_created = 0;
    std::optional<OracleOutcome> oracle_outcome;
    std::vector<GateDecision> gate_decisions;
    std::string notes;

    bool operator==(const IterationRecord&) const = default;
};

void to_json(json& j, const IterationRecord& r);
void from_json(const json& j, IterationRecord& r);

// ---------------------------------------------------------------------------
// Canonical document helpers
// ---------------------------------------------------------------------------

/// Compact dump with sorted object keys; the byte-stable on-disk form.
std::string to_canonical(const json& j);

/// Parse failures carry the byte offset in the message.
json parse_document(const std::string& text);

namespace detail {

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& v) {
    if (v.has_value()) j[key] = *v;
}

template <typename T>
void get_optional(const json& j, const char* key, std::optional<T>& v) {
    if (j.contains(key) && !j.at(key).is_null()) {
        v = j.at(key).get<T>();
    } else {
        v.reset();
    }
}

}  // namespace detail

}  // namespace loopkit
