#pragma once

#include <stdexcept>

#include "loopkit/domain.hpp"

namespace loopkit {

struct InsufficientHistory : std::runtime_error {
    InsufficientHistory() : std::runtime_error("need >= 2 genuine snapshots") {}
};

enum class TrendDirection { Improving, Stable, Declining };

NLOHMANN_JSON_SERIALIZE_ENUM(TrendDirection, {
    {TrendDirection::Improving, "improving"},
    {TrendDirection::Stable, "stable"},
    {TrendDirection::Declining, "declining"}})

struct MetricWindow {
    double recent_mean = 0.0;
    double baseline_mean = 0.0;

    bool operator==(const MetricWindow&) const = default;
};

void to_json(json& j, const MetricWindow& w);
void from_json(const json& j, MetricWindow& w);

/// Sliding-window trends: mean of the 5 most recent genuine snapshots vs.
/// the 20 preceding. Backfilled snapshots never enter either window.
/// "Declining" always means the unhealthy direction for that metric.
struct DriftReport {
    std::map<std::string, TrendDirection> trends;
    std::map<std::string, std::int64_t> decline_streaks;
    std::map<std::string, MetricWindow> window_means;
    std::vector<std::string> alerts;

    bool operator==(const DriftReport&) const = default;
};

void to_json(json& j, const DriftReport& r);
void from_json(const json& j, DriftReport& r);

DriftReport detect_drift(const std::vector<MetricSnapshot>& history);

/// The five pause gates, evaluated in fixed precedence order. Warn is
/// advisory and never alters configuration; Drain/MonitorOnly/Pause are
/// automatic.
struct GateInputs {
    std::int64_t regression_failure_streak = 0;
    std::int64_t starvation_counter = 0;
    bool in_drain = false;
};

struct GateThresholds {
    std::int64_t regression_pause_threshold = 3;
    std::int64_t drift_decline_streak = 3;
    std::int64_t drain_enter_threshold = 10;
    std::int64_t drain_exit_threshold = 5;
    std::int64_t starvation_threshold = 10;
};

std::vector<GateDecision> evaluate_gates(const GateInputs& inputs,
                                         const MetricSnapshot& snapshot,
                                         const DriftReport& report,
                                         const GateThresholds& thresholds);

/// Environmental iff the same scenario also fails on the pre-merge
/// revision; regressions are failures a merge introduced. No rerun yet
/// means the call is answered later.
enum class FailureClass { Environmental, Regression, Deferred };

NLOHMANN_JSON_SERIALIZE_ENUM(FailureClass, {
    {FailureClass::Environmental, "environmental"},
    {FailureClass::Regression, "regression"},
    {FailureClass::Deferred, "deferred"}})

FailureClass classify_oracle_failure(
    const OracleOutcome& failure,
    const std::optional<OracleOutcome>& premerge_rerun);

// ---------------------------------------------------------------------------
// Cross-PR structural-regression detector
// ---------------------------------------------------------------------------

struct MergeEntry {
    std::string pr_id;
    std::vector<FileChange> changed_files;
    bool revert = false;
};

void to_json(json& j, const MergeEntry& m);
void from_json(const json& j, MergeEntry& m);

enum class CrossPrFindingKind { AddedThenDeleted, RevertDetected, HighChurn };

NLOHMANN_JSON_SERIALIZE_ENUM(CrossPrFindingKind, {
    {CrossPrFindingKind::AddedThenDeleted, "added_then_deleted"},
    {CrossPrFindingKind::RevertDetected, "revert_detected"},
    {CrossPrFindingKind::HighChurn, "high_churn"}})

struct CrossPrFinding {
    CrossPrFindingKind kind = CrossPrFindingKind::AddedThenDeleted;
    std::string path;               // empty for reverts
    std::vector<std::string> prs;   // [adder, deleter] / [reverted] / modifiers

    auto operator<=>(const CrossPrFinding&) const = default;
};

void to_json(json& j, const CrossPrFinding& f);
void from_json(const json& j, CrossPrFinding& f);

/// Patterns the per-iteration oracle cannot see because they span merges:
/// paths added then deleted, revert merges, and paths modified by 3+
/// distinct PRs. Findings come back sorted.
std::vector<CrossPrFinding> cross_pr_detector(
    const std::vector<MergeEntry>& merges);

}  // namespace loopkit
