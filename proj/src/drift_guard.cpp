#include "loopkit/drift_guard.hpp"

#include <algorithm>
#include <functional>

namespace loopkit {

void to_json(json& j, const MetricWindow& w) {
    j = json{{"recent_mean", w.recent_mean}, {"baseline_mean", w.baseline_mean}};
}

void from_json(const json& j, MetricWindow& w) {
    j.at("recent_mean").get_to(w.recent_mean);
    j.at("baseline_mean").get_to(w.baseline_mean);
}

void to_json(json& j, const DriftReport& r) {
    j = json{{"trends", r.trends},
             {"decline_streaks", r.decline_streaks},
             {"window_means", r.window_means},
             {"alerts", r.alerts}};
}

void from_json(const json& j, DriftReport& r) {
    j.at("trends").get_to(r.trends);
    j.at("decline_streaks").get_to(r.decline_streaks);
    j.at("window_means").get_to(r.window_means);
    j.at("alerts").get_to(r.alerts);
}

namespace {

constexpr std::size_t kRecentWindow = 5;
constexpr std::size_t kBaselineWindow = 20;
constexpr std::size_t kFactualAlertWindow = 10;
constexpr double kFactualAlertDrop = 0.05;
constexpr double kRateTolerance = 0.01;

struct TrackedMetric {
    const char* name;
    bool higher_is_better;
    double tolerance;
    std::function<double(const MetricSnapshot&)> get;
};

double layer_rate(const MetricSnapshot& m, const char* key) {
    auto it = m.layer_pass_rates.find(key);
    return it == m.layer_pass_rates.end() ? 1.0 : it->second;
}

const std::vector<TrackedMetric>& tracked_metrics() {
    static const std::vector<TrackedMetric> metrics = {
        {"test_count", true, 0.0,
         [](const MetricSnapshot& m) { return static_cast<double>(m.test_count); }},
        {"l1_pass_rate", true, kRateTolerance,
         [](const MetricSnapshot& m) { return layer_rate(m, "l1"); }},
        {"l2_pass_rate", true, kRateTolerance,
         [](const MetricSnapshot& m) { return layer_rate(m, "l2"); }},
        {"l3_pass_rate", true, kRateTolerance,
         [](const MetricSnapshot& m) { return layer_rate(m, "l3"); }},
        {"unverifiable_rate", false, kRateTolerance,
         [](const MetricSnapshot& m) { return m.unverifiable_rate; }},
        {"oracle_pass_rate", true, kRateTolerance,
         [](const MetricSnapshot& m) { return m.oracle_pass_rate; }},
        {"blocked_combo_count", false, 0.0,
         [](const MetricSnapshot& m) { return static_cast<double>(m.blocked_combo_count); }},
    };
    return metrics;
}

double mean(const std::vector<double>& v, std::size_t begin, std::size_t end) {
    double sum = 0.0;
    for (std::size_t i = begin; i < end; ++i) sum += v[i];
    return sum / static_cast<double>(end - begin);
}

// Unhealthy move beyond tolerance, relative to the previous value.
bool unhealthy_step(const TrackedMetric& m, double prev, double cur) {
    return m.higher_is_better ? cur < prev - m.tolerance
                              : cur > prev + m.tolerance;
}

bool healthy_step(const TrackedMetric& m, double prev, double cur) {
    return m.higher_is_better ? cur > prev + m.tolerance
                              : cur < prev - m.tolerance;
}

}  // namespace

DriftReport detect_drift(const std::vector<MetricSnapshot>& history) {
    std::vector<const MetricSnapshot*> genuine;
    for (const auto& s : history) {
        if (!s.backfilled) genuine.push_back(&s);
    }
    if (genuine.size() < 2) throw InsufficientHistory();

    DriftReport report;
    for (const auto& metric : tracked_metrics()) {
        std::vector<double> values;
        values.reserve(genuine.size());
        for (const auto* s : genuine) values.push_back(metric.get(*s));

        const std::size_t n = values.size();
        const std::size_t recent_len = std::min(kRecentWindow, n);
        const std::size_t recent_begin = n - recent_len;
        const std::size_t baseline_len =
            std::min(kBaselineWindow, recent_begin);
        const std::size_t baseline_begin = recent_begin - baseline_len;

        MetricWindow window;
        window.recent_mean = mean(values, recent_begin, n);
        window.baseline_mean = baseline_len > 0
                                   ? mean(values, baseline_begin, recent_begin)
                                   : window.recent_mean;
        report.window_means[metric.name] = window;

        TrendDirection trend = TrendDirection::Stable;
        if (unhealthy_step(metric, window.baseline_mean, window.recent_mean)) {
            trend = TrendDirection::Declining;
        } else if (healthy_step(metric, window.baseline_mean, window.recent_mean)) {
            trend = TrendDirection::Improving;
        }
        report.trends[metric.name] = trend;

        std::int64_t streak = 0;
        for (std::size_t i = n; i > 1; --i) {
            if (unhealthy_step(metric, values[i - 2], values[i - 1])) {
                ++streak;
            } else {
                break;
            }
        }
        report.decline_streaks[metric.name] = streak;
    }

    // Factual (L2) early-warning: recent window >= 5pp below the prior 10.
    {
        std::vector<double> l2;
        l2.reserve(genuine.size());
        for (const auto* s : genuine) l2.push_back(layer_rate(*s, "l2"));
        const std::size_t n = l2.size();
        const std::size_t recent_len = std::min(kRecentWindow, n);
        const std::size_t recent_begin = n - recent_len;
        const std::size_t prior_len = std::min(kFactualAlertWindow, recent_begin);
        if (prior_len > 0) {
            double recent = mean(l2, recent_begin, n);
            double prior = mean(l2, recent_begin - prior_len, recent_begin);
            if (recent <= prior - kFactualAlertDrop) {
                report.alerts.push_back(
                    "factual pass rate dropped >= 5pp vs the prior " +
                    std::to_string(prior_len) + " iterations");
            }
        }
    }

    // Bug discovery spike: recent mean more than twice the baseline.
    {
        std::vector<double> bugs;
        bugs.reserve(genuine.size());
        for (const auto* s : genuine)
            bugs.push_back(static_cast<double>(s->bug_discovery_count));
        const std::size_t n = bugs.size();
        const std::size_t recent_len = std::min(kRecentWindow, n);
        const std::size_t recent_begin = n - recent_len;
        const std::size_t baseline_len = std::min(kBaselineWindow, recent_begin);
        if (baseline_len > 0) {
            double recent = mean(bugs, recent_begin, n);
            double baseline =
                mean(bugs, recent_begin - baseline_len, recent_begin);
            if (baseline >= 1.0 && recent > 2.0 * baseline) {
                report.alerts.push_back("bug discovery spike: recent mean " +
                                        std::to_string(recent) +
                                        " vs baseline " +
                                        std::to_string(baseline));
            }
        }
    }

    // Blocked-combo growth is a warning only when new entries lack an open
    // fix ticket.
    if (genuine.back()->blocked_without_fix_count > 0 &&
        report.trends["blocked_combo_count"] == TrendDirection::Declining) {
        report.alerts.push_back(
            "blocked combos growing without corresponding fix tickets");
    }

    return report;
}

std::vector<GateDecision> evaluate_gates(const GateInputs& inputs,
                                         const MetricSnapshot& snapshot,
                                         const DriftReport& report,
                                         const GateThresholds& thresholds) {
    std::vector<GateDecision> decisions;

    // (1) Regression failure: halting dominates everything below.
    if (inputs.regression_failure_streak >= thresholds.regression_pause_threshold) {
        decisions.push_back(GateDecision{
            GateValue::Pause, GateKind::RegressionFailure,
            std::to_string(inputs.regression_failure_streak) +
                " consecutive regression-classified oracle failures"});
    }

    // (2) Tier-1 canary escapes are a critical warning, never a halt.
    auto t1 = snapshot.canary_escapes.find("t1");
    if (t1 != snapshot.canary_escapes.end() && t1->second > 0) {
        decisions.push_back(GateDecision{
            GateValue::Warn, GateKind::CanaryEscape,
            "critical: " + std::to_string(t1->second) +
                " tier-1 canary escape(s)"});
    }

    // (3) Drift threshold: advisory per declining metric, plus report alerts.
    for (const auto& [metric, streak] : report.decline_streaks) {
        if (streak >= thresholds.drift_decline_streak) {
            decisions.push_back(GateDecision{
                GateValue::Warn, GateKind::DriftThreshold,
                metric + " declining for " + std::to_string(streak) +
                    " consecutive iterations"});
        }
    }
    for (const auto& alert : report.alerts) {
        decisions.push_back(
            GateDecision{GateValue::Warn, GateKind::DriftThreshold, alert});
    }

    // (4) Backpressure: enter drain above the threshold, leave below exit.
    if (snapshot.open_pr_count > thresholds.drain_enter_threshold) {
        decisions.push_back(GateDecision{
            GateValue::Drain, GateKind::Backpressure,
            std::to_string(snapshot.open_pr_count) + " open PRs > " +
                std::to_string(thresholds.drain_enter_threshold)});
    } else if (inputs.in_drain &&
               snapshot.open_pr_count < thresholds.drain_exit_threshold) {
        decisions.push_back(GateDecision{
            GateValue::Continue, GateKind::Backpressure,
            "open PRs " + std::to_string(snapshot.open_pr_count) +
                " below exit threshold; leave drain"});
    }

    // (5) Starvation.
    if (inputs.starvation_counter >= thresholds.starvation_threshold) {
        decisions.push_back(GateDecision{
            GateValue::MonitorOnly, GateKind::Starvation,
            std::to_string(inputs.starvation_counter) +
                " consecutive iterations with no execute output"});
    }

    return decisions;
}

FailureClass classify_oracle_failure(
    const OracleOutcome& failure,
    const std::optional<OracleOutcome>& premerge_rerun) {
    if (failure.value != OracleValue::Fail) {
        throw std::invalid_argument("classification needs a Fail outcome");
    }
    if (!premerge_rerun.has_value()) return FailureClass::Deferred;
    return premerge_rerun->value == OracleValue::Fail
               ? FailureClass::Environmental
               : FailureClass::Regression;
}

// ---------------------------------------------------------------------------
// Cross-PR detector
// ---------------------------------------------------------------------------

void to_json(json& j, const MergeEntry& m) {
    j = json{{"pr_id", m.pr_id},
             {"changed_files", m.changed_files},
             {"revert", m.revert}};
}

void from_json(const json& j, MergeEntry& m) {
    j.at("pr_id").get_to(m.pr_id);
    j.at("changed_files").get_to(m.changed_files);
    j.at("revert").get_to(m.revert);
}

void to_json(json& j, const CrossPrFinding& f) {
    j = json{{"kind", f.kind}, {"path", f.path}, {"prs", f.prs}};
}

void from_json(const json& j, CrossPrFinding& f) {
    j.at("kind").get_to(f.kind);
    j.at("path").get_to(f.path);
    j.at("prs").get_to(f.prs);
}

std::vector<CrossPrFinding> cross_pr_detector(
    const std::vector<MergeEntry>& merges) {
    std::vector<CrossPrFinding> findings;

    // Adds still "live" per path; a later delete pairs with each of them.
    std::map<std::string, std::vector<std::string>> live_adds;
    // Distinct modifiers per path, in first-touch order.
    std::map<std::string, std::vector<std::string>> modifiers;

    for (const auto& merge : merges) {
        if (merge.revert) {
            findings.push_back(CrossPrFinding{CrossPrFindingKind::RevertDetected,
                                              "",
                                              {merge.pr_id}});
        }
        for (const auto& change : merge.changed_files) {
            switch (change.kind) {
                case ChangeKind::Added:
                    live_adds[change.path].push_back(merge.pr_id);
                    break;
                case ChangeKind::Deleted: {
                    auto it = live_adds.find(change.path);
                    if (it != live_adds.end()) {
                        for (const auto& adder : it->second) {
                            if (adder == merge.pr_id) continue;
                            findings.push_back(CrossPrFinding{
                                CrossPrFindingKind::AddedThenDeleted,
                                change.path,
                                {adder, merge.pr_id}});
                        }
                        live_adds.erase(it);
                    }
                    break;
                }
                case ChangeKind::Modified: {
                    auto& prs = modifiers[change.path];
                    if (std::find(prs.begin(), prs.end(), merge.pr_id) == prs.end()) {
                        prs.push_back(merge.pr_id);
                    }
                    break;
                }
            }
        }
    }

    for (const auto& [path, prs] : modifiers) {
        if (prs.size() >= 3) {
            findings.push_back(
                CrossPrFinding{CrossPrFindingKind::HighChurn, path, prs});
        }
    }

    std::sort(findings.begin(), findings.end());
    return findings;
}

}  // namespace loopkit
