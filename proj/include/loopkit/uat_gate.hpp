#pragma once

#include "loopkit/adapters.hpp"
#include "loopkit/domain.hpp"

namespace loopkit {

// ---------------------------------------------------------------------------
// Test cards
// ---------------------------------------------------------------------------

struct CardStep {
    std::string command;  // exact text, no placeholders
    int expected_exit_code = 0;
    std::vector<std::string> output_assertions;  // exact substrings
    bool is_bad_input_step = false;

    bool operator==(const CardStep&) const = default;
};

void to_json(json& j, const CardStep& s);
void from_json(const json& j, CardStep& s);

struct TestCard {
    std::string pr_id;
    std::vector<CardStep> steps;
    std::vector<std::string> fixtures;  // files shipped in the PR
    std::string notes;

    bool operator==(const TestCard&) const = default;
};

void to_json(json& j, const TestCard& c);
void from_json(const json& j, TestCard& c);

/// Patterns the card validator rejects: unit-test invocations of the
/// product's own suite, and implementation-detail markers in the notes
/// (supplied by the execute adapter).
struct CardPolicy {
    std::vector<std::string> unit_test_patterns = {
        "run the unit tests", "unit test", "pytest", "ctest",
        "npm test",           "cargo test", "go test", "make test"};
    std::vector<std::string> implementation_markers;
};

/// Empty iff the card is executable by a user with no judgment calls:
/// every step has a command and exit code, at least one step rejects bad
/// input, no placeholders, no unit-test invocations, no implementation
/// details in the notes.
std::vector<std::string> validate_card(const TestCard& card,
                                       const CardPolicy& policy = {});

// ---------------------------------------------------------------------------
// Evidence and integrity
// ---------------------------------------------------------------------------

struct StepEvidence {
    std::optional<std::string> raw_output;  // absent = output never captured
    int exit_code = -1;
    std::int64_t started_ms = 0;
    std::int64_t finished_ms = 0;
    bool unrunnable = false;  // evaluator could not run the step
    std::string unrunnable_reason;

    bool operator==(const StepEvidence&) const = default;
};

void to_json(json& j, const StepEvidence& e);
void from_json(const json& j, StepEvidence& e);

struct EvidenceBundle {
    std::vector<StepEvidence> steps;  // one per card step, in order
    std::string evaluator_id;
    std::string workspace_id;

    bool operator==(const EvidenceBundle&) const = default;
};

void to_json(json& j, const EvidenceBundle& b);
void from_json(const json& j, EvidenceBundle& b);

/// Computed from a fresh workspace diff after evaluation, never from the
/// evaluator's self-report.
struct IntegrityReport {
    std::vector<std::string> modified_product_paths;
    std::vector<std::string> untracked_paths_outside_evidence;

    bool clean() const {
        return modified_product_paths.empty() &&
               untracked_paths_outside_evidence.empty();
    }

    bool operator==(const IntegrityReport&) const = default;
};

void to_json(json& j, const IntegrityReport& r);
void from_json(const json& j, IntegrityReport& r);

enum class UatVerdictValue { Pass, ProductFail, UatSpecFail, EvalCheatFail };

NLOHMANN_JSON_SERIALIZE_ENUM(UatVerdictValue, {
    {UatVerdictValue::Pass, "pass"},
    {UatVerdictValue::ProductFail, "product_fail"},
    {UatVerdictValue::UatSpecFail, "uat_spec_fail"},
    {UatVerdictValue::EvalCheatFail, "eval_cheat_fail"}})

struct UatVerdict {
    UatVerdictValue value = UatVerdictValue::Pass;
    std::string evidence_ref;
    std::vector<std::string> reasons;

    bool operator==(const UatVerdict&) const = default;
};

void to_json(json& j, const UatVerdict& v);
void from_json(const json& j, UatVerdict& v);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// The whole request. The card is the only content field; there is
/// nowhere to put a diff, ticket, or history, which is what makes the
/// information wall structural rather than honor-based.
struct EvaluatorRequest {
    TestCard card;
    std::string workspace_root;
    std::string evidence_dir;
    std::int64_t deadline_ms = 0;
};

void to_json(json& j, const EvaluatorRequest& r);

class UatEvaluator {
public:
    virtual ~UatEvaluator() = default;
    virtual std::string id() const = 0;
    virtual EvidenceBundle evaluate(const EvaluatorRequest& request) = 0;
};

/// Reference evaluator: runs each step through /bin/sh in the workspace,
/// captures combined output and exit codes, and writes the evidence
/// directory layout evidence/<pr-id>/<step-index>/{output.bin, meta}.
class ShellEvaluator : public UatEvaluator {
public:
    std::string id() const override { return "shell-evaluator"; }
    EvidenceBundle evaluate(const EvaluatorRequest& request) override;
};

/// Runs the card in a pristine workspace created from the base revision,
/// then recomputes the workspace diff into the integrity report and
/// discards the workspace. A step that was run but lost its output is
/// repeated once before counting as a spec failure.
std::pair<EvidenceBundle, IntegrityReport> run_evaluation(
    const TestCard& card, UatEvaluator& evaluator,
    WorkspaceProvider& provider, const std::string& base_revision,
    std::int64_t deadline_ms = 0);

/// Verdict precedence: integrity violations, then structural evidence
/// gaps, then expectation mismatches, then Pass.
UatVerdict compute_verdict(const TestCard& card, const EvidenceBundle& bundle,
                           const IntegrityReport& integrity);

}  // namespace loopkit
