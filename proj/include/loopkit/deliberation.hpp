#pragma once

#include <functional>

#include "loopkit/domain.hpp"

namespace loopkit {

// ---------------------------------------------------------------------------
// Tribunal classification
// ---------------------------------------------------------------------------

struct PanelSizeUnsupported : std::runtime_error {
    explicit PanelSizeUnsupported(std::size_t n)
        : std::runtime_error("tribunal classification is defined for exactly "
                             "3 reviewers, got " +
                             std::to_string(n)) {}
};

struct ReviewerFinding {
    std::string reviewer;
    std::string key;  // normalized (category, location, claim)
    std::string severity;
    std::string detail;

    bool operator==(const ReviewerFinding&) const = default;
};

void to_json(json& j, const ReviewerFinding& f);
void from_json(const json& j, ReviewerFinding& f);

/// Lowercase (category, location token, first 8 content words) so the same
/// finding matches across reviewers that word it differently.
std::string normalize_finding_key(const std::string& category,
                                  const std::string& location,
                                  const std::string& claim);

struct TribunalBuckets {
    std::set<std::string> consensus;  // all three flagged it
    std::set<std::string> majority;   // exactly two
    std::set<std::string> solo;       // exactly one

    bool operator==(const TribunalBuckets&) const = default;
};

TribunalBuckets classify_findings(
    const std::map<std::string, std::vector<ReviewerFinding>>& by_reviewer);

// ---------------------------------------------------------------------------
// Structured deliberation
// ---------------------------------------------------------------------------

enum class IssueStatus { Open, Resolved };
enum class Conclusion { Agreed, AgreedToDisagree, Blocked };

NLOHMANN_JSON_SERIALIZE_ENUM(IssueStatus, {
    {IssueStatus::Open, "open"}, {IssueStatus::Resolved, "resolved"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Conclusion, {
    {Conclusion::Agreed, "agreed"},
    {Conclusion::AgreedToDisagree, "agreed_to_disagree"},
    {Conclusion::Blocked, "blocked"}})

struct Issue {
    std::string id;
    std::string raised_by;
    std::string statement;
    IssueStatus status = IssueStatus::Open;
    std::optional<std::string> resolution;
    std::optional<std::string> resolver;

    bool operator==(const Issue&) const = default;
};

void to_json(json& j, const Issue& i);
void from_json(const json& j, Issue& i);

struct TranscriptEntry {
    int round = 0;
    std::string speaker;  // always a debater; the moderator never speaks
    std::string content;

    bool operator==(const TranscriptEntry&) const = default;
};

void to_json(json& j, const TranscriptEntry& e);
void from_json(const json& j, TranscriptEntry& e);

struct Ratification {
    std::string issue_id;
    std::string ratified_by;

    bool operator==(const Ratification&) const = default;
};

void to_json(json& j, const Ratification& r);
void from_json(const json& j, Ratification& r);

/// One debater turn. Turns may raise issues, resolve issues by id, ratify
/// resolutions, and record a do-not-build argument for the kill gate.
struct DebaterTurn {
    std::string content;
    std::vector<std::string> raises;
    std::vector<std::pair<std::string, std::string>> resolves;  // id, resolution
    std::vector<std::string> ratifies;
    std::optional<std::string> kill_argument;
};

/// What a debater is allowed to see. Round 0 requests carry an empty
/// transcript: no opening can anchor another.
struct DebaterRequest {
    std::string topic;
    std::vector<std::string> grounding;
    json transcript = json::array();
    json open_issues = json::array();
    int round = 0;
};

void to_json(json& j, const DebaterRequest& r);

class Debater {
public:
    virtual ~Debater() = default;
    virtual std::string id() const = 0;
    virtual DebaterTurn take_turn(const DebaterRequest& request) = 0;
};

struct DebateSession {
    std::string topic;
    std::vector<std::string> debaters;  // >= 2, unique adapter ids
    int max_rounds = 3;
    std::vector<std::string> grounding;
    std::vector<TranscriptEntry> transcript;
    std::vector<Issue> issue_register;
    std::vector<Ratification> ratifications;
    std::optional<std::int64_t> kill_gate_entry;  // transcript index
    std::optional<Conclusion> conclusion;
    // Moderator workspace; firewalled, never serialized into any request.
    std::string moderator_notes;
    std::vector<std::string> warnings;
    int rounds_completed = -1;  // -1 before the blind opening round
    int issue_counter = 0;
    std::set<int> mutating_rounds;  // rounds with >= 1 register mutation

    Issue* find_issue(const std::string& id);
    const Issue* find_issue(const std::string& id) const;
};

void to_json(json& j, const DebateSession& s);
void from_json(const json& j, DebateSession& s);

DebateSession make_session(const std::string& topic,
                           const std::vector<std::string>& debater_ids,
                           int max_rounds = 3,
                           std::vector<std::string> grounding = {});

using DebaterResolver = std::function<Debater*(const std::string& id)>;

/// Round 0: every debater opens blind; openings are appended only after
/// all have returned, in debater-list order. A crashed debater drops out;
/// fewer than two survivors blocks the session.
void open_round_blind(DebateSession& session, const DebaterResolver& resolve);

/// A moderated round: debaters in order see the transcript so far and the
/// open issue register.
void run_round(DebateSession& session, const DebaterResolver& resolve);

struct ConvergenceResult {
    bool converged = false;
    std::vector<std::string> open_issue_ids;
    std::vector<std::string> unratified_issue_ids;
};

/// Converged iff every issue is Resolved and ratified by its raiser —
/// semantic resolution, not self-reported agreement counting.
ConvergenceResult convergence_check(const DebateSession& session);

/// Agreed needs convergence plus a recorded do-not-build argument;
/// convergence without one is Blocked (kill gate unsatisfied); anything
/// else is AgreedToDisagree.
Conclusion conclude(DebateSession& session);

/// Per-issue lineage plus the full transcript reference.
json synthesis_report(const DebateSession& session);

struct CorpusMetrics {
    double dcr = 0.0;               // fraction of sessions concluding Agreed
    double round_efficiency = 0.0;  // rounds with >= 1 register mutation
    double ratification_rate = 0.0;
    std::vector<std::string> flags;
};

void to_json(json& j, const CorpusMetrics& m);

CorpusMetrics corpus_metrics(const std::vector<DebateSession>& sessions);

}  // namespace loopkit
