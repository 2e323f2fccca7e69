#pragma once

#include "loopkit/adapters.hpp"
#include "loopkit/domain.hpp"
#include "loopkit/ticket_store.hpp"

namespace loopkit {

struct RetireTerminal : std::runtime_error {
    explicit RetireTerminal(const std::string& id)
        : std::runtime_error("PR " + id + " is terminal and cannot be retired") {}
};

// ---------------------------------------------------------------------------
// PR store
// ---------------------------------------------------------------------------

class PrStore {
public:
    PullRequest& create(PullRequest pr);  // assigns the id
    PullRequest& get(const std::string& id) { return prs_.at(id); }
    const PullRequest& get(const std::string& id) const { return prs_.at(id); }
    bool exists(const std::string& id) const { return prs_.count(id) > 0; }

    std::vector<PullRequest> by_state(PrState state) const;
    /// Open plus needs-attention: everything still on the loop's plate.
    std::int64_t open_count() const;
    std::vector<PullRequest> all() const;

    void add_comment(const std::string& id, const std::string& comment);
    const std::vector<std::string>& comments(const std::string& id) const;
    void attach_card(const std::string& id, const json& card);
    std::optional<json> card(const std::string& id) const;

    json to_document() const;
    static PrStore from_document(const json& j);
    void persist(const std::string& path) const;
    static PrStore load(const std::string& path);

private:
    std::map<std::string, PullRequest> prs_;
    std::map<std::string, std::vector<std::string>> comments_;
    std::map<std::string, json> cards_;
    std::int64_t id_counter_ = 0;
};

// ---------------------------------------------------------------------------
// Reviews and polish planning
// ---------------------------------------------------------------------------

enum class ReviewOutcome { Approve, Reject, Block };

NLOHMANN_JSON_SERIALIZE_ENUM(ReviewOutcome, {
    {ReviewOutcome::Approve, "approve"}, {ReviewOutcome::Reject, "reject"},
    {ReviewOutcome::Block, "block"}})

struct ReviewVerdict {
    ReviewOutcome verdict = ReviewOutcome::Approve;
    std::optional<std::string> blocker_kind;  // security | architectural
    std::string notes;
};

void to_json(json& j, const ReviewVerdict& v);
void from_json(const json& j, ReviewVerdict& v);

enum class PolishActionKind {
    Merge,
    LabelNeedsAttention,
    Retire,
    SkipNotMergeable,
    SkipExcluded,
    EscalateFollowUp
};

NLOHMANN_JSON_SERIALIZE_ENUM(PolishActionKind, {
    {PolishActionKind::Merge, "merge"},
    {PolishActionKind::LabelNeedsAttention, "label_needs_attention"},
    {PolishActionKind::Retire, "retire"},
    {PolishActionKind::SkipNotMergeable, "skip_not_mergeable"},
    {PolishActionKind::SkipExcluded, "skip_excluded"},
    {PolishActionKind::EscalateFollowUp, "escalate_follow_up"}})

/// Pipeline-visible failure classes for escalation follow-ups.
enum class FailureKind { ReviewRejection, CiFailure, MergeConflict, DeletionBlocked };

NLOHMANN_JSON_SERIALIZE_ENUM(FailureKind, {
    {FailureKind::ReviewRejection, "review_rejection"},
    {FailureKind::CiFailure, "ci_failure"},
    {FailureKind::MergeConflict, "merge_conflict"},
    {FailureKind::DeletionBlocked, "deletion_blocked"}})

struct PolishAction {
    std::string pr_id;
    PolishActionKind action = PolishActionKind::Merge;
    std::string reason;

    bool operator==(const PolishAction&) const = default;
};

void to_json(json& j, const PolishAction& a);

struct RejectionInfo {
    FailureKind failure = FailureKind::ReviewRejection;
    std::string revision;  // head at rejection time; the gate memory
};

/// Planning output: actions plus the rejections to book against attempt
/// counters. polish_pass itself mutates nothing.
struct PolishPlan {
    std::vector<PolishAction> actions;
    std::map<std::string, RejectionInfo> rejections;
};

struct PolishLimits {
    std::int64_t pr_limit = 5;
    std::int64_t needs_attention_threshold = 1;
};

/// true iff the PR was rejected at its current head; such a PR never
/// consumes another review.
bool gate_rejection_memory_check(const PullRequest& pr);

struct DeletionCheck {
    bool clear = true;
    std::vector<std::string> unexpected;  // deletions nobody declared
};

/// Recomputes the change set now (not at review time) and compares the
/// deletions against what the PR declared.
DeletionCheck pre_merge_deletion_check(const PullRequest& pr,
                                       ChangeInspector& inspector,
                                       const std::vector<std::string>& expected);

/// The graduated pass over open PRs: excluded PRs are skipped, unchanged
/// rejected heads are skipped without a review, blockers retire, rejections
/// count attempts and label needs-attention at the threshold, approvals
/// merge only past the deletion check.
PolishPlan polish_pass(const std::vector<PullRequest>& open_prs,
                       const std::map<std::string, ReviewVerdict>& reviews,
                       const PolishLimits& limits,
                       ChangeInspector& inspector);

/// Closes the PR with a comment and routes the ticket back to the backlog.
void retire(PrStore& prs, TicketStore& tickets, const std::string& pr_id,
            const std::string& reason);

/// Needs-attention PRs whose label has outlived the TTL return to Open with
/// a fresh attempt counter; returns recovered ids.
std::vector<std::string> ttl_recovery(PrStore& prs, std::int64_t now_iteration,
                                      std::int64_t ttl);

}  // namespace loopkit
