#include "loopkit/pr_pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace loopkit {

// ---------------------------------------------------------------------------
// PR store
// ---------------------------------------------------------------------------

PullRequest& PrStore::create(PullRequest pr) {
    std::ostringstream out;
    out << "PR-" << std::setw(4) << std::setfill('0') << ++id_counter_;
    pr.id = out.str();
    auto [it, inserted] = prs_.emplace(pr.id, std::move(pr));
    return it->second;
}

std::vector<PullRequest> PrStore::by_state(PrState state) const {
    std::vector<PullRequest> out;
    for (const auto& [id, pr] : prs_) {
        if (pr.state == state) out.push_back(pr);
    }
    return out;
}

std::int64_t PrStore::open_count() const {
    std::int64_t n = 0;
    for (const auto& [id, pr] : prs_) {
        if (pr.state == PrState::Open || pr.state == PrState::NeedsAttention) ++n;
    }
    return n;
}

std::vector<PullRequest> PrStore::all() const {
    std::vector<PullRequest> out;
    out.reserve(prs_.size());
    for (const auto& [id, pr] : prs_) out.push_back(pr);
    return out;
}

void PrStore::add_comment(const std::string& id, const std::string& comment) {
    comments_[id].push_back(comment);
}

const std::vector<std::string>& PrStore::comments(const std::string& id) const {
    static const std::vector<std::string> empty;
    auto it = comments_.find(id);
    return it == comments_.end() ? empty : it->second;
}

void PrStore::attach_card(const std::string& id, const json& card) {
    cards_[id] = card;
}

std::optional<json> PrStore::card(const std::string& id) const {
    auto it = cards_.find(id);
    if (it == cards_.end()) return std::nullopt;
    return it->second;
}

json PrStore::to_document() const {
    json prs = json::array();
    for (const auto& [id, pr] : prs_) prs.push_back(pr);
    return json{{"prs", std::move(prs)},
                {"comments", comments_},
                {"cards", cards_},
                {"id_counter", id_counter_}};
}

PrStore PrStore::from_document(const json& j) {
    PrStore store;
    for (const auto& pj : j.at("prs")) {
        PullRequest pr = pj.get<PullRequest>();
        store.prs_.emplace(pr.id, std::move(pr));
    }
    j.at("comments").get_to(store.comments_);
    store.cards_ = j.at("cards").get<std::map<std::string, json>>();
    j.at("id_counter").get_to(store.id_counter_);
    return store;
}

void PrStore::persist(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write PR store: " + path);
    out << to_canonical(to_document());
}

PrStore PrStore::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read PR store: " + path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return from_document(json::parse(text));
}

// ---------------------------------------------------------------------------
// Reviews
// ---------------------------------------------------------------------------

void to_json(json& j, const ReviewVerdict& v) {
    j = json{{"verdict", v.verdict}, {"notes", v.notes}};
    detail::put_optional(j, "blocker_kind", v.blocker_kind);
}

void from_json(const json& j, ReviewVerdict& v) {
    j.at("verdict").get_to(v.verdict);
    j.at("notes").get_to(v.notes);
    detail::get_optional(j, "blocker_kind", v.blocker_kind);
}

void to_json(json& j, const PolishAction& a) {
    j = json{{"pr_id", a.pr_id}, {"action", a.action}, {"reason", a.reason}};
}

// ---------------------------------------------------------------------------
// Checks
// ---------------------------------------------------------------------------

bool gate_rejection_memory_check(const PullRequest& pr) {
    return pr.last_rejected_revision.has_value() &&
           *pr.last_rejected_revision == pr.head_revision;
}

DeletionCheck pre_merge_deletion_check(const PullRequest& pr,
                                       ChangeInspector& inspector,
                                       const std::vector<std::string>& expected) {
    DeletionCheck check;
    std::vector<FileChange> fresh = inspector.recompute_changes(pr);
    for (const FileChange& change : fresh) {
        if (change.kind != ChangeKind::Deleted) continue;
        if (std::find(expected.begin(), expected.end(), change.path) ==
            expected.end()) {
            check.unexpected.push_back(change.path);
        }
    }
    check.clear = check.unexpected.empty();
    return check;
}

// ---------------------------------------------------------------------------
// Polish planning
// ---------------------------------------------------------------------------

PolishPlan polish_pass(const std::vector<PullRequest>& open_prs,
                       const std::map<std::string, ReviewVerdict>& reviews,
                       const PolishLimits& limits,
                       ChangeInspector& inspector) {
    PolishPlan plan;
    std::vector<PullRequest> ordered = open_prs;
    std::sort(ordered.begin(), ordered.end(),
              [](const PullRequest& a, const PullRequest& b) { return a.id < b.id; });

    std::int64_t processed = 0;
    for (const PullRequest& pr : ordered) {
        if (pr.terminal()) continue;
        if (pr.state == PrState::NeedsAttention) {
            plan.actions.push_back({pr.id, PolishActionKind::SkipExcluded,
                                    "needs-attention label still active"});
            continue;
        }
        if (gate_rejection_memory_check(pr)) {
            // No new commits since the rejection; no review is spent.
            plan.actions.push_back({pr.id, PolishActionKind::SkipNotMergeable,
                                    "head unchanged since rejection at " +
                                        pr.head_revision});
            continue;
        }
        if (pr.last_uat.has_value() && pr.last_uat->verdict == "product_fail" &&
            pr.last_uat->revision == pr.head_revision) {
            plan.actions.push_back({pr.id, PolishActionKind::SkipNotMergeable,
                                    "product-fail UAT verdict at this head"});
            continue;
        }
        if (processed >= limits.pr_limit) break;
        auto review_it = reviews.find(pr.id);
        if (review_it == reviews.end()) continue;  // not reviewed this pass
        ++processed;

        const ReviewVerdict& review = review_it->second;
        if (review.verdict == ReviewOutcome::Block) {
            std::string kind = review.blocker_kind.value_or("architectural");
            plan.actions.push_back({pr.id, PolishActionKind::Retire,
                                    kind + " blocker: " + review.notes});
            continue;
        }

        auto record_failure = [&](FailureKind failure, const std::string& why) {
            plan.rejections[pr.id] = RejectionInfo{failure, pr.head_revision};
            if (pr.attempt_count + 1 >= limits.needs_attention_threshold) {
                plan.actions.push_back(
                    {pr.id, PolishActionKind::LabelNeedsAttention, why});
                if (limits.needs_attention_threshold > 1) {
                    plan.actions.push_back({pr.id, PolishActionKind::EscalateFollowUp,
                                            json(failure).get<std::string>()});
                }
            }
        };

        if (review.verdict == ReviewOutcome::Reject) {
            record_failure(FailureKind::ReviewRejection,
                           "review rejected: " + review.notes);
            continue;
        }

        DeletionCheck deletions =
            pre_merge_deletion_check(pr, inspector, pr.declared_deletions);
        if (!deletions.clear) {
            std::string paths;
            for (const auto& p : deletions.unexpected) {
                if (!paths.empty()) paths += ", ";
                paths += p;
            }
            record_failure(FailureKind::DeletionBlocked,
                           "unexpected deletions: " + paths);
            continue;
        }
        plan.actions.push_back({pr.id, PolishActionKind::Merge, review.notes});
    }
    return plan;
}

void retire(PrStore& prs, TicketStore& tickets, const std::string& pr_id,
            const std::string& reason) {
    PullRequest& pr = prs.get(pr_id);
    if (pr.terminal()) throw RetireTerminal(pr_id);
    pr.state = PrState::Retired;
    prs.add_comment(pr_id, "retired: " + reason + "; ticket routed to backlog");
    if (pr.ticket_id.has_value() && tickets.exists(*pr.ticket_id)) {
        const Ticket& ticket = tickets.get(*pr.ticket_id);
        if (ticket.state != TicketState::Done &&
            ticket.state != TicketState::Backlog) {
            tickets.transition(*pr.ticket_id, TicketState::Backlog);
        }
    }
}

std::vector<std::string> ttl_recovery(PrStore& prs, std::int64_t now_iteration,
                                      std::int64_t ttl) {
    if (ttl < 1) throw std::invalid_argument("ttl must be >= 1");
    std::vector<std::string> recovered;
    for (const PullRequest& snapshot : prs.all()) {
        if (snapshot.state != PrState::NeedsAttention) continue;
        if (!snapshot.needs_attention_since.has_value()) continue;
        if (now_iteration - *snapshot.needs_attention_since < ttl) continue;
        PullRequest& pr = prs.get(snapshot.id);
        pr.state = PrState::Open;
        pr.attempt_count = 0;
        pr.needs_attention_since.reset();
        recovered.push_back(pr.id);
    }
    return recovered;
}

}  // namespace loopkit
