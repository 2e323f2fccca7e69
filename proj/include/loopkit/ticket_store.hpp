#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "loopkit/domain.hpp"

namespace loopkit {

struct IllegalTransition : std::runtime_error {
    IllegalTransition(TicketState from, TicketState to)
        : std::runtime_error("illegal ticket transition " +
                             json(from).get<std::string>() + " -> " +
                             json(to).get<std::string>()),
          current(from),
          target(to) {}
    TicketState current;
    TicketState target;
};

struct CorruptStore : std::runtime_error {
    explicit CorruptStore(const std::string& what) : std::runtime_error(what) {}
};

enum class DedupOutcome { Created, Deduplicated };

/// Draft for a ticket before it has an id; the store assigns ids and
/// computes dedup keys.
struct TicketDraft {
    std::string title;
    std::string body;
    TicketLabel label = TicketLabel::Bug;
    TicketPriority priority = TicketPriority::Medium;
    TicketSource source = TicketSource::Loop;
    std::set<std::string> blocked_by;
};

/// The shared, durable memory between loop and human. Single writer;
/// readers take immutable snapshots.
class TicketStore {
public:
    static bool transition_legal(TicketState from, TicketState to);

    /// Dedupes against open (non-Done) tickets by normalized key. On a hit
    /// the existing ticket gains a confirmation; otherwise a new ticket is
    /// stored in Backlog.
    std::pair<std::string, DedupOutcome> create_or_dedup(
        const TicketDraft& draft, std::int64_t current_iteration);

    Ticket transition(const std::string& id, TicketState target);

    /// Triage safety net for PRs closed without merging: a Retired PR whose
    /// ticket already moved to InReview or Done sends it back to Todo.
    std::optional<std::string> reopen_if_unmerged(const PullRequest& pr);

    /// Up to n Todo/Backlog tickets with no open blocker, bugs first, then
    /// priority, then oldest; Human and Loop are interleaved blindly.
    std::vector<Ticket> top_urgent_unblocked(std::size_t n,
                                             std::int64_t current_iteration) const;

    void add_dependency(const std::string& blocker, const std::string& blocked);
    void link_pr(const std::string& ticket_id, const std::string& pr_id);

    const Ticket& get(const std::string& id) const;
    bool exists(const std::string& id) const { return tickets_.count(id) > 0; }
    bool open(const std::string& id) const;  // exists and non-Done
    std::vector<Ticket> all() const;
    std::size_t size() const { return tickets_.size(); }
    std::int64_t revision() const { return revision_; }

    void persist(const std::string& path) const;
    static TicketStore load(const std::string& path);

    json to_document() const;
    static TicketStore from_document(const json& j);

private:
    std::string next_id();
    void reindex();

    std::map<std::string, Ticket> tickets_;
    std::map<std::string, std::string> dedup_index_;  // key -> open ticket id
    std::int64_t revision_ = 0;
    std::int64_t id_counter_ = 0;
};

}  // namespace loopkit
