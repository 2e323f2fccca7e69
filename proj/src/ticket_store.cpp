#include "loopkit/ticket_store.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace loopkit {

bool TicketStore::transition_legal(TicketState from, TicketState to) {
    using S = TicketState;
    if (from == S::Backlog && to == S::Todo) return true;
    if (from == S::Todo && to == S::InProgress) return true;
    if (from == S::InProgress && to == S::InReview) return true;
    if (from == S::InReview && to == S::Done) return true;
    if (from == S::InReview && to == S::InProgress) return true;  // rework
    if (from != S::Done && to == S::Backlog) return true;         // demotion
    if (from == S::Done && to == S::Todo) return true;            // reopen
    return false;
}

std::string TicketStore::next_id() {
    std::ostringstream out;
    out << "T-" << std::setw(4) << std::setfill('0') << ++id_counter_;
    return out.str();
}

std::pair<std::string, DedupOutcome> TicketStore::create_or_dedup(
    const TicketDraft& draft, std::int64_t current_iteration) {
    if (draft.title.empty()) {
        throw std::invalid_argument("ticket draft needs a non-empty title");
    }
    const std::string key = dedup_key(draft.title, draft.body);
    auto hit = dedup_index_.find(key);
    if (hit != dedup_index_.end()) {
        Ticket& existing = tickets_.at(hit->second);
        existing.confirmations += 1;
        ++revision_;
        return {existing.id, DedupOutcome::Deduplicated};
    }

    Ticket t;
    t.id = next_id();
    t.title = draft.title;
    t.body = draft.body;
    t.label = draft.label;
    t.priority = draft.priority;
    t.state = TicketState::Backlog;
    t.source = draft.source;
    t.dedup_key = key;
    t.created_at_iteration = current_iteration;
    for (const auto& blocker : draft.blocked_by) {
        if (!exists(blocker)) continue;
        t.blocked_by.insert(blocker);
        tickets_.at(blocker).blocks.insert(t.id);
    }
    dedup_index_[key] = t.id;
    std::string id = t.id;
    tickets_.emplace(id, std::move(t));
    ++revision_;
    return {id, DedupOutcome::Created};
}

Ticket TicketStore::transition(const std::string& id, TicketState target) {
    Ticket& t = tickets_.at(id);
    if (!transition_legal(t.state, target)) {
        throw IllegalTransition(t.state, target);
    }
    if (t.state != TicketState::Done && target == TicketState::Done) {
        dedup_index_.erase(t.dedup_key);
    }
    if (t.state == TicketState::Done && target != TicketState::Done) {
        dedup_index_[t.dedup_key] = t.id;
    }
    t.state = target;
    ++revision_;
    return t;
}

std::optional<std::string> TicketStore::reopen_if_unmerged(const PullRequest& pr) {
    if (pr.state != PrState::Retired || !pr.ticket_id.has_value()) {
        return std::nullopt;
    }
    auto it = tickets_.find(*pr.ticket_id);
    if (it == tickets_.end()) return std::nullopt;
    TicketState s = it->second.state;
    if (s != TicketState::InReview && s != TicketState::Done) return std::nullopt;
    if (s == TicketState::InReview) {
        // InReview -> Backlog -> Todo keeps every hop on the legal matrix.
        transition(it->first, TicketState::Backlog);
        transition(it->first, TicketState::Todo);
    } else {
        transition(it->first, TicketState::Todo);
    }
    return it->first;
}

bool TicketStore::open(const std::string& id) const {
    auto it = tickets_.find(id);
    return it != tickets_.end() && it->second.state != TicketState::Done;
}

std::vector<Ticket> TicketStore::top_urgent_unblocked(
    std::size_t n, std::int64_t) const {
    std::vector<Ticket> eligible;
    for (const auto& [id, t] : tickets_) {
        if (t.state != TicketState::Todo && t.state != TicketState::Backlog) continue;
        bool blocked = false;
        for (const auto& blocker : t.blocked_by) {
            if (open(blocker)) { blocked = true; break; }
        }
        if (!blocked) eligible.push_back(t);
    }
    // Bugs first, then priority, then age; id as the final deterministic key.
    std::sort(eligible.begin(), eligible.end(), [](const Ticket& a, const Ticket& b) {
        int la = a.label == TicketLabel::Bug ? 0 : 1;
        int lb = b.label == TicketLabel::Bug ? 0 : 1;
        if (la != lb) return la < lb;
        if (a.priority != b.priority)
            return static_cast<int>(a.priority) < static_cast<int>(b.priority);
        if (a.created_at_iteration != b.created_at_iteration)
            return a.created_at_iteration < b.created_at_iteration;
        return a.id < b.id;
    });
    if (eligible.size() > n) eligible.resize(n);
    return eligible;
}

void TicketStore::add_dependency(const std::string& blocker,
                                 const std::string& blocked) {
    Ticket& a = tickets_.at(blocker);
    Ticket& b = tickets_.at(blocked);
    a.blocks.insert(b.id);
    b.blocked_by.insert(a.id);
    ++revision_;
}

void TicketStore::link_pr(const std::string& ticket_id, const std::string& pr_id) {
    tickets_.at(ticket_id).linked_prs.insert(pr_id);
    ++revision_;
}

const Ticket& TicketStore::get(const std::string& id) const {
    return tickets_.at(id);
}

std::vector<Ticket> TicketStore::all() const {
    std::vector<Ticket> out;
    out.reserve(tickets_.size());
    for (const auto& [id, t] : tickets_) out.push_back(t);
    return out;
}

json TicketStore::to_document() const {
    json tickets = json::array();
    for (const auto& [id, t] : tickets_) tickets.push_back(t);
    return json{{"tickets", std::move(tickets)},
                {"revision", revision_},
                {"id_counter", id_counter_}};
}

TicketStore TicketStore::from_document(const json& j) {
    TicketStore store;
    try {
        for (const auto& tj : j.at("tickets")) {
            Ticket t = tj.get<Ticket>();
            store.tickets_.emplace(t.id, std::move(t));
        }
        j.at("revision").get_to(store.revision_);
        j.at("id_counter").get_to(store.id_counter_);
    } catch (const json::exception& e) {
        throw CorruptStore(std::string("ticket store document: ") + e.what());
    }
    store.reindex();
    return store;
}

void TicketStore::reindex() {
    dedup_index_.clear();
    for (const auto& [id, t] : tickets_) {
        if (t.state != TicketState::Done) dedup_index_[t.dedup_key] = id;
    }
}

void TicketStore::persist(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write ticket store: " + path);
    out << to_canonical(to_document());
}

TicketStore TicketStore::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptStore("cannot read ticket store: " + path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw CorruptStore("ticket store parse error at byte " +
                           std::to_string(e.byte) + ": " + e.what());
    }
    return from_document(j);
}

}  // namespace loopkit
