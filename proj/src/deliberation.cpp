#include "loopkit/deliberation.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace loopkit {

// ---------------------------------------------------------------------------
// Tribunal
// ---------------------------------------------------------------------------

void to_json(json& j, const ReviewerFinding& f) {
    j = json{{"reviewer", f.reviewer},
             {"key", f.key},
             {"severity", f.severity},
             {"detail", f.detail}};
}

void from_json(const json& j, ReviewerFinding& f) {
    j.at("reviewer").get_to(f.reviewer);
    j.at("key").get_to(f.key);
    j.at("severity").get_to(f.severity);
    j.at("detail").get_to(f.detail);
}

std::string normalize_finding_key(const std::string& category,
                                  const std::string& location,
                                  const std::string& claim) {
    auto lower = [](const std::string& s) {
        std::string out = s;
        std::transform(out.begin(), out.end(), out.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        return out;
    };
    std::istringstream words(lower(claim));
    std::string word;
    std::string head;
    int count = 0;
    while (count < 8 && words >> word) {
        if (!head.empty()) head += ' ';
        head += word;
        ++count;
    }
    return lower(category) + "|" + lower(location) + "|" + head;
}

TribunalBuckets classify_findings(
    const std::map<std::string, std::vector<ReviewerFinding>>& by_reviewer) {
    if (by_reviewer.size() != 3) {
        throw PanelSizeUnsupported(by_reviewer.size());
    }
    std::map<std::string, std::set<std::string>> reviewers_by_key;
    for (const auto& [reviewer, findings] : by_reviewer) {
        for (const auto& finding : findings) {
            reviewers_by_key[finding.key].insert(reviewer);
        }
    }
    TribunalBuckets buckets;
    for (const auto& [key, reviewers] : reviewers_by_key) {
        switch (reviewers.size()) {
            case 3: buckets.consensus.insert(key); break;
            case 2: buckets.majority.insert(key); break;
            case 1: buckets.solo.insert(key); break;
            default: break;
        }
    }
    return buckets;
}

// ---------------------------------------------------------------------------
// Session plumbing
// ---------------------------------------------------------------------------

void to_json(json& j, const Issue& i) {
    j = json{{"id", i.id},
             {"raised_by", i.raised_by},
             {"statement", i.statement},
             {"status", i.status}};
    detail::put_optional(j, "resolution", i.resolution);
    detail::put_optional(j, "resolver", i.resolver);
}

void from_json(const json& j, Issue& i) {
    j.at("id").get_to(i.id);
    j.at("raised_by").get_to(i.raised_by);
    j.at("statement").get_to(i.statement);
    j.at("status").get_to(i.status);
    detail::get_optional(j, "resolution", i.resolution);
    detail::get_optional(j, "resolver", i.resolver);
}

void to_json(json& j, const TranscriptEntry& e) {
    j = json{{"round", e.round}, {"speaker", e.speaker}, {"content", e.content}};
}

void from_json(const json& j, TranscriptEntry& e) {
    j.at("round").get_to(e.round);
    j.at("speaker").get_to(e.speaker);
    j.at("content").get_to(e.content);
}

void to_json(json& j, const Ratification& r) {
    j = json{{"issue_id", r.issue_id}, {"ratified_by", r.ratified_by}};
}

void from_json(const json& j, Ratification& r) {
    j.at("issue_id").get_to(r.issue_id);
    j.at("ratified_by").get_to(r.ratified_by);
}

void to_json(json& j, const DebaterRequest& r) {
    // Deliberately narrow: topic, grounding, visible transcript, open
    // issues. Moderator state has no field here.
    j = json{{"topic", r.topic},
             {"grounding", r.grounding},
             {"transcript", r.transcript},
             {"open_issues", r.open_issues},
             {"round", r.round}};
}

void to_json(json& j, const DebateSession& s) {
    j = json{{"topic", s.topic},
             {"debaters", s.debaters},
             {"max_rounds", s.max_rounds},
             {"grounding", s.grounding},
             {"transcript", s.transcript},
             {"issue_register", s.issue_register},
             {"ratifications", s.ratifications},
             {"warnings", s.warnings},
             {"rounds_completed", s.rounds_completed},
             {"issue_counter", s.issue_counter},
             {"mutating_rounds", s.mutating_rounds}};
    detail::put_optional(j, "kill_gate_entry", s.kill_gate_entry);
    detail::put_optional(j, "conclusion", s.conclusion);
}

void from_json(const json& j, DebateSession& s) {
    j.at("topic").get_to(s.topic);
    j.at("debaters").get_to(s.debaters);
    j.at("max_rounds").get_to(s.max_rounds);
    j.at("grounding").get_to(s.grounding);
    j.at("transcript").get_to(s.transcript);
    j.at("issue_register").get_to(s.issue_register);
    j.at("ratifications").get_to(s.ratifications);
    j.at("warnings").get_to(s.warnings);
    j.at("rounds_completed").get_to(s.rounds_completed);
    j.at("issue_counter").get_to(s.issue_counter);
    j.at("mutating_rounds").get_to(s.mutating_rounds);
    detail::get_optional(j, "kill_gate_entry", s.kill_gate_entry);
    detail::get_optional(j, "conclusion", s.conclusion);
}

Issue* DebateSession::find_issue(const std::string& id) {
    for (auto& issue : issue_register) {
        if (issue.id == id) return &issue;
    }
    return nullptr;
}

const Issue* DebateSession::find_issue(const std::string& id) const {
    for (const auto& issue : issue_register) {
        if (issue.id == id) return &issue;
    }
    return nullptr;
}

DebateSession make_session(const std::string& topic,
                           const std::vector<std::string>& debater_ids,
                           int max_rounds, std::vector<std::string> grounding) {
    if (debater_ids.size() < 2) {
        throw std::invalid_argument("a debate needs at least two debaters");
    }
    std::set<std::string> unique(debater_ids.begin(), debater_ids.end());
    if (unique.size() != debater_ids.size()) {
        throw std::invalid_argument("debater identifiers must be heterogeneous");
    }
    DebateSession s;
    s.topic = topic;
    s.debaters = debater_ids;
    s.max_rounds = max_rounds;
    s.grounding = std::move(grounding);
    return s;
}

namespace {

// Register/transcript effects of one turn; returns true when the issue
// register changed (raise/resolve/ratify).
bool apply_turn(DebateSession& session, const std::string& speaker,
                const DebaterTurn& turn, int round) {
    bool mutated = false;
    session.transcript.push_back(TranscriptEntry{round, speaker, turn.content});
    const std::int64_t entry_index =
        static_cast<std::int64_t>(session.transcript.size()) - 1;

    for (const auto& statement : turn.raises) {
        Issue issue;
        issue.id = "I-" + std::to_string(++session.issue_counter);
        issue.raised_by = speaker;
        issue.statement = statement;
        session.issue_register.push_back(std::move(issue));
        mutated = true;
    }
    for (const auto& [issue_id, resolution] : turn.resolves) {
        Issue* issue = session.find_issue(issue_id);
        if (issue == nullptr) {
            session.warnings.push_back(speaker + " resolved nonexistent issue " +
                                       issue_id + "; resolution discarded");
            continue;
        }
        issue->status = IssueStatus::Resolved;
        issue->resolution = resolution;
        issue->resolver = speaker;
        mutated = true;
    }
    for (const auto& issue_id : turn.ratifies) {
        if (session.find_issue(issue_id) == nullptr) {
            session.warnings.push_back(speaker + " ratified nonexistent issue " +
                                       issue_id + "; ignored");
            continue;
        }
        session.ratifications.push_back(Ratification{issue_id, speaker});
        mutated = true;
    }
    if (turn.kill_argument.has_value() && !session.kill_gate_entry.has_value()) {
        session.kill_gate_entry = entry_index;
    }
    if (mutated) session.mutating_rounds.insert(round);
    return mutated;
}

json open_issues_doc(const DebateSession& session) {
    json out = json::array();
    for (const auto& issue : session.issue_register) {
        if (issue.status == IssueStatus::Open) out.push_back(issue);
    }
    return out;
}

}  // namespace

void open_round_blind(DebateSession& session, const DebaterResolver& resolve) {
    if (!session.transcript.empty() || session.rounds_completed >= 0) {
        throw std::logic_error("blind opening requires an empty transcript");
    }
    struct Opening {
        std::string speaker;
        DebaterTurn turn;
    };
    std::vector<Opening> openings;
    std::vector<std::string> survivors;
    for (const auto& id : session.debaters) {
        Debater* debater = resolve(id);
        DebaterRequest request;
        request.topic = session.topic;
        request.grounding = session.grounding;
        request.round = 0;
        // transcript and open_issues stay empty: the wall between openings
        try {
            openings.push_back(Opening{id, debater->take_turn(request)});
            survivors.push_back(id);
        } catch (const std::exception& e) {
            session.warnings.push_back("debater " + id +
                                       " crashed in the opening round: " + e.what());
        }
    }
    session.debaters = survivors;
    if (survivors.size() < 2) {
        session.conclusion = Conclusion::Blocked;
        session.rounds_completed = 0;
        return;
    }
    for (const auto& opening : openings) {
        apply_turn(session, opening.speaker, opening.turn, 0);
    }
    session.rounds_completed = 0;
}

void run_round(DebateSession& session, const DebaterResolver& resolve) {
    if (session.rounds_completed < 0) {
        throw std::logic_error("run_round before the blind opening");
    }
    if (session.rounds_completed >= session.max_rounds) {
        throw std::logic_error("round cap reached");
    }
    const int round = session.rounds_completed + 1;
    std::vector<std::string> survivors;
    for (const auto& id : session.debaters) {
        Debater* debater = resolve(id);
        DebaterRequest request;
        request.topic = session.topic;
        request.grounding = session.grounding;
        request.transcript = json(session.transcript);
        request.open_issues = open_issues_doc(session);
        request.round = round;
        try {
            apply_turn(session, id, debater->take_turn(request), round);
            survivors.push_back(id);
        } catch (const std::exception& e) {
            session.warnings.push_back("debater " + id + " crashed in round " +
                                       std::to_string(round) + ": " + e.what());
        }
    }
    session.debaters = survivors;
    if (survivors.size() < 2) session.conclusion = Conclusion::Blocked;
    session.rounds_completed = round;
}

ConvergenceResult convergence_check(const DebateSession& session) {
    ConvergenceResult result;
    for (const auto& issue : session.issue_register) {
        if (issue.status == IssueStatus::Open) {
            result.open_issue_ids.push_back(issue.id);
            continue;
        }
        bool raiser_ratified = false;
        for (const auto& r : session.ratifications) {
            if (r.issue_id == issue.id && r.ratified_by == issue.raised_by) {
                raiser_ratified = true;
                break;
            }
        }
        if (!raiser_ratified) result.unratified_issue_ids.push_back(issue.id);
    }
    result.converged =
        result.open_issue_ids.empty() && result.unratified_issue_ids.empty();
    return result;
}

Conclusion conclude(DebateSession& session) {
    if (session.conclusion == Conclusion::Blocked) return Conclusion::Blocked;
    ConvergenceResult convergence = convergence_check(session);
    Conclusion conclusion;
    if (convergence.converged && session.kill_gate_entry.has_value()) {
        conclusion = Conclusion::Agreed;
    } else if (convergence.converged) {
        conclusion = Conclusion::Blocked;
        session.warnings.push_back(
            "kill gate unsatisfied: no do-not-build argument was recorded");
    } else {
        conclusion = Conclusion::AgreedToDisagree;
    }
    session.conclusion = conclusion;
    return conclusion;
}

json synthesis_report(const DebateSession& session) {
    json issues = json::array();
    for (const auto& issue : session.issue_register) {
        json entry{{"id", issue.id},
                   {"raised_by", issue.raised_by},
                   {"statement", issue.statement},
                   {"status", issue.status}};
        detail::put_optional(entry, "resolution", issue.resolution);
        detail::put_optional(entry, "resolver", issue.resolver);
        json ratified_by = json::array();
        for (const auto& r : session.ratifications) {
            if (r.issue_id == issue.id) ratified_by.push_back(r.ratified_by);
        }
        entry["ratified_by"] = std::move(ratified_by);
        issues.push_back(std::move(entry));
    }
    json report{{"topic", session.topic},
                {"issues", std::move(issues)},
                {"transcript", session.transcript},
                {"rounds_completed", session.rounds_completed},
                {"warnings", session.warnings}};
    detail::put_optional(report, "conclusion", session.conclusion);
    detail::put_optional(report, "kill_gate_entry", session.kill_gate_entry);
    return report;
}

void to_json(json& j, const CorpusMetrics& m) {
    j = json{{"dcr", m.dcr},
             {"round_efficiency", m.round_efficiency},
             {"ratification_rate", m.ratification_rate},
             {"flags", m.flags}};
}

CorpusMetrics corpus_metrics(const std::vector<DebateSession>& sessions) {
    if (sessions.empty()) {
        throw std::invalid_argument("corpus metrics need at least one session");
    }
    CorpusMetrics metrics;
    std::int64_t agreed = 0;
    std::int64_t rounds_total = 0;
    std::int64_t rounds_mutating = 0;
    std::int64_t resolutions = 0;
    std::int64_t ratified_resolutions = 0;
    for (const auto& session : sessions) {
        if (session.conclusion == Conclusion::Agreed) ++agreed;
        if (session.rounds_completed >= 0) {
            rounds_total += session.rounds_completed + 1;  // includes round 0
            rounds_mutating +=
                static_cast<std::int64_t>(session.mutating_rounds.size());
        }
        for (const auto& issue : session.issue_register) {
            if (issue.status != IssueStatus::Resolved) continue;
            ++resolutions;
            for (const auto& r : session.ratifications) {
                if (r.issue_id == issue.id && r.ratified_by == issue.raised_by) {
                    ++ratified_resolutions;
                    break;
                }
            }
        }
    }
    metrics.dcr = static_cast<double>(agreed) / static_cast<double>(sessions.size());
    metrics.round_efficiency =
        rounds_total > 0 ? static_cast<double>(rounds_mutating) /
                               static_cast<double>(rounds_total)
                         : 0.0;
    metrics.ratification_rate =
        resolutions > 0 ? static_cast<double>(ratified_resolutions) /
                              static_cast<double>(resolutions)
                        : 1.0;
    if (metrics.dcr == 1.0) {
        metrics.flags.push_back("universal convergence implausible");
    }
    return metrics;
}

}  // namespace loopkit
