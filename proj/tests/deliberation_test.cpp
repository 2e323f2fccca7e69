#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "loopkit/deliberation.hpp"
#include "loopkit/rng.hpp"

using namespace loopkit;

namespace {

ReviewerFinding finding(const std::string& reviewer, const std::string& key) {
    return ReviewerFinding{reviewer, key, "high", "detail"};
}

// Debater whose turns are a fixed table indexed by round.
class TableDebater : public Debater {
public:
    TableDebater(std::string id, std::map<int, DebaterTurn> turns)
        : id_(std::move(id)), turns_(std::move(turns)) {}
    std::string id() const override { return id_; }
    DebaterTurn take_turn(const DebaterRequest& request) override {
        last_requests.push_back(request);
        auto it = turns_.find(request.round);
        if (it != turns_.end()) return it->second;
        DebaterTurn quiet;
        quiet.content = id_ + " has nothing to add in round " +
                        std::to_string(request.round);
        return quiet;
    }
    std::vector<DebaterRequest> last_requests;

private:
    std::string id_;
    std::map<int, DebaterTurn> turns_;
};

class CrashingDebater : public Debater {
public:
    explicit CrashingDebater(std::string id) : id_(std::move(id)) {}
    std::string id() const override { return id_; }
    DebaterTurn take_turn(const DebaterRequest&) override {
        throw std::runtime_error("model endpoint unreachable");
    }

private:
    std::string id_;
};

DebaterTurn opening(const std::string& text) {
    DebaterTurn turn;
    turn.content = text;
    return turn;
}

struct Panel {
    std::map<std::string, Debater*> debaters;
    DebaterResolver resolver() {
        return [this](const std::string& id) -> Debater* {
            auto it = debaters.find(id);
            return it == debaters.end() ? nullptr : it->second;
        };
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// Tribunal
// ---------------------------------------------------------------------------

TEST_CASE("classification: all three flagging a key is consensus") {
    std::map<std::string, std::vector<ReviewerFinding>> by_reviewer = {
        {"A", {finding("A", "K")}},
        {"B", {finding("B", "K")}},
        {"C", {finding("C", "K")}},
    };
    TribunalBuckets buckets = classify_findings(by_reviewer);
    CHECK(buckets.consensus == std::set<std::string>{"K"});
    CHECK(buckets.majority.empty());
    CHECK(buckets.solo.empty());
}

TEST_CASE("classification: no findings leaves all buckets empty") {
    std::map<std::string, std::vector<ReviewerFinding>> by_reviewer = {
        {"A", {}}, {"B", {}}, {"C", {}}};
    TribunalBuckets buckets = classify_findings(by_reviewer);
    CHECK(buckets.consensus.empty());
    CHECK(buckets.majority.empty());
    CHECK(buckets.solo.empty());
}

TEST_CASE("classification: all 7 non-empty reviewer subsets") {
    const std::vector<std::string> reviewers = {"A", "B", "C"};
    for (int mask = 1; mask < 8; ++mask) {
        std::map<std::string, std::vector<ReviewerFinding>> by_reviewer = {
            {"A", {}}, {"B", {}}, {"C", {}}};
        int cardinality = 0;
        for (int i = 0; i < 3; ++i) {
            if (mask & (1 << i)) {
                by_reviewer[reviewers[i]].push_back(finding(reviewers[i], "K"));
                ++cardinality;
            }
        }
        TribunalBuckets buckets = classify_findings(by_reviewer);
        CAPTURE(mask);
        CHECK(buckets.consensus.count("K") == (cardinality == 3 ? 1 : 0));
        CHECK(buckets.majority.count("K") == (cardinality == 2 ? 1 : 0));
        CHECK(buckets.solo.count("K") == (cardinality == 1 ? 1 : 0));
    }
}

TEST_CASE("classification partitions: every key lands in exactly one bucket") {
    Rng rng(606);
    for (int trial = 0; trial < 200; ++trial) {
        std::map<std::string, std::vector<ReviewerFinding>> by_reviewer = {
            {"A", {}}, {"B", {}}, {"C", {}}};
        std::set<std::string> keys;
        for (int k = 0; k < 8; ++k) {
            std::string key = "key-" + std::to_string(rng.below(12));
            keys.insert(key);
            for (const std::string reviewer : {"A", "B", "C"}) {
                if (rng.below(2)) {
                    by_reviewer[reviewer].push_back(finding(reviewer, key));
                }
            }
        }
        TribunalBuckets buckets = classify_findings(by_reviewer);
        for (const auto& key : keys) {
            int flagged_by = 0;
            for (const auto& [reviewer, findings] : by_reviewer) {
                for (const auto& f : findings) {
                    if (f.key == key) {
                        ++flagged_by;
                        break;
                    }
                }
            }
            int buckets_holding = static_cast<int>(buckets.consensus.count(key)) +
                                  static_cast<int>(buckets.majority.count(key)) +
                                  static_cast<int>(buckets.solo.count(key));
            CHECK(buckets_holding == (flagged_by > 0 ? 1 : 0));
        }
    }
}

TEST_CASE("panel sizes other than three are unsupported") {
    std::map<std::string, std::vector<ReviewerFinding>> two = {{"A", {}},
                                                               {"B", {}}};
    CHECK_THROWS_AS(classify_findings(two), PanelSizeUnsupported);
    std::map<std::string, std::vector<ReviewerFinding>> four = {
        {"A", {}}, {"B", {}}, {"C", {}}, {"D", {}}};
    CHECK_THROWS_AS(classify_findings(four), PanelSizeUnsupported);
}

TEST_CASE("finding keys normalize wording differences away") {
    std::string a = normalize_finding_key(
        "Security", "src/auth.cpp", "Token Validation Skips Expiry Check Here");
    std::string b = normalize_finding_key(
        "security", "src/auth.cpp", "token validation skips expiry check here and elsewhere");
    CHECK(a == b);
    CHECK(a != normalize_finding_key("security", "src/other.cpp",
                                     "token validation skips expiry check"));
}

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

TEST_CASE("sessions need at least two heterogeneous debaters") {
    CHECK_THROWS_AS(make_session("topic", {"solo"}), std::invalid_argument);
    CHECK_THROWS_AS(make_session("topic", {"twin", "twin"}),
                    std::invalid_argument);
}

TEST_CASE("blind opening: no debater sees another's opening") {
    TableDebater a("a", {{0, opening("a opens")}});
    TableDebater b("b", {{0, opening("b opens")}});
    TableDebater c("c", {{0, opening("c opens")}});
    Panel panel{{{"a", &a}, {"b", &b}, {"c", &c}}};
    DebateSession session = make_session("pick an approach", {"a", "b", "c"});
    open_round_blind(session, panel.resolver());

    REQUIRE(session.transcript.size() == 3);
    CHECK(session.transcript[0].speaker == "a");
    CHECK(session.transcript[1].speaker == "b");
    CHECK(session.transcript[2].speaker == "c");

    // Sentinel check: each request document contains zero bytes of the
    // other openings.
    for (TableDebater* debater : {&a, &b, &c}) {
        REQUIRE(debater->last_requests.size() == 1);
        const std::string serialized =
            to_canonical(json(debater->last_requests[0]));
        CHECK(serialized.find("a opens") == std::string::npos);
        CHECK(serialized.find("b opens") == std::string::npos);
        CHECK(serialized.find("c opens") == std::string::npos);
    }
}

TEST_CASE("blind round independence: order permutes entries, not content") {
    auto run_with_order = [](const std::vector<std::string>& order) {
        TableDebater a("a", {{0, opening("alpha view")}});
        TableDebater b("b", {{0, opening("beta view")}});
        Panel panel{{{"a", &a}, {"b", &b}}};
        DebateSession session = make_session("t", order);
        open_round_blind(session, panel.resolver());
        std::map<std::string, std::string> content;
        for (const auto& entry : session.transcript) {
            content[entry.speaker] = entry.content;
        }
        return content;
    };
    CHECK(run_with_order({"a", "b"}) == run_with_order({"b", "a"}));
}

TEST_CASE("a crashing debater drops out; the session continues with two") {
    TableDebater a("a", {{0, opening("a opens")}});
    CrashingDebater b("b");
    TableDebater c("c", {{0, opening("c opens")}});
    Panel panel{{{"a", &a}, {"b", &b}, {"c", &c}}};
    DebateSession session = make_session("t", {"a", "b", "c"});
    open_round_blind(session, panel.resolver());
    CHECK(session.transcript.size() == 2);
    CHECK(session.debaters == std::vector<std::string>{"a", "c"});
    CHECK(session.conclusion != Conclusion::Blocked);
    REQUIRE(session.warnings.size() == 1);
    CHECK(session.warnings[0].find("b") != std::string::npos);
}

TEST_CASE("both peers crashing blocks the session") {
    TableDebater a("a", {{0, opening("a opens")}});
    CrashingDebater b("b");
    CrashingDebater c("c");
    Panel panel{{{"a", &a}, {"b", &b}, {"c", &c}}};
    DebateSession session = make_session("t", {"a", "b", "c"});
    open_round_blind(session, panel.resolver());
    CHECK(session.conclusion == Conclusion::Blocked);
}

TEST_CASE("turns raise and resolve issues; resolver is recorded") {
    DebaterTurn raises;
    raises.content = "two problems";
    raises.raises = {"latency budget unproven", "no rollback story"};
    DebaterTurn resolves;
    resolves.content = "rollback handled";
    resolves.resolves = {{"I-2", "feature flags cover rollback"}};

    TableDebater a("a", {{0, raises}});
    TableDebater b("b", {{0, opening("ack")}, {1, resolves}});
    Panel panel{{{"a", &a}, {"b", &b}}};
    DebateSession session = make_session("t", {"a", "b"});
    open_round_blind(session, panel.resolver());
    run_round(session, panel.resolver());

    REQUIRE(session.issue_register.size() == 2);
    CHECK(session.issue_register[0].status == IssueStatus::Open);
    CHECK(session.issue_register[1].status == IssueStatus::Resolved);
    CHECK(session.issue_register[1].resolver == "b");
    REQUIRE(session.issue_register[1].resolution.has_value());

    // Later debaters in a round see earlier turns of the same round.
    REQUIRE(b.last_requests.size() == 2);
    CHECK(b.last_requests[1].transcript.size() == 3);
}

TEST_CASE("resolving a nonexistent issue is discarded with a warning") {
    DebaterTurn bogus;
    bogus.content = "fixing ghosts";
    bogus.resolves = {{"I-99", "does not exist"}};
    TableDebater a("a", {{0, opening("hi")}, {1, bogus}});
    TableDebater b("b", {{0, opening("yo")}});
    Panel panel{{{"a", &a}, {"b", &b}}};
    DebateSession session = make_session("t", {"a", "b"});
    open_round_blind(session, panel.resolver());
    run_round(session, panel.resolver());
    CHECK(session.issue_register.empty());
    bool warned = false;
    for (const auto& w : session.warnings) {
        if (w.find("I-99") != std::string::npos) warned = true;
    }
    CHECK(warned);
}

TEST_CASE("convergence needs resolution and raiser ratification") {
    DebaterTurn raise_it;
    raise_it.content = "concern";
    raise_it.raises = {"cache invalidation unclear"};
    DebaterTurn resolve_it;
    resolve_it.content = "explained";
    resolve_it.resolves = {{"I-1", "write-through keeps it simple"}};
    DebaterTurn ratify_it;
    ratify_it.content = "satisfied";
    ratify_it.ratifies = {"I-1"};

    TableDebater a("a", {{0, raise_it}, {2, ratify_it}});
    TableDebater b("b", {{0, opening("b opens")}, {1, resolve_it}});
    Panel panel{{{"a", &a}, {"b", &b}}};
    DebateSession session = make_session("t", {"a", "b"});
    open_round_blind(session, panel.resolver());
    run_round(session, panel.resolver());

    // Resolved by b but never ratified by the raiser: not converged.
    ConvergenceResult before = convergence_check(session);
    CHECK_FALSE(before.converged);
    REQUIRE(before.unratified_issue_ids.size() == 1);
    CHECK(before.unratified_issue_ids[0] == "I-1");

    run_round(session, panel.resolver());
    ConvergenceResult after = convergence_check(session);
    CHECK(after.converged);
}

TEST_CASE("ratification by a non-raiser does not count") {
    DebaterTurn raise_it;
    raise_it.raises = {"issue"};
    DebaterTurn resolve_and_self_ratify;
    resolve_and_self_ratify.resolves = {{"I-1", "done"}};
    resolve_and_self_ratify.ratifies = {"I-1"};  // b ratifying, a raised
    TableDebater a("a", {{0, raise_it}});
    TableDebater b("b", {{0, opening("x")}, {1, resolve_and_self_ratify}});
    Panel panel{{{"a", &a}, {"b", &b}}};
    DebateSession session = make_session("t", {"a", "b"});
    open_round_blind(session, panel.resolver());
    run_round(session, panel.resolver());
    CHECK_FALSE(convergence_check(session).converged);
}

TEST_CASE("max rounds with open issues concludes agreed-to-disagree") {
    DebaterTurn stubborn;
    stubborn.content = "still unconvinced";
    stubborn.raises = {"fundamental objection"};
    TableDebater a("a", {{0, stubborn}});
    TableDebater b("b", {{0, opening("fine")}});
    Panel panel{{{"a", &a}, {"b", &b}}};
    DebateSession session = make_session("t", {"a", "b"}, 3);
    open_round_blind(session, panel.resolver());
    while (session.rounds_completed < session.max_rounds) {
        run_round(session, panel.resolver());
    }
    CHECK_THROWS_AS(run_round(session, panel.resolver()), std::logic_error);
    CHECK(conclude(session) == Conclusion::AgreedToDisagree);
}

TEST_CASE("kill gate: convergence without a do-not-build argument blocks") {
    TableDebater a("a", {{0, opening("all good")}});
    TableDebater b("b", {{0, opening("agreed")}});
    Panel panel{{{"a", &a}, {"b", &b}}};
    DebateSession session = make_session("t", {"a", "b"});
    open_round_blind(session, panel.resolver());
    REQUIRE(convergence_check(session).converged);  // empty register
    CHECK(conclude(session) == Conclusion::Blocked);
    bool warned = false;
    for (const auto& w : session.warnings) {
        if (w.find("kill gate") != std::string::npos) warned = true;
    }
    CHECK(warned);
}

TEST_CASE("converged session with a kill-gate entry concludes agreed") {
    DebaterTurn devil;
    devil.content = "the case against building this";
    devil.kill_argument = "maintenance cost could exceed the payoff";
    TableDebater a("a", {{0, opening("pro")}});
    TableDebater b("b", {{0, devil}});
    Panel panel{{{"a", &a}, {"b", &b}}};
    DebateSession session = make_session("t", {"a", "b"});
    open_round_blind(session, panel.resolver());
    REQUIRE(session.kill_gate_entry.has_value());
    CHECK(conclude(session) == Conclusion::Agreed);

    // Conclusion soundness.
    CHECK(convergence_check(session).converged);
}

TEST_CASE("firewall soundness: moderator notes never reach debaters") {
    DebaterTurn raise_it;
    raise_it.raises = {"issue"};
    TableDebater a("a", {{0, raise_it}});
    TableDebater b("b", {{0, opening("b")}});
    Panel panel{{{"a", &a}, {"b", &b}}};
    DebateSession session = make_session("t", {"a", "b"});
    session.moderator_notes = "MODERATOR-SENTINEL-51c2: lean toward option A";
    open_round_blind(session, panel.resolver());
    run_round(session, panel.resolver());
    run_round(session, panel.resolver());
    for (TableDebater* debater : {&a, &b}) {
        for (const auto& request : debater->last_requests) {
            CHECK(to_canonical(json(request)).find("MODERATOR-SENTINEL") ==
                  std::string::npos);
        }
    }
    // And the moderator never appears as a speaker.
    for (const auto& entry : session.transcript) {
        CHECK((entry.speaker == "a" || entry.speaker == "b"));
    }
}

TEST_CASE("synthesis report carries per-issue lineage and the transcript") {
    DebaterTurn raise_it;
    raise_it.raises = {"concern"};
    DebaterTurn resolve_it;
    resolve_it.resolves = {{"I-1", "handled"}};
    DebaterTurn ratify_it;
    ratify_it.ratifies = {"I-1"};
    ratify_it.kill_argument = "could be a waste";
    TableDebater a("a", {{0, raise_it}, {2, ratify_it}});
    TableDebater b("b", {{0, opening("b")}, {1, resolve_it}});
    Panel panel{{{"a", &a}, {"b", &b}}};
    DebateSession session = make_session("t", {"a", "b"});
    open_round_blind(session, panel.resolver());
    run_round(session, panel.resolver());
    run_round(session, panel.resolver());
    conclude(session);

    json report = synthesis_report(session);
    REQUIRE(report.at("issues").size() == 1);
    const json& issue = report.at("issues")[0];
    CHECK(issue.at("raised_by") == "a");
    CHECK(issue.at("resolver") == "b");
    CHECK(issue.at("ratified_by") == json::array({"a"}));
    CHECK(report.at("transcript").size() == session.transcript.size());
    CHECK(report.at("conclusion") == "agreed");
}

TEST_CASE("session serialization round-trips") {
    DebaterTurn raise_it;
    raise_it.raises = {"thing"};
    TableDebater a("a", {{0, raise_it}});
    TableDebater b("b", {{0, opening("b")}});
    Panel panel{{{"a", &a}, {"b", &b}}};
    DebateSession session = make_session("t", {"a", "b"});
    open_round_blind(session, panel.resolver());
    run_round(session, panel.resolver());
    conclude(session);
    json doc = json(session);
    DebateSession loaded = doc.get<DebateSession>();
    CHECK(json(loaded) == doc);
}

// ---------------------------------------------------------------------------
// Corpus metrics
// ---------------------------------------------------------------------------

namespace {

DebateSession agreed_session() {
    DebaterTurn devil;
    devil.content = "kill case";
    devil.kill_argument = "might not pay off";
    TableDebater a("a", {{0, opening("pro")}});
    TableDebater b("b", {{0, devil}});
    Panel panel{{{"a", &a}, {"b", &b}}};
    DebateSession session = make_session("t", {"a", "b"});
    open_round_blind(session, panel.resolver());
    conclude(session);
    return session;
}

}  // namespace

TEST_CASE("an all-agreed corpus is flagged as implausible") {
    std::vector<DebateSession> corpus{agreed_session(), agreed_session(),
                                      agreed_session()};
    CorpusMetrics metrics = corpus_metrics(corpus);
    CHECK(metrics.dcr == 1.0);
    REQUIRE(metrics.flags.size() == 1);
    CHECK(metrics.flags[0].find("implausible") != std::string::npos);
}

TEST_CASE("round efficiency counts register-mutating rounds") {
    // Six rounds total (opening + 5), mutations in rounds 0, 2 and 4.
    DebaterTurn r0;
    r0.raises = {"i1"};
    DebaterTurn r2;
    r2.raises = {"i2"};
    DebaterTurn r4;
    r4.resolves = {{"I-1", "ok"}};
    TableDebater a("a", {{0, r0}, {2, r2}, {4, r4}});
    TableDebater b("b", {{0, opening("b")}});
    Panel panel{{{"a", &a}, {"b", &b}}};
    DebateSession session = make_session("t", {"a", "b"}, 5);
    open_round_blind(session, panel.resolver());
    for (int i = 0; i < 5; ++i) run_round(session, panel.resolver());
    conclude(session);

    CorpusMetrics metrics = corpus_metrics({session});
    CHECK(metrics.round_efficiency == doctest::Approx(3.0 / 6.0));
    CHECK(metrics.dcr == 0.0);
}

TEST_CASE("corpus metrics equal direct-count oracles on synthetic corpora") {
    Rng rng(31415);
    std::vector<DebateSession> corpus;
    int expected_agreed = 0;
    std::int64_t expected_rounds = 0;
    std::int64_t expected_mutating = 0;
    std::int64_t expected_resolutions = 0;
    std::int64_t expected_ratified = 0;
    for (int s = 0; s < 12; ++s) {
        bool resolve = rng.below(2) != 0;
        bool ratify = resolve && rng.below(2) != 0;
        bool kill = rng.below(2) != 0;

        DebaterTurn r0;
        r0.raises = {"concern " + std::to_string(s)};
        if (kill) r0.kill_argument = "kill case";
        DebaterTurn r1;
        if (resolve) r1.resolves = {{"I-1", "resolution"}};
        DebaterTurn r2;
        if (ratify) r2.ratifies = {"I-1"};

        TableDebater a("a", {{0, r0}, {2, r2}});
        TableDebater b("b", {{0, opening("x")}, {1, r1}});
        Panel panel{{{"a", &a}, {"b", &b}}};
        DebateSession session = make_session("t", {"a", "b"}, 2);
        open_round_blind(session, panel.resolver());
        run_round(session, panel.resolver());
        run_round(session, panel.resolver());
        conclude(session);

        if (session.conclusion == Conclusion::Agreed) ++expected_agreed;
        expected_rounds += 3;
        expected_mutating += 1 + (resolve ? 1 : 0) + (ratify ? 1 : 0);
        if (resolve) ++expected_resolutions;
        if (ratify) ++expected_ratified;
        corpus.push_back(session);
    }
    CorpusMetrics metrics = corpus_metrics(corpus);
    CHECK(metrics.dcr == doctest::Approx(expected_agreed / 12.0));
    CHECK(metrics.round_efficiency ==
          doctest::Approx(double(expected_mutating) / double(expected_rounds)));
    if (expected_resolutions > 0) {
        CHECK(metrics.ratification_rate ==
              doctest::Approx(double(expected_ratified) /
                              double(expected_resolutions)));
    }
}
