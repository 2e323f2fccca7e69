#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "loopkit/pr_pipeline.hpp"
#include "loopkit/rng.hpp"
#include "test_util.hpp"

using namespace loopkit;

namespace {

// Inspector whose recomputed change set can differ from review-time state.
class FakeInspector : public ChangeInspector {
public:
    std::vector<FileChange> recompute_changes(const PullRequest& pr) override {
        auto it = fresh.find(pr.id);
        return it != fresh.end() ? it->second : pr.changed_files;
    }
    std::map<std::string, std::vector<FileChange>> fresh;
};

PullRequest& open_pr(PrStore& store, const std::string& head,
                     std::optional<std::string> ticket = std::nullopt) {
    PullRequest pr;
    pr.state = PrState::Open;
    pr.head_revision = head;
    pr.ticket_id = std::move(ticket);
    pr.includes_tests = true;
    return store.create(std::move(pr));
}

ReviewVerdict approve() { return ReviewVerdict{ReviewOutcome::Approve, {}, "ok"}; }
ReviewVerdict reject() {
    return ReviewVerdict{ReviewOutcome::Reject, {}, "needs work"};
}

}  // namespace

TEST_CASE("gate rejection memory") {
    PullRequest pr;
    pr.head_revision = "R";
    CHECK_FALSE(gate_rejection_memory_check(pr));  // never rejected

    pr.last_rejected_revision = "R";
    CHECK(gate_rejection_memory_check(pr));  // rejected at this very head

    pr.head_revision = "R2";
    CHECK_FALSE(gate_rejection_memory_check(pr));  // new commits: re-audit
}

TEST_CASE("deletion check compares recomputed deletions to declared") {
    FakeInspector inspector;
    PullRequest pr;
    pr.id = "PR-1";
    pr.changed_files = {{"src/a.cpp", ChangeKind::Modified}};

    SUBCASE("no deletions is clear") {
        auto check = pre_merge_deletion_check(pr, inspector, {});
        CHECK(check.clear);
    }
    SUBCASE("declared deletion matching the recomputed diff is clear") {
        pr.changed_files.push_back({"fixtures/old.json", ChangeKind::Deleted});
        auto check =
            pre_merge_deletion_check(pr, inspector, {"fixtures/old.json"});
        CHECK(check.clear);
    }
    SUBCASE("force-pushed deletion after review is blocked") {
        // Reviewed with zero deletions; a later push removed a source file.
        inspector.fresh["PR-1"] = {{"src/a.cpp", ChangeKind::Modified},
                                   {"src/core.cpp", ChangeKind::Deleted}};
        auto check = pre_merge_deletion_check(pr, inspector, {});
        CHECK_FALSE(check.clear);
        REQUIRE(check.unexpected.size() == 1);
        CHECK(check.unexpected[0] == "src/core.cpp");
    }
}

TEST_CASE("polish_pass: approved PR with a clean deletion check merges") {
    PrStore store;
    PullRequest& pr = open_pr(store, "r1");
    FakeInspector inspector;
    PolishPlan plan = polish_pass({pr}, {{pr.id, approve()}}, PolishLimits{},
                                  inspector);
    REQUIRE(plan.actions.size() == 1);
    CHECK(plan.actions[0].action == PolishActionKind::Merge);
    CHECK(plan.rejections.empty());
}

TEST_CASE("polish_pass: rejection at default threshold 1 labels immediately") {
    PrStore store;
    PullRequest& pr = open_pr(store, "r1");
    FakeInspector inspector;
    PolishPlan plan = polish_pass({pr}, {{pr.id, reject()}}, PolishLimits{},
                                  inspector);
    REQUIRE(plan.actions.size() == 1);
    CHECK(plan.actions[0].action == PolishActionKind::LabelNeedsAttention);
    REQUIRE(plan.rejections.count(pr.id) == 1);
    CHECK(plan.rejections.at(pr.id).revision == "r1");
}

TEST_CASE("polish_pass: threshold 2 retries once, then labels and escalates") {
    PrStore store;
    PullRequest& pr = open_pr(store, "r1");
    FakeInspector inspector;
    PolishLimits limits;
    limits.needs_attention_threshold = 2;

    PolishPlan first = polish_pass({pr}, {{pr.id, reject()}}, limits, inspector);
    CHECK(first.actions.empty());  // retry next pass
    CHECK(first.rejections.count(pr.id) == 1);
    pr.attempt_count = 1;
    pr.last_rejected_revision = "r1";

    // New commits arrive, review still rejects: final failure.
    pr.head_revision = "r2";
    PolishPlan second = polish_pass({pr}, {{pr.id, reject()}}, limits, inspector);
    REQUIRE(second.actions.size() == 2);
    CHECK(second.actions[0].action == PolishActionKind::LabelNeedsAttention);
    CHECK(second.actions[1].action == PolishActionKind::EscalateFollowUp);
    CHECK(second.actions[1].reason == "review_rejection");
}

TEST_CASE("polish_pass: unchanged rejected head skips without a review") {
    PrStore store;
    PullRequest& pr = open_pr(store, "rX");
    pr.last_rejected_revision = "rX";
    FakeInspector inspector;
    // No review provided at all: the memory hit must not need one.
    PolishPlan plan = polish_pass({pr}, {}, PolishLimits{}, inspector);
    REQUIRE(plan.actions.size() == 1);
    CHECK(plan.actions[0].action == PolishActionKind::SkipNotMergeable);
}

TEST_CASE("polish_pass: needs-attention PRs are excluded") {
    PrStore store;
    PullRequest& pr = open_pr(store, "r1");
    pr.state = PrState::NeedsAttention;
    pr.needs_attention_since = 3;
    FakeInspector inspector;
    PolishPlan plan = polish_pass({pr}, {}, PolishLimits{}, inspector);
    REQUIRE(plan.actions.size() == 1);
    CHECK(plan.actions[0].action == PolishActionKind::SkipExcluded);
}

TEST_CASE("polish_pass: security blocker retires") {
    PrStore store;
    PullRequest& pr = open_pr(store, "r1");
    FakeInspector inspector;
    ReviewVerdict block{ReviewOutcome::Block, "security", "unsafe key handling"};
    PolishPlan plan = polish_pass({pr}, {{pr.id, block}}, PolishLimits{},
                                  inspector);
    REQUIRE(plan.actions.size() == 1);
    CHECK(plan.actions[0].action == PolishActionKind::Retire);
    CHECK(plan.actions[0].reason.find("security") != std::string::npos);
}

TEST_CASE("polish_pass: deletion-blocked approval does not merge") {
    PrStore store;
    PullRequest& pr = open_pr(store, "r1");
    FakeInspector inspector;
    inspector.fresh[pr.id] = {{"src/core.cpp", ChangeKind::Deleted}};
    PolishPlan plan = polish_pass({pr}, {{pr.id, approve()}}, PolishLimits{},
                                  inspector);
    for (const auto& action : plan.actions) {
        CHECK(action.action != PolishActionKind::Merge);
    }
    REQUIRE(plan.rejections.count(pr.id) == 1);
    CHECK(plan.rejections.at(pr.id).failure == FailureKind::DeletionBlocked);
}

TEST_CASE("polish_pass: the PR limit caps review-consuming work") {
    PrStore store;
    std::vector<PullRequest> prs;
    std::map<std::string, ReviewVerdict> reviews;
    for (int i = 0; i < 6; ++i) {
        PullRequest& pr = open_pr(store, "r" + std::to_string(i));
        prs.push_back(pr);
        reviews[pr.id] = approve();
    }
    FakeInspector inspector;
    PolishLimits limits;
    limits.pr_limit = 2;
    PolishPlan plan = polish_pass(prs, reviews, limits, inspector);
    std::size_t merges = 0;
    for (const auto& action : plan.actions) {
        if (action.action == PolishActionKind::Merge) ++merges;
    }
    CHECK(merges == 2);
}

TEST_CASE("polish_pass: product-fail UAT pin blocks merging at that head") {
    PrStore store;
    PullRequest& pr = open_pr(store, "r9");
    pr.last_uat = UatPin{"product_fail", "r9"};
    FakeInspector inspector;
    PolishPlan plan = polish_pass({pr}, {{pr.id, approve()}}, PolishLimits{},
                                  inspector);
    REQUIRE(plan.actions.size() == 1);
    CHECK(plan.actions[0].action == PolishActionKind::SkipNotMergeable);

    // A new head clears the pin's grip.
    pr.head_revision = "r10";
    PolishPlan retry = polish_pass({pr}, {{pr.id, approve()}}, PolishLimits{},
                                   inspector);
    REQUIRE(retry.actions.size() == 1);
    CHECK(retry.actions[0].action == PolishActionKind::Merge);
}

TEST_CASE("retire routes the ticket back to the backlog") {
    PrStore prs;
    TicketStore tickets;
    TicketDraft d;
    d.title = "fix the router";
    auto [ticket_id, outcome] = tickets.create_or_dedup(d, 1);
    tickets.transition(ticket_id, TicketState::Todo);
    tickets.transition(ticket_id, TicketState::InProgress);
    tickets.transition(ticket_id, TicketState::InReview);

    PullRequest& pr = open_pr(prs, "r1", ticket_id);
    retire(prs, tickets, pr.id, "architectural concern");
    CHECK(prs.get(pr.id).state == PrState::Retired);
    CHECK(tickets.get(ticket_id).state == TicketState::Backlog);
    REQUIRE_FALSE(prs.comments(pr.id).empty());
    CHECK(prs.comments(pr.id)[0].find("architectural") != std::string::npos);

    // Terminal protection.
    CHECK_THROWS_AS(retire(prs, tickets, pr.id, "again"), RetireTerminal);
    PullRequest& merged = open_pr(prs, "r2");
    merged.state = PrState::Merged;
    CHECK_THROWS_AS(retire(prs, tickets, merged.id, "no"), RetireTerminal);
}

TEST_CASE("retired ticket re-executed later starts a fresh attempt count") {
    PrStore prs;
    TicketStore tickets;
    TicketDraft d;
    d.title = "flaky fix";
    auto [ticket_id, o] = tickets.create_or_dedup(d, 1);
    tickets.transition(ticket_id, TicketState::Todo);
    tickets.transition(ticket_id, TicketState::InProgress);
    tickets.transition(ticket_id, TicketState::InReview);

    PullRequest& first = open_pr(prs, "r1", ticket_id);
    first.attempt_count = 3;
    retire(prs, tickets, first.id, "stuck");

    PullRequest& second = open_pr(prs, "r2", ticket_id);
    CHECK(second.attempt_count == 0);
    CHECK(second.id != first.id);
}

TEST_CASE("ttl recovery returns expired labels to open") {
    PrStore store;
    PullRequest& expired = open_pr(store, "r1");
    expired.state = PrState::NeedsAttention;
    expired.needs_attention_since = 71;
    expired.attempt_count = 2;

    PullRequest& fresh = open_pr(store, "r2");
    fresh.state = PrState::NeedsAttention;
    fresh.needs_attention_since = 74;

    auto recovered = ttl_recovery(store, 74, 3);
    REQUIRE(recovered.size() == 1);
    CHECK(recovered[0] == expired.id);
    CHECK(store.get(expired.id).state == PrState::Open);
    CHECK(store.get(expired.id).attempt_count == 0);
    CHECK(store.get(fresh.id).state == PrState::NeedsAttention);
}

TEST_CASE("ttl recovery: mixed population equals a brute-force filter") {
    Rng rng(2211);
    PrStore store;
    const std::int64_t now = 50;
    const std::int64_t ttl = 10;
    std::set<std::string> expected;
    for (int i = 0; i < 30; ++i) {
        PullRequest& pr = open_pr(store, "r" + std::to_string(i));
        if (rng.below(2)) {
            pr.state = PrState::NeedsAttention;
            pr.needs_attention_since = static_cast<std::int64_t>(rng.below(50));
            if (now - *pr.needs_attention_since >= ttl) expected.insert(pr.id);
        }
    }
    auto recovered = ttl_recovery(store, now, ttl);
    CHECK(std::set<std::string>(recovered.begin(), recovered.end()) == expected);
}

TEST_CASE("deadlock freedom: rejected PRs cycle through label and recovery") {
    // A permanently-rejected population must never wedge the pipeline: at
    // every iteration each PR is either retired, excluded-with-expiry, or
    // re-eligible after TTL recovery.
    PrStore store;
    FakeInspector inspector;
    std::vector<std::string> ids;
    for (int i = 0; i < 4; ++i) {
        ids.push_back(open_pr(store, "head-0").id);
    }
    const std::int64_t ttl = 3;
    int reviews_consumed_after_recovery = 0;
    for (std::int64_t iteration = 1; iteration <= 20; ++iteration) {
        ttl_recovery(store, iteration, ttl);
        std::vector<PullRequest> open = store.by_state(PrState::Open);
        std::vector<PullRequest> excluded = store.by_state(PrState::NeedsAttention);
        std::vector<PullRequest> all = open;
        all.insert(all.end(), excluded.begin(), excluded.end());
        std::map<std::string, ReviewVerdict> reviews;
        for (const auto& pr : open) {
            // Fresh commits each pass so the gate memory never starves it.
            store.get(pr.id).head_revision = "head-" + std::to_string(iteration);
            reviews[pr.id] = reject();
        }
        std::vector<PullRequest> current;
        for (const auto& pr : all) current.push_back(store.get(pr.id));
        PolishPlan plan = polish_pass(current, reviews, PolishLimits{}, inspector);
        for (const auto& [id, rejection] : plan.rejections) {
            PullRequest& pr = store.get(id);
            pr.attempt_count += 1;
            pr.last_rejected_revision = rejection.revision;
            ++reviews_consumed_after_recovery;
        }
        for (const auto& action : plan.actions) {
            if (action.action == PolishActionKind::LabelNeedsAttention) {
                PullRequest& pr = store.get(action.pr_id);
                pr.state = PrState::NeedsAttention;
                pr.needs_attention_since = iteration;
            }
        }
    }
    // PRs kept cycling: rejected, labeled, TTL-recovered, re-reviewed.
    CHECK(reviews_consumed_after_recovery > 4);
    for (const auto& id : ids) {
        PrState state = store.get(id).state;
        CHECK((state == PrState::Open || state == PrState::NeedsAttention));
    }
}

TEST_CASE("attempt count never decreases except at explicit TTL recovery") {
    PrStore store;
    PullRequest& pr = open_pr(store, "r0");
    FakeInspector inspector;
    std::int64_t last = 0;
    for (int i = 1; i <= 6; ++i) {
        store.get(pr.id).head_revision = "r" + std::to_string(i);
        store.get(pr.id).state = PrState::Open;
        PolishPlan plan = polish_pass({store.get(pr.id)},
                                      {{pr.id, reject()}}, PolishLimits{},
                                      inspector);
        if (plan.rejections.count(pr.id)) {
            store.get(pr.id).attempt_count += 1;
            store.get(pr.id).last_rejected_revision =
                plan.rejections.at(pr.id).revision;
        }
        CHECK(store.get(pr.id).attempt_count >= last);
        last = store.get(pr.id).attempt_count;
    }
}

TEST_CASE("PR store persistence round-trip") {
    test_util::TempDir dir("prs");
    PrStore store;
    PullRequest& a = open_pr(store, "r1", std::string("T-0001"));
    store.add_comment(a.id, "hello");
    store.attach_card(a.id, json{{"pr_id", a.id}});
    open_pr(store, "r2");
    const std::string path = (dir.path() / "prs.json").string();
    store.persist(path);
    PrStore loaded = PrStore::load(path);
    CHECK(loaded.all() == store.all());
    CHECK(loaded.comments(a.id) == store.comments(a.id));
    REQUIRE(loaded.card(a.id).has_value());
    CHECK(*loaded.card(a.id) == *store.card(a.id));
}
