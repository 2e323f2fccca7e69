#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "loopkit/rng.hpp"
#include "loopkit/ticket_store.hpp"
#include "test_util.hpp"

using namespace loopkit;

namespace {

TicketDraft draft(const std::string& title, const std::string& body = "",
                  TicketLabel label = TicketLabel::Bug,
                  TicketPriority priority = TicketPriority::Medium,
                  TicketSource source = TicketSource::Loop) {
    TicketDraft d;
    d.title = title;
    d.body = body;
    d.label = label;
    d.priority = priority;
    d.source = source;
    return d;
}

}  // namespace

TEST_CASE("create_or_dedup: first submission creates, resubmission dedups") {
    TicketStore store;
    auto [id, outcome] =
        store.create_or_dedup(draft("Router config missing on chain X"), 1);
    CHECK(outcome == DedupOutcome::Created);
    CHECK(store.get(id).state == TicketState::Backlog);
    CHECK(store.get(id).confirmations == 1);

    auto [id2, outcome2] =
        store.create_or_dedup(draft("Router config missing on chain X"), 2);
    CHECK(outcome2 == DedupOutcome::Deduplicated);
    CHECK(id2 == id);
    // The confirmation counter feeds pattern promotion.
    CHECK(store.get(id).confirmations == 2);
    CHECK(store.size() == 1);
}

TEST_CASE("create_or_dedup: whitespace and capitalization do not split tickets") {
    TicketStore store;
    auto [id, o1] = store.create_or_dedup(draft("Swap fails on Base", "body A"), 1);
    auto [id2, o2] =
        store.create_or_dedup(draft("  swap FAILS on base  ", "body  a"), 1);
    // Oracle: the normalization applied independently produces equal keys.
    REQUIRE(dedup_key("Swap fails on Base", "body A") ==
            dedup_key("  swap FAILS on base  ", "body  a"));
    CHECK(o2 == DedupOutcome::Deduplicated);
    CHECK(id == id2);
}

TEST_CASE("dedup releases once the prior ticket is Done") {
    TicketStore store;
    auto [id, o] = store.create_or_dedup(draft("bug"), 1);
    store.transition(id, TicketState::Todo);
    store.transition(id, TicketState::InProgress);
    store.transition(id, TicketState::InReview);
    store.transition(id, TicketState::Done);
    auto [id2, o2] = store.create_or_dedup(draft("bug"), 5);
    CHECK(o2 == DedupOutcome::Created);
    CHECK(id2 != id);
}

TEST_CASE("transition matrix: all 25 pairs against the legal set") {
    using S = TicketState;
    // Independent enumeration of the legal moves.
    auto legal = [](S from, S to) {
        if (from == S::Backlog && to == S::Todo) return true;
        if (from == S::Todo && to == S::InProgress) return true;
        if (from == S::InProgress && to == S::InReview) return true;
        if (from == S::InReview && to == S::Done) return true;
        if (from == S::InReview && to == S::InProgress) return true;
        if (from != S::Done && to == S::Backlog) return true;
        if (from == S::Done && to == S::Todo) return true;
        return false;
    };
    const std::vector<S> states = {S::Backlog, S::Todo, S::InProgress,
                                   S::InReview, S::Done};
    for (S from : states) {
        for (S to : states) {
            CAPTURE(json(from).get<std::string>());
            CAPTURE(json(to).get<std::string>());
            CHECK(TicketStore::transition_legal(from, to) == legal(from, to));
        }
    }
}

TEST_CASE("transition walks the full chain and rejects skips") {
    TicketStore store;
    auto [id, o] = store.create_or_dedup(draft("stepwise"), 1);
    store.transition(id, TicketState::Todo);
    store.transition(id, TicketState::InProgress);
    store.transition(id, TicketState::InReview);
    store.transition(id, TicketState::Done);
    CHECK(store.get(id).state == TicketState::Done);

    auto [id2, o2] = store.create_or_dedup(draft("skipper"), 1);
    CHECK_THROWS_AS(store.transition(id2, TicketState::InReview),
                    IllegalTransition);
    CHECK_THROWS_AS(store.transition(id, TicketState::Done), IllegalTransition);
}

TEST_CASE("reopen_if_unmerged") {
    TicketStore store;
    auto [id, o] = store.create_or_dedup(draft("fix me"), 1);
    store.transition(id, TicketState::Todo);
    store.transition(id, TicketState::InProgress);
    store.transition(id, TicketState::InReview);
    store.transition(id, TicketState::Done);

    PullRequest pr;
    pr.id = "PR-1";
    pr.ticket_id = id;
    pr.state = PrState::Retired;

    SUBCASE("retired PR reopens a Done ticket to Todo") {
        auto reopened = store.reopen_if_unmerged(pr);
        REQUIRE(reopened.has_value());
        CHECK(*reopened == id);
        CHECK(store.get(id).state == TicketState::Todo);
    }
    SUBCASE("merged PR is a no-op") {
        pr.state = PrState::Merged;
        CHECK_FALSE(store.reopen_if_unmerged(pr).has_value());
        CHECK(store.get(id).state == TicketState::Done);
    }
    SUBCASE("retired PR without a ticket link is a no-op") {
        pr.ticket_id.reset();
        CHECK_FALSE(store.reopen_if_unmerged(pr).has_value());
    }
}

TEST_CASE("top_urgent_unblocked: bugs first, then priority") {
    TicketStore store;
    auto [feature, o1] = store.create_or_dedup(
        draft("shiny feature", "", TicketLabel::Feature, TicketPriority::Critical), 1);
    auto [bug, o2] = store.create_or_dedup(
        draft("nasty bug", "", TicketLabel::Bug, TicketPriority::Critical), 2);
    auto top = store.top_urgent_unblocked(10, 3);
    REQUIRE(top.size() == 2);
    CHECK(top[0].id == bug);
    CHECK(top[1].id == feature);

    CHECK(store.top_urgent_unblocked(0, 3).empty());
}

TEST_CASE("top_urgent_unblocked: randomized population equals brute force") {
    Rng rng(77);
    TicketStore store;
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) {
        TicketDraft d = draft("ticket " + std::to_string(i),
                              "body " + std::to_string(i),
                              static_cast<TicketLabel>(rng.below(4)),
                              static_cast<TicketPriority>(rng.below(4)),
                              rng.below(2) ? TicketSource::Human
                                           : TicketSource::Loop);
        auto [id, o] = store.create_or_dedup(d, static_cast<std::int64_t>(rng.below(10)));
        ids.push_back(id);
    }
    // Random dependency edges and random advanced states.
    for (int i = 0; i < 12; ++i) {
        std::string a = ids[rng.below(ids.size())];
        std::string b = ids[rng.below(ids.size())];
        if (a != b) store.add_dependency(a, b);
    }
    for (const auto& id : ids) {
        if (rng.below(4) == 0) store.transition(id, TicketState::Todo);
    }

    // Independent oracle: filter eligibility, then sort by the stated key.
    std::vector<Ticket> all = store.all();
    std::vector<Ticket> expected;
    auto open = [&](const std::string& id) {
        for (const auto& t : all) {
            if (t.id == id) return t.state != TicketState::Done;
        }
        return false;
    };
    for (const auto& t : all) {
        if (t.state != TicketState::Todo && t.state != TicketState::Backlog) continue;
        bool blocked = false;
        for (const auto& blocker : t.blocked_by) {
            if (open(blocker)) blocked = true;
        }
        if (!blocked) expected.push_back(t);
    }
    std::sort(expected.begin(), expected.end(), [](const Ticket& a, const Ticket& b) {
        auto key = [](const Ticket& t) {
            return std::make_tuple(t.label == TicketLabel::Bug ? 0 : 1,
                                   static_cast<int>(t.priority),
                                   t.created_at_iteration, t.id);
        };
        return key(a) < key(b);
    });
    if (expected.size() > 7) expected.resize(7);

    CHECK(store.top_urgent_unblocked(7, 11) == expected);
}

TEST_CASE("ranking is source-blind") {
    Rng rng(123);
    TicketStore human_store;
    TicketStore loop_store;
    for (int i = 0; i < 15; ++i) {
        TicketLabel label = static_cast<TicketLabel>(rng.below(4));
        TicketPriority priority = static_cast<TicketPriority>(rng.below(4));
        std::string title = "work item " + std::to_string(i);
        human_store.create_or_dedup(
            draft(title, "", label, priority, TicketSource::Human), i);
        loop_store.create_or_dedup(
            draft(title, "", label, priority, TicketSource::Loop), i);
    }
    auto strip = [](std::vector<Ticket> tickets) {
        std::vector<std::string> ids;
        ids.reserve(tickets.size());
        for (const auto& t : tickets) ids.push_back(t.id);
        return ids;
    };
    CHECK(strip(human_store.top_urgent_unblocked(15, 20)) ==
          strip(loop_store.top_urgent_unblocked(15, 20)));
}

TEST_CASE("no blocked ticket ever surfaces") {
    TicketStore store;
    auto [blocker, o1] = store.create_or_dedup(draft("blocker"), 1);
    auto [blocked, o2] = store.create_or_dedup(draft("blocked"), 1);
    store.add_dependency(blocker, blocked);
    for (const auto& t : store.top_urgent_unblocked(10, 2)) {
        CHECK(t.id != blocked);
    }
    // Dependency symmetry held after the mutation.
    CHECK(store.get(blocker).blocks.count(blocked) == 1);
    CHECK(store.get(blocked).blocked_by.count(blocker) == 1);

    // Resolving the blocker releases the blocked ticket.
    store.transition(blocker, TicketState::Todo);
    store.transition(blocker, TicketState::InProgress);
    store.transition(blocker, TicketState::InReview);
    store.transition(blocker, TicketState::Done);
    auto top = store.top_urgent_unblocked(10, 3);
    REQUIRE(top.size() == 1);
    CHECK(top[0].id == blocked);
}

TEST_CASE("persist round-trips bit-identically") {
    test_util::TempDir dir("tickets");
    const std::string path = (dir.path() / "tickets.json").string();

    SUBCASE("empty store") {
        TicketStore store;
        store.persist(path);
        TicketStore loaded = TicketStore::load(path);
        CHECK(loaded.size() == 0);
        CHECK(loaded.revision() == store.revision());
    }

    SUBCASE("100 tickets with 50 dependency edges") {
        Rng rng(42);
        TicketStore store;
        std::vector<std::string> ids;
        for (int i = 0; i < 100; ++i) {
            auto [id, o] = store.create_or_dedup(
                draft("t" + std::to_string(i), "b" + std::to_string(i),
                      static_cast<TicketLabel>(rng.below(4)),
                      static_cast<TicketPriority>(rng.below(4))),
                i);
            ids.push_back(id);
        }
        int edges = 0;
        while (edges < 50) {
            std::string a = ids[rng.below(ids.size())];
            std::string b = ids[rng.below(ids.size())];
            if (a == b) continue;
            store.add_dependency(a, b);
            ++edges;
        }
        store.persist(path);
        TicketStore loaded = TicketStore::load(path);
        loaded.persist(path + ".2");
        CHECK(test_util::read_file(path) == test_util::read_file(path + ".2"));
        CHECK(loaded.revision() == store.revision());
        CHECK(loaded.all() == store.all());
    }
}

TEST_CASE("truncated store file raises CorruptStore with a byte offset") {
    test_util::TempDir dir("corrupt");
    const std::string path = (dir.path() / "tickets.json").string();
    TicketStore store;
    store.create_or_dedup(draft("x"), 1);
    store.persist(path);
    std::string bytes = test_util::read_file(path);
    test_util::write_file(path, bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(TicketStore::load(path), CorruptStore);
    try {
        TicketStore::load(path);
    } catch (const CorruptStore& e) {
        CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
}

TEST_CASE("dedup idempotence: submitting twice never yields two ids") {
    Rng rng(5);
    TicketStore store;
    for (int i = 0; i < 40; ++i) {
        TicketDraft d = draft("title " + std::to_string(rng.below(12)),
                              "body " + std::to_string(rng.below(4)));
        auto [a, o1] = store.create_or_dedup(d, i);
        auto [b, o2] = store.create_or_dedup(d, i);
        CHECK(a == b);
        CHECK(o2 == DedupOutcome::Deduplicated);
    }
}

TEST_CASE("revision increases by exactly one per committed mutation") {
    TicketStore store;
    std::int64_t r0 = store.revision();
    auto [id, o] = store.create_or_dedup(draft("x"), 1);
    CHECK(store.revision() == r0 + 1);
    store.transition(id, TicketState::Todo);
    CHECK(store.revision() == r0 + 2);
    store.create_or_dedup(draft("x"), 2);  // dedup is still a commit
    CHECK(store.revision() == r0 + 3);
}
