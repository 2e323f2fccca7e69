#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "loopkit/verification.hpp"

using namespace loopkit;

namespace {

GateItem good_item(const std::string& id) {
    GateItem item;
    item.id = id;
    item.source = "registry";
    item.timestamp = 999000;
    item.payload = json{{"id", id},
                        {"entity", "alpha"},
                        {"kind", "discovery"},
                        {"title", "healthy signal"},
                        {"description", "real movement"},
                        {"confidence", 0.8},
                        {"event_time", 999500},
                        {"metrics", json{{"growth_pct", 12.0}}}};
    item.claims = {{"/metrics/growth_pct", 12.0}};
    return item;
}

VerifierMap layers_enabled(bool l1, bool l2, bool l3, bool l4) {
    json manifest = default_gate_manifest();
    if (!l1) manifest.erase("structural");
    if (!l2) manifest.erase("factual");
    if (!l3) manifest.erase("temporal");
    if (!l4) manifest.erase("cognitive");
    // run_gate requires a structural verifier; configs without L1 splice a
    // pass-through in so the remaining layers can still be swept.
    VerifierMap map = build_verifiers(manifest);
    if (!l1) {
        map[Layer::Structural].push_back(Verifier{
            "accept-all", [](const GateItem&) {
                return LayerResult{Layer::Structural, LayerOutcome::Pass, ""};
            }});
    }
    return map;
}

}  // namespace

TEST_CASE("run_gate: schema violation rejects at the structural layer") {
    VerifierMap verifiers = build_verifiers(default_gate_manifest());
    GateItem bad = good_item("item-1");
    bad.payload["entity"] = "";
    GateReport report = run_gate(bad, verifiers);
    CHECK(report.overall == GateOverall::Rejected);
    REQUIRE_FALSE(report.results.empty());
    CHECK(report.results[0].layer == Layer::Structural);
    CHECK(report.results[0].outcome == LayerOutcome::Fail);
}

TEST_CASE("run_gate: unverifiable is not a failure") {
    VerifierMap verifiers = build_verifiers(default_gate_manifest());
    GateItem shadow = good_item("item-2");
    shadow.source = "forum-rumor";  // nobody authoritative can cross-check
    GateReport report = run_gate(shadow, verifiers);
    CHECK(report.overall == GateOverall::Unverifiable);
    for (const auto& r : report.results) {
        CHECK(r.outcome != LayerOutcome::Fail);
    }
}

TEST_CASE("run_gate: a clean item is accepted through all four layers") {
    VerifierMap verifiers = build_verifiers(default_gate_manifest());
    GateReport report = run_gate(good_item("item-3"), verifiers);
    CHECK(report.overall == GateOverall::Accepted);
    CHECK(report.results.size() == 4);
}

TEST_CASE("run_gate: layer short-circuit stops after the first failing layer") {
    VerifierMap verifiers = build_verifiers(default_gate_manifest());
    int cognitive_calls = 0;
    verifiers[Layer::Cognitive].push_back(
        Verifier{"spy", [&cognitive_calls](const GateItem&) {
            ++cognitive_calls;
            return LayerResult{Layer::Cognitive, LayerOutcome::Pass, ""};
        }});
    GateItem stale = good_item("item-4");
    stale.payload["event_time"] = 1000000 - 40 * 86400;  // fails temporal
    GateReport report = run_gate(stale, verifiers);
    CHECK(report.overall == GateOverall::Rejected);
    CHECK(cognitive_calls == 0);
    for (const auto& r : report.results) {
        CHECK(r.layer != Layer::Cognitive);
    }
}

TEST_CASE("run_gate: a crashing verifier yields unverifiable, not failure") {
    VerifierMap verifiers = build_verifiers(default_gate_manifest());
    verifiers[Layer::Factual].push_back(Verifier{
        "crashy", [](const GateItem&) -> LayerResult {
            throw std::runtime_error("connection reset");
        }});
    GateReport report = run_gate(good_item("item-5"), verifiers);
    CHECK(report.overall == GateOverall::Unverifiable);
    bool saw_crash = false;
    for (const auto& r : report.results) {
        if (r.detail.find("crash") != std::string::npos) {
            saw_crash = true;
            CHECK(r.outcome == LayerOutcome::Unverifiable);
        }
    }
    CHECK(saw_crash);
}

TEST_CASE("run_gate requires a structural verifier") {
    VerifierMap empty;
    CHECK_THROWS_AS(run_gate(good_item("x"), empty), std::invalid_argument);
}

TEST_CASE("unverifiable neutrality: flipping unverifiable to pass never "
          "turns rejection into acceptance") {
    // For every canary: run the real gate; then replace all Unverifiable
    // layer entries with Pass and recombine. Rejected stays rejected.
    VerifierMap verifiers = build_verifiers(default_gate_manifest());
    for (const auto& canary : default_canary_catalog()) {
        GateReport report = run_gate(canary.item, verifiers);
        bool any_fail = false;
        for (const auto& r : report.results) {
            if (r.outcome == LayerOutcome::Fail) any_fail = true;
        }
        GateOverall upgraded =
            any_fail ? GateOverall::Rejected : GateOverall::Accepted;
        if (report.overall == GateOverall::Rejected) {
            CHECK(upgraded == GateOverall::Rejected);
        }
        if (report.overall == GateOverall::Unverifiable) {
            CHECK(upgraded == GateOverall::Accepted);
        }
    }
}

// ---------------------------------------------------------------------------
// Canary catalog
// ---------------------------------------------------------------------------

TEST_CASE("catalog shape: 24 tier canaries (6 per tier) plus 3 degradation") {
    auto catalog = default_canary_catalog();
    std::map<CanaryTier, int> counts;
    for (const auto& c : catalog) counts[c.tier]++;
    CHECK(counts[CanaryTier::T1] == 6);
    CHECK(counts[CanaryTier::T2] == 6);
    CHECK(counts[CanaryTier::T3] == 6);
    CHECK(counts[CanaryTier::T4] == 6);
    CHECK(counts[CanaryTier::ApiDegradation] == 3);
    CHECK(catalog.size() == 27);

    // Ids are unique and serialization round-trips.
    std::set<std::string> ids;
    for (const auto& c : catalog) {
        CHECK(ids.insert(c.id).second);
        CHECK(json(c).get<CanaryDefinition>() == c);
    }
}

TEST_CASE("full gate catches every tier canary; degradation is graceful") {
    auto catalog = default_canary_catalog();
    VerifierMap verifiers = build_verifiers(default_gate_manifest());
    CanaryRunReport report = inject_and_score({}, catalog, verifiers, 7);
    CHECK(report.per_tier_caught.at("t1") == 6);
    CHECK(report.per_tier_caught.at("t2") == 6);
    CHECK(report.per_tier_caught.at("t3") == 6);
    CHECK(report.per_tier_caught.at("t4") == 6);
    CHECK(report.escapes.empty());
    CHECK(report.degradation_total == 3);
    CHECK(report.degradation_graceful == 3);
}

TEST_CASE("temporal layer disabled: shadow canaries escape") {
    auto catalog = default_canary_catalog();
    VerifierMap verifiers = layers_enabled(true, true, false, true);
    CanaryRunReport report = inject_and_score({}, catalog, verifiers, 7);
    // Only the two factually-checkable shadow canaries stay caught.
    CHECK(report.per_tier_caught.at("t2") == 2);
    CHECK(report.per_tier_total.at("t2") == 6);
    CHECK(report.escapes.size() >= 1);
    // Tier 1 still holds: those canaries never depend on temporal checks.
    CHECK(report.per_tier_caught.at("t1") == 6);
}

TEST_CASE("canary ids must be disjoint from batch ids") {
    auto catalog = default_canary_catalog();
    VerifierMap verifiers = build_verifiers(default_gate_manifest());
    GateItem imposter = good_item(catalog.front().item.id);
    CHECK_THROWS_AS(inject_and_score({imposter}, catalog, verifiers, 1),
                    std::invalid_argument);
}

TEST_CASE("canary non-leakage and real-item independence") {
    auto catalog = default_canary_catalog();
    VerifierMap verifiers = build_verifiers(default_gate_manifest());
    std::vector<GateItem> batch = {good_item("real-1"), good_item("real-2")};
    GateItem shadow = good_item("real-3");
    shadow.source = "forum-rumor";
    batch.push_back(shadow);

    CanaryRunReport with = inject_and_score(batch, catalog, verifiers, 99);
    CanaryRunReport without = inject_and_score(batch, {}, verifiers, 99);

    // No canary id ever reaches the accepted stream.
    for (const auto& id : with.accepted_ids) {
        CHECK(id.rfind("canary:", 0) != 0);
    }
    // Real items are unaffected by canary presence.
    CHECK(with.accepted_ids == without.accepted_ids);
    for (const auto& item : batch) {
        CHECK(with.item_overall.at(item.id) == without.item_overall.at(item.id));
    }
    CHECK(with.accepted_ids == std::vector<std::string>{"real-1", "real-2"});
}

TEST_CASE("16-configuration sweep equals the brute-force per-canary oracle") {
    auto catalog = default_canary_catalog();
    for (int mask = 0; mask < 16; ++mask) {
        const bool l1 = mask & 1, l2 = mask & 2, l3 = mask & 4, l4 = mask & 8;
        VerifierMap verifiers = layers_enabled(l1, l2, l3, l4);
        CanaryRunReport report = inject_and_score({}, catalog, verifiers, 31);

        // Brute force: evaluate each canary against each enabled layer's
        // verifiers directly and recombine with independent logic.
        json manifest = default_gate_manifest();
        std::map<std::string, std::int64_t> caught;
        std::map<std::string, std::int64_t> total;
        for (const char* tier : {"t1", "t2", "t3", "t4"}) {
            caught[tier] = 0;
            total[tier] = 0;
        }
        std::vector<std::string> escapes;
        std::int64_t graceful = 0;
        for (const auto& canary : catalog) {
            struct LayerSpec {
                bool enabled;
                const char* manifest_key;
                Layer layer;
            };
            const LayerSpec specs[] = {
                {l1, "structural", Layer::Structural},
                {l2, "factual", Layer::Factual},
                {l3, "temporal", Layer::Temporal},
                {l4, "cognitive", Layer::Cognitive}};
            bool rejected = false;
            bool unverifiable = false;
            std::map<Layer, std::vector<LayerOutcome>> outcomes;
            for (const auto& spec : specs) {
                if (!spec.enabled || rejected) continue;
                json sub{{spec.manifest_key, manifest.at(spec.manifest_key)}};
                VerifierMap solo = build_verifiers(sub);
                for (const auto& verifier : solo[spec.layer]) {
                    LayerResult r = verifier.fn(canary.item);
                    outcomes[spec.layer].push_back(r.outcome);
                    if (r.outcome == LayerOutcome::Fail) rejected = true;
                    if (r.outcome == LayerOutcome::Unverifiable) unverifiable = true;
                }
            }
            GateOverall overall = rejected ? GateOverall::Rejected
                                  : unverifiable ? GateOverall::Unverifiable
                                                 : GateOverall::Accepted;
            CHECK(report.item_overall.at(canary.item.id) == overall);

            if (canary.tier == CanaryTier::ApiDegradation) {
                bool ok = overall != GateOverall::Accepted;
                for (Layer dep : canary.dependent_layers) {
                    for (LayerOutcome o : outcomes[dep]) {
                        if (o != LayerOutcome::Unverifiable) ok = false;
                    }
                }
                if (ok) ++graceful;
                if (overall == GateOverall::Accepted) {
                    escapes.push_back(canary.item.id);
                }
                continue;
            }
            std::string key = json(canary.tier).get<std::string>();
            total[key] += 1;
            if (overall == GateOverall::Accepted) {
                escapes.push_back(canary.item.id);
            } else {
                caught[key] += 1;
            }
        }
        std::sort(escapes.begin(), escapes.end());
        CAPTURE(mask);
        CHECK(report.per_tier_caught == caught);
        CHECK(report.per_tier_total == total);
        CHECK(report.escapes == escapes);
        CHECK(report.degradation_graceful == graceful);
    }
}

// ---------------------------------------------------------------------------
// Oracle report helpers
// ---------------------------------------------------------------------------

TEST_CASE("oracle contract: pass needs state deltas, fail needs detail") {
    OracleReport report;
    report.outcomes.push_back(
        {"s1", OracleOutcome{OracleValue::Pass, ""}, {"balance delta verified"}});
    report.outcomes.push_back({"s2", OracleOutcome{OracleValue::Pass, ""}, {}});
    report.outcomes.push_back({"s3", OracleOutcome{OracleValue::Fail, ""}, {}});
    auto violations = validate_oracle_report(report);
    REQUIRE(violations.size() == 2);
    CHECK(violations[0].find("s2") != std::string::npos);
    CHECK(violations[1].find("s3") != std::string::npos);
}

TEST_CASE("aggregate outcome: worst wins, fail lists scenarios") {
    OracleReport report;
    report.outcomes.push_back({"a", OracleOutcome{OracleValue::Pass, ""}, {"d"}});
    report.outcomes.push_back({"b", OracleOutcome{OracleValue::PassHold, "hold"}, {}});
    CHECK(aggregate_outcome(report).value == OracleValue::PassHold);

    report.outcomes.push_back(
        {"c", OracleOutcome{OracleValue::PassCaveat, "api key"}, {}});
    CHECK(aggregate_outcome(report).value == OracleValue::PassCaveat);

    report.outcomes.push_back({"d", OracleOutcome{OracleValue::Fail, "boom"}, {}});
    OracleOutcome aggregate = aggregate_outcome(report);
    CHECK(aggregate.value == OracleValue::Fail);
    CHECK(aggregate.detail.find("d") != std::string::npos);
    CHECK_FALSE(aggregate.detail.empty());

    CHECK(pass_fraction(report) == doctest::Approx(3.0 / 4.0));
}

// ---------------------------------------------------------------------------
// Test completeness
// ---------------------------------------------------------------------------

TEST_CASE("test completeness judgments") {
    TestVerificationRecord record;
    record.test_id = "t";

    SUBCASE("all four layers is complete") {
        record.layers_present = {TestLayer::Compilation, TestLayer::Execution,
                                 TestLayer::OutputParsing, TestLayer::StateDeltas};
        CHECK(validate_test_completeness(record) == Completeness::Complete);
    }
    SUBCASE("compile+execute without state deltas is dangerously incomplete") {
        record.layers_present = {TestLayer::Compilation, TestLayer::Execution};
        CHECK(validate_test_completeness(record) ==
              Completeness::DangerouslyIncomplete);
        record.layers_present.insert(TestLayer::OutputParsing);
        CHECK(validate_test_completeness(record) ==
              Completeness::DangerouslyIncomplete);
    }
    SUBCASE("compile only is merely incomplete") {
        record.layers_present = {TestLayer::Compilation};
        CHECK(validate_test_completeness(record) == Completeness::Incomplete);
    }
    SUBCASE("failure-mode tests must assert conservation") {
        record.failure_mode_test = true;
        record.layers_present = {TestLayer::Compilation, TestLayer::Execution,
                                 TestLayer::StateDeltas};
        record.conservation_asserted = false;
        CHECK(validate_test_completeness(record) == Completeness::Incomplete);
        record.conservation_asserted = true;
        CHECK(validate_test_completeness(record) == Completeness::Complete);
    }
}
