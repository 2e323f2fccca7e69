#include "loopkit/verification.hpp"

#include <algorithm>
#include <cmath>

#include "loopkit/rng.hpp"

namespace loopkit {

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void to_json(json& j, const Claim& c) {
    j = json{{"path", c.path}, {"value", c.value}};
}

void from_json(const json& j, Claim& c) {
    j.at("path").get_to(c.path);
    c.value = j.at("value");
}

void to_json(json& j, const GateItem& i) {
    j = json{{"id", i.id},
             {"payload", i.payload},
             {"claims", i.claims},
             {"timestamp", i.timestamp},
             {"source", i.source}};
}

void from_json(const json& j, GateItem& i) {
    j.at("id").get_to(i.id);
    i.payload = j.at("payload");
    j.at("claims").get_to(i.claims);
    j.at("timestamp").get_to(i.timestamp);
    j.at("source").get_to(i.source);
}

void to_json(json& j, const LayerResult& r) {
    j = json{{"layer", r.layer}, {"outcome", r.outcome}, {"detail", r.detail}};
}

void from_json(const json& j, LayerResult& r) {
    j.at("layer").get_to(r.layer);
    j.at("outcome").get_to(r.outcome);
    j.at("detail").get_to(r.detail);
}

void to_json(json& j, const CanaryDefinition& c) {
    j = json{{"id", c.id},
             {"tier", c.tier},
             {"item", c.item},
             {"dependent_layers", c.dependent_layers}};
}

void from_json(const json& j, CanaryDefinition& c) {
    j.at("id").get_to(c.id);
    j.at("tier").get_to(c.tier);
    j.at("item").get_to(c.item);
    j.at("dependent_layers").get_to(c.dependent_layers);
}

void to_json(json& j, const CanaryRunReport& r) {
    j = json{{"per_tier_total", r.per_tier_total},
             {"per_tier_caught", r.per_tier_caught},
             {"escapes", r.escapes},
             {"degradation_total", r.degradation_total},
             {"degradation_graceful", r.degradation_graceful},
             {"accepted_ids", r.accepted_ids}};
}

// ---------------------------------------------------------------------------
// Gate
// ---------------------------------------------------------------------------

GateReport run_gate(const GateItem& item, const VerifierMap& verifiers) {
    auto structural = verifiers.find(Layer::Structural);
    if (structural == verifiers.end() || structural->second.empty()) {
        throw std::invalid_argument("gate needs at least a structural verifier");
    }

    GateReport report;
    bool any_unverifiable = false;
    for (Layer layer : {Layer::Structural, Layer::Factual, Layer::Temporal,
                        Layer::Cognitive}) {
        auto it = verifiers.find(layer);
        if (it == verifiers.end()) continue;
        bool layer_failed = false;
        for (const Verifier& verifier : it->second) {
            LayerResult result;
            try {
                result = verifier.fn(item);
                result.layer = layer;
            } catch (const std::exception& e) {
                result = LayerResult{layer, LayerOutcome::Unverifiable,
                                     std::string("verifier crash: ") + e.what()};
            }
            if (result.outcome == LayerOutcome::Fail) layer_failed = true;
            if (result.outcome == LayerOutcome::Unverifiable) any_unverifiable = true;
            report.results.push_back(std::move(result));
        }
        if (layer_failed) {
            report.overall = GateOverall::Rejected;
            return report;
        }
    }
    report.overall =
        any_unverifiable ? GateOverall::Unverifiable : GateOverall::Accepted;
    return report;
}

// ---------------------------------------------------------------------------
// Canary injection
// ---------------------------------------------------------------------------

namespace {

std::string tier_key(CanaryTier tier) { return json(tier).get<std::string>(); }

}  // namespace

CanaryRunReport inject_and_score(const std::vector<GateItem>& batch,
                                 const std::vector<CanaryDefinition>& canaries,
                                 const VerifierMap& verifiers,
                                 std::uint64_t seed) {
    std::set<std::string> canary_ids;
    for (const auto& c : canaries) canary_ids.insert(c.item.id);
    for (const auto& item : batch) {
        if (canary_ids.count(item.id)) {
            throw std::invalid_argument("canary id collides with batch item: " +
                                        item.id);
        }
    }

    struct Slot {
        const GateItem* item;
        const CanaryDefinition* canary;  // null for real items
    };
    std::vector<Slot> slots;
    slots.reserve(batch.size() + canaries.size());
    for (const auto& item : batch) slots.push_back({&item, nullptr});
    for (const auto& canary : canaries) slots.push_back({&canary.item, &canary});
    Rng rng(seed);
    rng.shuffle(slots);

    CanaryRunReport report;
    for (CanaryTier t : {CanaryTier::T1, CanaryTier::T2, CanaryTier::T3,
                         CanaryTier::T4}) {
        report.per_tier_total[tier_key(t)] = 0;
        report.per_tier_caught[tier_key(t)] = 0;
    }

    for (const Slot& slot : slots) {
        GateReport gate = run_gate(*slot.item, verifiers);
        report.item_overall[slot.item->id] = gate.overall;

        if (slot.canary == nullptr) {
            if (gate.overall == GateOverall::Accepted) {
                report.accepted_ids.push_back(slot.item->id);
            }
            continue;
        }

        const CanaryDefinition& canary = *slot.canary;
        if (canary.tier == CanaryTier::ApiDegradation) {
            report.degradation_total += 1;
            bool graceful = gate.overall != GateOverall::Accepted;
            for (const LayerResult& r : gate.results) {
                if (canary.dependent_layers.count(r.layer) &&
                    r.outcome != LayerOutcome::Unverifiable) {
                    graceful = false;
                }
            }
            if (graceful) report.degradation_graceful += 1;
            if (gate.overall == GateOverall::Accepted) {
                report.escapes.push_back(canary.item.id);
            }
            continue;
        }

        report.per_tier_total[tier_key(canary.tier)] += 1;
        if (gate.overall == GateOverall::Accepted) {
            report.escapes.push_back(canary.item.id);
        } else {
            report.per_tier_caught[tier_key(canary.tier)] += 1;
        }
    }

    std::sort(report.accepted_ids.begin(), report.accepted_ids.end());
    std::sort(report.escapes.begin(), report.escapes.end());
    return report;
}

// ---------------------------------------------------------------------------
// Reference manifest and verifier families
// ---------------------------------------------------------------------------

json default_gate_manifest() {
    json facts = {
        {"alpha", {{"growth_pct", 12.0}, {"score", 0.8}, {"supply", 1000.0},
                   {"value", 42.0}, {"risk_score", 0.1},
                   {"events", json::array({"upgrade-2031"})}}},
        {"beta", {{"growth_pct", -3.0}, {"score", 0.4}, {"supply", 500.0},
                  {"value", 7.0}, {"risk_score", 0.1},
                  {"events", json::array({"halt-2030"})}}},
        {"gamma", {{"growth_pct", 4.0}, {"score", 0.6}, {"supply", 250.0},
                   {"value", 3.0}, {"risk_score", 0.3},
                   {"events", json::array()}}},
        {"delta", {{"growth_pct", 0.5}, {"score", 0.2}, {"supply", 100.0},
                   {"value", 0.2}, {"risk_score", 0.2},
                   {"events", json::array()}}},
        {"omega", {{"growth_pct", 1.0}, {"score", 0.5}, {"supply", 50.0},
                   {"value", 1.0}, {"risk_score", 0.2},
                   {"events", json::array()}}},
    };
    json params = {
        {"now", 1000000},
        {"max_age", 86400},
        {"known_entities", {"alpha", "beta", "gamma", "delta", "omega"}},
        {"deprecated_entities", {"omega"}},
        {"known_kinds", {"discovery", "opportunity", "warning", "trend"}},
        {"confidence_range", {0.0, 1.0}},
        {"metric_bounds",
         {{"growth_pct", {-100.0, 1000.0}}, {"score", {0.0, 1.0}},
          {"risk_score", {0.0, 1.0}}}},
        {"facts", facts},
        {"authoritative_sources", {"registry", "ledger"}},
        {"unavailable_sources", {"flaky-feed", "price-oracle"}},
        {"partial_sources", {"partial-feed"}},
        {"seen_signatures", {"sig-dup-001"}},
    };
    return json{{"structural", {{"schema", params}}},
                {"factual", {{"facts", params}}},
                {"temporal", {{"temporal", params}}},
                {"cognitive", {{"reasoning", params}}}};
}

namespace {

bool has_string(const json& payload, const char* key) {
    return payload.contains(key) && payload.at(key).is_string() &&
           !payload.at(key).get<std::string>().empty();
}

bool in_list(const json& list, const std::string& value) {
    for (const auto& entry : list) {
        if (entry.is_string() && entry.get<std::string>() == value) return true;
    }
    return false;
}

constexpr double kNumericTolerance = 1e-6;

bool numbers_match(double a, double b) {
    return std::abs(a - b) <= kNumericTolerance * std::max(1.0, std::abs(b));
}

LayerResult pass(Layer layer) { return {layer, LayerOutcome::Pass, ""}; }
LayerResult fail(Layer layer, const std::string& detail) {
    return {layer, LayerOutcome::Fail, detail};
}
LayerResult unverifiable(Layer layer, const std::string& detail) {
    return {layer, LayerOutcome::Unverifiable, detail};
}

// L1: format errors, invalid enums, missing metadata, range checks.
Verifier make_schema_verifier(const json& params) {
    return {"schema", [params](const GateItem& item) -> LayerResult {
        const Layer L = Layer::Structural;
        const json& p = item.payload;
        if (!p.is_object()) return fail(L, "payload is not an object");
        for (const char* key : {"id", "entity", "title", "description"}) {
            if (!has_string(p, key)) {
                return fail(L, std::string("missing or empty field: ") + key);
            }
        }
        if (!in_list(params.at("known_entities"), p.at("entity").get<std::string>())) {
            return fail(L, "unknown entity: " + p.at("entity").get<std::string>());
        }
        if (p.contains("kind") &&
            !in_list(params.at("known_kinds"), p.at("kind").get<std::string>())) {
            return fail(L, "invalid kind: " + p.at("kind").get<std::string>());
        }
        if (p.contains("confidence")) {
            double c = p.at("confidence").get<double>();
            const json& range = params.at("confidence_range");
            if (c < range[0].get<double>() || c > range[1].get<double>()) {
                return fail(L, "confidence out of range: " + std::to_string(c));
            }
        }
        if (p.contains("metrics") && p.at("metrics").is_object()) {
            for (const auto& [name, value] : p.at("metrics").items()) {
                if (!value.is_number()) continue;
                const json& bounds = params.at("metric_bounds");
                if (!bounds.contains(name)) continue;
                double v = value.get<double>();
                if (v < bounds.at(name)[0].get<double>() ||
                    v > bounds.at(name)[1].get<double>()) {
                    return fail(L, "metric " + name + " outside plausible bounds: " +
                                       std::to_string(v));
                }
            }
        }
        for (const Claim& claim : item.claims) {
            try {
                if (!p.contains(json::json_pointer(claim.path))) {
                    return fail(L, "claim references missing payload path: " +
                                       claim.path);
                }
            } catch (const json::exception&) {
                return fail(L, "malformed claim path: " + claim.path);
            }
        }
        return pass(L);
    }};
}

// L2: cross-reference claimed values and events against ground truth;
// degraded or non-authoritative sources are unverifiable, never a pass.
Verifier make_facts_verifier(const json& params) {
    return {"facts", [params](const GateItem& item) -> LayerResult {
        const Layer L = Layer::Factual;
        const json& p = item.payload;
        const std::string source = item.source;
        if (in_list(params.at("unavailable_sources"), source)) {
            return unverifiable(L, "source unreachable: " + source);
        }
        if (in_list(params.at("partial_sources"), source)) {
            return unverifiable(L, "source returned partial data: " + source);
        }
        if (!in_list(params.at("authoritative_sources"), source)) {
            return unverifiable(L, "non-authoritative source: " + source);
        }
        std::string entity =
            p.contains("entity") ? p.value("entity", "") : std::string();
        const json& facts = params.at("facts");
        if (!facts.contains(entity)) {
            return unverifiable(L, "no ground truth for entity: " + entity);
        }
        const json& truth = facts.at(entity);
        for (const Claim& claim : item.claims) {
            std::string field = claim.path.substr(claim.path.rfind('/') + 1);
            if (!truth.contains(field)) {
                return unverifiable(L, "no ground truth for field: " + field);
            }
            if (claim.value.is_number() && truth.at(field).is_number()) {
                if (!numbers_match(claim.value.get<double>(),
                                   truth.at(field).get<double>())) {
                    return fail(L, "false claim: " + field + " claimed " +
                                       claim.value.dump() + ", ground truth " +
                                       truth.at(field).dump());
                }
            } else if (claim.value != truth.at(field)) {
                return fail(L, "false claim on field " + field);
            }
        }
        if (p.contains("event")) {
            std::string event = p.at("event").get<std::string>();
            if (!truth.contains("events") || !in_list(truth.at("events"), event)) {
                return fail(L, "no such event for entity: " + event);
            }
        }
        return pass(L);
    }};
}

// L3: staleness, concluded events, duplicates, deprecated entities,
// historical data presented as current.
Verifier make_temporal_verifier(const json& params) {
    return {"temporal", [params](const GateItem& item) -> LayerResult {
        const Layer L = Layer::Temporal;
        const json& p = item.payload;
        const std::int64_t now = params.at("now").get<std::int64_t>();
        const std::int64_t max_age = params.at("max_age").get<std::int64_t>();
        if (p.contains("status") && p.at("status") == "concluded") {
            return fail(L, "event already concluded");
        }
        if (p.contains("event_time")) {
            std::int64_t t = p.at("event_time").get<std::int64_t>();
            if (now - t > max_age) {
                return fail(L, "stale: event_time " + std::to_string(now - t) +
                                   "s old");
            }
        }
        if (p.contains("signature") &&
            in_list(params.at("seen_signatures"),
                    p.at("signature").get<std::string>())) {
            return fail(L, "duplicate of previously emitted item");
        }
        if (p.contains("entity") &&
            in_list(params.at("deprecated_entities"),
                    p.at("entity").get<std::string>())) {
            return fail(L, "entity deprecated or discontinued");
        }
        if (p.contains("data_period_end")) {
            std::int64_t end = p.at("data_period_end").get<std::int64_t>();
            if (now - end > max_age) {
                return fail(L, "historical data presented as current");
            }
        }
        return pass(L);
    }};
}

// L4: deterministic reasoning rules; wrong conclusions from correct data.
Verifier make_reasoning_verifier(const json& params) {
    return {"reasoning", [params](const GateItem& item) -> LayerResult {
        const Layer L = Layer::Cognitive;
        const json& p = item.payload;
        const json metrics = p.value("metrics", json::object());
        const json conclusion = p.value("conclusion", json::object());

        if (conclusion.contains("direction") && metrics.contains("growth_pct")) {
            double growth = metrics.at("growth_pct").get<double>();
            std::string dir = conclusion.at("direction").get<std::string>();
            if (dir == "up" && growth <= 0.0) {
                return fail(L, "conclusion 'up' contradicts negative growth");
            }
            if (dir == "down" && growth >= 0.0) {
                return fail(L, "conclusion 'down' contradicts positive growth");
            }
        }
        if (conclusion.value("magnitude", "") == "extreme" &&
            metrics.contains("growth_pct") &&
            std::abs(metrics.at("growth_pct").get<double>()) < 50.0) {
            return fail(L, "extreme magnitude claimed for mild movement");
        }
        if (metrics.contains("value_before") && metrics.contains("value_after") &&
            metrics.contains("derived_growth_pct")) {
            double before = metrics.at("value_before").get<double>();
            double after = metrics.at("value_after").get<double>();
            double claimed = metrics.at("derived_growth_pct").get<double>();
            if (before != 0.0) {
                double actual = (after - before) / before * 100.0;
                if (std::abs(actual - claimed) > 0.5) {
                    return fail(L, "derived growth " + std::to_string(claimed) +
                                       " does not follow from inputs (" +
                                       std::to_string(actual) + ")");
                }
            }
        }
        if (conclusion.contains("claimed_window_days") &&
            metrics.contains("window_days")) {
            if (conclusion.at("claimed_window_days") != metrics.at("window_days")) {
                return fail(L, "conclusion window does not match data window");
            }
        }
        if (conclusion.contains("assessment") && metrics.contains("risk_score")) {
            double risk = metrics.at("risk_score").get<double>();
            std::string a = conclusion.at("assessment").get<std::string>();
            if (a == "critical-risk" && risk < 0.5) {
                return fail(L, "critical-risk assessment on low risk score");
            }
            if (a == "low-risk" && risk >= 0.5) {
                return fail(L, "low-risk assessment on high risk score");
            }
        }
        if (metrics.contains("parts") && metrics.contains("total")) {
            double sum = 0.0;
            for (const auto& part : metrics.at("parts")) sum += part.get<double>();
            if (!numbers_match(sum, metrics.at("total").get<double>())) {
                return fail(L, "breakdown does not sum to claimed total");
            }
        }
        return pass(L);
    }};
}

}  // namespace

VerifierMap build_verifiers(const json& manifest) {
    static const std::map<std::string, Layer> layer_names = {
        {"structural", Layer::Structural},
        {"factual", Layer::Factual},
        {"temporal", Layer::Temporal},
        {"cognitive", Layer::Cognitive}};
    VerifierMap out;
    for (const auto& [layer_name, entries] : manifest.items()) {
        auto layer_it = layer_names.find(layer_name);
        if (layer_it == layer_names.end()) {
            throw std::invalid_argument("unknown gate layer: " + layer_name);
        }
        for (const auto& [verifier_name, params] : entries.items()) {
            if (verifier_name == "schema") {
                out[layer_it->second].push_back(make_schema_verifier(params));
            } else if (verifier_name == "facts") {
                out[layer_it->second].push_back(make_facts_verifier(params));
            } else if (verifier_name == "temporal") {
                out[layer_it->second].push_back(make_temporal_verifier(params));
            } else if (verifier_name == "reasoning") {
                out[layer_it->second].push_back(make_reasoning_verifier(params));
            } else {
                throw std::invalid_argument("unknown verifier: " + verifier_name);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Canary catalog
// ---------------------------------------------------------------------------

namespace {

GateItem base_item(const std::string& id, const std::string& entity,
                   json metrics = json::object()) {
    GateItem item;
    item.id = id;
    item.source = "registry";
    item.timestamp = 999000;
    item.payload = json{{"id", id},
                        {"entity", entity},
                        {"kind", "discovery"},
                        {"title", "synthetic item " + id},
                        {"description", "catalog entry"},
                        {"confidence", 0.9},
                        {"event_time", 999000},
                        {"metrics", std::move(metrics)}};
    return item;
}

CanaryDefinition canary(CanaryTier tier, GateItem item,
                        std::set<Layer> dependent = {}) {
    CanaryDefinition def;
    def.id = item.id;
    def.tier = tier;
    def.item = std::move(item);
    def.dependent_layers = std::move(dependent);
    return def;
}

}  // namespace

std::vector<CanaryDefinition> default_canary_catalog() {
    std::vector<CanaryDefinition> catalog;

    // Tier 1: obviously bad; glaring structural or factual errors.
    {
        GateItem i = base_item("canary:t1-fabricated-entity", "zeta");
        catalog.push_back(canary(CanaryTier::T1, i));
    }
    {
        GateItem i = base_item("canary:t1-impossible-metric", "alpha",
                               json{{"growth_pct", 999999.0}});
        i.claims = {{"/metrics/growth_pct", 999999.0}};
        catalog.push_back(canary(CanaryTier::T1, i));
    }
    {
        GateItem i = base_item("canary:t1-false-report", "beta");
        i.payload["event"] = "meltdown-2032";
        catalog.push_back(canary(CanaryTier::T1, i));
    }
    {
        GateItem i = base_item("canary:t1-null-identifiers", "alpha");
        i.payload["id"] = "";
        i.payload["entity"] = "";
        catalog.push_back(canary(CanaryTier::T1, i));
    }
    {
        GateItem i = base_item("canary:t1-empty-title-description", "alpha");
        i.payload["title"] = "";
        i.payload["description"] = "";
        catalog.push_back(canary(CanaryTier::T1, i));
    }
    {
        GateItem i = base_item("canary:t1-bad-confidence", "alpha");
        i.payload["confidence"] = 1.7;
        catalog.push_back(canary(CanaryTier::T1, i));
    }

    // Tier 2: shadow; true but stale, duplicate, deprecated, below
    // threshold or unattributable.
    {
        GateItem i = base_item("canary:t2-concluded-event", "alpha",
                               json{{"growth_pct", 12.0}});
        i.claims = {{"/metrics/growth_pct", 12.0}};
        i.payload["status"] = "concluded";
        catalog.push_back(canary(CanaryTier::T2, i));
    }
    {
        GateItem i = base_item("canary:t2-stale-trend", "alpha",
                               json{{"growth_pct", 12.0}});
        i.claims = {{"/metrics/growth_pct", 12.0}};
        i.payload["event_time"] = 1000000 - 30 * 86400;
        catalog.push_back(canary(CanaryTier::T2, i));
    }
    {
        GateItem i = base_item("canary:t2-below-threshold", "delta",
                               json{{"value", 5.0}});
        i.payload["kind"] = "opportunity";
        i.claims = {{"/metrics/value", 5.0}};  // ground truth has 0.2
        catalog.push_back(canary(CanaryTier::T2, i));
    }
    {
        GateItem i = base_item("canary:t2-deprecated-entity", "omega",
                               json{{"growth_pct", 1.0}});
        i.claims = {{"/metrics/growth_pct", 1.0}};
        catalog.push_back(canary(CanaryTier::T2, i));
    }
    {
        GateItem i = base_item("canary:t2-non-authoritative", "gamma",
                               json{{"growth_pct", 4.0}});
        i.claims = {{"/metrics/growth_pct", 4.0}};
        i.source = "forum-rumor";
        catalog.push_back(canary(CanaryTier::T2, i));
    }
    {
        GateItem i = base_item("canary:t2-zombie-duplicate", "alpha",
                               json{{"growth_pct", 12.0}});
        i.claims = {{"/metrics/growth_pct", 12.0}};
        i.payload["signature"] = "sig-dup-001";
        catalog.push_back(canary(CanaryTier::T2, i));
    }

    // Tier 3: adversarial; real data carrying wrong conclusions.
    {
        GateItem i = base_item("canary:t3-hyped-interpretation", "gamma",
                               json{{"growth_pct", 4.0}});
        i.claims = {{"/metrics/growth_pct", 4.0}};
        i.payload["conclusion"] = json{{"direction", "up"}, {"magnitude", "extreme"}};
        catalog.push_back(canary(CanaryTier::T3, i));
    }
    {
        GateItem i = base_item("canary:t3-inverted-direction", "beta",
                               json{{"growth_pct", -3.0}});
        i.claims = {{"/metrics/growth_pct", -3.0}};
        i.payload["conclusion"] = json{{"direction", "up"}};
        catalog.push_back(canary(CanaryTier::T3, i));
    }
    {
        GateItem i = base_item("canary:t3-wrong-calculation", "alpha",
                               json{{"value_before", 100.0},
                                    {"value_after", 106.0},
                                    {"derived_growth_pct", 50.0}});
        catalog.push_back(canary(CanaryTier::T3, i));
    }
    {
        GateItem i = base_item("canary:t3-wrong-window", "alpha",
                               json{{"growth_pct", 12.0}, {"window_days", 180}});
        i.claims = {{"/metrics/growth_pct", 12.0}};
        i.payload["conclusion"] = json{{"claimed_window_days", 7}};
        catalog.push_back(canary(CanaryTier::T3, i));
    }
    {
        GateItem i = base_item("canary:t3-mixed-subclaims", "alpha",
                               json{{"growth_pct", 12.0}, {"score", 0.99}});
        i.claims = {{"/metrics/growth_pct", 12.0}, {"/metrics/score", 0.99}};
        catalog.push_back(canary(CanaryTier::T3, i));
    }
    {
        GateItem i = base_item("canary:t3-cherry-baseline", "delta",
                               json{{"supply", 900.0}});
        i.claims = {{"/metrics/supply", 900.0}};  // ground truth has 100
        catalog.push_back(canary(CanaryTier::T3, i));
    }

    // Tier 4: mixed true/false; partial-failure detection.
    {
        GateItem i = base_item("canary:t4-blend", "alpha",
                               json{{"growth_pct", 12.0}, {"score", 0.8},
                                    {"supply", 1000.0}, {"value", 777.0}});
        i.claims = {{"/metrics/growth_pct", 12.0},
                    {"/metrics/score", 0.8},
                    {"/metrics/supply", 1000.0},
                    {"/metrics/value", 777.0}};
        i.payload["event"] = "phantom-event";
        catalog.push_back(canary(CanaryTier::T4, i));
    }
    {
        GateItem i = base_item("canary:t4-fabricated-qualitative", "beta",
                               json{{"growth_pct", -3.0}, {"risk_score", 0.1}});
        i.claims = {{"/metrics/growth_pct", -3.0}};
        i.payload["conclusion"] = json{{"assessment", "critical-risk"}};
        catalog.push_back(canary(CanaryTier::T4, i));
    }
    {
        GateItem i = base_item("canary:t4-wrong-attribution", "gamma");
        i.payload["event"] = "upgrade-2031";  // real, but it belongs to alpha
        catalog.push_back(canary(CanaryTier::T4, i));
    }
    {
        GateItem i = base_item("canary:t4-historical-as-current", "alpha",
                               json{{"growth_pct", 12.0}});
        i.claims = {{"/metrics/growth_pct", 12.0}};
        i.payload["data_period_end"] = 1000000 - 90 * 86400;
        catalog.push_back(canary(CanaryTier::T4, i));
    }
    {
        GateItem i = base_item("canary:t4-inverted-conclusion", "alpha",
                               json{{"growth_pct", 12.0}});
        i.claims = {{"/metrics/growth_pct", 12.0}};
        i.payload["conclusion"] = json{{"direction", "down"}};
        catalog.push_back(canary(CanaryTier::T4, i));
    }
    {
        GateItem i = base_item("canary:t4-breakdown-mismatch", "alpha",
                               json{{"parts", {10.0, 20.0, 30.0}}, {"total", 100.0}});
        catalog.push_back(canary(CanaryTier::T4, i));
    }

    // API degradation: gates must flag unverifiable, never falsely pass.
    {
        GateItem i = base_item("canary:api-timeout", "alpha",
                               json{{"growth_pct", 12.0}});
        i.claims = {{"/metrics/growth_pct", 12.0}};
        i.source = "flaky-feed";
        catalog.push_back(canary(CanaryTier::ApiDegradation, i, {Layer::Factual}));
    }
    {
        GateItem i = base_item("canary:api-error", "beta",
                               json{{"growth_pct", -3.0}});
        i.claims = {{"/metrics/growth_pct", -3.0}};
        i.source = "price-oracle";
        catalog.push_back(canary(CanaryTier::ApiDegradation, i, {Layer::Factual}));
    }
    {
        GateItem i = base_item("canary:api-partial", "gamma",
                               json{{"growth_pct", 4.0}});
        i.claims = {{"/metrics/growth_pct", 4.0}};
        i.source = "partial-feed";
        catalog.push_back(canary(CanaryTier::ApiDegradation, i, {Layer::Factual}));
    }

    return catalog;
}

// ---------------------------------------------------------------------------
// Oracle report helpers
// ---------------------------------------------------------------------------

void to_json(json& j, const ScenarioOutcome& s) {
    j = json{{"scenario_id", s.scenario_id},
             {"outcome", s.outcome},
             {"state_deltas", s.state_deltas}};
}

void from_json(const json& j, ScenarioOutcome& s) {
    j.at("scenario_id").get_to(s.scenario_id);
    j.at("outcome").get_to(s.outcome);
    j.at("state_deltas").get_to(s.state_deltas);
}

void to_json(json& j, const OracleReport& r) {
    j = json{{"outcomes", r.outcomes}, {"duration_ms", r.duration_ms}};
}

void from_json(const json& j, OracleReport& r) {
    j.at("outcomes").get_to(r.outcomes);
    j.at("duration_ms").get_to(r.duration_ms);
}

std::vector<std::string> validate_oracle_report(const OracleReport& report) {
    std::vector<std::string> violations;
    for (const auto& s : report.outcomes) {
        if (s.outcome.value == OracleValue::Pass && s.state_deltas.empty()) {
            violations.push_back("scenario " + s.scenario_id +
                                 ": Pass without state-delta evidence");
        }
        if (s.outcome.value == OracleValue::Fail && s.outcome.detail.empty()) {
            violations.push_back("scenario " + s.scenario_id +
                                 ": Fail without detail");
        }
    }
    return violations;
}

OracleOutcome aggregate_outcome(const OracleReport& report) {
    OracleOutcome out{OracleValue::Pass, ""};
    std::string failing;
    for (const auto& s : report.outcomes) {
        switch (s.outcome.value) {
            case OracleValue::Fail:
                out.value = OracleValue::Fail;
                if (!failing.empty()) failing += ", ";
                failing += s.scenario_id;
                break;
            case OracleValue::PassCaveat:
                if (out.value != OracleValue::Fail) out.value = OracleValue::PassCaveat;
                break;
            case OracleValue::PassHold:
                if (out.value == OracleValue::Pass) out.value = OracleValue::PassHold;
                break;
            case OracleValue::Pass:
                break;
        }
    }
    if (out.value == OracleValue::Fail) {
        out.detail = "failing scenarios: " + failing;
    }
    return out;
}

double pass_fraction(const OracleReport& report) {
    if (report.outcomes.empty()) return 1.0;
    std::size_t passing = 0;
    for (const auto& s : report.outcomes) {
        if (s.outcome.value != OracleValue::Fail) ++passing;
    }
    return static_cast<double>(passing) /
           static_cast<double>(report.outcomes.size());
}

// ---------------------------------------------------------------------------
// Test completeness
// ---------------------------------------------------------------------------

void to_json(json& j, const TestVerificationRecord& r) {
    j = json{{"test_id", r.test_id},
             {"layers_present", r.layers_present},
             {"failure_mode_test", r.failure_mode_test},
             {"conservation_asserted", r.conservation_asserted}};
}

void from_json(const json& j, TestVerificationRecord& r) {
    j.at("test_id").get_to(r.test_id);
    j.at("layers_present").get_to(r.layers_present);
    j.at("failure_mode_test").get_to(r.failure_mode_test);
    j.at("conservation_asserted").get_to(r.conservation_asserted);
}

Completeness validate_test_completeness(const TestVerificationRecord& record) {
    const auto& layers = record.layers_present;
    auto has = [&](TestLayer l) { return layers.count(l) > 0; };

    if (record.failure_mode_test) {
        bool required = has(TestLayer::Compilation) && has(TestLayer::Execution) &&
                        has(TestLayer::StateDeltas);
        return required && record.conservation_asserted ? Completeness::Complete
                                                        : Completeness::Incomplete;
    }
    if (layers.size() == 4) return Completeness::Complete;
    if (has(TestLayer::Compilation) && has(TestLayer::Execution) &&
        !has(TestLayer::StateDeltas)) {
        return Completeness::DangerouslyIncomplete;
    }
    return Completeness::Incomplete;
}

}  // namespace loopkit
