#pragma once

#include <functional>
#include <set>

#include "loopkit/domain.hpp"

namespace loopkit {

// ---------------------------------------------------------------------------
// Gate items and layers
// ---------------------------------------------------------------------------

enum class Layer { Structural, Factual, Temporal, Cognitive };
enum class LayerOutcome { Pass, Fail, Unverifiable };
enum class GateOverall { Accepted, Rejected, Unverifiable };

NLOHMANN_JSON_SERIALIZE_ENUM(Layer, {
    {Layer::Structural, "structural"}, {Layer::Factual, "factual"},
    {Layer::Temporal, "temporal"}, {Layer::Cognitive, "cognitive"}})
NLOHMANN_JSON_SERIALIZE_ENUM(LayerOutcome, {
    {LayerOutcome::Pass, "pass"}, {LayerOutcome::Fail, "fail"},
    {LayerOutcome::Unverifiable, "unverifiable"}})
NLOHMANN_JSON_SERIALIZE_ENUM(GateOverall, {
    {GateOverall::Accepted, "accepted"}, {GateOverall::Rejected, "rejected"},
    {GateOverall::Unverifiable, "unverifiable"}})

struct Claim {
    std::string path;  // JSON pointer into the payload
    json value;

    bool operator==(const Claim&) const = default;
};

void to_json(json& j, const Claim& c);
void from_json(const json& j, Claim& c);

struct GateItem {
    std::string id;
    json payload;
    std::vector<Claim> claims;
    std::int64_t timestamp = 0;
    std::string source;

    bool operator==(const GateItem&) const = default;
};

void to_json(json& j, const GateItem& i);
void from_json(const json& j, GateItem& i);

/// Unverifiable is distinct from Fail and never counts as a failure.
struct LayerResult {
    Layer layer = Layer::Structural;
    LayerOutcome outcome = LayerOutcome::Pass;
    std::string detail;

    bool operator==(const LayerResult&) const = default;
};

void to_json(json& j, const LayerResult& r);
void from_json(const json& j, LayerResult& r);

struct Verifier {
    std::string name;
    std::function<LayerResult(const GateItem&)> fn;
};

using VerifierMap = std::map<Layer, std::vector<Verifier>>;

struct GateReport {
    std::vector<LayerResult> results;
    GateOverall overall = GateOverall::Accepted;
};

/// Layers run in order L1..L4; the first failing layer short-circuits the
/// rest. All verifiers within a layer run, joined in registration order.
/// A crashing verifier yields Unverifiable for its entry.
GateReport run_gate(const GateItem& item, const VerifierMap& verifiers);

// ---------------------------------------------------------------------------
// Anti-signal canaries
// ---------------------------------------------------------------------------

enum class CanaryTier { T1, T2, T3, T4, ApiDegradation };

NLOHMANN_JSON_SERIALIZE_ENUM(CanaryTier, {
    {CanaryTier::T1, "t1"}, {CanaryTier::T2, "t2"}, {CanaryTier::T3, "t3"},
    {CanaryTier::T4, "t4"}, {CanaryTier::ApiDegradation, "api_degradation"}})

struct CanaryDefinition {
    std::string id;
    CanaryTier tier = CanaryTier::T1;
    GateItem item;
    // ApiDegradation only: layers that depend on the degraded source. The
    // graceful expectation is that these report Unverifiable, never a false
    // Pass, and the item is not accepted.
    std::set<Layer> dependent_layers;

    bool operator==(const CanaryDefinition&) const = default;
};

void to_json(json& j, const CanaryDefinition& c);
void from_json(const json& j, CanaryDefinition& c);

struct CanaryRunReport {
    std::map<std::string, std::int64_t> per_tier_total;   // keys t1..t4
    std::map<std::string, std::int64_t> per_tier_caught;
    std::vector<std::string> escapes;  // canary ids the gate accepted
    std::int64_t degradation_total = 0;
    std::int64_t degradation_graceful = 0;
    std::vector<std::string> accepted_ids;  // real items only, never canaries
    std::map<std::string, GateOverall> item_overall;  // every item and canary

    bool operator==(const CanaryRunReport&) const = default;
};

void to_json(json& j, const CanaryRunReport& r);

/// Shuffles the canaries into the batch (seeded) and scores the gate
/// against its known-bad baseline. Canary ids must be disjoint from batch
/// ids; canaries never appear in accepted_ids.
CanaryRunReport inject_and_score(const std::vector<GateItem>& batch,
                                 const std::vector<CanaryDefinition>& canaries,
                                 const VerifierMap& verifiers,
                                 std::uint64_t seed);

/// The reference world the deterministic rule verifiers check against:
/// known entities, ground-truth metrics and events, source lists, clock.
json default_gate_manifest();

/// Builds verifiers from a manifest document (layer -> verifier name ->
/// parameters). Shipped verifier families: "schema" (structural), "facts"
/// (factual), "temporal" (temporal), "reasoning" (cognitive rule engine).
VerifierMap build_verifiers(const json& manifest);

/// 24 tier canaries (6 per tier) plus 3 API-degradation canaries, built
/// against default_gate_manifest().
std::vector<CanaryDefinition> default_canary_catalog();

// ---------------------------------------------------------------------------
// Regression-oracle adapter contract
// ---------------------------------------------------------------------------

enum class OracleMode { Full, Quick };

NLOHMANN_JSON_SERIALIZE_ENUM(OracleMode, {
    {OracleMode::Full, "full"}, {OracleMode::Quick, "quick"}})

struct ScenarioOutcome {
    std::string scenario_id;
    OracleOutcome outcome;
    std::vector<std::string> state_deltas;  // ground-truth evidence entries

    bool operator==(const ScenarioOutcome&) const = default;
};

void to_json(json& j, const ScenarioOutcome& s);
void from_json(const json& j, ScenarioOutcome& s);

struct OracleReport {
    std::vector<ScenarioOutcome> outcomes;
    std::int64_t duration_ms = 0;

    bool operator==(const OracleReport&) const = default;
};

void to_json(json& j, const OracleReport& r);
void from_json(const json& j, OracleReport& r);

/// Deterministic per (revision, mode); a Pass needs at least one verified
/// state delta.
class OracleAdapter {
public:
    virtual ~OracleAdapter() = default;
    virtual OracleReport run(OracleMode mode, const std::string& revision) = 0;
};

/// Contract check: every Pass outcome carries state-delta evidence and
/// every Fail carries a non-empty detail.
std::vector<std::string> validate_oracle_report(const OracleReport& report);

/// Worst outcome wins: Fail > PassCaveat > PassHold > Pass. A Fail detail
/// names the failing scenarios.
OracleOutcome aggregate_outcome(const OracleReport& report);

/// Per-scenario pass fraction of one run (Fail counts 0, every Pass kind 1).
double pass_fraction(const OracleReport& report);

// ---------------------------------------------------------------------------
// Test-completeness validation
// ---------------------------------------------------------------------------

enum class TestLayer { Compilation, Execution, OutputParsing, StateDeltas };
enum class Completeness { Complete, Incomplete, DangerouslyIncomplete };

NLOHMANN_JSON_SERIALIZE_ENUM(TestLayer, {
    {TestLayer::Compilation, "compilation"},
    {TestLayer::Execution, "execution"},
    {TestLayer::OutputParsing, "output_parsing"},
    {TestLayer::StateDeltas, "state_deltas"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Completeness, {
    {Completeness::Complete, "complete"},
    {Completeness::Incomplete, "incomplete"},
    {Completeness::DangerouslyIncomplete, "dangerously_incomplete"}})

struct TestVerificationRecord {
    std::string test_id;
    std::set<TestLayer> layers_present;
    bool failure_mode_test = false;
    bool conservation_asserted = false;
};

void to_json(json& j, const TestVerificationRecord& r);
void from_json(const json& j, TestVerificationRecord& r);

/// A test that compiles and executes but never checks state deltas can
/// silently succeed while doing the wrong thing; failure-mode tests must
/// additionally assert state conservation.
Completeness validate_test_completeness(const TestVerificationRecord& record);

}  // namespace loopkit
