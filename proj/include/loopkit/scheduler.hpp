#pragma once

#include <functional>
#include <stdexcept>

#include "loopkit/domain.hpp"
#include "loopkit/rng.hpp"

namespace loopkit {

struct TierWeights {
    double foundation = 0.30;
    double composition = 0.50;
    double frontier = 0.20;

    bool operator==(const TierWeights&) const = default;
};

void to_json(json& j, const TierWeights& w);
void from_json(const json& j, TierWeights& w);

/// Empty iff fractions are in [0,1] and sum to 1 within 1e-9.
std::vector<std::string> validate_weights(const TierWeights& w);

struct Exhausted : std::runtime_error {
    explicit Exhausted(Tier t)
        : std::runtime_error("no eligible scenario for tier " +
                             json(t).get<std::string>()),
          tier(t) {}
    Tier tier;
};

struct UnknownTicket : std::runtime_error {
    explicit UnknownTicket(const std::string& id)
        : std::runtime_error("unknown blocking ticket " + id) {}
};

/// Known-broken combos excluded from scheduling until their blocking
/// ticket resolves.
class BlockedCombosRegistry {
public:
    using TicketOpenFn = std::function<bool(const std::string&)>;

    void block(const FeatureCombo& combo, const std::string& ticket_id,
               const TicketOpenFn& ticket_open);
    /// Removes every entry whose blocking ticket matches.
    void unblock_on_resolution(const std::string& ticket_id);
    /// Drops entries whose blocking ticket is gone or Done.
    void purge_stale(const TicketOpenFn& ticket_open);

    bool blocked(const FeatureCombo& combo) const {
        return entries_.count(combo) > 0;
    }
    std::size_t size() const { return entries_.size(); }
    const std::map<FeatureCombo, std::string>& entries() const { return entries_; }

    json to_document() const;
    static BlockedCombosRegistry from_document(const json& j);

private:
    std::map<FeatureCombo, std::string> entries_;
};

/// Per-combo and per-unordered-pair exercise memory; pair-level memory is
/// what makes composition growth trackable.
class ExerciseHistory {
public:
    void record_combo(const FeatureCombo& combo, std::int64_t iteration);
    void record_scenario(const std::vector<FeatureCombo>& combos,
                         std::int64_t iteration);

    std::optional<std::int64_t> combo_last(const FeatureCombo& combo) const;
    std::optional<std::int64_t> pair_last(const FeatureCombo& a,
                                          const FeatureCombo& b) const;
    bool pair_exercised(const FeatureCombo& a, const FeatureCombo& b) const {
        return pair_last(a, b).has_value();
    }
    std::size_t pairs_exercised() const { return pairs_.size(); }

    json to_document() const;
    static ExerciseHistory from_document(const json& j);

private:
    using Pair = std::pair<FeatureCombo, FeatureCombo>;
    static Pair normalize(const FeatureCombo& a, const FeatureCombo& b);

    std::map<FeatureCombo, std::int64_t> combos_;
    std::map<Pair, std::int64_t> pairs_;
};

/// Returns a tier with probability equal to its weight.
Tier choose_tier(const TierWeights& weights, Rng& rng);

/// n(n-1)/2 unordered pairs over n features.
std::uint64_t composition_pair_count(std::uint64_t n);

/// Tier-specific selection over the coverage matrix. Foundation picks one
/// supported unblocked cell (P0 first, then most stale, then untested);
/// Composition picks 2-3 combos preferring never-exercised pairs; Frontier
/// names a capability from the candidate list.
Scenario next_scenario(const SpecSurface& surface,
                       const BlockedCombosRegistry& registry,
                       Tier tier,
                       const ExerciseHistory& history,
                       const std::vector<std::string>& frontier_candidates,
                       Rng& rng,
                       const std::string& scenario_id);

}  // namespace loopkit
