#include "loopkit/scheduler.hpp"

#include <algorithm>
#include <cmath>

namespace loopkit {

void to_json(json& j, const TierWeights& w) {
    j = json{{"foundation", w.foundation},
             {"composition", w.composition},
             {"frontier", w.frontier}};
}

void from_json(const json& j, TierWeights& w) {
    j.at("foundation").get_to(w.foundation);
    j.at("composition").get_to(w.composition);
    j.at("frontier").get_to(w.frontier);
}

std::vector<std::string> validate_weights(const TierWeights& w) {
    std::vector<std::string> v;
    for (auto [name, value] : {std::pair<const char*, double>{"foundation", w.foundation},
                               {"composition", w.composition},
                               {"frontier", w.frontier}}) {
        if (value < 0.0 || value > 1.0) {
            v.push_back(std::string(name) + " weight outside [0,1]");
        }
    }
    if (std::abs(w.foundation + w.composition + w.frontier - 1.0) > 1e-9) {
        v.push_back("weights do not sum to 1");
    }
    return v;
}

// ---------------------------------------------------------------------------
// BlockedCombosRegistry
// ---------------------------------------------------------------------------

void BlockedCombosRegistry::block(const FeatureCombo& combo,
                                  const std::string& ticket_id,
                                  const TicketOpenFn& ticket_open) {
    if (!ticket_open(ticket_id)) throw UnknownTicket(ticket_id);
    entries_[combo] = ticket_id;
}

void BlockedCombosRegistry::unblock_on_resolution(const std::string& ticket_id) {
    for (auto it = entries_.begin(); it != entries_.end();) {
        if (it->second == ticket_id) {
            it = entries_.erase(it);
        } else {
            ++it;
        }
    }
}

void BlockedCombosRegistry::purge_stale(const TicketOpenFn& ticket_open) {
    for (auto it = entries_.begin(); it != entries_.end();) {
        if (!ticket_open(it->second)) {
            it = entries_.erase(it);
        } else {
            ++it;
        }
    }
}

json BlockedCombosRegistry::to_document() const {
    json entries = json::array();
    for (const auto& [combo, ticket] : entries_) {
        entries.push_back(json{{"combo", combo}, {"ticket_id", ticket}});
    }
    return json{{"entries", std::move(entries)}};
}

BlockedCombosRegistry BlockedCombosRegistry::from_document(const json& j) {
    BlockedCombosRegistry r;
    for (const auto& e : j.at("entries")) {
        r.entries_[e.at("combo").get<FeatureCombo>()] =
            e.at("ticket_id").get<std::string>();
    }
    return r;
}

// ---------------------------------------------------------------------------
// ExerciseHistory
// ---------------------------------------------------------------------------

ExerciseHistory::Pair ExerciseHistory::normalize(const FeatureCombo& a,
                                                 const FeatureCombo& b) {
    return a < b ? Pair{a, b} : Pair{b, a};
}

void ExerciseHistory::record_combo(const FeatureCombo& combo,
                                   std::int64_t iteration) {
    combos_[combo] = iteration;
}

void ExerciseHistory::record_scenario(const std::vector<FeatureCombo>& combos,
                                      std::int64_t iteration) {
    for (const auto& c : combos) record_combo(c, iteration);
    for (std::size_t i = 0; i < combos.size(); ++i) {
        for (std::size_t k = i + 1; k < combos.size(); ++k) {
            if (combos[i] == combos[k]) continue;
            pairs_[normalize(combos[i], combos[k])] = iteration;
        }
    }
}

std::optional<std::int64_t> ExerciseHistory::combo_last(
    const FeatureCombo& combo) const {
    auto it = combos_.find(combo);
    if (it == combos_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::int64_t> ExerciseHistory::pair_last(
    const FeatureCombo& a, const FeatureCombo& b) const {
    auto it = pairs_.find(normalize(a, b));
    if (it == pairs_.end()) return std::nullopt;
    return it->second;
}

json ExerciseHistory::to_document() const {
    json combos = json::array();
    for (const auto& [combo, iter] : combos_) {
        combos.push_back(json{{"combo", combo}, {"iteration", iter}});
    }
    json pairs = json::array();
    for (const auto& [pair, iter] : pairs_) {
        pairs.push_back(json{{"a", pair.first}, {"b", pair.second}, {"iteration", iter}});
    }
    return json{{"combos", std::move(combos)}, {"pairs", std::move(pairs)}};
}

ExerciseHistory ExerciseHistory::from_document(const json& j) {
    ExerciseHistory h;
    for (const auto& e : j.at("combos")) {
        h.combos_[e.at("combo").get<FeatureCombo>()] =
            e.at("iteration").get<std::int64_t>();
    }
    for (const auto& e : j.at("pairs")) {
        h.pairs_[normalize(e.at("a").get<FeatureCombo>(),
                           e.at("b").get<FeatureCombo>())] =
            e.at("iteration").get<std::int64_t>();
    }
    return h;
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

Tier choose_tier(const TierWeights& weights, Rng& rng) {
    double u = rng.next_double();
    if (u < weights.foundation) return Tier::Foundation;
    if (u < weights.foundation + weights.composition) return Tier::Composition;
    return Tier::Frontier;
}

std::uint64_t composition_pair_count(std::uint64_t n) {
    return n * (n - 1) / 2;
}

namespace {

int status_rank(CellStatus s) {
    switch (s) {
        case CellStatus::Untested: return 0;
        case CellStatus::Passing: return 1;
        case CellStatus::Failing: return 2;
        case CellStatus::Blocked: return 3;
    }
    return 3;
}

std::vector<const CoverageCell*> eligible_cells(
    const SpecSurface& surface, const BlockedCombosRegistry& registry) {
    std::vector<const CoverageCell*> out;
    for (const auto& [combo, cell] : surface.cells) {
        if (!cell.supported) continue;
        if (registry.blocked(combo)) continue;
        out.push_back(&cell);
    }
    return out;
}

Scenario foundation_scenario(const SpecSurface& surface,
                             const BlockedCombosRegistry& registry,
                             const ExerciseHistory& history,
                             const std::string& id) {
    std::vector<const CoverageCell*> cells = eligible_cells(surface, registry);
    if (cells.empty()) throw Exhausted(Tier::Foundation);
    auto stamp = [&](const CoverageCell* c) {
        return history.combo_last(c->combo).value_or(-1);
    };
    std::sort(cells.begin(), cells.end(),
              [&](const CoverageCell* a, const CoverageCell* b) {
                  if (a->priority != b->priority)
                      return static_cast<int>(a->priority) < static_cast<int>(b->priority);
                  if (stamp(a) != stamp(b)) return stamp(a) < stamp(b);
                  if (status_rank(a->status) != status_rank(b->status))
                      return status_rank(a->status) < status_rank(b->status);
                  return a->combo < b->combo;
              });
    Scenario s;
    s.id = id;
    s.tier = Tier::Foundation;
    s.combos = {cells.front()->combo};
    s.deliverable = Deliverable::WorkingScenario;
    s.description = "exercise " + cells.front()->combo.feature + " on " +
                    cells.front()->combo.platform + " (" +
                    cells.front()->combo.action + ")";
    return s;
}

Scenario composition_scenario(const SpecSurface& surface,
                              const BlockedCombosRegistry& registry,
                              const ExerciseHistory& history,
                              Rng& rng,
                              const std::string& id) {
    std::vector<const CoverageCell*> cells = eligible_cells(surface, registry);
    if (cells.size() < 2) throw Exhausted(Tier::Composition);

    bool want_triple = cells.size() >= 3 && rng.next_double() >= 0.8;

    using Pair = std::pair<std::size_t, std::size_t>;
    std::vector<Pair> fresh;
    std::vector<Pair> seen;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        for (std::size_t k = i + 1; k < cells.size(); ++k) {
            if (history.pair_exercised(cells[i]->combo, cells[k]->combo)) {
                seen.emplace_back(i, k);
            } else {
                fresh.emplace_back(i, k);
            }
        }
    }

    Pair base;
    if (!fresh.empty()) {
        base = fresh[static_cast<std::size_t>(rng.below(fresh.size()))];
    } else {
        // Everything exercised at least once: revisit the stalest pair.
        base = *std::min_element(
            seen.begin(), seen.end(), [&](const Pair& a, const Pair& b) {
                auto la = history.pair_last(cells[a.first]->combo, cells[a.second]->combo);
                auto lb = history.pair_last(cells[b.first]->combo, cells[b.second]->combo);
                if (*la != *lb) return *la < *lb;
                return std::tie(cells[a.first]->combo, cells[a.second]->combo) <
                       std::tie(cells[b.first]->combo, cells[b.second]->combo);
            });
    }

    std::vector<FeatureCombo> combos{cells[base.first]->combo,
                                     cells[base.second]->combo};
    if (want_triple) {
        // Extend only with a third combo whose new pairs are both fresh, so a
        // triple never re-emits an exercised pair while fresh ones remain.
        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i == base.first || i == base.second) continue;
            if (!fresh.empty() &&
                (history.pair_exercised(combos[0], cells[i]->combo) ||
                 history.pair_exercised(combos[1], cells[i]->combo))) {
                continue;
            }
            candidates.push_back(i);
        }
        if (!candidates.empty()) {
            std::size_t pick =
                candidates[static_cast<std::size_t>(rng.below(candidates.size()))];
            combos.push_back(cells[pick]->combo);
        }
    }

    Scenario s;
    s.id = id;
    s.tier = Tier::Composition;
    s.combos = std::move(combos);
    s.deliverable = Deliverable::WorkingScenario;
    s.description = "combine " + std::to_string(s.combos.size()) + " capabilities";
    return s;
}

Scenario frontier_scenario(const std::vector<std::string>& candidates,
                           Rng& rng, const std::string& id) {
    if (candidates.empty()) throw Exhausted(Tier::Frontier);
    Scenario s;
    s.id = id;
    s.tier = Tier::Frontier;
    s.gap_targets = {candidates[static_cast<std::size_t>(rng.below(candidates.size()))]};
    s.deliverable = Deliverable::GapAnalysis;
    s.description = "gap analysis: " + s.gap_targets.front();
    return s;
}

}  // namespace

Scenario next_scenario(const SpecSurface& surface,
                       const BlockedCombosRegistry& registry,
                       Tier tier,
                       const ExerciseHistory& history,
                       const std::vector<std::string>& frontier_candidates,
                       Rng& rng,
                       const std::string& scenario_id) {
    switch (tier) {
        case Tier::Foundation:
            return foundation_scenario(surface, registry, history, scenario_id);
        case Tier::Composition:
            return composition_scenario(surface, registry, history, rng, scenario_id);
        case Tier::Frontier:
            return frontier_scenario(frontier_candidates, rng, scenario_id);
    }
    throw Exhausted(tier);
}

}  // namespace loopkit
