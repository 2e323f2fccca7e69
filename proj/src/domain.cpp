#include "loopkit/domain.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <stdexcept>

#include "loopkit/rng.hpp"

namespace loopkit {

// ---------------------------------------------------------------------------
// FeatureCombo / CoverageCell / SpecSurface
// ---------------------------------------------------------------------------

void to_json(json& j, const FeatureCombo& c) {
    j = json{{"feature", c.feature},
             {"platform", c.platform},
             {"action", c.action}};
}

void from_json(const json& j, FeatureCombo& c) {
    j.at("feature").get_to(c.feature);
    j.at("platform").get_to(c.platform);
    j.at("action").get_to(c.action);
}

void to_json(json& j, const CoverageCell& c) {
    j = json{{"combo", c.combo},
             {"priority", c.priority},
             {"status", c.status},
             {"supported", c.supported}};
    detail::put_optional(j, "last_exercised", c.last_exercised);
}

void from_json(const json& j, CoverageCell& c) {
    j.at("combo").get_to(c.combo);
    j.at("priority").get_to(c.priority);
    j.at("status").get_to(c.status);
    j.at("supported").get_to(c.supported);
    detail::get_optional(j, "last_exercised", c.last_exercised);
}

void to_json(json& j, const SpecSurface& s) {
    json cells = json::array();
    for (const auto& [combo, cell] : s.cells) cells.push_back(cell);
    j = json{{"features", s.features},
             {"platforms", s.platforms},
             {"actions", s.actions},
             {"cells", std::move(cells)}};
}

void from_json(const json& j, SpecSurface& s) {
    j.at("features").get_to(s.features);
    j.at("platforms").get_to(s.platforms);
    j.at("actions").get_to(s.actions);
    s.cells.clear();
    for (const auto& cj : j.at("cells")) {
        CoverageCell cell = cj.get<CoverageCell>();
        s.cells.emplace(cell.combo, std::move(cell));
    }
}

namespace {

std::string combo_label(const FeatureCombo& c) {
    return c.feature + "/" + c.platform + "/" + c.action;
}

void check_dimension(const std::vector<std::string>& dim,
                     const std::string& name,
                     std::vector<std::string>& out) {
    std::set<std::string> seen;
    for (const auto& entry : dim) {
        if (entry.empty()) {
            out.push_back(name + ": empty identifier");
        }
        if (!seen.insert(entry).second) {
            out.push_back(name + ": duplicate entry '" + entry + "'");
        }
    }
}

bool contains(const std::vector<std::string>& dim, const std::string& v) {
    return std::find(dim.begin(), dim.end(), v) != dim.end();
}

}  // namespace

std::vector<std::string> validate_surface(const SpecSurface& surface) {
    std::vector<std::string> violations;
    check_dimension(surface.features, "features", violations);
    check_dimension(surface.platforms, "platforms", violations);
    check_dimension(surface.actions, "actions", violations);

    for (const auto& [combo, cell] : surface.cells) {
        const std::string label = combo_label(combo);
        if (cell.combo != combo) {
            violations.push_back("cell " + label + ": keyed under a different combo");
        }
        if (combo.feature.empty() || combo.platform.empty() || combo.action.empty()) {
            violations.push_back("cell " + label + ": empty identifier in combo");
            continue;
        }
        if (!contains(surface.features, combo.feature)) {
            violations.push_back("cell " + label + ": feature '" + combo.feature +
                                 "' not in features list");
        }
        if (!contains(surface.platforms, combo.platform)) {
            violations.push_back("cell " + label + ": platform '" + combo.platform +
                                 "' not in platforms list");
        }
        if (!contains(surface.actions, combo.action)) {
            violations.push_back("cell " + label + ": action '" + combo.action +
                                 "' not in actions list");
        }
    }
    return violations;
}

std::uint64_t combo_universe(const SpecSurface& surface) {
    return static_cast<std::uint64_t>(surface.features.size()) *
           static_cast<std::uint64_t>(surface.platforms.size()) *
           static_cast<std::uint64_t>(surface.actions.size());
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_row(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, '|')) out.push_back(trim(field));
    return out;
}

void push_unique(std::vector<std::string>& dim, const std::string& v) {
    if (!contains(dim, v)) dim.push_back(v);
}

}  // namespace

SpecSurface load_surface_table(const std::string& text) {
    SpecSurface surface;
    std::istringstream in(text);
    std::string line;
    bool header_seen = false;

    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::vector<std::string> fields = split_row(t);
        if (!header_seen) {
            if (fields.size() < 3) {
                throw std::runtime_error(
                    "surface table: header needs feature, platform and at least one action");
            }
            for (std::size_t i = 2; i < fields.size(); ++i) {
                push_unique(surface.actions, fields[i]);
            }
            header_seen = true;
            continue;
        }
        if (fields.size() != surface.actions.size() + 2) {
            throw std::runtime_error("surface table: row '" + t +
                                     "' has wrong column count");
        }
        push_unique(surface.features, fields[0]);
        push_unique(surface.platforms, fields[1]);
        for (std::size_t i = 2; i < fields.size(); ++i) {
            CoverageCell cell;
            cell.combo = FeatureCombo{fields[0], fields[1], surface.actions[i - 2]};
            const std::string& v = fields[i];
            if (v == "-" || v == "–") {
                cell.supported = false;
                cell.priority = CellPriority::P3;
            } else {
                if (v.size() != 2 || (v[0] != 'P' && v[0] != 'p') ||
                    v[1] < '0' || v[1] > '3') {
                    throw std::runtime_error("surface table: bad cell value '" + v + "'");
                }
                cell.priority = static_cast<CellPriority>(v[1] - '0');
                cell.supported = true;
            }
            surface.cells.emplace(cell.combo, std::move(cell));
        }
    }
    if (!header_seen) throw std::runtime_error("surface table: empty document");
    return surface;
}

std::string render_surface_table(const SpecSurface& surface) {
    std::ostringstream out;
    out << "feature | platform";
    for (const auto& a : surface.actions) out << " | " << a;
    out << "\n";
    // One row per (feature, platform) pair that has at least one cell.
    for (const auto& f : surface.features) {
        for (const auto& p : surface.platforms) {
            bool any = false;
            for (const auto& a : surface.actions) {
                if (surface.cells.count(FeatureCombo{f, p, a})) { any = true; break; }
            }
            if (!any) continue;
            out << f << " | " << p;
            for (const auto& a : surface.actions) {
                auto it = surface.cells.find(FeatureCombo{f, p, a});
                if (it == surface.cells.end() || !it->second.supported) {
                    out << " | -";
                } else {
                    out << " | " << json(it->second.priority).get<std::string>();
                }
            }
            out << "\n";
        }
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

void to_json(json& j, const Scenario& s) {
    j = json{{"id", s.id},
             {"tier", s.tier},
             {"combos", s.combos},
             {"gap_targets", s.gap_targets},
             {"deliverable", s.deliverable},
             {"description", s.description}};
}

void from_json(const json& j, Scenario& s) {
    j.at("id").get_to(s.id);
    j.at("tier").get_to(s.tier);
    j.at("combos").get_to(s.combos);
    j.at("gap_targets").get_to(s.gap_targets);
    j.at("deliverable").get_to(s.deliverable);
    j.at("description").get_to(s.description);
}

std::vector<std::string> validate_scenario(const Scenario& s) {
    std::vector<std::string> v;
    switch (s.tier) {
        case Tier::Foundation:
            if (s.combos.size() != 1)
                v.push_back("foundation scenario must have exactly 1 combo");
            if (s.deliverable != Deliverable::WorkingScenario)
                v.push_back("foundation scenario must deliver a working scenario");
            break;
        case Tier::Composition:
            if (s.combos.size() < 2)
                v.push_back("composition scenario must have >= 2 combos");
            if (s.deliverable != Deliverable::WorkingScenario)
                v.push_back("composition scenario must deliver a working scenario");
            break;
        case Tier::Frontier:
            if (s.deliverable != Deliverable::GapAnalysis)
                v.push_back("frontier scenario must deliver a gap analysis");
            break;
    }
    return v;
}

// ---------------------------------------------------------------------------
// Ticket
// ---------------------------------------------------------------------------

void to_json(json& j, const Ticket& t) {
    j = json{{"id", t.id},
             {"title", t.title},
             {"body", t.body},
             {"label", t.label},
             {"priority", t.priority},
             {"state", t.state},
             {"blocks", t.blocks},
             {"blocked_by", t.blocked_by},
             {"source", t.source},
             {"dedup_key", t.dedup_key},
             {"linked_prs", t.linked_prs},
             {"confirmations", t.confirmations},
             {"created_at_iteration", t.created_at_iteration}};
}

void from_json(const json& j, Ticket& t) {
    j.at("id").get_to(t.id);
    j.at("title").get_to(t.title);
    j.at("body").get_to(t.body);
    j.at("label").get_to(t.label);
    j.at("priority").get_to(t.priority);
    j.at("state").get_to(t.state);
    j.at("blocks").get_to(t.blocks);
    j.at("blocked_by").get_to(t.blocked_by);
    j.at("source").get_to(t.source);
    j.at("dedup_key").get_to(t.dedup_key);
    j.at("linked_prs").get_to(t.linked_prs);
    j.at("confirmations").get_to(t.confirmations);
    j.at("created_at_iteration").get_to(t.created_at_iteration);
}

namespace {

// Lowercase, strip punctuation, collapse whitespace runs to single spaces.
std::string normalize_text(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (unsigned char ch : text) {
        if (std::isspace(ch)) {
            pending_space = !out.empty();
            continue;
        }
        if (std::ispunct(ch)) continue;
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(ch)));
    }
    return out;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

}  // namespace

std::string dedup_key(const std::string& title, const std::string& body) {
    std::string t = normalize_text(title);
    std::string b = normalize_text(body).substr(0, 200);
    return t + "#" + hex64(fnv1a(b.data(), b.size()));
}

// ---------------------------------------------------------------------------
// FileChange / PullRequest
// ---------------------------------------------------------------------------

void to_json(json& j, const FileChange& c) {
    j = json{{"path", c.path}, {"kind", c.kind}};
}

void from_json(const json& j, FileChange& c) {
    j.at("path").get_to(c.path);
    j.at("kind").get_to(c.kind);
}

void to_json(json& j, const UatPin& p) {
    j = json{{"verdict", p.verdict}, {"revision", p.revision}};
}

void from_json(const json& j, UatPin& p) {
    j.at("verdict").get_to(p.verdict);
    j.at("revision").get_to(p.revision);
}

void to_json(json& j, const PullRequest& p) {
    j = json{{"id", p.id},
             {"state", p.state},
             {"head_revision", p.head_revision},
             {"attempt_count", p.attempt_count},
             {"changed_files", p.changed_files},
             {"includes_tests", p.includes_tests},
             {"declared_deletions", p.declared_deletions}};
    detail::put_optional(j, "ticket_id", p.ticket_id);
    detail::put_optional(j, "last_rejected_revision", p.last_rejected_revision);
    detail::put_optional(j, "needs_attention_since", p.needs_attention_since);
    detail::put_optional(j, "last_uat", p.last_uat);
}

void from_json(const json& j, PullRequest& p) {
    j.at("id").get_to(p.id);
    j.at("state").get_to(p.state);
    j.at("head_revision").get_to(p.head_revision);
    j.at("attempt_count").get_to(p.attempt_count);
    j.at("changed_files").get_to(p.changed_files);
    j.at("includes_tests").get_to(p.includes_tests);
    j.at("declared_deletions").get_to(p.declared_deletions);
    detail::get_optional(j, "ticket_id", p.ticket_id);
    detail::get_optional(j, "last_rejected_revision", p.last_rejected_revision);
    detail::get_optional(j, "needs_attention_since", p.needs_attention_since);
    detail::get_optional(j, "last_uat", p.last_uat);
}

// ---------------------------------------------------------------------------
// Oracle outcome, gate decision, metrics, iteration record
// ---------------------------------------------------------------------------

void to_json(json& j, const OracleOutcome& o) {
    j = json{{"value", o.value}, {"detail", o.detail}};
}

void from_json(const json& j, OracleOutcome& o) {
    j.at("value").get_to(o.value);
    j.at("detail").get_to(o.detail);
}

void to_json(json& j, const GateDecision& d) {
    j = json{{"value", d.value}, {"gate", d.gate}, {"evidence", d.evidence}};
}

void from_json(const json& j, GateDecision& d) {
    j.at("value").get_to(d.value);
    j.at("gate").get_to(d.gate);
    j.at("evidence").get_to(d.evidence);
}

void to_json(json& j, const MetricSnapshot& m) {
    j = json{{"iteration", m.iteration},
             {"test_count", m.test_count},
             {"layer_pass_rates", m.layer_pass_rates},
             {"unverifiable_rate", m.unverifiable_rate},
             {"oracle_pass_rate", m.oracle_pass_rate},
             {"oracle_outcome", m.oracle_outcome},
             {"bug_discovery_count", m.bug_discovery_count},
             {"blocked_combo_count", m.blocked_combo_count},
             {"blocked_without_fix_count", m.blocked_without_fix_count},
             {"canary_escapes", m.canary_escapes},
             {"open_pr_count", m.open_pr_count},
             {"execute_output_count", m.execute_output_count},
             {"backfilled", m.backfilled}};
}

void from_json(const json& j, MetricSnapshot& m) {
    j.at("iteration").get_to(m.iteration);
    j.at("test_count").get_to(m.test_count);
    j.at("layer_pass_rates").get_to(m.layer_pass_rates);
    j.at("unverifiable_rate").get_to(m.unverifiable_rate);
    j.at("oracle_pass_rate").get_to(m.oracle_pass_rate);
    j.at("oracle_outcome").get_to(m.oracle_outcome);
    j.at("bug_discovery_count").get_to(m.bug_discovery_count);
    j.at("blocked_combo_count").get_to(m.blocked_combo_count);
    j.at("blocked_without_fix_count").get_to(m.blocked_without_fix_count);
    j.at("canary_escapes").get_to(m.canary_escapes);
    j.at("open_pr_count").get_to(m.open_pr_count);
    j.at("execute_output_count").get_to(m.execute_output_count);
    j.at("backfilled").get_to(m.backfilled);
}

void to_json(json& j, const IterationRecord& r) {
    json outcomes = json::object();
    for (const auto& [phase, outcome] : r.phase_outcomes) {
        outcomes[json(phase).get<std::string>()] = outcome;
    }
    j = json{{"index", r.index},
             {"mode", r.mode},
             {"phase_outcomes", std::move(outcomes)},
             {"metrics", r.metrics},
             {"prs_created", r.prs_created},
             {"prs_merged", r.prs_merged},
             {"tickets_created", r.tickets_created},
             {"gate_decisions", r.gate_decisions},
             {"notes", r.notes}};
    detail::put_optional(j, "oracle_outcome", r.oracle_outcome);
}

void from_json(const json& j, IterationRecord& r) {
    j.at("index").get_to(r.index);
    j.at("mode").get_to(r.mode);
    r.phase_outcomes.clear();
    for (const auto& [key, value] : j.at("phase_outcomes").items()) {
        r.phase_outcomes.emplace(json(key).get<Phase>(),
                                 value.get<PhaseOutcome>());
    }
    j.at("metrics").get_to(r.metrics);
    j.at("prs_created").get_to(r.prs_created);
    j.at("prs_merged").get_to(r.prs_merged);
    j.at("tickets_created").get_to(r.tickets_created);
    j.at("gate_decisions").get_to(r.gate_decisions);
    j.at("notes").get_to(r.notes);
    detail::get_optional(j, "oracle_outcome", r.oracle_outcome);
}

// ---------------------------------------------------------------------------
// Canonical documents
// ---------------------------------------------------------------------------

std::string to_canonical(const json& j) {
    // nlohmann object keys are already sorted (std::map); a compact dump
    // is therefore byte-stable for equal values.
    return j.dump();
}

json parse_document(const std::string& text) {
    return json::parse(text);  // parse_error.byte carries the offset
}

}  // namespace loopkit
