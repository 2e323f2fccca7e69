#include "loopkit/sim.hpp"

#include <algorithm>
#include <fstream>

namespace fs = std::filesystem;

namespace loopkit {

// ---------------------------------------------------------------------------
// Product
// ---------------------------------------------------------------------------

void to_json(json& j, const DefectSpec& d) {
    j = json{{"signature", d.signature}, {"fix_cost", d.fix_cost}};
    detail::put_optional(j, "regression_seed", d.regression_seed);
}

void from_json(const json& j, DefectSpec& d) {
    j.at("signature").get_to(d.signature);
    j.at("fix_cost").get_to(d.fix_cost);
    detail::get_optional(j, "regression_seed", d.regression_seed);
}

void to_json(json& j, const SimProduct& p) {
    json defects = json::array();
    for (const auto& [combo, spec] : p.defects) {
        defects.push_back(json{{"combo", combo}, {"spec", spec}});
    }
    j = json{{"surface", p.surface}, {"defects", std::move(defects)}};
}

void from_json(const json& j, SimProduct& p) {
    j.at("surface").get_to(p.surface);
    p.defects.clear();
    for (const auto& e : j.at("defects")) {
        p.defects.emplace(e.at("combo").get<FeatureCombo>(),
                          e.at("spec").get<DefectSpec>());
    }
}

SimProduct build_sim(std::uint64_t seed, std::size_t features,
                     std::size_t platforms, std::size_t actions,
                     double defect_rate, double regression_link_rate) {
    if (defect_rate < 0.0 || defect_rate > 1.0 || regression_link_rate < 0.0 ||
        regression_link_rate > 1.0) {
        throw std::invalid_argument("rates must be in [0,1]");
    }
    SimProduct product;
    for (std::size_t i = 0; i < features; ++i) {
        product.surface.features.push_back("feat-" + std::to_string(i + 1));
    }
    for (std::size_t i = 0; i < platforms; ++i) {
        product.surface.platforms.push_back("plat-" + std::to_string(i + 1));
    }
    for (std::size_t i = 0; i < actions; ++i) {
        product.surface.actions.push_back("act-" + std::to_string(i + 1));
    }

    std::vector<FeatureCombo> combos;
    std::size_t index = 0;
    for (const auto& f : product.surface.features) {
        for (const auto& p : product.surface.platforms) {
            for (const auto& a : product.surface.actions) {
                CoverageCell cell;
                cell.combo = FeatureCombo{f, p, a};
                cell.priority = static_cast<CellPriority>(index % 4);
                cell.supported = true;
                product.surface.cells.emplace(cell.combo, cell);
                combos.push_back(cell.combo);
                ++index;
            }
        }
    }

    Rng rng(seed);
    for (const auto& combo : combos) {
        if (rng.next_double() >= defect_rate) continue;
        DefectSpec spec;
        spec.signature = "defect in " + combo.feature + "/" + combo.platform +
                         "/" + combo.action;
        spec.fix_cost = 1;
        if (rng.next_double() < regression_link_rate && combos.size() > 1) {
            FeatureCombo seed_combo;
            do {
                seed_combo = combos[static_cast<std::size_t>(
                    rng.below(combos.size()))];
            } while (seed_combo == combo);
            spec.regression_seed = seed_combo;
        }
        product.defects.emplace(combo, std::move(spec));
    }
    return product;
}

// ---------------------------------------------------------------------------
// Script config
// ---------------------------------------------------------------------------

void to_json(json& j, const ScriptedAdapterConfig& c) {
    json timeouts = json::object();
    for (const auto& [phase, iters] : c.timeout_iterations) {
        timeouts[json(phase).get<std::string>()] = iters;
    }
    j = json{{"seed", c.seed},
             {"environmental_failure_iterations", c.environmental_failure_iterations},
             {"timeout_iterations", std::move(timeouts)},
             {"execute_prs_per_iteration", c.execute_prs_per_iteration},
             {"review_reject_prs", c.review_reject_prs},
             {"regress_metric_overrides", c.regress_metric_overrides},
             {"rerun_unavailable_iterations", c.rerun_unavailable_iterations}};
}

void from_json(const json& j, ScriptedAdapterConfig& c) {
    c = ScriptedAdapterConfig{};
    j.at("seed").get_to(c.seed);
    j.at("environmental_failure_iterations")
        .get_to(c.environmental_failure_iterations);
    for (const auto& [key, value] : j.at("timeout_iterations").items()) {
        value.get_to(c.timeout_iterations[json(key).get<Phase>()]);
    }
    j.at("execute_prs_per_iteration").get_to(c.execute_prs_per_iteration);
    j.at("review_reject_prs").get_to(c.review_reject_prs);
    for (const auto& [key, value] : j.at("regress_metric_overrides").items()) {
        c.regress_metric_overrides[std::stoll(key)] = value;
    }
    j.at("rerun_unavailable_iterations").get_to(c.rerun_unavailable_iterations);
}

// ---------------------------------------------------------------------------
// World
// ---------------------------------------------------------------------------

SimWorld::SimWorld(SimProduct p, ScriptedAdapterConfig s)
    : product(std::move(p)), script(std::move(s)) {
    for (const auto& [combo, spec] : product.defects) {
        broken_current.insert(combo);
        fix_cost_remaining[combo] = spec.fix_cost;
    }
    broken_by_revision["r0"] = broken_current;
}

std::string SimWorld::apply_fix(const FeatureCombo& combo) {
    broken_current.erase(combo);
    auto defect = product.defects.find(combo);
    std::string revision = "r" + std::to_string(++revision_counter);
    if (defect != product.defects.end() &&
        defect->second.regression_seed.has_value()) {
        broken_current.insert(*defect->second.regression_seed);
        regression_events.emplace_back(revision, *defect->second.regression_seed);
    }
    broken_by_revision[revision] = broken_current;
    ++merge_count;
    return revision;
}

std::string SimWorld::bump_revision() {
    std::string revision = "r" + std::to_string(++revision_counter);
    broken_by_revision[revision] = broken_current;
    ++merge_count;
    return revision;
}

json SimWorld::to_document() const {
    json broken = json::object();
    for (const auto& [revision, combos] : broken_by_revision) {
        broken[revision] = combos;
    }
    json costs = json::array();
    for (const auto& [combo, cost] : fix_cost_remaining) {
        costs.push_back(json{{"combo", combo}, {"cost", cost}});
    }
    json pending = json::array();
    for (const auto& [head, combo] : pending_fix_by_head) {
        pending.push_back(json{{"head", head}, {"combo", combo}});
    }
    json events = json::array();
    for (const auto& [revision, combo] : regression_events) {
        events.push_back(json{{"revision", revision}, {"combo", combo}});
    }
    return json{{"broken_by_revision", std::move(broken)},
                {"broken_current", broken_current},
                {"fix_cost_remaining", std::move(costs)},
                {"pending_fix_by_head", std::move(pending)},
                {"revision_counter", revision_counter},
                {"merge_count", merge_count},
                {"regression_events", std::move(events)}};
}

void SimWorld::persist(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << to_canonical(to_document());
}

SimWorld SimWorld::load(const std::string& path, SimProduct product,
                        ScriptedAdapterConfig script) {
    std::ifstream in(path, std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    json j = json::parse(text);
    SimWorld world(std::move(product), std::move(script));
    world.broken_by_revision.clear();
    for (const auto& [revision, combos] : j.at("broken_by_revision").items()) {
        combos.get_to(world.broken_by_revision[revision]);
    }
    j.at("broken_current").get_to(world.broken_current);
    world.fix_cost_remaining.clear();
    for (const auto& e : j.at("fix_cost_remaining")) {
        world.fix_cost_remaining[e.at("combo").get<FeatureCombo>()] =
            e.at("cost").get<std::int64_t>();
    }
    world.pending_fix_by_head.clear();
    for (const auto& e : j.at("pending_fix_by_head")) {
        world.pending_fix_by_head[e.at("head").get<std::string>()] =
            e.at("combo").get<FeatureCombo>();
    }
    j.at("revision_counter").get_to(world.revision_counter);
    j.at("merge_count").get_to(world.merge_count);
    world.regression_events.clear();
    for (const auto& e : j.at("regression_events")) {
        world.regression_events.emplace_back(e.at("revision").get<std::string>(),
                                             e.at("combo").get<FeatureCombo>());
    }
    return world;
}

// ---------------------------------------------------------------------------
// Adapters
// ---------------------------------------------------------------------------

namespace {

bool scripted_timeout(const SimWorld& world, Phase phase, std::int64_t iteration) {
    auto it = world.script.timeout_iterations.find(phase);
    return it != world.script.timeout_iterations.end() &&
           it->second.count(iteration) > 0;
}

SkillResponse timeout_response() {
    // Over any positive budget; the engine turns this into TimedOut.
    return SkillResponse{SkillStatus::Ok, json::object(), "",
                         std::int64_t{1} << 40};
}

TicketPriority priority_for_cell(const SpecSurface& surface,
                                 const FeatureCombo& combo) {
    auto it = surface.cells.find(combo);
    if (it == surface.cells.end()) return TicketPriority::Medium;
    switch (it->second.priority) {
        case CellPriority::P0: return TicketPriority::Critical;
        case CellPriority::P1: return TicketPriority::High;
        case CellPriority::P2: return TicketPriority::Medium;
        case CellPriority::P3: return TicketPriority::Low;
    }
    return TicketPriority::Medium;
}

std::string combo_name(const FeatureCombo& c) {
    return c.feature + "/" + c.platform + "/" + c.action;
}

}  // namespace

SkillResponse SimBacklogAdapter::invoke(const SkillRequest& request) {
    const std::int64_t iteration = request.payload.value("iteration", std::int64_t{0});
    if (scripted_timeout(world_, Phase::Backlog, iteration)) return timeout_response();
    const std::int64_t capacity =
        request.payload.value("capacity", std::int64_t{3});
    json promote = json::array();
    std::int64_t promoted = 0;
    for (const auto& tj : request.payload.value("tickets", json::array())) {
        if (promoted >= capacity) break;
        if (tj.at("state").get<TicketState>() == TicketState::Backlog) {
            promote.push_back(tj.at("id"));
            ++promoted;
        }
    }
    return {SkillStatus::Ok,
            json{{"promote", std::move(promote)}, {"drafts", json::array()}},
            "", 1};
}

SkillResponse SimIdeateAdapter::invoke(const SkillRequest& request) {
    const std::int64_t iteration = request.payload.value("iteration", std::int64_t{0});
    if (scripted_timeout(world_, Phase::Ideate, iteration)) return timeout_response();
    Scenario scenario = request.payload.at("scenario").get<Scenario>();

    json findings = json::array();
    json exercised = json::array();
    json gap_targets = json::array();
    if (scenario.tier == Tier::Frontier) {
        for (const auto& target : scenario.gap_targets) {
            gap_targets.push_back(target);
        }
    } else {
        for (const auto& combo : scenario.combos) {
            exercised.push_back(combo);
            if (world_.broken_current.count(combo)) {
                auto defect = world_.product.defects.find(combo);
                std::string signature =
                    defect != world_.product.defects.end()
                        ? defect->second.signature
                        : "regression breakage in " + combo_name(combo);
                findings.push_back(json{
                    {"combo", combo},
                    {"title", "Broken: " + combo_name(combo)},
                    {"body", to_canonical(json{{"combo", combo},
                                               {"signature", signature}})},
                    {"label", TicketLabel::Bug},
                    {"priority",
                     priority_for_cell(world_.product.surface, combo)},
                    {"signature", signature}});
            }
        }
    }
    json report{{"findings", std::move(findings)},
                {"exercised", std::move(exercised)},
                {"gap_targets", std::move(gap_targets)}};
    return {SkillStatus::Ok, json{{"report", std::move(report)}}, "", 1};
}

SkillResponse SimTriageAdapter::invoke(const SkillRequest& request) {
    const std::int64_t iteration = request.payload.value("iteration", std::int64_t{0});
    if (scripted_timeout(world_, Phase::Triage, iteration)) return timeout_response();
    json tickets = json::array();
    for (const auto& finding : request.payload.value("findings", json::array())) {
        json ticket{{"title", finding.value("title", "untitled finding")},
                    {"body", finding.value("body", "")},
                    {"label", finding.value("label", json(TicketLabel::Bug))},
                    {"priority",
                     finding.value("priority", json(TicketPriority::Medium))}};
        if (finding.contains("combo")) {
            ticket["block_combo"] = finding.at("combo");
        }
        tickets.push_back(std::move(ticket));
    }
    for (const auto& gap : request.payload.value("gap_targets", json::array())) {
        tickets.push_back(json{{"title", "Gap: " + gap.get<std::string>()},
                               {"body", "frontier gap analysis deliverable"},
                               {"label", TicketLabel::Exploration},
                               {"priority", TicketPriority::Low}});
    }
    return {SkillStatus::Ok, json{{"tickets", std::move(tickets)}}, "", 1};
}

SkillResponse SimExecuteAdapter::invoke(const SkillRequest& request) {
    const std::int64_t iteration = request.payload.value("iteration", std::int64_t{0});
    if (scripted_timeout(world_, Phase::Execute, iteration)) return timeout_response();
    json prs = json::array();

    if (world_.script.execute_prs_per_iteration >= 0) {
        for (std::int64_t k = 0; k < world_.script.execute_prs_per_iteration; ++k) {
            std::string tag =
                std::to_string(iteration) + "-" + std::to_string(k + 1);
            prs.push_back(json{
                {"head_revision", "wip-" + tag},
                {"includes_tests", true},
                {"changed_files",
                 json::array({json{{"path", "src/auto-" + tag + ".cpp"},
                                   {"kind", ChangeKind::Added}}})},
                {"declared_deletions", json::array()}});
        }
        return {SkillStatus::Ok, json{{"prs", std::move(prs)}}, "", 1};
    }

    for (const auto& tj : request.payload.value("tickets", json::array())) {
        json body;
        try {
            body = json::parse(tj.at("body").get<std::string>());
        } catch (const json::parse_error&) {
            continue;  // not a fix ticket (e.g. frontier gap)
        }
        if (!body.contains("combo")) continue;
        FeatureCombo combo = body.at("combo").get<FeatureCombo>();
        if (!world_.broken_current.count(combo)) continue;  // already healed
        auto cost = world_.fix_cost_remaining.find(combo);
        if (cost == world_.fix_cost_remaining.end()) {
            world_.fix_cost_remaining[combo] = 1;
            cost = world_.fix_cost_remaining.find(combo);
        }
        cost->second -= 1;
        if (cost->second > 0) continue;  // attempt consumed, no PR yet

        std::string head = "fix-" + tj.at("id").get<std::string>() + "-" +
                           std::to_string(iteration);
        world_.pending_fix_by_head[head] = combo;
        prs.push_back(json{
            {"ticket_id", tj.at("id")},
            {"head_revision", head},
            {"includes_tests", true},
            {"changed_files",
             json::array({json{{"path", "src/" + combo.feature + "/" +
                                            combo.platform + "/" +
                                            combo.action + ".cpp"},
                               {"kind", ChangeKind::Modified}}})},
            {"declared_deletions", json::array()}});
    }
    return {SkillStatus::Ok, json{{"prs", std::move(prs)}}, "", 1};
}

SkillResponse SimPolishAdapter::invoke(const SkillRequest& request) {
    const std::int64_t iteration = request.payload.value("iteration", std::int64_t{0});
    if (scripted_timeout(world_, Phase::Polish, iteration)) return timeout_response();
    json reviews = json::object();
    for (const auto& pj : request.payload.value("prs", json::array())) {
        const std::string id = pj.at("id").get<std::string>();
        if (world_.script.review_reject_prs.count(id)) {
            reviews[id] = json{{"verdict", ReviewOutcome::Reject},
                               {"notes", "scripted rejection"}};
        } else {
            reviews[id] = json{{"verdict", ReviewOutcome::Approve},
                               {"notes", "scripted approval"}};
        }
    }
    return {SkillStatus::Ok, json{{"reviews", std::move(reviews)}}, "", 1};
}

SkillResponse SimRegressAdapter::invoke(const SkillRequest& request) {
    const std::int64_t iteration = request.payload.value("iteration", std::int64_t{0});
    if (scripted_timeout(world_, Phase::Regress, iteration)) return timeout_response();
    const std::string revision = request.payload.value("revision", "r0");

    auto broken_it = world_.broken_by_revision.find(revision);
    if (broken_it == world_.broken_by_revision.end()) {
        return {SkillStatus::Error, {}, "unknown revision " + revision, 1};
    }
    const bool is_rerun = request.payload.contains("scenarios");
    if (is_rerun && world_.script.rerun_unavailable_iterations.count(iteration)) {
        return {SkillStatus::Error, {}, "scripted rerun outage", 1};
    }

    std::optional<std::set<std::string>> filter;
    if (is_rerun) {
        filter.emplace();
        for (const auto& s : request.payload.at("scenarios")) {
            filter->insert(s.get<std::string>());
        }
    }

    OracleReport report;
    report.duration_ms = 1;
    for (const auto& [combo, cell] : world_.product.surface.cells) {
        if (!cell.supported) continue;
        std::string scenario_id = "oracle-" + combo_name(combo);
        if (filter.has_value() && !filter->count(scenario_id)) continue;
        ScenarioOutcome outcome;
        outcome.scenario_id = scenario_id;
        if (broken_it->second.count(combo)) {
            outcome.outcome = OracleOutcome{
                OracleValue::Fail, "state delta mismatch for " + combo_name(combo)};
        } else {
            outcome.outcome = OracleOutcome{OracleValue::Pass, ""};
            outcome.state_deltas = {"verified state delta for " + combo_name(combo)};
        }
        report.outcomes.push_back(std::move(outcome));
    }
    if (world_.script.environmental_failure_iterations.count(iteration)) {
        ScenarioOutcome outcome;
        outcome.scenario_id = "env-flake-" + std::to_string(iteration);
        outcome.outcome = OracleOutcome{OracleValue::Fail,
                                        "environment outage (reproduces everywhere)"};
        if (!filter.has_value() || filter->count(outcome.scenario_id)) {
            report.outcomes.push_back(std::move(outcome));
        }
    }

    json metrics{{"test_count", 100 + 5 * world_.merge_count},
                 {"layer_pass_rates", json{{"l1", 1.0}, {"l2", 1.0}, {"l3", 1.0}}},
                 {"unverifiable_rate", 0.0},
                 {"canary_escapes", json::object()}};
    auto override_it = world_.script.regress_metric_overrides.find(iteration);
    if (override_it != world_.script.regress_metric_overrides.end()) {
        for (const auto& [key, value] : override_it->second.items()) {
            metrics[key] = value;
        }
    }
    return {SkillStatus::Ok,
            json{{"report", report}, {"metrics", std::move(metrics)}}, "", 1};
}

std::string SimMergeSink::apply_merge(const PullRequest& pr) {
    auto pending = world_.pending_fix_by_head.find(pr.head_revision);
    if (pending == world_.pending_fix_by_head.end()) {
        return world_.bump_revision();
    }
    FeatureCombo combo = pending->second;
    world_.pending_fix_by_head.erase(pending);
    return world_.apply_fix(combo);
}

std::vector<FileChange> SimChangeInspector::recompute_changes(
    const PullRequest& pr) {
    std::vector<FileChange> changes = pr.changed_files;
    auto extra = injected.find(pr.id);
    if (extra != injected.end()) {
        changes.insert(changes.end(), extra->second.begin(), extra->second.end());
    }
    return changes;
}

namespace {

class StubWorkspace : public Workspace {
public:
    StubWorkspace(std::string id, std::string base)
        : id_(std::move(id)), base_(std::move(base)) {}
    const std::string& id() const override { return id_; }
    const std::string& base_revision() const override { return base_; }
    fs::path root() const override { return fs::path("/nonexistent") / id_; }
    std::vector<FileChange> diff_against_base() const override { return {}; }
    void discard() override {}

private:
    std::string id_;
    std::string base_;
};

}  // namespace

std::unique_ptr<Workspace> SimWorkspaceProvider::create(
    const std::string& base_revision) {
    return std::make_unique<StubWorkspace>("sim-ws-" + std::to_string(++counter_),
                                           base_revision);
}

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

void to_json(json& j, const SimulationReport& r) {
    j = json{{"history", r.history},
             {"merged_prs", r.merged_prs},
             {"canary_reports", r.canary_reports},
             {"final_surface", r.final_surface},
             {"stop", r.stop},
             {"iterations_run", r.iterations_run}};
}

SimHarness::SimHarness(SimProduct product, ScriptedAdapterConfig script,
                       LoopConfig config, std::string state_dir)
    : world_(std::move(product), std::move(script)),
      backlog_(world_),
      ideate_(world_),
      triage_(world_),
      execute_(world_),
      polish_(world_),
      regress_(world_),
      merge_sink_(world_),
      state_dir_(std::move(state_dir)) {
    const std::string world_file = state_dir_ + "/sim.json";
    if (fs::exists(world_file)) {
        world_ = SimWorld::load(world_file, world_.product, world_.script);
    }
    AdapterSet adapters;
    adapters.skills = {{Phase::Backlog, &backlog_}, {Phase::Ideate, &ideate_},
                       {Phase::Triage, &triage_},   {Phase::Execute, &execute_},
                       {Phase::Polish, &polish_},   {Phase::Regress, &regress_}};
    adapters.workspaces = &workspaces_;
    adapters.merge_sink = &merge_sink_;
    adapters.inspector = &inspector_;
    engine_ = std::make_unique<LoopEngine>(std::move(config), adapters, state_dir_);
    engine_->initialize(world_.product.surface);
}

SimulationReport SimHarness::run(std::int64_t iterations) {
    for (std::int64_t i = 0; i < iterations; ++i) {
        if (engine_->stop_requested().has_value()) break;
        engine_->run_iteration();
        world_.persist(state_dir_ + "/sim.json");
    }
    return report();
}

SimulationReport SimHarness::report() const {
    SimulationReport r;
    r.history = engine_->state().history;
    for (const auto& pr : engine_->stores().prs.by_state(PrState::Merged)) {
        r.merged_prs.push_back(pr.id);
    }
    std::sort(r.merged_prs.begin(), r.merged_prs.end());
    json canaries = json::object();
    for (const auto& record : r.history) {
        if (!record.metrics.canary_escapes.empty()) {
            canaries[std::to_string(record.index)] = record.metrics.canary_escapes;
        }
    }
    r.canary_reports = std::move(canaries);
    r.final_surface = json(engine_->stores().surface);
    r.stop = engine_->stop_requested().value_or(StopReason::Completed);
    r.iterations_run = engine_->state().iteration;
    return r;
}

SimulationReport run_simulation(const SimProduct& product,
                                const ScriptedAdapterConfig& script,
                                const LoopConfig& config,
                                std::int64_t iterations,
                                const std::string& state_dir) {
    SimHarness harness(product, script, config, state_dir);
    return harness.run(iterations);
}

}  // namespace loopkit
