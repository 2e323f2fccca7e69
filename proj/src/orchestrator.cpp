#include "loopkit/orchestrator.hpp"

#include <algorithm>
#include <fstream>

namespace fs = std::filesystem;

namespace loopkit {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void to_json(json& j, const LoopConfig& c) {
    json budgets = json::object();
    for (const auto& [phase, ms] : c.phase_budgets_ms) {
        budgets[json(phase).get<std::string>()] = ms;
    }
    j = json{{"mode", c.mode},
             {"phase_budgets_ms", std::move(budgets)},
             {"drain_enter_threshold", c.drain_enter_threshold},
             {"drain_exit_threshold", c.drain_exit_threshold},
             {"starvation_threshold", c.starvation_threshold},
             {"regression_pause_threshold", c.regression_pause_threshold},
             {"needs_attention_threshold", c.needs_attention_threshold},
             {"drift_decline_streak", c.drift_decline_streak},
             {"polish_pr_limit", c.polish_pr_limit},
             {"drain_pr_limit", c.drain_pr_limit},
             {"execute_ticket_limit", c.execute_ticket_limit},
             {"needs_attention_ttl", c.needs_attention_ttl},
             {"tier_weights", c.tier_weights},
             {"quality_bar_path", c.quality_bar_path},
             {"frontier_candidates", c.frontier_candidates},
             {"seed", c.seed},
             {"uat_required", c.uat_required}};
}

void from_json(const json& j, LoopConfig& c) {
    c = LoopConfig{};
    if (j.contains("mode")) j.at("mode").get_to(c.mode);
    if (j.contains("phase_budgets_ms")) {
        for (const auto& [key, value] : j.at("phase_budgets_ms").items()) {
            c.phase_budgets_ms[json(key).get<Phase>()] = value.get<std::int64_t>();
        }
    }
    auto take = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    take("drain_enter_threshold", c.drain_enter_threshold);
    take("drain_exit_threshold", c.drain_exit_threshold);
    take("starvation_threshold", c.starvation_threshold);
    take("regression_pause_threshold", c.regression_pause_threshold);
    take("needs_attention_threshold", c.needs_attention_threshold);
    take("drift_decline_streak", c.drift_decline_streak);
    take("polish_pr_limit", c.polish_pr_limit);
    take("drain_pr_limit", c.drain_pr_limit);
    take("execute_ticket_limit", c.execute_ticket_limit);
    take("needs_attention_ttl", c.needs_attention_ttl);
    take("tier_weights", c.tier_weights);
    take("quality_bar_path", c.quality_bar_path);
    take("frontier_candidates", c.frontier_candidates);
    take("seed", c.seed);
    take("uat_required", c.uat_required);
}

std::vector<std::string> validate_config(const LoopConfig& config) {
    std::vector<std::string> violations;
    if (config.drain_exit_threshold >= config.drain_enter_threshold) {
        violations.push_back("drain_exit_threshold must be < drain_enter_threshold");
    }
    auto check_min = [&](const char* name, std::int64_t value) {
        if (value < 1) violations.push_back(std::string(name) + " must be >= 1");
    };
    check_min("drain_enter_threshold", config.drain_enter_threshold);
    check_min("drain_exit_threshold", config.drain_exit_threshold);
    check_min("starvation_threshold", config.starvation_threshold);
    check_min("regression_pause_threshold", config.regression_pause_threshold);
    check_min("needs_attention_threshold", config.needs_attention_threshold);
    check_min("drift_decline_streak", config.drift_decline_streak);
    check_min("polish_pr_limit", config.polish_pr_limit);
    check_min("drain_pr_limit", config.drain_pr_limit);
    check_min("execute_ticket_limit", config.execute_ticket_limit);
    check_min("needs_attention_ttl", config.needs_attention_ttl);
    for (const auto& v : validate_weights(config.tier_weights)) {
        violations.push_back("tier_weights: " + v);
    }
    return violations;
}

PhasePlan phase_sequence(Mode mode) {
    static const std::vector<Phase> full = {Phase::Backlog, Phase::Ideate,
                                            Phase::Triage, Phase::Execute,
                                            Phase::Polish, Phase::Regress};
    PhasePlan plan;
    switch (mode) {
        case Mode::Strategy:
            plan.phases = full;
            break;
        case Mode::UserOnly:
            plan.phases = {Phase::Backlog, Phase::Ideate, Phase::Triage};
            break;
        case Mode::DevOnly:
            plan.phases = {Phase::Backlog, Phase::Execute, Phase::Polish,
                           Phase::Regress};
            break;
        case Mode::Drain:
            plan.phases = {Phase::Polish};
            break;
        case Mode::RegressQuick:
            plan.phases = full;
            plan.quick_oracle = true;
            break;
        case Mode::Ui:
            plan.phases = full;
            plan.browser_flow_hint = true;
            break;
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Loop state
// ---------------------------------------------------------------------------

void to_json(json& j, const DeferredClassification& d) {
    j = json{{"origin_iteration", d.origin_iteration},
             {"head_revision", d.head_revision},
             {"premerge_revision", d.premerge_revision},
             {"scenario_ids", d.scenario_ids},
             {"retries", d.retries}};
}

void from_json(const json& j, DeferredClassification& d) {
    j.at("origin_iteration").get_to(d.origin_iteration);
    j.at("head_revision").get_to(d.head_revision);
    j.at("premerge_revision").get_to(d.premerge_revision);
    j.at("scenario_ids").get_to(d.scenario_ids);
    j.at("retries").get_to(d.retries);
}

void to_json(json& j, const LoopState& s) {
    j = json{{"iteration", s.iteration},
             {"starvation_counter", s.starvation_counter},
             {"drain_entries", s.drain_entries},
             {"no_work_loops", s.no_work_loops},
             {"in_drain", s.in_drain},
             {"regression_failure_streak", s.regression_failure_streak},
             {"history", s.history},
             {"state_revision", s.state_revision},
             {"deferred", s.deferred}};
    detail::put_optional(j, "saved_phase_config", s.saved_phase_config);
}

void from_json(const json& j, LoopState& s) {
    j.at("iteration").get_to(s.iteration);
    j.at("starvation_counter").get_to(s.starvation_counter);
    j.at("drain_entries").get_to(s.drain_entries);
    j.at("no_work_loops").get_to(s.no_work_loops);
    j.at("in_drain").get_to(s.in_drain);
    j.at("regression_failure_streak").get_to(s.regression_failure_streak);
    j.at("history").get_to(s.history);
    j.at("state_revision").get_to(s.state_revision);
    j.at("deferred").get_to(s.deferred);
    detail::get_optional(j, "saved_phase_config", s.saved_phase_config);
}

namespace {

std::optional<LoopState> read_state_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    if (text.empty()) return std::nullopt;
    try {
        return json::parse(text).get<LoopState>();
    } catch (const json::parse_error& e) {
        throw CorruptState("state file parse error at byte " +
                           std::to_string(e.byte) + ": " + e.what());
    } catch (const json::exception& e) {
        throw CorruptState(std::string("state file: ") + e.what());
    }
}

void merge_states(LoopState& ours, const LoopState& disk) {
    // History rows: union by index; rows committed by the other writer win
    // on collision so both sides converge on the same bytes.
    std::map<std::int64_t, IterationRecord> rows;
    for (const auto& r : ours.history) rows[r.index] = r;
    for (const auto& r : disk.history) rows[r.index] = r;
    ours.history.clear();
    for (auto& [index, record] : rows) ours.history.push_back(std::move(record));

    ours.iteration = std::max(ours.iteration, disk.iteration);
    ours.starvation_counter =
        std::max(ours.starvation_counter, disk.starvation_counter);
    ours.drain_entries = std::max(ours.drain_entries, disk.drain_entries);
    ours.no_work_loops = std::max(ours.no_work_loops, disk.no_work_loops);
    ours.regression_failure_streak =
        std::max(ours.regression_failure_streak, disk.regression_failure_streak);
    if (disk.iteration > ours.iteration ||
        (disk.iteration == ours.iteration && ours.deferred.empty())) {
        // The other writer has the fresher view of drain/deferred context.
        ours.in_drain = disk.in_drain;
        ours.saved_phase_config = disk.saved_phase_config;
        if (ours.deferred.empty()) ours.deferred = disk.deferred;
    }
}

}  // namespace

std::int64_t persist_state(LoopState& state, const std::string& path) {
    std::optional<LoopState> disk = read_state_file(path);
    std::int64_t disk_revision = disk.has_value() ? disk->state_revision : 0;
    if (disk.has_value() && disk_revision != state.state_revision) {
        merge_states(state, *disk);
    }
    state.state_revision = disk_revision + 1;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CorruptState("cannot write state file: " + path);
    out << to_canonical(json(state));
    return state.state_revision;
}

LoopState load_state(const std::string& path) {
    std::optional<LoopState> disk = read_state_file(path);
    if (!disk.has_value()) throw CorruptState("missing state file: " + path);
    return *disk;
}

std::vector<std::int64_t> verify_history(const LoopState& state) {
    std::set<std::int64_t> present;
    for (const auto& r : state.history) present.insert(r.index);
    std::vector<std::int64_t> missing;
    for (std::int64_t i = 1; i <= state.iteration; ++i) {
        if (!present.count(i)) missing.push_back(i);
    }
    return missing;
}

void backfill(LoopState& state, const std::vector<std::int64_t>& indices) {
    for (std::int64_t index : indices) {
        IterationRecord record;
        record.index = index;
        record.metrics.iteration = index;
        record.metrics.backfilled = true;
        record.notes = "backfilled placeholder";
        state.history.push_back(std::move(record));
    }
    std::sort(state.history.begin(), state.history.end(),
              [](const IterationRecord& a, const IterationRecord& b) {
                  return a.index < b.index;
              });
}

void enter_drain(LoopState& state, const std::vector<Phase>& active_phases) {
    if (state.in_drain) throw AlreadyInDrain();
    state.saved_phase_config = active_phases;
    state.in_drain = true;
    state.drain_entries += 1;
}

std::vector<Phase> exit_drain(LoopState& state) {
    if (!state.in_drain) throw NotInDrain();
    std::vector<Phase> restored = *state.saved_phase_config;
    state.saved_phase_config.reset();
    state.in_drain = false;
    return restored;
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

struct LoopEngine::IterationContext {
    std::int64_t index = 0;
    IterationRecord record;
    std::string premerge_revision;
    json findings = json::array();          // from ideate, for triage
    std::vector<std::string> gap_targets;   // from ideate, for triage
    bool backlog_ran = false;
    bool ideate_ran = false;
    bool execute_ran = false;
    bool regress_ran = false;
    std::int64_t promoted = 0;
    std::int64_t bug_discoveries = 0;
    json regress_metrics = json::object();
    std::optional<OracleOutcome> oracle_outcome;
    double oracle_pass_rate = 1.0;
    FailureClass iteration_class = FailureClass::Environmental;
    bool regression_classified = false;
};

LoopEngine::LoopEngine(LoopConfig config, AdapterSet adapters,
                       std::string state_dir)
    : config_(std::move(config)),
      adapters_(std::move(adapters)),
      state_dir_(std::move(state_dir)) {
    std::vector<std::string> violations = validate_config(config_);
    if (!violations.empty()) {
        std::string what = "invalid loop config:";
        for (const auto& v : violations) what += " " + v + ";";
        throw std::invalid_argument(what);
    }
    fs::create_directories(state_dir_);
    fs::create_directories(alerts_dir());
    fs::create_directories(reports_dir());
    plan_ = phase_sequence(config_.mode);
    active_phases_ = plan_.phases;
    if (!config_.quality_bar_path.empty()) {
        std::ifstream bar(config_.quality_bar_path, std::ios::binary);
        if (bar) {
            quality_bar_.assign((std::istreambuf_iterator<char>(bar)),
                                std::istreambuf_iterator<char>());
        }
    }
}

fs::path LoopEngine::state_file() const {
    return fs::path(state_dir_) / "loop-state.json";
}

fs::path LoopEngine::alerts_dir() const {
    return fs::path(state_dir_) / "alerts";
}

fs::path LoopEngine::reports_dir() const {
    return fs::path(state_dir_) / "reports";
}

namespace {

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return json::parse(text);
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << to_canonical(j);
}

}  // namespace

void LoopEngine::initialize(const SpecSurface& initial_surface) {
    const fs::path dir(state_dir_);
    if (fs::exists(state_file())) {
        state_ = load_state(state_file().string());
        stores_.tickets = TicketStore::load((dir / "tickets.json").string());
        stores_.prs = PrStore::load((dir / "prs.json").string());
        stores_.registry =
            BlockedCombosRegistry::from_document(read_json_file(dir / "registry.json"));
        stores_.surface = read_json_file(dir / "surface.json").get<SpecSurface>();
        stores_.exercise =
            ExerciseHistory::from_document(read_json_file(dir / "scheduler.json"));
        json misc = read_json_file(dir / "loop.json");
        misc.at("merge_log").get_to(stores_.merge_log);
        misc.at("frontier_pool").get_to(stores_.frontier_pool);
        misc.at("head_revision").get_to(stores_.head_revision);
    } else {
        stores_.surface = initial_surface;
        stores_.frontier_pool = config_.frontier_candidates;
        persist_all();
    }
    active_phases_ = state_.in_drain ? std::vector<Phase>{Phase::Polish}
                                     : phase_sequence(config_.mode).phases;
}

void LoopEngine::persist_all() {
    const fs::path dir(state_dir_);
    persist_state(state_, state_file().string());
    stores_.tickets.persist((dir / "tickets.json").string());
    stores_.prs.persist((dir / "prs.json").string());
    write_json_file(dir / "registry.json", stores_.registry.to_document());
    write_json_file(dir / "surface.json", json(stores_.surface));
    write_json_file(dir / "scheduler.json", stores_.exercise.to_document());
    write_json_file(dir / "loop.json",
                    json{{"merge_log", stores_.merge_log},
                         {"frontier_pool", stores_.frontier_pool},
                         {"head_revision", stores_.head_revision}});
}

SkillAdapter& LoopEngine::adapter_for(Phase phase) {
    auto it = adapters_.skills.find(phase);
    if (it == adapters_.skills.end() || it->second == nullptr) {
        throw AdapterMissing(phase);
    }
    return *it->second;
}

SkillResponse LoopEngine::invoke_phase(Phase phase, json payload,
                                       std::optional<WorkspaceRef> workspace) {
    SkillRequest request;
    request.phase = phase;
    request.payload = std::move(payload);
    request.workspace = std::move(workspace);
    auto budget = config_.phase_budgets_ms.find(phase);
    request.deadline_ms =
        budget == config_.phase_budgets_ms.end() ? 0 : budget->second;
    SkillResponse response = adapter_for(phase).invoke(request);
    if (request.deadline_ms > 0 && response.status == SkillStatus::Ok &&
        response.elapsed_ms > request.deadline_ms) {
        // Scripted adapters report simulated durations; over-budget is a
        // timeout regardless of how the adapter came back.
        return SkillResponse{SkillStatus::Timeout, {}, "budget exceeded",
                             response.elapsed_ms};
    }
    return response;
}

// --- Backlog ---------------------------------------------------------------

void LoopEngine::run_backlog(IterationContext& ctx) {
    json tickets = json::array();
    for (const auto& t : stores_.tickets.all()) tickets.push_back(t);
    json payload{{"iteration", ctx.index},
                 {"tickets", std::move(tickets)},
                 {"capacity", config_.execute_ticket_limit}};
    SkillResponse response =
        invoke_phase(Phase::Backlog, std::move(payload), std::nullopt);
    ctx.backlog_ran = true;
    if (response.status != SkillStatus::Ok) {
        ctx.record.phase_outcomes[Phase::Backlog] =
            response.status == SkillStatus::Timeout ? PhaseOutcome::TimedOut
                                                    : PhaseOutcome::Failed;
        return;
    }
    for (const auto& id : response.payload.value("promote", json::array())) {
        const std::string ticket_id = id.get<std::string>();
        if (!stores_.tickets.exists(ticket_id)) continue;
        if (TicketStore::transition_legal(stores_.tickets.get(ticket_id).state,
                                          TicketState::Todo)) {
            stores_.tickets.transition(ticket_id, TicketState::Todo);
            ctx.promoted += 1;
        }
    }
    for (const auto& draft_json : response.payload.value("drafts", json::array())) {
        TicketDraft draft;
        draft.title = draft_json.value("title", "");
        draft.body = draft_json.value("body", "");
        draft.label = draft_json.value("label", TicketLabel::Exploration);
        draft.priority = draft_json.value("priority", TicketPriority::Medium);
        draft.source = TicketSource::Loop;
        if (draft.title.empty()) continue;
        auto [id, outcome] = stores_.tickets.create_or_dedup(draft, ctx.index);
        if (outcome == DedupOutcome::Created) ctx.record.tickets_created += 1;
    }
    ctx.record.phase_outcomes[Phase::Backlog] = PhaseOutcome::Completed;
}

// --- Ideate ----------------------------------------------------------------

void LoopEngine::run_ideate(IterationContext& ctx, Rng& rng) {
    stores_.registry.purge_stale(
        [&](const std::string& id) { return stores_.tickets.open(id); });

    std::optional<Scenario> scenario;
    Tier preferred = choose_tier(config_.tier_weights, rng);
    std::vector<Tier> order{preferred};
    for (Tier t : {Tier::Foundation, Tier::Composition, Tier::Frontier}) {
        if (t != preferred) order.push_back(t);
    }
    const std::string scenario_id = "S-" + std::to_string(ctx.index);
    for (Tier t : order) {
        try {
            scenario = next_scenario(stores_.surface, stores_.registry, t,
                                     stores_.exercise, stores_.frontier_pool, rng,
                                     scenario_id);
            break;
        } catch (const Exhausted&) {
            continue;
        }
    }
    ctx.ideate_ran = true;
    if (!scenario.has_value()) {
        ctx.record.phase_outcomes[Phase::Ideate] = PhaseOutcome::Skipped;
        return;
    }

    json payload{{"iteration", ctx.index},
                 {"scenario", *scenario},
                 {"browser_flow_hint", plan_.browser_flow_hint}};
    SkillResponse response =
        invoke_phase(Phase::Ideate, std::move(payload), std::nullopt);
    if (response.status != SkillStatus::Ok) {
        ctx.record.phase_outcomes[Phase::Ideate] =
            response.status == SkillStatus::Timeout ? PhaseOutcome::TimedOut
                                                    : PhaseOutcome::Failed;
        return;
    }

    const json report = response.payload.value("report", json::object());
    ctx.findings = report.value("findings", json::array());
    for (const auto& gap : report.value("gap_targets", json::array())) {
        ctx.gap_targets.push_back(gap.get<std::string>());
    }
    ctx.bug_discoveries = static_cast<std::int64_t>(ctx.findings.size());

    std::set<FeatureCombo> failing;
    for (const auto& finding : ctx.findings) {
        if (finding.contains("combo")) {
            failing.insert(finding.at("combo").get<FeatureCombo>());
        }
    }
    std::vector<FeatureCombo> exercised;
    for (const auto& cj : report.value("exercised", json::array())) {
        exercised.push_back(cj.get<FeatureCombo>());
    }
    if (exercised.empty()) exercised = scenario->combos;
    stores_.exercise.record_scenario(exercised, ctx.index);
    for (const auto& combo : exercised) {
        auto cell = stores_.surface.cells.find(combo);
        if (cell == stores_.surface.cells.end()) continue;
        cell->second.last_exercised = ctx.index;
        cell->second.status =
            failing.count(combo) ? CellStatus::Failing : CellStatus::Passing;
    }
    ctx.record.phase_outcomes[Phase::Ideate] = PhaseOutcome::Completed;
}

// --- Triage ----------------------------------------------------------------

void LoopEngine::run_triage(IterationContext& ctx) {
    // Reopen tickets whose fix PRs were closed without merging.
    for (const auto& pr : stores_.prs.by_state(PrState::Retired)) {
        stores_.tickets.reopen_if_unmerged(pr);
    }

    json open_tickets = json::array();
    for (const auto& t : stores_.tickets.all()) {
        if (t.state != TicketState::Done) open_tickets.push_back(t);
    }
    json payload{{"iteration", ctx.index},
                 {"findings", ctx.findings},
                 {"gap_targets", ctx.gap_targets},
                 {"open_tickets", std::move(open_tickets)}};
    SkillResponse response =
        invoke_phase(Phase::Triage, std::move(payload), std::nullopt);
    if (response.status != SkillStatus::Ok) {
        ctx.record.phase_outcomes[Phase::Triage] =
            response.status == SkillStatus::Timeout ? PhaseOutcome::TimedOut
                                                    : PhaseOutcome::Failed;
        return;
    }

    for (const auto& tj : response.payload.value("tickets", json::array())) {
        TicketDraft draft;
        draft.title = tj.value("title", "");
        draft.body = tj.value("body", "");
        draft.label = tj.value("label", TicketLabel::Bug);
        draft.priority = tj.value("priority", TicketPriority::Medium);
        draft.source = TicketSource::Loop;
        if (draft.title.empty()) continue;
        auto [ticket_id, outcome] = stores_.tickets.create_or_dedup(draft, ctx.index);
        if (outcome == DedupOutcome::Created) ctx.record.tickets_created += 1;
        if (tj.contains("block_combo")) {
            FeatureCombo combo = tj.at("block_combo").get<FeatureCombo>();
            stores_.registry.block(combo, ticket_id, [&](const std::string& id) {
                return stores_.tickets.open(id);
            });
            auto cell = stores_.surface.cells.find(combo);
            if (cell != stores_.surface.cells.end()) {
                cell->second.status = CellStatus::Blocked;
            }
        }
    }
    for (const auto& gap : ctx.gap_targets) {
        if (std::find(stores_.frontier_pool.begin(), stores_.frontier_pool.end(),
                      gap) == stores_.frontier_pool.end()) {
            stores_.frontier_pool.push_back(gap);
        }
    }
    ctx.record.phase_outcomes[Phase::Triage] = PhaseOutcome::Completed;
}

// --- Execute ---------------------------------------------------------------

void LoopEngine::run_execute(IterationContext& ctx) {
    std::vector<Ticket> picked =
        stores_.tickets.top_urgent_unblocked(
            static_cast<std::size_t>(config_.execute_ticket_limit), ctx.index);
    ctx.execute_ran = true;

    std::vector<std::unique_ptr<Workspace>> workspaces;
    json tickets = json::array();
    json workspace_refs = json::object();
    for (const auto& t : picked) {
        if (stores_.tickets.get(t.id).state == TicketState::Backlog) {
            stores_.tickets.transition(t.id, TicketState::Todo);
        }
        stores_.tickets.transition(t.id, TicketState::InProgress);
        tickets.push_back(stores_.tickets.get(t.id));
        if (adapters_.workspaces != nullptr) {
            auto ws = adapters_.workspaces->create(stores_.head_revision);
            workspace_refs[t.id] = WorkspaceRef{ws->id(), ws->root().string(),
                                                ws->base_revision()};
            workspaces.push_back(std::move(ws));
        }
    }

    json payload{{"iteration", ctx.index},
                 {"tickets", std::move(tickets)},
                 {"workspaces", std::move(workspace_refs)},
                 {"head_revision", stores_.head_revision},
                 {"quality_bar", quality_bar_}};
    SkillResponse response =
        invoke_phase(Phase::Execute, std::move(payload), std::nullopt);

    std::set<std::string> with_pr;
    if (response.status == SkillStatus::Ok) {
        for (const auto& descriptor : response.payload.value("prs", json::array())) {
            PullRequest pr;
            pr.state = PrState::Open;
            pr.head_revision =
                descriptor.value("head_revision", stores_.head_revision + "+wip");
            pr.includes_tests = descriptor.value("includes_tests", false);
            if (descriptor.contains("changed_files")) {
                descriptor.at("changed_files").get_to(pr.changed_files);
            }
            if (descriptor.contains("declared_deletions")) {
                descriptor.at("declared_deletions").get_to(pr.declared_deletions);
            }
            if (descriptor.contains("ticket_id")) {
                pr.ticket_id = descriptor.at("ticket_id").get<std::string>();
            }
            PullRequest& created = stores_.prs.create(std::move(pr));
            if (descriptor.contains("test_card")) {
                stores_.prs.attach_card(created.id, descriptor.at("test_card"));
            }
            if (created.ticket_id.has_value() &&
                stores_.tickets.exists(*created.ticket_id)) {
                stores_.tickets.link_pr(*created.ticket_id, created.id);
                if (stores_.tickets.get(*created.ticket_id).state ==
                    TicketState::InProgress) {
                    stores_.tickets.transition(*created.ticket_id,
                                               TicketState::InReview);
                }
                with_pr.insert(*created.ticket_id);
            }
            ctx.record.prs_created += 1;
        }
        ctx.record.phase_outcomes[Phase::Execute] = PhaseOutcome::Completed;
    } else {
        ctx.record.phase_outcomes[Phase::Execute] =
            response.status == SkillStatus::Timeout ? PhaseOutcome::TimedOut
                                                    : PhaseOutcome::Failed;
    }

    // Attempted tickets that produced no PR go back to the backlog queue.
    for (const auto& t : picked) {
        if (with_pr.count(t.id)) continue;
        if (stores_.tickets.get(t.id).state == TicketState::InProgress) {
            stores_.tickets.transition(t.id, TicketState::Backlog);
        }
    }
    for (auto& ws : workspaces) ws->discard();
}

// --- Polish ----------------------------------------------------------------

bool LoopEngine::merge_pr(IterationContext& ctx, const std::string& pr_id,
                          const std::string&) {
    PullRequest& pr = stores_.prs.get(pr_id);

    if (config_.uat_required && adapters_.uat_evaluator != nullptr &&
        adapters_.workspaces != nullptr) {
        std::optional<json> card_doc = stores_.prs.card(pr_id);
        if (card_doc.has_value()) {
            TestCard card = card_doc->get<TestCard>();
            auto [bundle, integrity] =
                run_evaluation(card, *adapters_.uat_evaluator,
                               *adapters_.workspaces, pr.head_revision);
            UatVerdict verdict = compute_verdict(card, bundle, integrity);
            pr.last_uat =
                UatPin{json(verdict.value).get<std::string>(), pr.head_revision};
            if (verdict.value != UatVerdictValue::Pass) {
                pr.attempt_count += 1;
                pr.last_rejected_revision = pr.head_revision;
                if (pr.attempt_count >= config_.needs_attention_threshold) {
                    pr.state = PrState::NeedsAttention;
                    pr.needs_attention_since = ctx.index;
                }
                return false;
            }
        }
    }

    std::string new_revision = adapters_.merge_sink != nullptr
                                   ? adapters_.merge_sink->apply_merge(pr)
                                   : stores_.head_revision;
    pr.state = PrState::Merged;
    stores_.head_revision = new_revision;
    stores_.merge_log.push_back(MergeEntry{pr.id, pr.changed_files, false});

    if (pr.ticket_id.has_value() && stores_.tickets.exists(*pr.ticket_id)) {
        const Ticket& ticket = stores_.tickets.get(*pr.ticket_id);
        if (ticket.state == TicketState::InReview) {
            stores_.tickets.transition(*pr.ticket_id, TicketState::Done);
        }
        stores_.registry.unblock_on_resolution(*pr.ticket_id);
        for (auto& [combo, cell] : stores_.surface.cells) {
            if (cell.status == CellStatus::Blocked &&
                !stores_.registry.blocked(combo)) {
                cell.status = CellStatus::Untested;
            }
        }
    }
    ctx.record.prs_merged += 1;
    return true;
}

void LoopEngine::apply_polish_plan(IterationContext& ctx, const PolishPlan& plan) {
    for (const auto& [pr_id, rejection] : plan.rejections) {
        PullRequest& pr = stores_.prs.get(pr_id);
        pr.attempt_count += 1;
        pr.last_rejected_revision = rejection.revision;
    }
    for (const auto& action : plan.actions) {
        switch (action.action) {
            case PolishActionKind::SkipExcluded:
            case PolishActionKind::SkipNotMergeable:
                break;
            case PolishActionKind::LabelNeedsAttention: {
                PullRequest& pr = stores_.prs.get(action.pr_id);
                pr.state = PrState::NeedsAttention;
                pr.needs_attention_since = ctx.index;
                break;
            }
            case PolishActionKind::EscalateFollowUp: {
                const PullRequest& pr = stores_.prs.get(action.pr_id);
                TicketDraft draft;
                draft.title = "Follow-up: " + action.pr_id + " failed (" +
                              action.reason + ")";
                draft.body = "PR " + action.pr_id + " exhausted its attempts; "
                             "failure class: " + action.reason +
                             (pr.ticket_id.has_value()
                                  ? "; original ticket " + *pr.ticket_id
                                  : "");
                draft.label = TicketLabel::Bug;
                draft.priority = TicketPriority::High;
                auto [id, outcome] =
                    stores_.tickets.create_or_dedup(draft, ctx.index);
                if (outcome == DedupOutcome::Created) {
                    ctx.record.tickets_created += 1;
                }
                break;
            }
            case PolishActionKind::Retire:
                retire(stores_.prs, stores_.tickets, action.pr_id, action.reason);
                break;
            case PolishActionKind::Merge:
                merge_pr(ctx, action.pr_id, action.reason);
                break;
        }
    }
}

void LoopEngine::run_polish(IterationContext& ctx) {
    ttl_recovery(stores_.prs, ctx.index, config_.needs_attention_ttl);

    std::vector<PullRequest> open = stores_.prs.by_state(PrState::Open);
    std::vector<PullRequest> excluded = stores_.prs.by_state(PrState::NeedsAttention);
    json prs = json::array();
    for (const auto& pr : open) prs.push_back(pr);

    json payload{{"iteration", ctx.index},
                 {"prs", std::move(prs)},
                 {"quality_bar", quality_bar_}};
    SkillResponse response =
        invoke_phase(Phase::Polish, std::move(payload), std::nullopt);
    if (response.status != SkillStatus::Ok) {
        ctx.record.phase_outcomes[Phase::Polish] =
            response.status == SkillStatus::Timeout ? PhaseOutcome::TimedOut
                                                    : PhaseOutcome::Failed;
        return;
    }

    std::map<std::string, ReviewVerdict> reviews;
    const json reviews_doc = response.payload.value("reviews", json::object());
    for (const auto& [pr_id, review] : reviews_doc.items()) {
        reviews[pr_id] = review.get<ReviewVerdict>();
    }

    PolishLimits limits;
    limits.pr_limit =
        state_.in_drain ? config_.drain_pr_limit : config_.polish_pr_limit;
    limits.needs_attention_threshold = config_.needs_attention_threshold;

    std::vector<PullRequest> to_process = open;
    to_process.insert(to_process.end(), excluded.begin(), excluded.end());
    if (adapters_.inspector == nullptr) {
        throw std::invalid_argument("polish needs a change inspector");
    }
    PolishPlan plan = polish_pass(to_process, reviews, limits, *adapters_.inspector);
    apply_polish_plan(ctx, plan);

    json actions = json::array();
    for (const auto& action : plan.actions) actions.push_back(action);
    ctx.record.notes += to_canonical(json{{"polish_actions", actions}});
    ctx.record.phase_outcomes[Phase::Polish] = PhaseOutcome::Completed;
}

// --- Regress ---------------------------------------------------------------

namespace {

std::optional<OracleReport> parse_oracle_report(const SkillResponse& response) {
    if (response.status != SkillStatus::Ok) return std::nullopt;
    if (!response.payload.contains("report")) return std::nullopt;
    try {
        return response.payload.at("report").get<OracleReport>();
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

}  // namespace

void LoopEngine::process_deferred(IterationContext& ctx) {
    std::vector<DeferredClassification> keep;
    for (DeferredClassification entry : state_.deferred) {
        json head_payload{{"iteration", ctx.index},
                          {"revision", entry.head_revision},
                          {"mode", OracleMode::Full},
                          {"scenarios", entry.scenario_ids}};
        SkillResponse head_response =
            invoke_phase(Phase::Regress, head_payload, std::nullopt);
        json premerge_payload{{"iteration", ctx.index},
                              {"revision", entry.premerge_revision},
                              {"mode", OracleMode::Full},
                              {"scenarios", entry.scenario_ids}};
        SkillResponse premerge_response =
            invoke_phase(Phase::Regress, premerge_payload, std::nullopt);

        auto head_report = parse_oracle_report(head_response);
        auto premerge_report = parse_oracle_report(premerge_response);
        if (!head_report.has_value() || !premerge_report.has_value()) {
            entry.retries += 1;
            if (entry.retries < 3) {
                keep.push_back(entry);
            }
            // After 3 failed retries the failure counts as environmental:
            // dropped without touching the streak.
            continue;
        }
        OracleOutcome head_outcome = aggregate_outcome(*head_report);
        if (head_outcome.value != OracleValue::Fail) continue;
        FailureClass cls = classify_oracle_failure(
            head_outcome, aggregate_outcome(*premerge_report));
        if (cls == FailureClass::Regression) {
            state_.regression_failure_streak += 1;
            ctx.regression_classified = true;
        }
    }
    state_.deferred = std::move(keep);
}

void LoopEngine::run_regress(IterationContext& ctx) {
    ctx.regress_ran = true;
    process_deferred(ctx);

    json payload{{"iteration", ctx.index},
                 {"revision", stores_.head_revision},
                 {"mode", plan_.quick_oracle ? OracleMode::Quick : OracleMode::Full}};
    SkillResponse response =
        invoke_phase(Phase::Regress, std::move(payload), std::nullopt);

    if (response.status == SkillStatus::Timeout) {
        ctx.record.phase_outcomes[Phase::Regress] = PhaseOutcome::TimedOut;
        // Operational, not a regression: held out of the streak until a
        // later classification resolves it.
        ctx.oracle_outcome =
            OracleOutcome{OracleValue::Fail, "regress timed out; classification pending"};
        ctx.oracle_pass_rate = 0.0;
        state_.deferred.push_back(DeferredClassification{
            ctx.index, stores_.head_revision, ctx.premerge_revision, {}, 0});
        return;
    }
    if (response.status == SkillStatus::Error) {
        ctx.record.phase_outcomes[Phase::Regress] = PhaseOutcome::Failed;
        return;
    }

    auto report = parse_oracle_report(response);
    if (!report.has_value()) {
        ctx.record.phase_outcomes[Phase::Regress] = PhaseOutcome::Failed;
        return;
    }
    ctx.regress_metrics = response.payload.value("metrics", json::object());
    ctx.oracle_outcome = aggregate_outcome(*report);
    ctx.oracle_pass_rate = pass_fraction(*report);

    if (ctx.oracle_outcome->value != OracleValue::Fail) {
        state_.regression_failure_streak = 0;
        ctx.record.phase_outcomes[Phase::Regress] = PhaseOutcome::Completed;
        return;
    }

    // Classify by re-running the failing scenarios on the pre-merge
    // revision of this iteration.
    std::vector<std::string> failing;
    for (const auto& outcome : report->outcomes) {
        if (outcome.outcome.value == OracleValue::Fail) {
            failing.push_back(outcome.scenario_id);
        }
    }
    json rerun_payload{{"iteration", ctx.index},
                       {"revision", ctx.premerge_revision},
                       {"mode", plan_.quick_oracle ? OracleMode::Quick
                                                   : OracleMode::Full},
                       {"scenarios", failing}};
    SkillResponse rerun = invoke_phase(Phase::Regress, rerun_payload, std::nullopt);
    auto premerge_report = parse_oracle_report(rerun);

    if (!premerge_report.has_value()) {
        // Rerun unavailable: defer, do not count toward the streak yet.
        state_.deferred.push_back(DeferredClassification{
            ctx.index, stores_.head_revision, ctx.premerge_revision, failing, 0});
        ctx.iteration_class = FailureClass::Deferred;
        ctx.record.phase_outcomes[Phase::Regress] = PhaseOutcome::Completed;
        return;
    }

    std::map<std::string, OracleValue> premerge_by_id;
    for (const auto& outcome : premerge_report->outcomes) {
        premerge_by_id[outcome.scenario_id] = outcome.outcome.value;
    }
    bool any_regression = false;
    for (const auto& outcome : report->outcomes) {
        if (outcome.outcome.value != OracleValue::Fail) continue;
        auto it = premerge_by_id.find(outcome.scenario_id);
        std::optional<OracleOutcome> rerun_outcome;
        if (it != premerge_by_id.end()) {
            rerun_outcome = OracleOutcome{it->second, ""};
        }
        if (classify_oracle_failure(outcome.outcome, rerun_outcome) ==
            FailureClass::Regression) {
            any_regression = true;
        }
    }
    if (any_regression) {
        state_.regression_failure_streak += 1;
        ctx.iteration_class = FailureClass::Regression;
        ctx.regression_classified = true;
    } else {
        // Environmental failures never touch the streak.
        ctx.iteration_class = FailureClass::Environmental;
    }
    ctx.record.phase_outcomes[Phase::Regress] = PhaseOutcome::Completed;
}

// --- Snapshot and iteration ------------------------------------------------

MetricSnapshot LoopEngine::build_snapshot(const IterationContext& ctx) const {
    MetricSnapshot snapshot;
    snapshot.iteration = ctx.index;

    const MetricSnapshot* previous = nullptr;
    for (auto it = state_.history.rbegin(); it != state_.history.rend(); ++it) {
        if (!it->metrics.backfilled) {
            previous = &it->metrics;
            break;
        }
    }

    if (ctx.regress_ran && !ctx.regress_metrics.empty()) {
        snapshot.test_count = ctx.regress_metrics.value("test_count", std::int64_t{0});
        if (ctx.regress_metrics.contains("layer_pass_rates")) {
            ctx.regress_metrics.at("layer_pass_rates")
                .get_to(snapshot.layer_pass_rates);
        }
        snapshot.unverifiable_rate =
            ctx.regress_metrics.value("unverifiable_rate", 0.0);
        if (ctx.regress_metrics.contains("canary_escapes")) {
            ctx.regress_metrics.at("canary_escapes").get_to(snapshot.canary_escapes);
        }
    } else if (previous != nullptr) {
        // Phases that skip the oracle carry the last measurement forward so
        // sliding windows see level trends, not phantom collapses.
        snapshot.test_count = previous->test_count;
        snapshot.layer_pass_rates = previous->layer_pass_rates;
        snapshot.unverifiable_rate = previous->unverifiable_rate;
        snapshot.canary_escapes = previous->canary_escapes;
    }

    if (ctx.oracle_outcome.has_value()) {
        snapshot.oracle_outcome = *ctx.oracle_outcome;
        snapshot.oracle_pass_rate = ctx.oracle_pass_rate;
    } else if (previous != nullptr) {
        snapshot.oracle_pass_rate = previous->oracle_pass_rate;
    }

    snapshot.bug_discovery_count = ctx.bug_discoveries;
    snapshot.blocked_combo_count = static_cast<std::int64_t>(stores_.registry.size());
    std::int64_t unbacked = 0;
    for (const auto& [combo, ticket_id] : stores_.registry.entries()) {
        if (!stores_.tickets.open(ticket_id)) ++unbacked;
    }
    snapshot.blocked_without_fix_count = unbacked;
    snapshot.open_pr_count = stores_.prs.open_count();
    snapshot.execute_output_count = ctx.record.prs_created;
    return snapshot;
}

void LoopEngine::write_alert(std::int64_t iteration, const GateDecision& decision,
                             int sequence) {
    std::string name = "iter-" + std::to_string(iteration) + "-" +
                       json(decision.gate).get<std::string>();
    if (sequence > 0) name += "-" + std::to_string(sequence);
    std::ofstream out(alerts_dir() / (name + ".txt"));
    out << json(decision.value).get<std::string>() << ": " << decision.evidence
        << "\n";
}

void LoopEngine::append_mirror_row(const IterationRecord& record) {
    const fs::path mirror = fs::path(state_dir_) / "loop-state.table.md";
    const bool fresh = !fs::exists(mirror);
    std::ofstream out(mirror, std::ios::app);
    if (fresh) {
        out << "| iter | mode | phases | oracle | open_prs | merged | decisions |\n";
        out << "|---|---|---|---|---|---|---|\n";
    }
    std::string phases;
    for (const auto& [phase, outcome] : record.phase_outcomes) {
        if (!phases.empty()) phases += " ";
        phases += json(phase).get<std::string>() + ":" +
                  json(outcome).get<std::string>();
    }
    std::string decisions;
    for (const auto& d : record.gate_decisions) {
        if (!decisions.empty()) decisions += " ";
        decisions += json(d.gate).get<std::string>() + "=" +
                     json(d.value).get<std::string>();
    }
    out << "| " << record.index << " | " << json(record.mode).get<std::string>()
        << " | " << phases << " | "
        << (record.oracle_outcome.has_value()
                ? json(record.oracle_outcome->value).get<std::string>()
                : "-")
        << " | " << record.metrics.open_pr_count << " | " << record.prs_merged
        << " | " << decisions << " |\n";
}

IterationRecord LoopEngine::run_iteration() {
    IterationContext ctx;
    ctx.index = state_.iteration + 1;
    ctx.record.index = ctx.index;
    ctx.record.mode = state_.in_drain ? Mode::Drain : config_.mode;
    ctx.premerge_revision = stores_.head_revision;
    Rng rng = Rng::derive(config_.seed, static_cast<std::uint64_t>(ctx.index));

    for (Phase phase : active_phases_) {
        switch (phase) {
            case Phase::Backlog: run_backlog(ctx); break;
            case Phase::Ideate: run_ideate(ctx, rng); break;
            case Phase::Triage: run_triage(ctx); break;
            case Phase::Execute: run_execute(ctx); break;
            case Phase::Polish: run_polish(ctx); break;
            case Phase::Regress: run_regress(ctx); break;
        }
    }

    if (ctx.execute_ran) {
        if (ctx.record.prs_created == 0) {
            state_.starvation_counter += 1;
        } else {
            state_.starvation_counter = 0;
        }
    }
    // A no-work loop: Backlog promoted nothing, Ideate found nothing,
    // Execute produced nothing.
    if (ctx.promoted == 0 && ctx.bug_discoveries == 0 &&
        ctx.record.prs_created == 0) {
        state_.no_work_loops += 1;
    }

    ctx.record.metrics = build_snapshot(ctx);
    ctx.record.oracle_outcome = ctx.oracle_outcome;

    DriftReport drift;
    {
        std::vector<MetricSnapshot> window;
        for (const auto& r : state_.history) window.push_back(r.metrics);
        window.push_back(ctx.record.metrics);
        try {
            drift = detect_drift(window);
        } catch (const InsufficientHistory&) {
            // Not enough genuine snapshots yet; gates still run.
        }
    }

    GateInputs inputs;
    inputs.regression_failure_streak = state_.regression_failure_streak;
    inputs.starvation_counter = state_.starvation_counter;
    inputs.in_drain = state_.in_drain;
    GateThresholds thresholds;
    thresholds.regression_pause_threshold = config_.regression_pause_threshold;
    thresholds.drift_decline_streak = config_.drift_decline_streak;
    thresholds.drain_enter_threshold = config_.drain_enter_threshold;
    thresholds.drain_exit_threshold = config_.drain_exit_threshold;
    thresholds.starvation_threshold = config_.starvation_threshold;
    ctx.record.gate_decisions =
        evaluate_gates(inputs, ctx.record.metrics, drift, thresholds);

    int alert_sequence = 0;
    bool pause = false, monitor_only = false;
    for (const auto& decision : ctx.record.gate_decisions) {
        switch (decision.value) {
            case GateValue::Pause:
                pause = true;
                write_alert(ctx.index, decision, alert_sequence++);
                break;
            case GateValue::MonitorOnly:
                monitor_only = true;
                write_alert(ctx.index, decision, alert_sequence++);
                break;
            case GateValue::Warn:
                write_alert(ctx.index, decision, alert_sequence++);
                break;
            case GateValue::Drain:
                if (!state_.in_drain) {
                    enter_drain(state_, active_phases_);
                    active_phases_ = {Phase::Polish};
                    write_alert(ctx.index, decision, alert_sequence++);
                }
                break;
            case GateValue::Continue:
                if (decision.gate == GateKind::Backpressure && state_.in_drain) {
                    active_phases_ = exit_drain(state_);
                }
                break;
        }
    }
    // Halting dominates throttling: a pause or monitor transition stops
    // scheduling regardless of drain churn this iteration.
    if (pause) {
        stop_ = StopReason::Pause;
    } else if (monitor_only) {
        stop_ = StopReason::MonitorOnly;
    }

    state_.iteration = ctx.index;
    state_.history.push_back(ctx.record);

    write_json_file(reports_dir() /
                        ("drift-iter-" + std::to_string(ctx.index) + ".json"),
                    json(drift));
    append_mirror_row(ctx.record);
    persist_all();
    return ctx.record;
}

StopReason LoopEngine::run(std::int64_t max_iterations) {
    for (std::int64_t i = 0; i < max_iterations; ++i) {
        if (stop_.has_value()) break;
        run_iteration();
    }
    return stop_.value_or(StopReason::Completed);
}

}  // namespace loopkit
