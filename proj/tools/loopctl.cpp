// loopctl: operator surface for the autonomous improvement loop.
// Runs loops and simulations, inspects state, prints drift/gate/canary
// reports, validates and executes UAT cards, and drives scripted
// deliberation sessions.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "loopkit/deliberation.hpp"
#include "loopkit/orchestrator.hpp"
#include "loopkit/sim.hpp"
#include "loopkit/uat_gate.hpp"

namespace fs = std::filesystem;
using namespace loopkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitPause = 2;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read file: " + path);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

std::string default_state_dir() {
    const char* env = std::getenv("LOOPKIT_STATE_DIR");
    return env != nullptr ? env : "state";
}

// One running loop per state directory; humans and loops collide otherwise.
class StateDirLock {
public:
    explicit StateDirLock(const std::string& state_dir) {
        fs::create_directories(state_dir);
        path_ = state_dir + "/lock";
        fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0 || ::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            throw std::runtime_error(
                "another run holds the lock on " + state_dir);
        }
        std::string pid = std::to_string(::getpid()) + "\n";
        (void)!::write(fd_, pid.data(), pid.size());
    }
    ~StateDirLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }

private:
    std::string path_;
    int fd_ = -1;
};

Mode parse_mode(const std::string& flag) {
    static const std::map<std::string, Mode> modes = {
        {"strategy", Mode::Strategy},       {"user-only", Mode::UserOnly},
        {"dev-only", Mode::DevOnly},        {"drain", Mode::Drain},
        {"regress-quick", Mode::RegressQuick}, {"ui", Mode::Ui}};
    auto it = modes.find(flag);
    if (it == modes.end()) throw std::runtime_error("unknown mode: " + flag);
    return it->second;
}

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    return json::parse(slurp(path));
}

SimProduct product_from_config(const json& sim) {
    return build_sim(
        sim.value("sim_seed", std::uint64_t{42}),
        sim.value("features", std::size_t{5}), sim.value("platforms", std::size_t{3}),
        sim.value("actions", std::size_t{4}), sim.value("defect_rate", 0.2),
        sim.value("regression_link_rate", 0.2));
}

int run_or_simulate(const json& config_doc, LoopConfig loop_config,
                    const std::string& state_dir, std::int64_t max_iterations,
                    bool doc_format) {
    StateDirLock lock(state_dir);

    if (config_doc.contains("adapters")) {
        // External process adapters from the config document.
        std::map<Phase, std::unique_ptr<ProcessSkillAdapter>> processes;
        for (const auto& [name, argv_json] : config_doc.at("adapters").items()) {
            std::vector<std::string> argv;
            argv_json.get_to(argv);
            processes.emplace(json(name).get<Phase>(),
                              std::make_unique<ProcessSkillAdapter>(argv));
        }
        SimWorkspaceProvider workspaces;
        SimChangeInspector inspector;
        AdapterSet adapters;
        for (auto& [phase, adapter] : processes) {
            adapters.skills[phase] = adapter.get();
        }
        adapters.workspaces = &workspaces;
        adapters.inspector = &inspector;

        SpecSurface surface;
        if (config_doc.contains("surface_file")) {
            const std::string path = config_doc.at("surface_file");
            const std::string text = slurp(path);
            surface = path.ends_with(".json")
                          ? json::parse(text).get<SpecSurface>()
                          : load_surface_table(text);
        }
        LoopEngine engine(loop_config, adapters, state_dir);
        engine.initialize(surface);
        StopReason stop = engine.run(max_iterations);
        if (doc_format) {
            std::cout << to_canonical(json(engine.state())) << "\n";
        } else {
            std::cout << "stopped: " << json(stop).get<std::string>()
                      << " after iteration " << engine.state().iteration << "\n";
        }
        return stop == StopReason::Pause ? kExitPause : kExitOk;
    }

    // Scripted simulation (the default when no process adapters are given).
    json sim = config_doc.value("sim", json::object());
    ScriptedAdapterConfig script;
    if (sim.contains("script")) sim.at("script").get_to(script);
    SimHarness harness(product_from_config(sim), script, loop_config, state_dir);
    SimulationReport report = harness.run(max_iterations);

    fs::create_directories(state_dir + "/reports");
    std::ofstream out(state_dir + "/reports/simulation.json",
                      std::ios::binary | std::ios::trunc);
    out << to_canonical(json(report));

    if (doc_format) {
        std::cout << to_canonical(json(report)) << "\n";
    } else {
        std::cout << "iterations: " << report.iterations_run << "\n"
                  << "merged PRs: " << report.merged_prs.size() << "\n"
                  << "stop: " << json(report.stop).get<std::string>() << "\n";
    }
    return report.stop == StopReason::Pause ? kExitPause : kExitOk;
}

int cmd_status(const std::string& state_dir, bool doc_format) {
    LoopState state;
    try {
        state = load_state(state_dir + "/loop-state.json");
    } catch (const CorruptState& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    if (doc_format) {
        std::cout << to_canonical(json(state)) << "\n";
        return kExitOk;
    }
    std::cout << "iteration: " << state.iteration << "\n"
              << "starvation_counter: " << state.starvation_counter << "\n"
              << "drain_entries: " << state.drain_entries << "\n"
              << "no_work_loops: " << state.no_work_loops << "\n"
              << "in_drain: " << (state.in_drain ? "yes" : "no") << "\n"
              << "regression_failure_streak: " << state.regression_failure_streak
              << "\n";
    if (!state.history.empty()) {
        const auto& last = state.history.back();
        std::cout << "open_prs: " << last.metrics.open_pr_count << "\n";
        std::cout << "last gate decisions:\n";
        for (const auto& d : last.gate_decisions) {
            std::cout << "  " << json(d.gate).get<std::string>() << " -> "
                      << json(d.value).get<std::string>() << " (" << d.evidence
                      << ")\n";
        }
        std::cout << "last 5 iterations:\n";
        std::size_t start =
            state.history.size() > 5 ? state.history.size() - 5 : 0;
        for (std::size_t i = start; i < state.history.size(); ++i) {
            const auto& r = state.history[i];
            std::cout << "  #" << r.index << " mode="
                      << json(r.mode).get<std::string>()
                      << " prs_created=" << r.prs_created
                      << " prs_merged=" << r.prs_merged << " oracle="
                      << (r.oracle_outcome.has_value()
                              ? json(r.oracle_outcome->value).get<std::string>()
                              : "-")
                      << "\n";
        }
    }
    return kExitOk;
}

int cmd_report(const std::string& state_dir, bool doc_format) {
    fs::path reports(state_dir + "/reports");
    fs::path latest;
    std::int64_t best = -1;
    if (fs::exists(reports)) {
        for (const auto& entry : fs::directory_iterator(reports)) {
            std::string name = entry.path().filename().string();
            if (name.rfind("drift-iter-", 0) != 0) continue;
            std::int64_t index = std::stoll(name.substr(11));
            if (index > best) {
                best = index;
                latest = entry.path();
            }
        }
    }
    if (best < 0) {
        std::cerr << "error: no drift reports under " << reports << "\n";
        return kExitError;
    }
    const std::string text = slurp(latest.string());
    if (doc_format) {
        std::cout << text << "\n";
        return kExitOk;
    }
    DriftReport report = json::parse(text).get<DriftReport>();
    std::cout << "drift report for iteration " << best << ":\n";
    for (const auto& [metric, trend] : report.trends) {
        const auto& window = report.window_means.at(metric);
        std::cout << "  " << metric << ": " << json(trend).get<std::string>()
                  << " (recent " << window.recent_mean << " vs baseline "
                  << window.baseline_mean << ", streak "
                  << report.decline_streaks.at(metric) << ")\n";
    }
    for (const auto& alert : report.alerts) {
        std::cout << "  alert: " << alert << "\n";
    }
    return kExitOk;
}

int cmd_gates(const std::string& state_dir, bool doc_format) {
    LoopState state = load_state(state_dir + "/loop-state.json");
    json all = json::array();
    for (const auto& record : state.history) {
        for (const auto& d : record.gate_decisions) {
            all.push_back(json{{"iteration", record.index}, {"decision", d}});
        }
    }
    if (doc_format) {
        std::cout << to_canonical(all) << "\n";
        return kExitOk;
    }
    if (all.empty()) {
        std::cout << "no gate decisions recorded\n";
        return kExitOk;
    }
    for (const auto& entry : all) {
        const GateDecision d = entry.at("decision").get<GateDecision>();
        std::cout << "iter " << entry.at("iteration").get<std::int64_t>() << ": "
                  << json(d.gate).get<std::string>() << " -> "
                  << json(d.value).get<std::string>() << " (" << d.evidence
                  << ")\n";
    }
    return kExitOk;
}

int cmd_tickets(const std::string& state_dir, bool all, bool doc_format) {
    TicketStore store = TicketStore::load(state_dir + "/tickets.json");
    std::vector<Ticket> tickets =
        all ? store.all() : store.top_urgent_unblocked(20, 0);
    if (doc_format) {
        json out = json::array();
        for (const auto& t : tickets) out.push_back(t);
        std::cout << to_canonical(out) << "\n";
        return kExitOk;
    }
    for (const auto& t : tickets) {
        std::cout << t.id << " [" << json(t.label).get<std::string>() << "/"
                  << json(t.priority).get<std::string>() << "/"
                  << json(t.state).get<std::string>() << "] " << t.title << "\n";
    }
    return kExitOk;
}

// Scripted debater: turn k of the script is spoken in round k.
class ScriptedDebater : public Debater {
public:
    ScriptedDebater(std::string id, json turns)
        : id_(std::move(id)), turns_(std::move(turns)) {}
    std::string id() const override { return id_; }
    DebaterTurn take_turn(const DebaterRequest& request) override {
        DebaterTurn turn;
        turn.content = "no comment";
        if (request.round < static_cast<int>(turns_.size())) {
            const json& t = turns_.at(static_cast<std::size_t>(request.round));
            turn.content = t.value("content", "no comment");
            for (const auto& r : t.value("raises", json::array())) {
                turn.raises.push_back(r.get<std::string>());
            }
            for (const auto& r : t.value("resolves", json::array())) {
                turn.resolves.emplace_back(r.at("id").get<std::string>(),
                                           r.at("resolution").get<std::string>());
            }
            for (const auto& r : t.value("ratifies", json::array())) {
                turn.ratifies.push_back(r.get<std::string>());
            }
            if (t.contains("kill")) turn.kill_argument = t.at("kill");
        }
        return turn;
    }

private:
    std::string id_;
    json turns_;
};

int cmd_discuss(const std::string& script_path, const std::string& corpus_dir,
                const std::string& state_dir, bool doc_format) {
    if (!corpus_dir.empty()) {
        std::vector<DebateSession> sessions;
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(corpus_dir)) {
            if (entry.path().extension() == ".json") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            sessions.push_back(
                json::parse(slurp(file.string())).get<DebateSession>());
        }
        CorpusMetrics metrics = corpus_metrics(sessions);
        if (doc_format) {
            std::cout << to_canonical(json(metrics)) << "\n";
        } else {
            std::cout << "sessions: " << sessions.size() << "\n"
                      << "dcr: " << metrics.dcr << "\n"
                      << "round_efficiency: " << metrics.round_efficiency << "\n"
                      << "ratification_rate: " << metrics.ratification_rate << "\n";
            for (const auto& flag : metrics.flags) {
                std::cout << "flag: " << flag << "\n";
            }
        }
        return kExitOk;
    }
    if (script_path.empty()) {
        std::cerr << "error: discuss needs --script or --corpus\n";
        return kExitError;
    }

    json script = json::parse(slurp(script_path));
    std::vector<std::unique_ptr<ScriptedDebater>> debaters;
    std::vector<std::string> ids;
    for (const auto& d : script.at("debaters")) {
        ids.push_back(d.at("id").get<std::string>());
        debaters.push_back(std::make_unique<ScriptedDebater>(
            ids.back(), d.value("turns", json::array())));
    }
    DebateSession session = make_session(
        script.value("topic", "untitled"), ids, script.value("max_rounds", 3));
    auto resolve = [&](const std::string& id) -> Debater* {
        for (auto& d : debaters) {
            if (d->id() == id) return d.get();
        }
        return nullptr;
    };
    open_round_blind(session, resolve);
    while (session.conclusion != Conclusion::Blocked &&
           session.rounds_completed < session.max_rounds &&
           !convergence_check(session).converged) {
        run_round(session, resolve);
    }
    Conclusion conclusion = conclude(session);

    fs::create_directories(state_dir + "/reports");
    std::ofstream out(state_dir + "/reports/discussion.json",
                      std::ios::binary | std::ios::trunc);
    out << to_canonical(json{{"session", session},
                             {"synthesis", synthesis_report(session)}});
    if (doc_format) {
        std::cout << to_canonical(synthesis_report(session)) << "\n";
    } else {
        std::cout << "conclusion: " << json(conclusion).get<std::string>() << "\n";
        for (const auto& w : session.warnings) std::cout << "warning: " << w << "\n";
    }
    return kExitOk;
}

int cmd_uat(const std::string& card_path, const std::string& base_dir,
            bool validate_only, const std::string& state_dir, bool doc_format) {
    TestCard card = json::parse(slurp(card_path)).get<TestCard>();
    std::vector<std::string> violations = validate_card(card);
    if (!violations.empty()) {
        for (const auto& v : violations) std::cout << "card violation: " << v << "\n";
        return kExitError;
    }
    if (validate_only) {
        std::cout << "card valid\n";
        return kExitOk;
    }
    if (base_dir.empty()) {
        std::cerr << "error: --base is required to run a card\n";
        return kExitError;
    }
    FsWorkspaceProvider provider(fs::path(state_dir) / "uat-scratch",
                                 {{"base", fs::path(base_dir)}});
    ShellEvaluator evaluator;
    auto [bundle, integrity] = run_evaluation(card, evaluator, provider, "base");
    UatVerdict verdict = compute_verdict(card, bundle, integrity);
    if (doc_format) {
        std::cout << to_canonical(json{{"verdict", verdict},
                                       {"evidence", bundle},
                                       {"integrity", integrity}})
                  << "\n";
    } else {
        std::cout << "verdict: " << json(verdict.value).get<std::string>() << "\n";
        for (const auto& r : verdict.reasons) std::cout << "  " << r << "\n";
    }
    return verdict.value == UatVerdictValue::Pass ? kExitOk : kExitError;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"control plane for a spec-driven autonomous improvement loop"};
    app.require_subcommand(1);

    std::string state_dir = default_state_dir();
    std::string config_path;
    std::string mode_flag;
    std::string format = "text";
    std::int64_t max_iterations = 10;
    std::uint64_t seed = 0;
    bool seed_set = false;

    auto add_common = [&](CLI::App* cmd, bool with_run_flags) {
        cmd->add_option("--state-dir", state_dir, "state directory");
        cmd->add_option("--format", format, "output format")
            ->check(CLI::IsMember({"text", "doc"}));
        if (with_run_flags) {
            cmd->add_option("--config", config_path, "config document (JSON)");
            cmd->add_option("--mode", mode_flag,
                            "strategy|user-only|dev-only|drain|regress-quick|ui");
            cmd->add_option("--max-iterations", max_iterations, "iteration cap");
            cmd->add_option("--seed", seed, "loop seed")
                ->each([&](const std::string&) { seed_set = true; });
        }
    };

    CLI::App* run = app.add_subcommand("run", "run the loop");
    add_common(run, true);
    CLI::App* simulate = app.add_subcommand("simulate", "run a scripted simulation");
    add_common(simulate, true);
    CLI::App* status = app.add_subcommand("status", "print loop state summary");
    add_common(status, false);
    CLI::App* report = app.add_subcommand("report", "print the latest drift report");
    add_common(report, false);
    CLI::App* gates = app.add_subcommand("gates", "print recorded gate decisions");
    add_common(gates, false);

    CLI::App* tickets = app.add_subcommand("tickets", "list tickets");
    bool tickets_all = false;
    tickets->add_flag("--all", tickets_all, "include closed tickets");
    add_common(tickets, false);

    CLI::App* discuss = app.add_subcommand("discuss", "run a scripted deliberation");
    std::string discuss_script;
    std::string corpus_dir;
    discuss->add_option("--script", discuss_script, "session script (JSON)");
    discuss->add_option("--corpus", corpus_dir, "directory of session documents");
    add_common(discuss, false);

    CLI::App* uat = app.add_subcommand("uat", "validate or execute a test card");
    std::string card_path;
    std::string base_dir;
    bool validate_only = false;
    uat->add_option("--card", card_path, "test card document")->required();
    uat->add_option("--base", base_dir, "base snapshot directory");
    uat->add_flag("--validate-only", validate_only, "only validate the card");
    add_common(uat, false);

    CLI11_PARSE(app, argc, argv);
    const bool doc_format = format == "doc";

    try {
        if (run->parsed() || simulate->parsed()) {
            json config_doc = load_config_file(config_path);
            LoopConfig loop_config;
            if (config_doc.contains("loop")) {
                config_doc.at("loop").get_to(loop_config);
            }
            if (!mode_flag.empty()) loop_config.mode = parse_mode(mode_flag);
            if (seed_set) loop_config.seed = seed;
            std::vector<std::string> violations = validate_config(loop_config);
            if (!violations.empty()) {
                for (const auto& v : violations) {
                    std::cerr << "config error: " << v << "\n";
                }
                return kExitError;
            }
            return run_or_simulate(config_doc, loop_config, state_dir,
                                   max_iterations, doc_format);
        }
        if (status->parsed()) return cmd_status(state_dir, doc_format);
        if (report->parsed()) return cmd_report(state_dir, doc_format);
        if (gates->parsed()) return cmd_gates(state_dir, doc_format);
        if (tickets->parsed()) return cmd_tickets(state_dir, tickets_all, doc_format);
        if (discuss->parsed()) {
            return cmd_discuss(discuss_script, corpus_dir, state_dir, doc_format);
        }
        if (uat->parsed()) {
            return cmd_uat(card_path, base_dir, validate_only, state_dir,
                           doc_format);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}
