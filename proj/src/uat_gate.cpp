#include "loopkit/uat_gate.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>

#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace loopkit {

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void to_json(json& j, const CardStep& s) {
    j = json{{"command", s.command},
             {"expected_exit_code", s.expected_exit_code},
             {"output_assertions", s.output_assertions},
             {"is_bad_input_step", s.is_bad_input_step}};
}

void from_json(const json& j, CardStep& s) {
    j.at("command").get_to(s.command);
    j.at("expected_exit_code").get_to(s.expected_exit_code);
    j.at("output_assertions").get_to(s.output_assertions);
    j.at("is_bad_input_step").get_to(s.is_bad_input_step);
}

void to_json(json& j, const TestCard& c) {
    j = json{{"pr_id", c.pr_id},
             {"steps", c.steps},
             {"fixtures", c.fixtures},
             {"notes", c.notes}};
}

void from_json(const json& j, TestCard& c) {
    j.at("pr_id").get_to(c.pr_id);
    j.at("steps").get_to(c.steps);
    j.at("fixtures").get_to(c.fixtures);
    j.at("notes").get_to(c.notes);
}

void to_json(json& j, const StepEvidence& e) {
    j = json{{"exit_code", e.exit_code},
             {"started_ms", e.started_ms},
             {"finished_ms", e.finished_ms},
             {"unrunnable", e.unrunnable},
             {"unrunnable_reason", e.unrunnable_reason}};
    detail::put_optional(j, "raw_output", e.raw_output);
}

void from_json(const json& j, StepEvidence& e) {
    j.at("exit_code").get_to(e.exit_code);
    j.at("started_ms").get_to(e.started_ms);
    j.at("finished_ms").get_to(e.finished_ms);
    j.at("unrunnable").get_to(e.unrunnable);
    j.at("unrunnable_reason").get_to(e.unrunnable_reason);
    detail::get_optional(j, "raw_output", e.raw_output);
}

void to_json(json& j, const EvidenceBundle& b) {
    j = json{{"steps", b.steps},
             {"evaluator_id", b.evaluator_id},
             {"workspace_id", b.workspace_id}};
}

void from_json(const json& j, EvidenceBundle& b) {
    j.at("steps").get_to(b.steps);
    j.at("evaluator_id").get_to(b.evaluator_id);
    j.at("workspace_id").get_to(b.workspace_id);
}

void to_json(json& j, const IntegrityReport& r) {
    j = json{{"modified_product_paths", r.modified_product_paths},
             {"untracked_paths_outside_evidence",
              r.untracked_paths_outside_evidence}};
}

void from_json(const json& j, IntegrityReport& r) {
    j.at("modified_product_paths").get_to(r.modified_product_paths);
    j.at("untracked_paths_outside_evidence")
        .get_to(r.untracked_paths_outside_evidence);
}

void to_json(json& j, const UatVerdict& v) {
    j = json{{"value", v.value},
             {"evidence_ref", v.evidence_ref},
             {"reasons", v.reasons}};
}

void from_json(const json& j, UatVerdict& v) {
    j.at("value").get_to(v.value);
    j.at("evidence_ref").get_to(v.evidence_ref);
    j.at("reasons").get_to(v.reasons);
}

void to_json(json& j, const EvaluatorRequest& r) {
    j = json{{"card", r.card},
             {"workspace_root", r.workspace_root},
             {"evidence_dir", r.evidence_dir},
             {"deadline_ms", r.deadline_ms}};
}

// ---------------------------------------------------------------------------
// Card validation
// ---------------------------------------------------------------------------

namespace {

std::string lowercase(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

bool contains_ci(const std::string& haystack, const std::string& needle) {
    return lowercase(haystack).find(lowercase(needle)) != std::string::npos;
}

bool has_placeholder(const std::string& command) {
    std::size_t open = command.find('<');
    if (open != std::string::npos &&
        command.find('>', open + 1) != std::string::npos) {
        return true;
    }
    return command.find("TODO") != std::string::npos ||
           contains_ci(command, "your-");
}

}  // namespace

std::vector<std::string> validate_card(const TestCard& card,
                                       const CardPolicy& policy) {
    std::vector<std::string> violations;
    if (card.steps.empty()) {
        violations.push_back("card has no steps");
        return violations;
    }
    bool has_bad_input = false;
    for (std::size_t i = 0; i < card.steps.size(); ++i) {
        const CardStep& step = card.steps[i];
        const std::string where = "step " + std::to_string(i + 1);
        if (step.command.empty()) {
            violations.push_back(where + ": empty command");
        }
        if (has_placeholder(step.command)) {
            violations.push_back(where + ": command contains a placeholder");
        }
        for (const auto& pattern : policy.unit_test_patterns) {
            if (contains_ci(step.command, pattern)) {
                violations.push_back(where +
                                     ": unit-test invocation is not user testing (" +
                                     pattern + ")");
                break;
            }
        }
        if (step.is_bad_input_step) has_bad_input = true;
    }
    if (!has_bad_input) {
        violations.push_back("card never verifies that bad input is rejected");
    }
    for (const auto& marker : policy.implementation_markers) {
        if (!marker.empty() && contains_ci(card.notes, marker)) {
            violations.push_back("notes leak an implementation detail: " + marker);
        }
    }
    return violations;
}

// ---------------------------------------------------------------------------
// Shell evaluator
// ---------------------------------------------------------------------------

namespace {

struct CommandResult {
    std::string output;
    int exit_code = -1;
    bool spawn_failed = false;
};

CommandResult run_in_dir(const std::string& command, const fs::path& cwd) {
    int out_pipe[2];
    if (pipe(out_pipe) != 0) return {"", -1, true};
    pid_t pid = fork();
    if (pid < 0) {
        close(out_pipe[0]);
        close(out_pipe[1]);
        return {"", -1, true};
    }
    if (pid == 0) {
        if (chdir(cwd.c_str()) != 0) _exit(126);
        dup2(out_pipe[1], STDOUT_FILENO);
        dup2(out_pipe[1], STDERR_FILENO);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(out_pipe[1]);
    CommandResult result;
    char buffer[4096];
    ssize_t n;
    while ((n = read(out_pipe[0], buffer, sizeof(buffer))) > 0) {
        result.output.append(buffer, static_cast<std::size_t>(n));
    }
    close(out_pipe[0]);
    int status = 0;
    waitpid(pid, &status, 0);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace

EvidenceBundle ShellEvaluator::evaluate(const EvaluatorRequest& request) {
    EvidenceBundle bundle;
    bundle.evaluator_id = id();
    const fs::path root = request.workspace_root;
    const fs::path evidence_root = fs::path(request.evidence_dir);

    for (std::size_t i = 0; i < request.card.steps.size(); ++i) {
        const CardStep& step = request.card.steps[i];
        StepEvidence evidence;
        evidence.started_ms = now_ms();
        CommandResult result = run_in_dir(step.command, root);
        evidence.finished_ms = now_ms();
        if (result.spawn_failed) {
            evidence.unrunnable = true;
            evidence.unrunnable_reason = "could not spawn shell";
        } else {
            evidence.exit_code = result.exit_code;
            evidence.raw_output = result.output;
        }
        bundle.steps.push_back(evidence);

        fs::path step_dir = root / evidence_root / std::to_string(i);
        std::error_code ec;
        fs::create_directories(step_dir, ec);
        if (!ec) {
            std::ofstream out(step_dir / "output.bin", std::ios::binary);
            out << result.output;
            std::ofstream meta(step_dir / "meta");
            meta << to_canonical(json{{"command", step.command},
                                      {"exit_code", result.exit_code}});
        }
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Evaluation run + integrity
// ---------------------------------------------------------------------------

namespace {

bool path_under(const std::string& path, const std::string& prefix) {
    return path.size() > prefix.size() && path.compare(0, prefix.size(), prefix) == 0 &&
           path[prefix.size()] == '/';
}

IntegrityReport integrity_from_diff(const std::vector<FileChange>& diff,
                                    const std::string& evidence_dir,
                                    const std::vector<std::string>& fixtures) {
    IntegrityReport report;
    for (const FileChange& change : diff) {
        if (change.path == evidence_dir || path_under(change.path, evidence_dir)) {
            continue;
        }
        if (std::find(fixtures.begin(), fixtures.end(), change.path) !=
            fixtures.end()) {
            continue;
        }
        if (change.kind == ChangeKind::Added) {
            report.untracked_paths_outside_evidence.push_back(change.path);
        } else {
            report.modified_product_paths.push_back(change.path);
        }
    }
    return report;
}

bool missing_output(const EvidenceBundle& bundle) {
    for (const StepEvidence& e : bundle.steps) {
        if (!e.unrunnable && !e.raw_output.has_value()) return true;
    }
    return false;
}

}  // namespace

std::pair<EvidenceBundle, IntegrityReport> run_evaluation(
    const TestCard& card, UatEvaluator& evaluator, WorkspaceProvider& provider,
    const std::string& base_revision, std::int64_t deadline_ms) {
    const std::string evidence_dir = "evidence/" + card.pr_id;

    auto run_once = [&]() -> std::pair<EvidenceBundle, IntegrityReport> {
        std::unique_ptr<Workspace> workspace = provider.create(base_revision);
        EvaluatorRequest request;
        request.card = card;
        request.workspace_root = workspace->root().string();
        request.evidence_dir = evidence_dir;
        request.deadline_ms = deadline_ms;

        EvidenceBundle bundle;
        try {
            bundle = evaluator.evaluate(request);
        } catch (const std::exception&) {
            bundle = EvidenceBundle{};  // crash yields an empty bundle
            bundle.evaluator_id = evaluator.id();
        }
        bundle.workspace_id = workspace->id();

        IntegrityReport integrity = integrity_from_diff(
            workspace->diff_against_base(), evidence_dir, card.fixtures);
        workspace->discard();
        return {std::move(bundle), std::move(integrity)};
    };

    auto result = run_once();
    if (result.first.steps.size() == card.steps.size() &&
        missing_output(result.first)) {
        result = run_once();  // one retry for a run that lost its output
    }
    return result;
}

UatVerdict compute_verdict(const TestCard& card, const EvidenceBundle& bundle,
                           const IntegrityReport& integrity) {
    UatVerdict verdict;
    verdict.evidence_ref = "evidence/" + card.pr_id;

    if (!integrity.clean()) {
        verdict.value = UatVerdictValue::EvalCheatFail;
        for (const auto& p : integrity.modified_product_paths) {
            verdict.reasons.push_back("product file modified: " + p);
        }
        for (const auto& p : integrity.untracked_paths_outside_evidence) {
            verdict.reasons.push_back("untracked file outside evidence dir: " + p);
        }
        return verdict;
    }

    if (bundle.steps.size() != card.steps.size()) {
        verdict.value = UatVerdictValue::UatSpecFail;
        verdict.reasons.push_back(
            "evidence covers " + std::to_string(bundle.steps.size()) + " of " +
            std::to_string(card.steps.size()) + " steps");
        return verdict;
    }
    for (std::size_t i = 0; i < bundle.steps.size(); ++i) {
        const StepEvidence& e = bundle.steps[i];
        if (e.unrunnable) {
            verdict.value = UatVerdictValue::UatSpecFail;
            verdict.reasons.push_back("step " + std::to_string(i + 1) +
                                      " un-runnable: " + e.unrunnable_reason);
        } else if (!e.raw_output.has_value()) {
            verdict.value = UatVerdictValue::UatSpecFail;
            verdict.reasons.push_back("step " + std::to_string(i + 1) +
                                      " reported no output");
        }
    }
    if (verdict.value == UatVerdictValue::UatSpecFail) return verdict;

    for (std::size_t i = 0; i < card.steps.size(); ++i) {
        const CardStep& step = card.steps[i];
        const StepEvidence& e = bundle.steps[i];
        if (e.exit_code != step.expected_exit_code) {
            verdict.value = UatVerdictValue::ProductFail;
            verdict.reasons.push_back(
                "step " + std::to_string(i + 1) + " exit code " +
                std::to_string(e.exit_code) + ", expected " +
                std::to_string(step.expected_exit_code));
        }
        for (const auto& assertion : step.output_assertions) {
            // Exact substring check; there is deliberately no fuzzy path.
            if (e.raw_output->find(assertion) == std::string::npos) {
                verdict.value = UatVerdictValue::ProductFail;
                verdict.reasons.push_back("step " + std::to_string(i + 1) +
                                          " output missing: \"" + assertion +
                                          "\"");
            }
        }
    }
    if (verdict.value == UatVerdictValue::ProductFail) return verdict;

    verdict.value = UatVerdictValue::Pass;
    return verdict;
}

}  // namespace loopkit
