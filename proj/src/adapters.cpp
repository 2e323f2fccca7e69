#include "loopkit/adapters.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include "loopkit/rng.hpp"

namespace fs = std::filesystem;

namespace loopkit {

// ---------------------------------------------------------------------------
// Filesystem workspaces
// ---------------------------------------------------------------------------

namespace {

std::uint64_t file_digest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return fnv1a(data.data(), data.size());
}

std::vector<std::string> list_files(const fs::path& root) {
    std::vector<std::string> out;
    if (!fs::exists(root)) return out;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        out.push_back(fs::relative(entry.path(), root).generic_string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

class FsWorkspace : public Workspace {
public:
    FsWorkspace(std::string id, std::string base_revision, fs::path base_dir,
                fs::path work_dir)
        : id_(std::move(id)),
          base_revision_(std::move(base_revision)),
          base_dir_(std::move(base_dir)),
          work_dir_(std::move(work_dir)) {}

    const std::string& id() const override { return id_; }
    const std::string& base_revision() const override { return base_revision_; }
    fs::path root() const override { return work_dir_; }

    std::vector<FileChange> diff_against_base() const override {
        return diff_trees(base_dir_, work_dir_);
    }

    void discard() override {
        std::error_code ec;
        fs::remove_all(work_dir_, ec);
    }

private:
    std::string id_;
    std::string base_revision_;
    fs::path base_dir_;
    fs::path work_dir_;
};

}  // namespace

std::vector<FileChange> diff_trees(const fs::path& base, const fs::path& work) {
    std::vector<std::string> base_files = list_files(base);
    std::vector<std::string> work_files = list_files(work);
    std::vector<FileChange> changes;

    std::size_t bi = 0, wi = 0;
    while (bi < base_files.size() || wi < work_files.size()) {
        if (bi >= base_files.size()) {
            changes.push_back({work_files[wi++], ChangeKind::Added});
        } else if (wi >= work_files.size()) {
            changes.push_back({base_files[bi++], ChangeKind::Deleted});
        } else if (base_files[bi] < work_files[wi]) {
            changes.push_back({base_files[bi++], ChangeKind::Deleted});
        } else if (work_files[wi] < base_files[bi]) {
            changes.push_back({work_files[wi++], ChangeKind::Added});
        } else {
            if (file_digest(base / base_files[bi]) !=
                file_digest(work / work_files[wi])) {
                changes.push_back({base_files[bi], ChangeKind::Modified});
            }
            ++bi;
            ++wi;
        }
    }
    return changes;
}

FsWorkspaceProvider::FsWorkspaceProvider(
    fs::path scratch_root, std::map<std::string, fs::path> revisions)
    : scratch_root_(std::move(scratch_root)), revisions_(std::move(revisions)) {
    fs::create_directories(scratch_root_);
}

void FsWorkspaceProvider::register_revision(const std::string& revision,
                                            const fs::path& snapshot) {
    revisions_[revision] = snapshot;
}

std::unique_ptr<Workspace> FsWorkspaceProvider::create(
    const std::string& base_revision) {
    auto it = revisions_.find(base_revision);
    if (it == revisions_.end()) {
        throw WorkspaceUnavailable("unknown base revision: " + base_revision);
    }
    std::string id = "ws-" + std::to_string(++counter_);
    fs::path work = scratch_root_ / id;
    fs::remove_all(work);
    fs::create_directories(work);
    if (fs::exists(it->second)) {
        fs::copy(it->second, work, fs::copy_options::recursive);
    }
    return std::make_unique<FsWorkspace>(id, base_revision, it->second, work);
}

// ---------------------------------------------------------------------------
// Skill request/response wire forms
// ---------------------------------------------------------------------------

void to_json(json& j, const WorkspaceRef& w) {
    j = json{{"id", w.id}, {"root", w.root}, {"base_revision", w.base_revision}};
}

void from_json(const json& j, WorkspaceRef& w) {
    j.at("id").get_to(w.id);
    j.at("root").get_to(w.root);
    j.at("base_revision").get_to(w.base_revision);
}

void to_json(json& j, const SkillRequest& r) {
    j = json{{"phase", r.phase},
             {"payload", r.payload},
             {"deadline_ms", r.deadline_ms}};
    detail::put_optional(j, "workspace", r.workspace);
}

void from_json(const json& j, SkillRequest& r) {
    j.at("phase").get_to(r.phase);
    r.payload = j.at("payload");
    j.at("deadline_ms").get_to(r.deadline_ms);
    detail::get_optional(j, "workspace", r.workspace);
}

// ---------------------------------------------------------------------------
// External process invocation
// ---------------------------------------------------------------------------

ProcessSkillAdapter::ProcessSkillAdapter(std::vector<std::string> argv)
    : argv_(std::move(argv)) {
    if (argv_.empty()) {
        throw std::invalid_argument("process adapter needs a command");
    }
}

SkillResponse ProcessSkillAdapter::invoke(const SkillRequest& request) {
    int in_pipe[2];   // parent -> child stdin
    int out_pipe[2];  // child stdout -> parent
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) {
        return {SkillStatus::Error, {}, "pipe() failed", 0};
    }

    pid_t pid = fork();
    if (pid < 0) {
        return {SkillStatus::Error, {}, "fork() failed", 0};
    }
    if (pid == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        std::vector<char*> argv;
        argv.reserve(argv_.size() + 1);
        for (auto& a : argv_) argv.push_back(const_cast<char*>(a.c_str()));
        argv.push_back(nullptr);
        execvp(argv[0], argv.data());
        _exit(127);
    }

    close(in_pipe[0]);
    close(out_pipe[1]);

    const auto start = std::chrono::steady_clock::now();
    auto elapsed_ms = [&] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - start)
            .count();
    };

    {
        const std::string doc = to_canonical(json(request));
        std::size_t written = 0;
        while (written < doc.size()) {
            ssize_t n = write(in_pipe[1], doc.data() + written, doc.size() - written);
            if (n <= 0) break;
            written += static_cast<std::size_t>(n);
        }
        close(in_pipe[1]);
    }

    std::string output;
    bool timed_out = false;
    char buffer[4096];
    while (true) {
        int remaining = -1;
        if (request.deadline_ms > 0) {
            remaining = static_cast<int>(request.deadline_ms - elapsed_ms());
            if (remaining <= 0) {
                timed_out = true;
                break;
            }
        }
        struct pollfd pfd{out_pipe[0], POLLIN, 0};
        int rc = poll(&pfd, 1, remaining);
        if (rc == 0) {
            timed_out = true;
            break;
        }
        if (rc < 0) break;
        ssize_t n = read(out_pipe[0], buffer, sizeof(buffer));
        if (n <= 0) break;  // child closed stdout
        output.append(buffer, static_cast<std::size_t>(n));
    }
    close(out_pipe[0]);

    if (timed_out) {
        kill(pid, SIGKILL);
        waitpid(pid, nullptr, 0);
        return {SkillStatus::Timeout, {}, "deadline exceeded", elapsed_ms()};
    }

    int status = 0;
    waitpid(pid, &status, 0);
    const std::int64_t took = elapsed_ms();
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        return {SkillStatus::Error, {},
                "adapter exited with status " +
                    std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1),
                took};
    }
    try {
        return {SkillStatus::Ok, json::parse(output), "", took};
    } catch (const json::parse_error& e) {
        return {SkillStatus::Error, {},
                std::string("unparseable adapter response: ") + e.what(), took};
    }
}

}  // namespace loopkit
