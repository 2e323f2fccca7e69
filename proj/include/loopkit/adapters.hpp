#pragma once

#include <filesystem>
#include <memory>

#include "loopkit/domain.hpp"

namespace loopkit {

// ---------------------------------------------------------------------------
// Workspace handles: create an isolated copy from a base revision, diff
// against it, list what appeared, throw it away. Version-control agnostic.
// ---------------------------------------------------------------------------

struct WorkspaceUnavailable : std::runtime_error {
    explicit WorkspaceUnavailable(const std::string& what)
        : std::runtime_error(what) {}
};

class Workspace {
public:
    virtual ~Workspace() = default;
    virtual const std::string& id() const = 0;
    virtual const std::string& base_revision() const = 0;
    virtual std::filesystem::path root() const = 0;
    virtual std::vector<FileChange> diff_against_base() const = 0;
    virtual void discard() = 0;
};

class WorkspaceProvider {
public:
    virtual ~WorkspaceProvider() = default;
    virtual std::unique_ptr<Workspace> create(const std::string& base_revision) = 0;
};

/// Directory-copy workspaces: the base revision maps to a snapshot
/// directory; create() clones it under a scratch root, diff walks both
/// trees and compares content.
class FsWorkspaceProvider : public WorkspaceProvider {
public:
    FsWorkspaceProvider(std::filesystem::path scratch_root,
                        std::map<std::string, std::filesystem::path> revisions);

    void register_revision(const std::string& revision,
                           const std::filesystem::path& snapshot);
    std::unique_ptr<Workspace> create(const std::string& base_revision) override;

private:
    std::filesystem::path scratch_root_;
    std::map<std::string, std::filesystem::path> revisions_;
    std::int64_t counter_ = 0;
};

/// Computes a tree diff (added/modified/deleted, path-sorted) between a
/// base snapshot and a working directory.
std::vector<FileChange> diff_trees(const std::filesystem::path& base,
                                   const std::filesystem::path& work);

// ---------------------------------------------------------------------------
// Skill adapters: all agent intelligence sits behind this call.
// ---------------------------------------------------------------------------

struct WorkspaceRef {
    std::string id;
    std::string root;
    std::string base_revision;
};

void to_json(json& j, const WorkspaceRef& w);
void from_json(const json& j, WorkspaceRef& w);

struct SkillRequest {
    Phase phase = Phase::Backlog;
    json payload;
    std::optional<WorkspaceRef> workspace;
    std::int64_t deadline_ms = 0;  // 0 means no budget
};

void to_json(json& j, const SkillRequest& r);
void from_json(const json& j, SkillRequest& r);

enum class SkillStatus { Ok, Timeout, Error };

NLOHMANN_JSON_SERIALIZE_ENUM(SkillStatus, {
    {SkillStatus::Ok, "ok"}, {SkillStatus::Timeout, "timeout"},
    {SkillStatus::Error, "error"}})

struct SkillResponse {
    SkillStatus status = SkillStatus::Ok;
    json payload;            // empty on Timeout
    std::string diagnostic;  // error text when status != Ok
    std::int64_t elapsed_ms = 0;
};

class SkillAdapter {
public:
    virtual ~SkillAdapter() = default;
    virtual SkillResponse invoke(const SkillRequest& request) = 0;
};

/// One external process per call: request document on stdin, response
/// document on stdout, exit 0 for Ok. The deadline is enforced with a
/// kill; a timed-out call never carries a payload.
class ProcessSkillAdapter : public SkillAdapter {
public:
    explicit ProcessSkillAdapter(std::vector<std::string> argv);
    SkillResponse invoke(const SkillRequest& request) override;

private:
    std::vector<std::string> argv_;
};

// ---------------------------------------------------------------------------
// Merge application and TOCTOU re-inspection
// ---------------------------------------------------------------------------

/// Applies a merge to the product and returns the new head revision.
class MergeSink {
public:
    virtual ~MergeSink() = default;
    virtual std::string apply_merge(const PullRequest& pr) = 0;
};

/// Recomputes a PR's change set at the moment of the call; the deletion
/// check uses this rather than any review-time snapshot.
class ChangeInspector {
public:
    virtual ~ChangeInspector() = default;
    virtual std::vector<FileChange> recompute_changes(const PullRequest& pr) = 0;
};

}  // namespace loopkit
