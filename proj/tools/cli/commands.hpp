#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "l2mac/control_unit.hpp"
#include "l2mac/trace.hpp"

namespace l2mac::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitFailed = 2;
inline constexpr int kExitDiverged = 3;

struct TaskSource
{
    std::string id;   // fixture id or file stem
    std::string path; // empty for an inline prompt
    std::string prompt;
};

/// A path to a prompt file, or the id of a bundled fixture. Throws
/// ConfigError naming both places it looked.
TaskSource resolve_task(const std::string& task);

/// Directory holding bundled fixtures (tasks/*.md). L2MAC_FIXTURES overrides.
std::filesystem::path fixture_dir();

struct RunOptions
{
    std::string task;
    std::optional<std::filesystem::path> program; // skip bootstrap with these steps
    std::string backend = "mock";
    std::optional<std::filesystem::path> trace; // script or trace for the mock backend
    RunConfig config;
    std::size_t seeds = 1;
    std::size_t jobs = 1;
    std::filesystem::path out = "runs";
    std::optional<std::string> run_id;
    bool debug_wire = false;
};

struct RunRecord
{
    std::string run_id;
    std::filesystem::path run_dir;
    RunOutcome outcome;
};

/// Executes one run per seed. Throws ConfigError before any run starts.
std::vector<RunRecord> execute_runs(const RunOptions& options);

/// 0 when every run completed, 2 when any failed, 1 on a config error.
int cmd_run(const RunOptions& options, std::ostream& out);

struct ReplayReport
{
    bool identical = false;
    std::optional<Divergence> divergence;
    std::vector<std::string> workspace_differences;
    std::string problem; // trace format trouble, if any
};

/// Re-executes the run recorded in `trace_path` with its own LLM responses
/// and compares the new trace and workspace against the recorded ones. The
/// recorded workspace defaults to the trace's sibling workspace/ directory.
ReplayReport replay(const std::filesystem::path& trace_path,
                    std::optional<std::filesystem::path> recorded_workspace = std::nullopt);

/// 0 iff identical, 3 on divergence, 1 on unusable input.
int cmd_replay(const std::filesystem::path& trace_path, std::ostream& out);

struct EvalOptions
{
    std::filesystem::path workspace;
    std::string task;
    std::string judge = "none"; // none | mock | wire
    std::optional<std::filesystem::path> judge_script;
    std::string model_id = "gpt-4-0613";
    std::optional<std::filesystem::path> report; // default: <workspace>/../report.json
    EvalConfig eval;
    bool debug_wire = false;
};

int cmd_eval(const EvalOptions& options, std::ostream& out);

/// Reads report.json files (directories are searched recursively) and writes
/// the mean and 95% interval table.
int cmd_aggregate(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& csv,
                  std::ostream& out);

} // namespace l2mac::cli
