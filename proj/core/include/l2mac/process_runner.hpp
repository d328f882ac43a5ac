#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace l2mac {

struct ProcessSpec
{
    std::vector<std::string> argv;
    std::filesystem::path cwd;
    std::chrono::milliseconds timeout{std::chrono::seconds(120)};
    std::map<std::string, std::string> env; // added to the inherited environment
};

struct ProcessResult
{
    int exit_code = -1;
    bool timed_out = false;
    bool output_capped = false;
    std::string output; // stdout and stderr, interleaved as written
};

/// Runs allowlisted programs with a wall-clock limit and the working directory
/// pinned to the caller's workspace. One child at a time per call.
class ProcessRunner
{
public:
    explicit ProcessRunner(std::set<std::string> allowed_programs,
                           std::size_t max_output_bytes = 4 * 1024 * 1024);

    /// Throws std::invalid_argument for an empty argv or a program outside
    /// the allowlist. A missing executable yields exit code 127.
    ProcessResult run(const ProcessSpec& spec) const;

    bool allows(const std::string& program) const { return allowed_.count(program) > 0; }

    /// Resolves `program` against PATH.
    static bool program_available(const std::string& program);

private:
    std::set<std::string> allowed_;
    std::size_t max_output_bytes_;
};

} // namespace l2mac
