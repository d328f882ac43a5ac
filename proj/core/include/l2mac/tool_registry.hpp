#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "l2mac/file_store.hpp"
#include "l2mac/messages.hpp"
#include "l2mac/process_runner.hpp"

namespace l2mac {

namespace tools {
inline constexpr std::string_view kProvideSteps = "provide_detailed_sub_task_steps_for_sub_agents";
inline constexpr std::string_view kStepComplete = "sub_task_step_complete";
inline constexpr std::string_view kViewFiles = "view_files";
inline constexpr std::string_view kRunPythonFile = "run_python_file";
inline constexpr std::string_view kPytestFiles = "pytest_files";
inline constexpr std::string_view kWriteFiles = "write_files";
inline constexpr std::string_view kDeleteFiles = "delete_files";
} // namespace tools

/// A function the LLM may call. `parameters` keeps key order so the wire
/// form is byte-for-byte the published definition.
struct ToolSchema
{
    std::string name;
    std::string description;
    nlohmann::ordered_json parameters;
};

/// All seven code-generation functions in their published order.
const std::vector<ToolSchema>& code_tool_schemas();

/// The six functions offered while an instruction executes (everything but
/// the bootstrap planner).
std::vector<ToolSchema> execution_tool_schemas();

/// Only the bootstrap planner.
std::vector<ToolSchema> bootstrap_tool_schemas();

const ToolSchema* find_schema(const std::vector<ToolSchema>& schemas, std::string_view name);
std::vector<std::string> tool_names(const std::vector<ToolSchema>& schemas);

/// {"name", "description", "parameters"} in that order.
nlohmann::ordered_json to_wire_json(const ToolSchema& schema);

/// Checks `value` against the JSON-schema subset the function definitions
/// use (type, properties, required, items). Returns the first problem found.
std::optional<std::string> validate_against_schema(const nlohmann::json& value, const nlohmann::ordered_json& schema,
                                                   const std::string& where = "arguments");

struct ToolCall
{
    std::string name;
    nlohmann::json arguments;
};

/// Parses and validates the tool call carried by an LLM response against the
/// offered schemas. Throws UnknownTool or MalformedArguments.
ToolCall parse_tool_call(const Message& raw, const std::vector<ToolSchema>& offered);

/// Function response explaining why a tool call was rejected.
Message rejection_message(std::string_view tool_name, std::string_view problem, const Tokenizer& tokenizer);

struct DispatchContext
{
    FileStore& store;
    const ProcessRunner& runner;
    std::string python = "python3";
    std::chrono::milliseconds timeout{std::chrono::seconds(120)};
    std::size_t max_output_tokens = 8000;
    std::optional<std::size_t> max_file_tokens;
};

struct DispatchResult
{
    Message response;
    bool store_mutated = false;
    bool step_complete = false;
};

/// Executes a validated call. Total: every call yields exactly one
/// FunctionResponse, sandbox failures included.
DispatchResult dispatch(const ToolCall& call, DispatchContext& ctx);

/// Strips run-to-run noise from process output: absolute workspace paths,
/// wall-clock durations, object addresses.
std::string normalize_process_output(std::string_view output, const std::filesystem::path& workspace);

/// Longest prefix of `text` whose rendering fits `max_tokens`, with a
/// truncation notice appended when anything was cut. `render` wraps the
/// (possibly truncated) text into the final message content.
std::string fit_to_tokens(std::string_view text, std::size_t max_tokens, const Tokenizer& tokenizer,
                          const std::function<std::string(std::string_view)>& render);

/// JSON dump that replaces invalid UTF-8 instead of throwing.
std::string safe_dump(const nlohmann::ordered_json& j);

} // namespace l2mac
