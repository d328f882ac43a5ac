#include "l2mac/tool_registry.hpp"

#include <algorithm>
#include <regex>

#include "l2mac/errors.hpp"

namespace l2mac {

namespace {

// Function definitions exactly as published, converted to strict JSON.
constexpr std::string_view kCodeToolDefinitions = R"JSON([
    {
        "name": "provide_detailed_sub_task_steps_for_sub_agents",
        "description": "For producing a step-by-step plan, where each step paragraph is a detailed sub-task step for a separate sub-agent (large language model agent) to complete. Within each detailed step paragraph, always include a last sentence to create and run tests when implementing or writing code in that same step.",
        "parameters": {
            "type": "object",
            "properties": {
                "steps": {
                    "type": "array",
                    "description": "List of strings, where each string is a separate step sub-task paragraph for a separate sub-agent to complete. Within each detailed step paragraph, always include a last sentence to create and run tests when implementing or writing code in that same step.",
                    "items": {
                        "type": "string"
                    }
                }
            },
            "required": [
                "steps"
            ]
        }
    },
    {
        "name": "sub_task_step_complete",
        "description": "Call this function when the user specified sub task step has been completed.",
        "parameters": {
            "type": "object",
            "properties": {}
        }
    },
    {
        "name": "view_files",
        "description": "Print out the file contents into the response to view.",
        "parameters": {
            "type": "object",
            "properties": {
                "files": {
                    "type": "array",
                    "description": "list of the files to view",
                    "items": {
                        "type": "string"
                    }
                }
            },
            "required": [
                "files"
            ]
        }
    },
    {
        "name": "run_python_file",
        "description": "Run python file and return the output to the response to view. That is with 'python3 file_name_to_run'.",
        "parameters": {
            "type": "object",
            "properties": {
                "file_name_to_run": {
                    "type": "string",
                    "description": "file name to run"
                },
                "arguments": {
                    "type": "array",
                    "description": "optional run arguments",
                    "items": {
                        "type": "string"
                    }
                }
            },
            "required": [
                "file_name_to_run"
            ]
        }
    },
    {
        "name": "pytest_files",
        "description": "Run pytest on the input file names and print out the results to the response to view. If no file names are provided, pytest runs on all files.",
        "parameters": {
            "type": "object",
            "properties": {
                "files_to_test": {
                    "type": "array",
                    "description": "file names to run pytest on",
                    "items": {
                        "type": "string"
                    }
                }
            }
        }
    },
    {
        "name": "write_files",
        "description": "Write out multiple files and it will be combined into the existing codebase. Always output the whole file. You always indent code with tabs.",
        "parameters": {
            "type": "object",
            "properties": {
                "files_and_contents": {
                    "type": "array",
                    "description": "list of files and their contents.",
                    "items": {
                        "type": "object",
                        "properties": {
                            "file_path": {
                                "type": "string",
                                "description": "Path to the file"
                            },
                            "file_contents": {
                                "type": "string",
                                "description": "Contents of the file"
                            }
                        },
                        "required": [
                            "file_path",
                            "file_contents"
                        ]
                    }
                }
            },
            "required": [
                "files_and_contents"
            ]
        }
    },
    {
        "name": "delete_files",
        "description": "Delete files. Specify the file names, and these files will be deleted. If you specify the file name '-1' all files in the folder will be deleted.",
        "parameters": {
            "type": "object",
            "properties": {
                "files": {
                    "type": "array",
                    "description": "list of the files to delete. If you provide a file name of '-1' all files in the folder will be deleted.",
                    "items": {
                        "type": "string"
                    }
                }
            },
            "required": [
                "files"
            ]
        }
    }
])JSON";

std::vector<ToolSchema> load_schemas()
{
    std::vector<ToolSchema> out;
    for (const auto& item : nlohmann::ordered_json::parse(kCodeToolDefinitions))
    {
        out.push_back(ToolSchema{item.at("name").get<std::string>(), item.at("description").get<std::string>(),
                                 item.at("parameters")});
    }
    return out;
}

bool matches_type(const nlohmann::json& value, const std::string& type)
{
    if (type == "object")
        return value.is_object();
    if (type == "array")
        return value.is_array();
    if (type == "string")
        return value.is_string();
    if (type == "integer")
        return value.is_number_integer();
    if (type == "number")
        return value.is_number();
    if (type == "boolean")
        return value.is_boolean();
    if (type == "null")
        return value.is_null();
    return true;
}

std::vector<std::string> string_list(const nlohmann::json& args, const char* key)
{
    std::vector<std::string> out;
    if (auto it = args.find(key); it != args.end() && it->is_array())
    {
        for (const auto& v : *it)
            out.push_back(v.get<std::string>());
    }
    return out;
}

std::string process_output_text(const ProcessResult& result, const std::filesystem::path& workspace)
{
    auto text = normalize_process_output(result.output, workspace);
    if (result.output_capped)
        text += "\n[output capped by the sandbox]";
    return text;
}

Message process_response(const ProcessResult& result, const DispatchContext& ctx)
{
    const auto workspace = ctx.store.mirror_root().value_or(std::filesystem::path{});
    const auto text = process_output_text(result, workspace);
    auto render = [&](std::string_view shown) {
        nlohmann::ordered_json j;
        j["output"] = std::string(shown);
        if (result.timed_out)
        {
            j["error"] = "Execution timed out after " +
                         std::to_string(std::chrono::duration_cast<std::chrono::seconds>(ctx.timeout).count()) +
                         " seconds and was terminated.";
        }
        else if (result.exit_code != 0)
        {
            j["exit_code"] = result.exit_code;
        }
        return safe_dump(j);
    };
    return make_message(MessageKind::FunctionResponse,
                        fit_to_tokens(text, ctx.max_output_tokens, ctx.store.tokenizer(), render),
                        ctx.store.tokenizer());
}

std::map<std::string, std::string> sandbox_env()
{
    return {{"PYTHONDONTWRITEBYTECODE", "1"}, {"PYTHONHASHSEED", "0"}, {"PYTHONUNBUFFERED", "1"}};
}

DispatchResult run_python_file(const ToolCall& call, DispatchContext& ctx)
{
    const auto& tk = ctx.store.tokenizer();
    const auto raw = call.arguments.at("file_name_to_run").get<std::string>();
    std::string path;
    try
    {
        path = normalize_path(raw);
    }
    catch (const PathViolation& e)
    {
        return {rejection_message(call.name, e.what(), tk)};
    }
    if (!ctx.store.contains(path) || !ctx.store.mirror_root())
        return {rejection_message(call.name, "File not found: " + raw, tk)};

    ProcessSpec spec;
    spec.argv = {ctx.python, path};
    for (const auto& arg : string_list(call.arguments, "arguments"))
        spec.argv.push_back(arg);
    spec.cwd = *ctx.store.mirror_root();
    spec.timeout = ctx.timeout;
    spec.env = sandbox_env();
    auto result = ctx.runner.run(spec);
    ctx.store.sync_mirror();
    return {process_response(result, ctx)};
}

DispatchResult pytest_files(const ToolCall& call, DispatchContext& ctx)
{
    const auto& tk = ctx.store.tokenizer();
    if (!ctx.store.mirror_root())
        return {rejection_message(call.name, "no workspace is attached to the file store", tk)};

    ProcessSpec spec;
    spec.argv = {ctx.python, "-m", "pytest", "-p", "no:cacheprovider"};
    for (const auto& raw : string_list(call.arguments, "files_to_test"))
    {
        std::string path;
        try
        {
            path = normalize_path(raw);
        }
        catch (const PathViolation& e)
        {
            return {rejection_message(call.name, e.what(), tk)};
        }
        if (!ctx.store.contains(path))
            return {rejection_message(call.name, "File not found: " + raw, tk)};
        spec.argv.push_back(path);
    }
    spec.cwd = *ctx.store.mirror_root();
    spec.timeout = ctx.timeout;
    spec.env = sandbox_env();
    auto result = ctx.runner.run(spec);
    ctx.store.sync_mirror();
    return {process_response(result, ctx)};
}

} // namespace

const std::vector<ToolSchema>& code_tool_schemas()
{
    static const std::vector<ToolSchema> schemas = load_schemas();
    return schemas;
}

std::vector<ToolSchema> execution_tool_schemas()
{
    std::vector<ToolSchema> out;
    for (const auto& s : code_tool_schemas())
    {
        if (s.name != tools::kProvideSteps)
            out.push_back(s);
    }
    return out;
}

std::vector<ToolSchema> bootstrap_tool_schemas()
{
    return {*find_schema(code_tool_schemas(), tools::kProvideSteps)};
}

const ToolSchema* find_schema(const std::vector<ToolSchema>& schemas, std::string_view name)
{
    auto it = std::find_if(schemas.begin(), schemas.end(), [&](const auto& s) { return s.name == name; });
    return it == schemas.end() ? nullptr : &*it;
}

std::vector<std::string> tool_names(const std::vector<ToolSchema>& schemas)
{
    std::vector<std::string> out;
    out.reserve(schemas.size());
    for (const auto& s : schemas)
        out.push_back(s.name);
    return out;
}

nlohmann::ordered_json to_wire_json(const ToolSchema& schema)
{
    nlohmann::ordered_json j;
    j["name"] = schema.name;
    j["description"] = schema.description;
    j["parameters"] = schema.parameters;
    return j;
}

std::optional<std::string> validate_against_schema(const nlohmann::json& value, const nlohmann::ordered_json& schema,
                                                   const std::string& where)
{
    if (auto type = schema.find("type"); type != schema.end() && type->is_string())
    {
        if (!matches_type(value, type->get<std::string>()))
            return where + " must be of type " + type->get<std::string>();
    }
    if (value.is_object())
    {
        if (auto required = schema.find("required"); required != schema.end())
        {
            for (const auto& key : *required)
            {
                if (!value.contains(key.get<std::string>()))
                    return where + " is missing required field \"" + key.get<std::string>() + "\"";
            }
        }
        if (auto props = schema.find("properties"); props != schema.end())
        {
            for (const auto& [key, sub] : props->items())
            {
                if (auto it = value.find(key); it != value.end())
                {
                    if (auto problem = validate_against_schema(*it, sub, where + "." + key))
                        return problem;
                }
            }
        }
    }
    if (value.is_array())
    {
        if (auto items = schema.find("items"); items != schema.end())
        {
            for (std::size_t i = 0; i < value.size(); ++i)
            {
                if (auto problem = validate_against_schema(value[i], *items, where + "[" + std::to_string(i) + "]"))
                    return problem;
            }
        }
    }
    return std::nullopt;
}

ToolCall parse_tool_call(const Message& raw, const std::vector<ToolSchema>& offered)
{
    if (raw.kind != MessageKind::LlmResponse || !raw.tool_call)
        throw MalformedArguments("response carries no function call");
    const auto& payload = *raw.tool_call;
    const auto* schema = find_schema(offered, payload.name);
    if (!schema)
        throw UnknownTool("Function '" + payload.name + "' does not exist. Only use the functions you have been provided with.");

    nlohmann::json args;
    const auto first = payload.arguments.find_first_not_of(" \t\r\n");
    if (first == std::string::npos)
    {
        args = nlohmann::json::object();
    }
    else
    {
        try
        {
            args = nlohmann::json::parse(payload.arguments);
        }
        catch (const nlohmann::json::parse_error& e)
        {
            throw MalformedArguments("Arguments for '" + payload.name + "' are not valid RFC8259 JSON: " + e.what());
        }
    }
    if (auto problem = validate_against_schema(args, schema->parameters))
        throw MalformedArguments("Invalid arguments for '" + payload.name + "': " + *problem);
    return ToolCall{payload.name, std::move(args)};
}

Message rejection_message(std::string_view tool_name, std::string_view problem, const Tokenizer& tokenizer)
{
    nlohmann::ordered_json j;
    j["function"] = std::string(tool_name);
    j["status"] = "error";
    j["message"] = std::string(problem);
    return make_message(MessageKind::FunctionResponse, safe_dump(j), tokenizer);
}

DispatchResult dispatch(const ToolCall& call, DispatchContext& ctx)
{
    const auto& tk = ctx.store.tokenizer();
    try
    {
        if (call.name == tools::kStepComplete)
        {
            nlohmann::ordered_json j;
            j["sub_task_step_complete_status"] = "received";
            return {make_message(MessageKind::FunctionResponse, safe_dump(j), tk), false, true};
        }
        if (call.name == tools::kViewFiles)
        {
            auto message = ctx.store.view_files(string_list(call.arguments, "files"));
            auto render = [](std::string_view shown) { return std::string(shown); };
            if (message.token_count > ctx.max_output_tokens)
                message = make_message(MessageKind::FunctionResponse,
                                       fit_to_tokens(message.content, ctx.max_output_tokens, tk, render), tk);
            return {std::move(message)};
        }
        if (call.name == tools::kWriteFiles)
        {
            std::vector<FileWrite> files;
            for (const auto& item : call.arguments.at("files_and_contents"))
                files.push_back({item.at("file_path").get<std::string>(), item.at("file_contents").get<std::string>()});
            auto message = ctx.store.write_files(files, ctx.max_file_tokens);
            const bool ok = message.content.find("\"write_files_status\":\"success\"") != std::string::npos;
            return {std::move(message), ok};
        }
        if (call.name == tools::kDeleteFiles)
        {
            auto message = ctx.store.delete_files(string_list(call.arguments, "files"));
            return {std::move(message), true};
        }
        if (call.name == tools::kRunPythonFile)
            return run_python_file(call, ctx);
        if (call.name == tools::kPytestFiles)
            return pytest_files(call, ctx);
        return {rejection_message(call.name, "Function is not available in this phase.", tk)};
    }
    catch (const std::exception& e)
    {
        return {rejection_message(call.name, std::string("Function failed: ") + e.what(), tk)};
    }
}

std::string normalize_process_output(std::string_view output, const std::filesystem::path& workspace)
{
    std::string text(output);
    if (!workspace.empty())
    {
        for (const auto& root : {std::filesystem::absolute(workspace).lexically_normal().string(),
                                 workspace.string()})
        {
            auto trimmed = root;
            while (trimmed.size() > 1 && trimmed.back() == '/')
                trimmed.pop_back();
            if (trimmed.empty() || trimmed == ".")
                continue;
            for (auto pos = text.find(trimmed); pos != std::string::npos; pos = text.find(trimmed, pos))
            {
                auto len = trimmed.size();
                if (pos + len < text.size() && text[pos + len] == '/')
                {
                    text.replace(pos, len + 1, "");
                }
                else
                {
                    text.replace(pos, len, ".");
                    pos += 1;
                }
            }
        }
    }
    static const std::regex durations(R"(\b\d+(\.\d+)?s\b( \(\d+:\d\d:\d\d\))?)");
    static const std::regex addresses(R"(\b0x[0-9a-fA-F]{6,}\b)");
    return std::regex_replace(std::regex_replace(text, durations, "<duration>"), addresses, "0x<address>");
}

std::string fit_to_tokens(std::string_view text, std::size_t max_tokens, const Tokenizer& tokenizer,
                          const std::function<std::string(std::string_view)>& render)
{
    auto full = render(text);
    if (tokenizer.count(full) <= max_tokens)
        return full;

    auto notice = [&](std::size_t shown) {
        return "\n[output truncated: showing the first " + std::to_string(shown) + " of " +
               std::to_string(text.size()) + " characters]";
    };
    auto candidate = [&](std::size_t len) {
        while (len > 0 && len < text.size() && (static_cast<unsigned char>(text[len]) & 0xC0) == 0x80)
            --len;
        return render(std::string(text.substr(0, len)) + notice(len));
    };

    std::size_t lo = 0;
    std::size_t hi = text.size();
    while (lo < hi)
    {
        const auto mid = lo + (hi - lo + 1) / 2;
        if (tokenizer.count(candidate(mid)) <= max_tokens)
            lo = mid;
        else
            hi = mid - 1;
    }
    return candidate(lo);
}

std::string safe_dump(const nlohmann::ordered_json& j)
{
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

} // namespace l2mac
