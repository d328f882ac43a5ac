#include "l2mac/llm_backend.hpp"

#include <fstream>
#include <sstream>

#include "l2mac/errors.hpp"

namespace l2mac {

ScriptedBackend::ScriptedBackend(std::vector<ScriptedEntry> entries, std::shared_ptr<const Tokenizer> tokenizer)
    : entries_(std::move(entries)), tokenizer_(std::move(tokenizer))
{
}

std::vector<ScriptedEntry> ScriptedBackend::parse_script(std::string_view jsonl)
{
    std::vector<ScriptedEntry> entries;
    std::istringstream in{std::string(jsonl)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line))
    {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        nlohmann::json j;
        try
        {
            j = nlohmann::json::parse(line);
        }
        catch (const nlohmann::json::parse_error& e)
        {
            throw TraceFormatError("script line " + std::to_string(line_no) + ": " + e.what());
        }

        // Run traces are accepted directly: only their LLM responses replay.
        if (j.contains("event_type"))
        {
            if (j.at("event_type") != "llm_response")
                continue;
            const auto message = j.at("message").get<Message>();
            entries.push_back({message.content, message.tool_call, std::nullopt});
            continue;
        }

        ScriptedEntry entry;
        entry.content = j.value("content", std::string{});
        if (auto it = j.find("tool_call"); it != j.end() && !it->is_null())
        {
            ToolCallPayload call;
            call.name = it->at("name").get<std::string>();
            const auto& args = it->at("arguments");
            // Scripts may inline arguments as JSON for readability.
            call.arguments = args.is_string() ? args.get<std::string>() : args.dump();
            entry.tool_call = std::move(call);
        }
        if (auto it = j.find("expect"); it != j.end() && it->is_string())
            entry.expect = it->get<std::string>();
        entries.push_back(std::move(entry));
    }
    return entries;
}

ScriptedBackend ScriptedBackend::from_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open script: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ScriptedBackend(parse_script(ss.str()));
}

Message ScriptedBackend::complete(const CompletionRequest& request)
{
    requests_.push_back(request);
    if (cursor_ >= entries_.size())
        throw ScriptExhausted("scripted backend exhausted after " + std::to_string(entries_.size()) + " responses");

    const auto& entry = entries_[cursor_];
    if (entry.expect)
    {
        // Only the messages added since the last response are searched.
        bool found = false;
        for (auto it = request.messages.rbegin(); it != request.messages.rend() && !found; ++it)
        {
            if (it->kind == MessageKind::LlmResponse)
                break;
            found = it->content.find(*entry.expect) != std::string::npos;
        }
        if (!found)
            throw ScriptMismatch("scripted response " + std::to_string(cursor_) +
                                 " expected the latest request messages to contain \"" + *entry.expect + "\"");
    }
    ++cursor_;
    return make_message(MessageKind::LlmResponse, entry.content, *tokenizer_, entry.tool_call);
}

} // namespace l2mac
