#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "l2mac/errors.hpp"
#include "l2mac/llm_backend.hpp"

namespace l2mac {

namespace {

std::string redact(std::string text, const std::string& secret)
{
    if (secret.empty())
        return text;
    for (auto pos = text.find(secret); pos != std::string::npos; pos = text.find(secret, pos))
        text.replace(pos, secret.size(), "[REDACTED]");
    return text;
}

bool mentions_context_length(const std::string& body)
{
    return body.find("context_length_exceeded") != std::string::npos ||
           body.find("maximum context length") != std::string::npos;
}

std::string tool_call_id(std::size_t message_index)
{
    return "call_" + std::to_string(message_index);
}

} // namespace

ChatCompletionClient::ChatCompletionClient(ChatClientConfig config, std::shared_ptr<const Tokenizer> tokenizer)
    : config_(std::move(config)), tokenizer_(std::move(tokenizer))
{
    if (config_.api_key.empty())
        throw ConfigError(std::string("missing API key: set ") + kApiKeyEnv);
    if (config_.max_attempts == 0)
        config_.max_attempts = 1;
}

ChatClientConfig ChatCompletionClient::config_from_env()
{
    ChatClientConfig config;
    const char* key = std::getenv(kApiKeyEnv);
    if (!key || !*key)
        throw ConfigError(std::string("missing API key: set the ") + kApiKeyEnv + " environment variable");
    config.api_key = key;
    if (const char* base = std::getenv(kBaseUrlEnv); base && *base)
    {
        std::string url = base;
        // Accept base URLs that already end in /v1.
        if (url.size() >= 3 && url.compare(url.size() - 3, 3, "/v1") == 0)
            url.resize(url.size() - 3);
        while (!url.empty() && url.back() == '/')
            url.pop_back();
        config.base_url = url;
    }
    return config;
}

nlohmann::ordered_json ChatCompletionClient::build_request_body(const CompletionRequest& request)
{
    nlohmann::ordered_json body;
    body["model"] = request.model_id;
    body["temperature"] = request.temperature;
    if (request.seed)
        body["seed"] = *request.seed;

    auto messages = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < request.messages.size(); ++i)
    {
        const auto& m = request.messages[i];
        nlohmann::ordered_json wire;
        switch (m.kind)
        {
        case MessageKind::System:
            wire["role"] = "system";
            wire["content"] = m.content;
            break;
        case MessageKind::User:
        case MessageKind::Control:
            wire["role"] = "user";
            wire["content"] = m.content;
            break;
        case MessageKind::LlmResponse:
            wire["role"] = "assistant";
            wire["content"] = m.content.empty() && m.tool_call ? nlohmann::ordered_json(nullptr)
                                                              : nlohmann::ordered_json(m.content);
            if (m.tool_call)
            {
                nlohmann::ordered_json call;
                call["id"] = tool_call_id(i);
                call["type"] = "function";
                call["function"]["name"] = m.tool_call->name;
                call["function"]["arguments"] = m.tool_call->arguments;
                wire["tool_calls"] = nlohmann::ordered_json::array({call});
            }
            break;
        case MessageKind::FunctionResponse: {
            // Only the message answering a tool call can use the tool role;
            // evaluator feedback and orphans left by unwinding go as user text.
            const bool answers_call = i > 0 && request.messages[i - 1].kind == MessageKind::LlmResponse &&
                                      request.messages[i - 1].tool_call.has_value();
            if (answers_call)
            {
                wire["role"] = "tool";
                wire["tool_call_id"] = tool_call_id(i - 1);
            }
            else
            {
                wire["role"] = "user";
            }
            wire["content"] = m.content;
            break;
        }
        }
        messages.push_back(std::move(wire));
    }
    body["messages"] = std::move(messages);

    if (!request.tools.empty())
    {
        auto tools = nlohmann::ordered_json::array();
        for (const auto& schema : request.tools)
        {
            nlohmann::ordered_json t;
            t["type"] = "function";
            t["function"] = to_wire_json(schema);
            tools.push_back(std::move(t));
        }
        body["tools"] = std::move(tools);
    }
    return body;
}

Message ChatCompletionClient::parse_response_body(const nlohmann::json& body, const Tokenizer& tokenizer)
{
    const auto choices = body.find("choices");
    if (choices == body.end() || !choices->is_array() || choices->empty())
        throw TransportError("provider response has no choices");
    const auto& message = (*choices)[0].at("message");

    std::string content;
    if (auto it = message.find("content"); it != message.end() && it->is_string())
        content = it->get<std::string>();

    std::optional<ToolCallPayload> call;
    if (auto calls = message.find("tool_calls"); calls != message.end() && calls->is_array() && !calls->empty())
    {
        // One function per turn; later parallel calls are dropped.
        const auto& fn = (*calls)[0].at("function");
        call = ToolCallPayload{fn.at("name").get<std::string>(), fn.value("arguments", std::string{})};
        if (calls->size() > 1)
            spdlog::warn("provider returned {} tool calls; only the first is executed", calls->size());
    }
    else if (auto legacy = message.find("function_call"); legacy != message.end() && legacy->is_object())
    {
        call = ToolCallPayload{legacy->at("name").get<std::string>(), legacy->value("arguments", std::string{})};
    }
    return make_message(MessageKind::LlmResponse, std::move(content), tokenizer, std::move(call));
}

Message ChatCompletionClient::complete(const CompletionRequest& request)
{
    const auto body = build_request_body(request).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
    std::size_t local_tokens = 0;
    for (const auto& m : request.messages)
        local_tokens += m.token_count;

    httplib::Client client(config_.base_url);
    client.set_connection_timeout(std::chrono::seconds(30));
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(std::chrono::seconds(60));
    client.set_bearer_token_auth(config_.api_key);

    if (config_.debug_wire)
        spdlog::info("wire request {}: {}", config_.path, redact(body, config_.api_key));

    auto backoff = config_.initial_backoff;
    std::string last_problem;
    for (std::size_t attempt = 1; attempt <= config_.max_attempts; ++attempt)
    {
        auto res = client.Post(config_.path, body, "application/json");
        bool rate_limited = false;
        if (!res)
        {
            last_problem = "transport error: " + httplib::to_string(res.error());
        }
        else
        {
            if (config_.debug_wire)
                spdlog::info("wire response {}: {}", res->status, redact(res->body, config_.api_key));
            if (res->status == 200)
            {
                try
                {
                    return parse_response_body(nlohmann::json::parse(res->body), *tokenizer_);
                }
                catch (const nlohmann::json::exception& e)
                {
                    last_problem = std::string("unparseable provider response: ") + e.what();
                }
            }
            else if (res->status == 400 && mentions_context_length(res->body))
            {
                spdlog::error("provider rejected the context: local count {} tokens; provider said: {}", local_tokens,
                              res->body);
                throw ContextRejectedByProvider("provider rejected a request the local tokenizer counted at " +
                                                std::to_string(local_tokens) + " tokens: " + res->body);
            }
            else if (res->status == 429)
            {
                rate_limited = true;
                last_problem = "rate limited: " + res->body;
            }
            else if (res->status >= 500)
            {
                last_problem = "server error " + std::to_string(res->status) + ": " + res->body;
            }
            else
            {
                throw TransportError("provider returned HTTP " + std::to_string(res->status) + ": " +
                                     redact(res->body, config_.api_key));
            }
        }

        if (attempt == config_.max_attempts)
        {
            if (rate_limited)
                throw RateLimited(last_problem);
            throw TransportError(last_problem);
        }
        spdlog::warn("completion attempt {}/{} failed ({}); retrying in {} ms", attempt, config_.max_attempts,
                     last_problem, backoff.count());
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
    }
    throw TransportError(last_problem);
}

} // namespace l2mac
