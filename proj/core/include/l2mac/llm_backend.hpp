#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "l2mac/messages.hpp"
#include "l2mac/tool_registry.hpp"

namespace l2mac {

struct CompletionRequest
{
    std::vector<Message> messages;
    std::vector<ToolSchema> tools;
    double temperature = 0.01;
    std::string model_id;
    std::optional<std::int64_t> seed;
};

/// The LLM processor: one blocking completion per call.
class LlmBackend
{
public:
    virtual ~LlmBackend() = default;

    /// Returns an LlmResponse message with its token count set.
    virtual Message complete(const CompletionRequest& request) = 0;

    virtual const Tokenizer& tokenizer() const = 0;

    std::size_t count_tokens(std::string_view text) const { return tokenizer().count(text); }
};

/// One canned response. When `expect` is set, a message added to the request
/// since the previous LLM response must contain it, which pins the response
/// to a dialog position.
struct ScriptedEntry
{
    std::string content;
    std::optional<ToolCallPayload> tool_call;
    std::optional<std::string> expect;
};

/// Deterministic backend that replays canned responses strictly in order.
/// Asking past the end throws ScriptExhausted.
class ScriptedBackend final : public LlmBackend
{
public:
    explicit ScriptedBackend(std::vector<ScriptedEntry> entries,
                             std::shared_ptr<const Tokenizer> tokenizer = std::make_shared<QuarterCharTokenizer>());

    /// Reads either a script (one {"content", "tool_call"?, "expect"?} object
    /// per line) or a run trace, in which case its llm_response events are
    /// replayed verbatim.
    static ScriptedBackend from_file(const std::filesystem::path& path);
    static std::vector<ScriptedEntry> parse_script(std::string_view jsonl);

    Message complete(const CompletionRequest& request) override;
    const Tokenizer& tokenizer() const override { return *tokenizer_; }

    std::size_t consumed() const noexcept { return cursor_; }
    std::size_t remaining() const noexcept { return entries_.size() - cursor_; }
    const std::vector<CompletionRequest>& requests() const noexcept { return requests_; }

private:
    std::vector<ScriptedEntry> entries_;
    std::shared_ptr<const Tokenizer> tokenizer_;
    std::size_t cursor_ = 0;
    std::vector<CompletionRequest> requests_;
};

struct ChatClientConfig
{
    std::string base_url = "https://api.openai.com";
    std::string api_key;
    std::string path = "/v1/chat/completions";
    std::chrono::seconds timeout{600};
    std::size_t max_attempts = 5;
    std::chrono::milliseconds initial_backoff{1000};
    bool debug_wire = false;
};

inline constexpr const char* kApiKeyEnv = "OPENAI_API_KEY";
inline constexpr const char* kBaseUrlEnv = "OPENAI_BASE_URL";

/// Client for any chat-completions compatible endpoint with function tools.
/// Transport failures and rate limits are retried with exponential backoff;
/// a context-length rejection is fatal.
class ChatCompletionClient final : public LlmBackend
{
public:
    explicit ChatCompletionClient(ChatClientConfig config,
                                  std::shared_ptr<const Tokenizer> tokenizer = std::make_shared<QuarterCharTokenizer>());

    /// Reads the API key and optional base URL from the environment. Throws
    /// ConfigError naming the variable when the key is missing.
    static ChatClientConfig config_from_env();

    Message complete(const CompletionRequest& request) override;
    const Tokenizer& tokenizer() const override { return *tokenizer_; }

    /// Provider request body for `request`.
    static nlohmann::ordered_json build_request_body(const CompletionRequest& request);

    /// First choice of a provider response mapped into an LlmResponse.
    static Message parse_response_body(const nlohmann::json& body, const Tokenizer& tokenizer);

private:
    ChatClientConfig config_;
    std::shared_ptr<const Tokenizer> tokenizer_;
};

} // namespace l2mac
