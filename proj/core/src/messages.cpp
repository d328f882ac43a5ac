#include "l2mac/messages.hpp"

#include <array>
#include <numeric>
#include <stdexcept>
#include <utility>

#include "l2mac/errors.hpp"

namespace l2mac {

namespace {

constexpr std::array<std::pair<MessageKind, std::string_view>, 5> kKindNames{{
    {MessageKind::System, "system"},
    {MessageKind::User, "user"},
    {MessageKind::LlmResponse, "llm_response"},
    {MessageKind::FunctionResponse, "function_response"},
    {MessageKind::Control, "control"},
}};

std::size_t sum_tokens(const std::vector<Message>& messages)
{
    return std::accumulate(messages.begin(), messages.end(), std::size_t{0},
                           [](std::size_t acc, const Message& m) { return acc + m.token_count; });
}

} // namespace

std::string_view to_string(MessageKind kind)
{
    for (const auto& [k, name] : kKindNames)
    {
        if (k == kind)
            return name;
    }
    return "unknown";
}

MessageKind message_kind_from_string(std::string_view name)
{
    for (const auto& [k, n] : kKindNames)
    {
        if (n == name)
            return k;
    }
    throw std::invalid_argument("unknown message kind: " + std::string(name));
}

std::size_t QuarterCharTokenizer::count(std::string_view text) const
{
    return (text.size() + 3) / 4;
}

std::string Message::counted_text() const
{
    if (!tool_call)
        return content;
    return content + tool_call->name + tool_call->arguments;
}

Message make_message(MessageKind kind, std::string content, const Tokenizer& tokenizer,
                     std::optional<ToolCallPayload> tool_call)
{
    if (tool_call && kind != MessageKind::LlmResponse)
        throw std::invalid_argument("tool_call is only valid on llm_response messages");

    Message message{kind, std::move(content), std::move(tool_call), 0};
    message.token_count = tokenizer.count(message.counted_text());
    return message;
}

void to_json(nlohmann::json& j, const ToolCallPayload& call)
{
    j = nlohmann::json{{"name", call.name}, {"arguments", call.arguments}};
}

void from_json(const nlohmann::json& j, ToolCallPayload& call)
{
    j.at("name").get_to(call.name);
    j.at("arguments").get_to(call.arguments);
}

void to_json(nlohmann::json& j, const Message& message)
{
    j = nlohmann::json{
        {"kind", to_string(message.kind)},
        {"content", message.content},
        {"token_count", message.token_count},
    };
    if (message.tool_call)
        j["tool_call"] = *message.tool_call;
}

void from_json(const nlohmann::json& j, Message& message)
{
    message.kind = message_kind_from_string(j.at("kind").get<std::string>());
    j.at("content").get_to(message.content);
    j.at("token_count").get_to(message.token_count);
    if (auto it = j.find("tool_call"); it != j.end() && !it->is_null())
        message.tool_call = it->get<ToolCallPayload>();
    else
        message.tool_call.reset();
    if (message.tool_call && message.kind != MessageKind::LlmResponse)
        throw std::invalid_argument("tool_call is only valid on llm_response messages");
}

std::size_t MessageBuffer::token_total() const
{
    return sum_tokens(pending);
}

ContextWindow::ContextWindow(std::size_t budget_c, std::size_t margin_b)
    : budget_c_(budget_c), margin_b_(margin_b)
{
    if (budget_c_ == 0 || margin_b_ == 0 || margin_b_ >= budget_c_)
        throw std::invalid_argument("context window requires 0 < margin_b < budget_c");
}

std::size_t ContextWindow::token_total() const
{
    return sum_tokens(messages_);
}

void ContextWindow::push_back(Message message)
{
    messages_.push_back(std::move(message));
}

void ContextWindow::append(const MessageBuffer& buffer)
{
    messages_.insert(messages_.end(), buffer.pending.begin(), buffer.pending.end());
}

void ContextWindow::erase(std::size_t index)
{
    if (index >= messages_.size())
        throw std::out_of_range("context window index out of range");
    messages_.erase(messages_.begin() + static_cast<std::ptrdiff_t>(index));
}

std::size_t token_length(const ContextWindow& window, const MessageBuffer& buffer)
{
    return window.token_total() + buffer.token_total();
}

bool would_exceed(const ContextWindow& window, const MessageBuffer& buffer)
{
    return token_length(window, buffer) > window.budget();
}

ContextWindow unwind_to_margin(ContextWindow window)
{
    if (window.empty())
        throw std::invalid_argument("unwind_to_margin requires a non-empty window");

    auto total = window.token_total();
    std::size_t cursor = 0;
    while (total > window.margin())
    {
        while (cursor < window.size() && window.messages()[cursor].kind == MessageKind::System)
            ++cursor;
        if (cursor == window.size())
        {
            throw UnwindImpossible("pinned system messages (" + std::to_string(total) +
                                   " tokens) exceed the unwind margin of " +
                                   std::to_string(window.margin()));
        }
        total -= window.messages()[cursor].token_count;
        window.erase(cursor);
    }
    return window;
}

} // namespace l2mac
