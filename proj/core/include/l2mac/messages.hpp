#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace l2mac {

enum class MessageKind
{
    System,
    User,
    LlmResponse,
    FunctionResponse,
    Control,
};

std::string_view to_string(MessageKind kind);
MessageKind message_kind_from_string(std::string_view name);

/// Function call requested by the LLM. Arguments stay raw text so malformed
/// provider JSON can be fed back to the model instead of failing transport.
struct ToolCallPayload
{
    std::string name;
    std::string arguments;

    bool operator==(const ToolCallPayload&) const = default;
};

/// Counts tokens the way a backend's model does. Must be deterministic.
class Tokenizer
{
public:
    virtual ~Tokenizer() = default;
    virtual std::size_t count(std::string_view text) const = 0;
};

/// ceil(characters / 4). Characters are counted as bytes.
class QuarterCharTokenizer final : public Tokenizer
{
public:
    std::size_t count(std::string_view text) const override;
};

struct Message
{
    MessageKind kind = MessageKind::User;
    std::string content;
    std::optional<ToolCallPayload> tool_call;
    std::size_t token_count = 0;

    bool operator==(const Message&) const = default;

    /// Text the tokenizer sees: content, then tool name and raw arguments.
    std::string counted_text() const;
};

/// Builds a message with its token count cached. Throws std::invalid_argument
/// when a tool call is attached to anything but an LLM response.
Message make_message(MessageKind kind, std::string content, const Tokenizer& tokenizer,
                     std::optional<ToolCallPayload> tool_call = std::nullopt);

void to_json(nlohmann::json& j, const ToolCallPayload& call);
void from_json(const nlohmann::json& j, ToolCallPayload& call);
void to_json(nlohmann::json& j, const Message& message);
void from_json(const nlohmann::json& j, Message& message);

/// Messages produced during one dialog turn, not yet committed to the window.
struct MessageBuffer
{
    std::vector<Message> pending;

    void push(Message message) { pending.push_back(std::move(message)); }
    void clear() { pending.clear(); }
    bool empty() const { return pending.empty(); }
    std::size_t token_total() const;
};

/// The bounded dialog fed to the LLM each turn.
class ContextWindow
{
public:
    /// Requires 0 < margin_b < budget_c.
    ContextWindow(std::size_t budget_c, std::size_t margin_b);

    std::size_t budget() const noexcept { return budget_c_; }
    std::size_t margin() const noexcept { return margin_b_; }

    const std::vector<Message>& messages() const noexcept { return messages_; }
    bool empty() const noexcept { return messages_.empty(); }
    std::size_t size() const noexcept { return messages_.size(); }
    std::size_t token_total() const;

    void push_back(Message message);
    void append(const MessageBuffer& buffer);
    void clear() noexcept { messages_.clear(); }

    /// Removes the message at `index`. Used by unwinding.
    void erase(std::size_t index);

private:
    std::size_t budget_c_;
    std::size_t margin_b_;
    std::vector<Message> messages_;
};

std::size_t token_length(const ContextWindow& window, const MessageBuffer& buffer);

/// True iff the window plus the pending buffer is strictly over budget.
/// A total equal to the budget still fits.
bool would_exceed(const ContextWindow& window, const MessageBuffer& buffer);

/// Drops the oldest non-System messages until the window totals at most the
/// unwind margin. The System message is pinned; throws UnwindImpossible when
/// pinned messages alone exceed the margin.
ContextWindow unwind_to_margin(ContextWindow window);

} // namespace l2mac
