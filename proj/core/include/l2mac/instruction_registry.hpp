#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "l2mac/messages.hpp"

namespace l2mac {

enum class InstructionStatus
{
    Pending,
    InProgress,
    Done,
    Failed,
};

std::string_view to_string(InstructionStatus status);

struct Instruction
{
    std::size_t index = 0;
    std::string text;
    InstructionStatus status = InstructionStatus::Pending;
};

enum class ProgramOrigin
{
    Bootstrapped,
    UserProvided,
};

std::string_view to_string(ProgramOrigin origin);

/// The instruction registry: a fixed, ordered list of instructions consumed
/// front to back. Length never changes once built.
class PromptProgram
{
public:
    PromptProgram() = default;
    PromptProgram(std::vector<std::string> steps, ProgramOrigin origin);

    std::size_t size() const noexcept { return instructions_.size(); }
    bool empty() const noexcept { return instructions_.empty(); }
    ProgramOrigin origin() const noexcept { return origin_; }
    const std::vector<Instruction>& instructions() const noexcept { return instructions_; }
    const Instruction& at(std::size_t index) const { return instructions_.at(index); }

    bool has_pending() const;
    std::size_t count(InstructionStatus status) const;

    /// Marks the lowest-index Pending instruction InProgress and returns it.
    /// Throws ProgramExhausted when nothing is pending.
    const Instruction& pop_front();

    /// InProgress -> Done / Failed. Any other transition throws std::logic_error.
    void mark_done(std::size_t index);
    void mark_failed(std::size_t index);

    /// {"origin": ..., "steps": [...]} as written to prompt_program.json.
    nlohmann::json dump() const;

private:
    void transition(std::size_t index, InstructionStatus to);

    std::vector<Instruction> instructions_;
    ProgramOrigin origin_ = ProgramOrigin::UserProvided;
};

inline constexpr std::string_view kBootstrapToolName = "provide_detailed_sub_task_steps_for_sub_agents";
inline constexpr std::size_t kRecommendedMaxSteps = 10;

/// Turns the bootstrap tool call into a program. Step texts are kept verbatim.
/// Throws MalformedToolCall or EmptyProgram.
PromptProgram parse_bootstrap_response(const Message& response);

} // namespace l2mac
