#include "l2mac/instruction_registry.hpp"

#include <algorithm>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "l2mac/errors.hpp"

namespace l2mac {

std::string_view to_string(InstructionStatus status)
{
    switch (status)
    {
    case InstructionStatus::Pending: return "pending";
    case InstructionStatus::InProgress: return "in_progress";
    case InstructionStatus::Done: return "done";
    case InstructionStatus::Failed: return "failed";
    }
    return "unknown";
}

std::string_view to_string(ProgramOrigin origin)
{
    return origin == ProgramOrigin::Bootstrapped ? "bootstrapped" : "user_provided";
}

PromptProgram::PromptProgram(std::vector<std::string> steps, ProgramOrigin origin) : origin_(origin)
{
    instructions_.reserve(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i)
        instructions_.push_back(Instruction{i, std::move(steps[i]), InstructionStatus::Pending});
}

bool PromptProgram::has_pending() const
{
    return count(InstructionStatus::Pending) > 0;
}

std::size_t PromptProgram::count(InstructionStatus status) const
{
    return static_cast<std::size_t>(std::count_if(instructions_.begin(), instructions_.end(),
                                                  [status](const auto& i) { return i.status == status; }));
}

const Instruction& PromptProgram::pop_front()
{
    auto it = std::find_if(instructions_.begin(), instructions_.end(),
                           [](const auto& i) { return i.status == InstructionStatus::Pending; });
    if (it == instructions_.end())
        throw ProgramExhausted("prompt program has no pending instructions");
    it->status = InstructionStatus::InProgress;
    return *it;
}

void PromptProgram::mark_done(std::size_t index)
{
    transition(index, InstructionStatus::Done);
}

void PromptProgram::mark_failed(std::size_t index)
{
    transition(index, InstructionStatus::Failed);
}

void PromptProgram::transition(std::size_t index, InstructionStatus to)
{
    auto& instruction = instructions_.at(index);
    if (instruction.status != InstructionStatus::InProgress)
    {
        throw std::logic_error("instruction " + std::to_string(index) + " cannot move from " +
                               std::string(to_string(instruction.status)) + " to " +
                               std::string(to_string(to)));
    }
    instruction.status = to;
}

nlohmann::json PromptProgram::dump() const
{
    auto steps = nlohmann::json::array();
    for (const auto& i : instructions_)
        steps.push_back(i.text);
    return {{"origin", to_string(origin_)}, {"steps", std::move(steps)}};
}

PromptProgram parse_bootstrap_response(const Message& response)
{
    if (response.kind != MessageKind::LlmResponse || !response.tool_call)
        throw MalformedToolCall("bootstrap response carries no function call");
    if (response.tool_call->name != kBootstrapToolName)
        throw MalformedToolCall("bootstrap response called '" + response.tool_call->name + "' instead of '" +
                                std::string(kBootstrapToolName) + "'");

    nlohmann::json args;
    try
    {
        args = nlohmann::json::parse(response.tool_call->arguments);
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw MalformedToolCall(std::string("bootstrap arguments are not valid JSON: ") + e.what());
    }

    auto steps_it = args.is_object() ? args.find("steps") : args.end();
    if (!args.is_object() || steps_it == args.end() || !steps_it->is_array())
        throw MalformedToolCall("bootstrap arguments must be an object with a \"steps\" array");

    std::vector<std::string> steps;
    steps.reserve(steps_it->size());
    for (const auto& step : *steps_it)
    {
        if (!step.is_string())
            throw MalformedToolCall("every bootstrap step must be a string");
        steps.push_back(step.get<std::string>());
    }
    if (steps.empty())
        throw EmptyProgram("bootstrap produced an empty steps array");
    if (steps.size() > kRecommendedMaxSteps)
        spdlog::warn("bootstrap produced {} steps (guidance asks for at most {})", steps.size(), kRecommendedMaxSteps);

    return PromptProgram(std::move(steps), ProgramOrigin::Bootstrapped);
}

} // namespace l2mac
