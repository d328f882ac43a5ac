#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "l2mac/evaluator.hpp"
#include "l2mac/file_store.hpp"
#include "l2mac/instruction_registry.hpp"
#include "l2mac/llm_backend.hpp"
#include "l2mac/messages.hpp"
#include "l2mac/process_runner.hpp"
#include "l2mac/trace.hpp"

namespace l2mac {

struct RunConfig
{
    std::size_t budget_c = 8192;
    std::size_t margin_b = 4096;
    std::size_t r_max = 30;
    double temp_init = 0.01;
    double temp_step = 0.1;
    double temp_cap = 1.0;
    std::string model_id = "gpt-4-0613";
    std::int64_t seed = 0;
    /// Per-response cap on tool and evaluator output.
    std::size_t max_output_tokens = 8000;
    std::chrono::seconds process_timeout{120};
    EvalConfig eval;

    /// Throws ConfigError with an actionable message.
    void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, RunConfig& c);

enum class Phase
{
    Bootstrap,
    LoadInstruction,
    AwaitLlm,
    Dispatching,
    Evaluating,
    Summarizing,
    Halted,
    FailedRun,
};

std::string_view to_string(Phase phase);

enum class ResetReason
{
    Overflow,
    InstructionDone,
};

std::string_view to_string(ResetReason reason);

struct CuState
{
    Phase phase = Phase::Bootstrap;
    std::optional<Instruction> current;
    ContextWindow window;
    MessageBuffer buffer;
    std::size_t retries_this_instruction = 0;
    double temperature = 0.01;
    std::optional<Message> last_summary;

    /// Consecutive identical response pairs seen; drives the temperature.
    std::size_t repeat_level = 0;
    std::optional<Message> previous_response;
    std::optional<Message> latest_response;
    /// Half-margin cap on any single file written during this instruction.
    std::optional<std::size_t> max_file_tokens;
    bool instruction_done = false;

    explicit CuState(const RunConfig& config) : window(config.budget_c, config.margin_b), temperature(config.temp_init) {}
};

/// temp_init + level * temp_step, capped, rounded to kill floating drift.
double temperature_for_level(std::size_t level, const RunConfig& config);

/// Compares the two latest responses. Identical: one step up the ladder.
/// Different: back to temp_init. Returns true when the temperature changed.
bool detect_loop_and_anneal(CuState& state, const RunConfig& config);

enum class RunStatus
{
    Completed,
    Failed,
};

struct RunOutcome
{
    RunStatus status = RunStatus::Failed;
    std::string reason;
    PromptProgram program;
    std::size_t turns = 0;
    std::optional<EvaluatorReport> final_report;

    bool completed() const noexcept { return status == RunStatus::Completed; }
};

/// Callbacks for artifacts and invariant checks.
struct RunHooks
{
    /// Called once the prompt program exists, before it executes.
    std::function<void(const PromptProgram&)> program_ready;
    /// Called after every transition with its trace event type.
    std::function<void(const CuState&, std::string_view)> after_transition;
};

/// The control unit: bootstraps a prompt program, then drives the LLM through
/// it one instruction at a time, keeping the window within budget.
class ControlUnit
{
public:
    ControlUnit(RunConfig config, LlmBackend& backend, FileStore& store, Evaluator& evaluator,
                const ProcessRunner& runner, RunTrace& trace, RunHooks hooks = {});

    /// Full run. Never throws for in-run failures; they become Failed.
    RunOutcome run(std::string_view task_prompt, std::optional<PromptProgram> preset = std::nullopt);

    /// Asks for a prompt program, retrying malformed answers up to r_max
    /// times. Throws BootstrapFailed.
    PromptProgram bootstrap(std::string_view task_prompt);

    /// Loads the next instruction into a fresh window.
    void load_instruction(const Instruction& instruction);

    /// One dialog turn. Returns true once the instruction is done.
    bool execute_turn();

    /// Summarizes, then rebuilds the window. Throws RetriesExhausted when an
    /// overflow would exceed r_max restarts.
    void summarize_and_reset(ResetReason reason);

    const CuState& state() const noexcept { return state_; }
    const RunConfig& config() const noexcept { return config_; }
    std::size_t turns() const noexcept { return turns_; }

private:
    Message call_llm(const std::vector<Message>& messages, const std::vector<ToolSchema>& tools, Phase phase);
    void record(std::string_view event_type, std::optional<Message> message = std::nullopt,
                std::optional<ToolCallPayload> tool_call = std::nullopt,
                std::optional<EvaluatorReport> report = std::nullopt, std::optional<nlohmann::json> detail = std::nullopt);
    Message control(std::string content) const;
    std::vector<std::string> function_names() const;
    ContextWindow load_window(const Instruction& instruction, const std::optional<Message>& summary);
    std::size_t output_allowance() const;
    void evaluate_into_buffer();
    nlohmann::json window_shape() const;

    RunConfig config_;
    LlmBackend& backend_;
    FileStore& store_;
    Evaluator& evaluator_;
    const ProcessRunner& runner_;
    RunTrace& trace_;
    RunHooks hooks_;
    CuState state_;
    Message system_;
    std::vector<ToolSchema> tools_;
    std::size_t turns_ = 0;
    bool last_clean_ = false;
    std::optional<EvaluatorReport> last_report_;
};

} // namespace l2mac
