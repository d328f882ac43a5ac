#include "l2mac/control_unit.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "l2mac/errors.hpp"
#include "l2mac/prompts.hpp"
#include "l2mac/tool_registry.hpp"

namespace l2mac {

namespace {

std::size_t utf8_floor(std::string_view text, std::size_t len)
{
    while (len > 0 && len < text.size() && (static_cast<unsigned char>(text[len]) & 0xC0) == 0x80)
        --len;
    return len;
}

/// Summary text to carry forward. A summary that came back as a function
/// call still carries its text in the arguments.
std::string summary_text(const Message& response)
{
    if (!response.content.empty() || !response.tool_call)
        return response.content;
    return response.tool_call->arguments;
}

} // namespace

void RunConfig::validate() const
{
    if (budget_c == 0)
        throw ConfigError("budget_c must be positive");
    if (margin_b == 0 || margin_b >= budget_c)
        throw ConfigError("margin_b must satisfy 0 < margin_b < budget_c (got margin_b=" + std::to_string(margin_b) +
                          ", budget_c=" + std::to_string(budget_c) + ")");
    if (r_max == 0)
        throw ConfigError("r_max must be at least 1");
    if (!(temp_init >= 0.0 && temp_init <= temp_cap && temp_cap <= 1.0))
        throw ConfigError("temperatures must satisfy 0 <= temp_init <= temp_cap <= 1");
    if (!(temp_step > 0.0))
        throw ConfigError("temp_step must be positive");
    if (max_output_tokens == 0)
        throw ConfigError("max_output_tokens must be positive");
    if (model_id.empty())
        throw ConfigError("model_id must not be empty");
}

void to_json(nlohmann::json& j, const RunConfig& c)
{
    j = {{"budget_c", c.budget_c},
         {"margin_b", c.margin_b},
         {"r_max", c.r_max},
         {"temp_init", c.temp_init},
         {"temp_step", c.temp_step},
         {"temp_cap", c.temp_cap},
         {"model_id", c.model_id},
         {"seed", c.seed},
         {"max_output_tokens", c.max_output_tokens},
         {"process_timeout_s", c.process_timeout.count()},
         {"eval", c.eval}};
}

void from_json(const nlohmann::json& j, RunConfig& c)
{
    try
    {
        c.budget_c = j.value("budget_c", c.budget_c);
        // The margin follows the budget unless pinned.
        c.margin_b = j.contains("margin_b") ? j.at("margin_b").get<std::size_t>() : c.budget_c / 2;
        c.r_max = j.value("r_max", c.r_max);
        c.temp_init = j.value("temp_init", c.temp_init);
        c.temp_step = j.value("temp_step", c.temp_step);
        c.temp_cap = j.value("temp_cap", c.temp_cap);
        c.model_id = j.value("model_id", c.model_id);
        c.seed = j.value("seed", c.seed);
        c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
        c.process_timeout =
            std::chrono::seconds(j.value("process_timeout_s", static_cast<long long>(c.process_timeout.count())));
        if (j.contains("eval"))
            j.at("eval").get_to(c.eval);
    }
    catch (const nlohmann::json::exception& e)
    {
        throw ConfigError(std::string("bad run config: ") + e.what());
    }
}

std::string_view to_string(Phase phase)
{
    switch (phase)
    {
    case Phase::Bootstrap: return "Bootstrap";
    case Phase::LoadInstruction: return "LoadInstruction";
    case Phase::AwaitLlm: return "AwaitLlm";
    case Phase::Dispatching: return "Dispatching";
    case Phase::Evaluating: return "Evaluating";
    case Phase::Summarizing: return "Summarizing";
    case Phase::Halted: return "Halted";
    case Phase::FailedRun: return "FailedRun";
    }
    return "?";
}

std::string_view to_string(ResetReason reason)
{
    return reason == ResetReason::Overflow ? "overflow" : "instruction_done";
}

double temperature_for_level(std::size_t level, const RunConfig& config)
{
    const double raw = config.temp_init + static_cast<double>(level) * config.temp_step;
    const double capped = std::min(raw, config.temp_cap);
    return std::round(capped * 1e6) / 1e6;
}

bool detect_loop_and_anneal(CuState& state, const RunConfig& config)
{
    if (!state.previous_response || !state.latest_response)
        return false;
    const bool repeated = state.previous_response->content == state.latest_response->content &&
                          state.previous_response->tool_call == state.latest_response->tool_call;
    const double before = state.temperature;
    state.repeat_level = repeated ? state.repeat_level + 1 : 0;
    state.temperature = temperature_for_level(state.repeat_level, config);
    return state.temperature != before;
}

ControlUnit::ControlUnit(RunConfig config, LlmBackend& backend, FileStore& store, Evaluator& evaluator,
                         const ProcessRunner& runner, RunTrace& trace, RunHooks hooks)
    : config_(std::move(config)),
      backend_(backend),
      store_(store),
      evaluator_(evaluator),
      runner_(runner),
      trace_(trace),
      hooks_(std::move(hooks)),
      state_((config_.validate(), config_)),
      system_(make_message(MessageKind::System, std::string(prompts::system_message()), backend.tokenizer())),
      tools_(execution_tool_schemas())
{
}

Message ControlUnit::control(std::string content) const
{
    return make_message(MessageKind::Control, std::move(content), backend_.tokenizer());
}

std::vector<std::string> ControlUnit::function_names() const
{
    return tool_names(tools_);
}

void ControlUnit::record(std::string_view event_type, std::optional<Message> message,
                         std::optional<ToolCallPayload> tool_call, std::optional<EvaluatorReport> report,
                         std::optional<nlohmann::json> detail)
{
    TraceEvent e;
    e.turn = turns_;
    e.phase = std::string(to_string(state_.phase));
    e.event_type = std::string(event_type);
    e.message = std::move(message);
    e.tool_call = std::move(tool_call);
    e.evaluator_report = std::move(report);
    e.temperature = state_.temperature;
    e.retries = state_.retries_this_instruction;
    e.token_total = state_.window.token_total();
    e.detail = std::move(detail);
    trace_.record(std::move(e));
    if (hooks_.after_transition)
        hooks_.after_transition(state_, event_type);
}

nlohmann::json ControlUnit::window_shape() const
{
    auto shape = nlohmann::json::array();
    for (const auto& m : state_.window.messages())
        shape.push_back({{"kind", to_string(m.kind)}, {"tokens", m.token_count}});
    return shape;
}

Message ControlUnit::call_llm(const std::vector<Message>& messages, const std::vector<ToolSchema>& tools, Phase phase)
{
    state_.phase = phase;
    CompletionRequest request{messages, tools, state_.temperature, config_.model_id, config_.seed};
    auto response = backend_.complete(request);
    ++turns_;
    record("llm_response", response);
    return response;
}

PromptProgram ControlUnit::bootstrap(std::string_view task_prompt)
{
    state_.phase = Phase::Bootstrap;
    state_.retries_this_instruction = 0;
    ContextWindow window(config_.budget_c, config_.margin_b);
    window.push_back(system_);
    window.push_back(make_message(MessageKind::User, prompts::bootstrap_message(task_prompt), backend_.tokenizer()));
    if (window.token_total() > config_.budget_c)
        throw ConfigError("the bootstrap request needs " + std::to_string(window.token_total()) +
                          " tokens, more than budget_c=" + std::to_string(config_.budget_c));

    const auto tools = bootstrap_tool_schemas();
    std::string last_problem;
    for (std::size_t attempt = 0; attempt < config_.r_max; ++attempt)
    {
        const auto response = call_llm(window.messages(), tools, Phase::Bootstrap);
        try
        {
            return parse_bootstrap_response(response);
        }
        catch (const Error& e)
        {
            last_problem = e.what();
            state_.retries_this_instruction = attempt + 1;
            record("bootstrap_rejected", std::nullopt, std::nullopt, std::nullopt, nlohmann::json{{"problem", last_problem}});
        }
    }
    throw BootstrapFailed("no usable prompt program after " + std::to_string(config_.r_max) +
                          " attempts; last problem: " + last_problem);
}

ContextWindow ControlUnit::load_window(const Instruction& instruction, const std::optional<Message>& summary)
{
    const auto& tk = backend_.tokenizer();
    const auto files = store_.list_files();
    const auto names = function_names();
    auto build = [&](std::string_view text) {
        ContextWindow w(config_.budget_c, config_.margin_b);
        w.push_back(system_);
        if (summary)
            w.push_back(make_message(MessageKind::LlmResponse, std::string(text), tk));
        w.push_back(control(prompts::cycle_start(instruction.text, files, text, names)));
        return w;
    };

    const std::string full = summary ? summary->content : std::string{};
    auto window = build(full);
    if (window.token_total() <= config_.budget_c)
        return window;

    // The summary is the only part that can give way.
    std::size_t lo = 0;
    std::size_t hi = full.size();
    while (lo < hi)
    {
        const auto mid = utf8_floor(full, lo + (hi - lo + 1) / 2);
        if (mid <= lo)
        {
            hi = lo;
            break;
        }
        if (build(std::string_view(full).substr(0, mid)).token_total() <= config_.budget_c)
            lo = mid;
        else
            hi = mid - 1;
    }
    window = build(std::string_view(full).substr(0, lo));
    if (window.token_total() > config_.budget_c)
        throw ConfigError("instruction " + std::to_string(instruction.index) + " does not fit in budget_c=" +
                          std::to_string(config_.budget_c));
    spdlog::warn("summary truncated from {} to {} bytes to fit the window", full.size(), lo);
    return window;
}

void ControlUnit::load_instruction(const Instruction& instruction)
{
    state_.phase = Phase::LoadInstruction;
    state_.current = instruction;
    state_.retries_this_instruction = 0;
    state_.repeat_level = 0;
    state_.previous_response.reset();
    state_.latest_response.reset();
    state_.temperature = config_.temp_init;
    state_.instruction_done = false;
    state_.buffer.clear();

    state_.window = load_window(instruction, state_.last_summary);
    if (state_.last_summary)
        state_.last_summary = state_.window.messages()[1];
    state_.max_file_tokens = (config_.budget_c - state_.window.token_total()) / 2;
    record("instruction_start", state_.window.messages().back(), std::nullopt, std::nullopt,
           nlohmann::json{{"index", instruction.index},
                          {"text", instruction.text},
                          {"max_file_tokens", *state_.max_file_tokens},
                          {"window", window_shape()}});
}

std::size_t ControlUnit::output_allowance() const
{
    const auto used = token_length(state_.window, state_.buffer);
    const auto remaining = used >= config_.budget_c ? 0 : config_.budget_c - used;
    return std::max<std::size_t>(1, std::min(config_.max_output_tokens, remaining));
}

void ControlUnit::evaluate_into_buffer()
{
    state_.phase = Phase::Evaluating;
    auto report = evaluator_.evaluate(store_);
    last_clean_ = report.is_clean();
    last_report_ = report;
    record("evaluation", std::nullopt, std::nullopt, report);
    if (auto feedback = render_error_message(report, backend_.tokenizer(), output_allowance()))
    {
        state_.buffer.push(*feedback);
        record("feedback", *feedback);
    }
}

bool ControlUnit::execute_turn()
{
    if (!state_.current)
        throw std::logic_error("execute_turn without a loaded instruction");

    const auto response = call_llm(state_.window.messages(), tools_, Phase::AwaitLlm);
    state_.previous_response = std::move(state_.latest_response);
    state_.latest_response = response;
    const double before = state_.temperature;
    if (detect_loop_and_anneal(state_, config_))
        record("anneal", std::nullopt, std::nullopt, std::nullopt,
               nlohmann::json{{"from", before}, {"to", state_.temperature}, {"repeat_level", state_.repeat_level}});
    state_.buffer.push(response);

    bool done = false;
    if (response.tool_call)
    {
        state_.phase = Phase::Dispatching;
        const auto& tk = backend_.tokenizer();
        DispatchResult result{rejection_message(response.tool_call->name, "not dispatched", tk)};
        try
        {
            const auto call = parse_tool_call(response, tools_);
            DispatchContext ctx{store_, runner_, "python3", config_.process_timeout, output_allowance(), state_.max_file_tokens};
            result = dispatch(call, ctx);
        }
        catch (const UnknownTool& e)
        {
            result = {rejection_message(response.tool_call->name, e.what(), tk)};
        }
        catch (const MalformedArguments& e)
        {
            result = {rejection_message(response.tool_call->name, e.what(), tk)};
        }
        state_.buffer.push(result.response);
        record("function_response", result.response, response.tool_call);

        if (result.store_mutated)
            evaluate_into_buffer();
        if (result.step_complete)
        {
            if (!result.store_mutated)
                evaluate_into_buffer();
            if (last_clean_)
                done = true;
            else
                record("completion_refused");
        }
    }

    if (done)
    {
        state_.instruction_done = true;
        summarize_and_reset(ResetReason::InstructionDone);
        return true;
    }

    state_.phase = Phase::AwaitLlm;
    auto cycle = control(prompts::cycle_continue(state_.current->text, store_.list_files(), function_names()));
    state_.buffer.push(cycle);
    record("cycle_message", cycle);

    if (would_exceed(state_.window, state_.buffer))
    {
        summarize_and_reset(ResetReason::Overflow);
        return false;
    }
    state_.window.append(state_.buffer);
    state_.buffer.clear();
    record("window_commit");
    return false;
}

void ControlUnit::summarize_and_reset(ResetReason reason)
{
    state_.phase = Phase::Summarizing;
    if (reason == ResetReason::Overflow && state_.retries_this_instruction + 1 > config_.r_max)
    {
        record("retries_exhausted", std::nullopt, std::nullopt, std::nullopt,
               nlohmann::json{{"pending_tokens", token_length(state_.window, state_.buffer)}});
        throw RetriesExhausted("instruction " + std::to_string(state_.current ? state_.current->index : 0) +
                               " overflowed the context window after " + std::to_string(config_.r_max) + " restarts");
    }

    const auto request = control(std::string(reason == ResetReason::Overflow ? prompts::summary_for_restart()
                                                                             : prompts::summary_for_next_step()));
    // Unwind far enough that the summary request itself still fits.
    auto margin = config_.margin_b;
    if (margin + request.token_count > config_.budget_c)
        margin = config_.budget_c > request.token_count ? config_.budget_c - request.token_count : 1;
    margin = std::max<std::size_t>(1, std::min(margin, config_.budget_c - 1));

    ContextWindow transcript(config_.budget_c, margin);
    for (const auto& m : state_.window.messages())
        transcript.push_back(m);
    transcript.append(state_.buffer);
    state_.buffer.clear();
    transcript = unwind_to_margin(std::move(transcript));
    transcript.push_back(request);
    record("summary_request", request, std::nullopt, std::nullopt,
           nlohmann::json{{"reason", to_string(reason)}, {"unwound_tokens", transcript.token_total()}});

    const auto response = call_llm(transcript.messages(), {}, Phase::Summarizing);
    const auto& tk = backend_.tokenizer();
    state_.last_summary = make_message(MessageKind::LlmResponse, summary_text(response), tk);

    if (reason == ResetReason::Overflow)
    {
        ++state_.retries_this_instruction;
        state_.repeat_level = 0;
        state_.previous_response.reset();
        state_.latest_response.reset();
        state_.temperature = config_.temp_init;
        state_.window = load_window(*state_.current, state_.last_summary);
        state_.last_summary = state_.window.messages()[1];
        state_.max_file_tokens = (config_.budget_c - state_.window.token_total()) / 2;
    }
    else
    {
        ContextWindow next(config_.budget_c, config_.margin_b);
        next.push_back(system_);
        auto summary = *state_.last_summary;
        if (system_.token_count + summary.token_count > config_.budget_c)
        {
            const auto room = config_.budget_c - system_.token_count;
            auto render = [](std::string_view shown) { return std::string(shown); };
            summary = make_message(MessageKind::LlmResponse, fit_to_tokens(summary.content, room, tk, render), tk);
            state_.last_summary = summary;
        }
        next.push_back(summary);
        state_.window = std::move(next);
    }
    state_.phase = reason == ResetReason::Overflow ? Phase::AwaitLlm : Phase::LoadInstruction;
    record("window_reset", std::nullopt, std::nullopt, std::nullopt,
           nlohmann::json{{"reason", to_string(reason)}, {"window", window_shape()}});
}

RunOutcome ControlUnit::run(std::string_view task_prompt, std::optional<PromptProgram> preset)
{
    RunOutcome outcome;
    nlohmann::json start{{"config", config_}, {"task_prompt", std::string(task_prompt)}};
    if (preset)
        start["preset_program"] = preset->dump();
    record("run_start", std::nullopt, std::nullopt, std::nullopt, start);

    PromptProgram program;
    try
    {
        program = preset ? std::move(*preset) : bootstrap(task_prompt);
        if (program.size() > kRecommendedMaxSteps)
            spdlog::warn("prompt program has {} steps", program.size());
        state_.retries_this_instruction = preset ? 0 : state_.retries_this_instruction;
        record("program", std::nullopt, std::nullopt, std::nullopt, program.dump());
        if (hooks_.program_ready)
            hooks_.program_ready(program);

        while (program.has_pending())
        {
            const auto& instruction = program.pop_front();
            load_instruction(instruction);
            while (!execute_turn())
            {
            }
            program.mark_done(instruction.index);
            state_.current.reset();
            record("instruction_done", std::nullopt, std::nullopt, std::nullopt,
                   nlohmann::json{{"index", instruction.index}});
        }

        state_.phase = Phase::Evaluating;
        auto report = evaluator_.evaluate(store_);
        outcome.final_report = report;
        record("final_evaluation", std::nullopt, std::nullopt, report);
        if (report.is_clean())
        {
            outcome.status = RunStatus::Completed;
        }
        else
        {
            outcome.status = RunStatus::Failed;
            outcome.reason = "final evaluation is not clean";
        }
    }
    catch (const std::exception& e)
    {
        outcome.status = RunStatus::Failed;
        outcome.reason = e.what();
        if (state_.current)
        {
            try
            {
                program.mark_failed(state_.current->index);
            }
            catch (const std::logic_error&)
            {
            }
        }
    }

    state_.phase = outcome.completed() ? Phase::Halted : Phase::FailedRun;
    outcome.program = std::move(program);
    outcome.turns = turns_;
    nlohmann::json end{{"status", outcome.completed() ? "completed" : "failed"},
                       {"instructions_done", outcome.program.count(InstructionStatus::Done)},
                       {"instructions_total", outcome.program.size()},
                       {"store_hash", store_.content_hash()}};
    if (!outcome.reason.empty())
        end["reason"] = outcome.reason;
    record("run_end", std::nullopt, std::nullopt, std::nullopt, end);
    if (!outcome.completed())
        spdlog::error("run failed: {}", outcome.reason);
    return outcome;
}

} // namespace l2mac
