#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "l2mac/control_unit.hpp"
#include "l2mac/evaluator.hpp"
#include "l2mac/file_store.hpp"
#include "l2mac/llm_backend.hpp"
#include "l2mac/prompts.hpp"
#include "l2mac/tool_registry.hpp"
#include "l2mac/trace.hpp"

namespace l2mac::testing {

inline std::filesystem::path fixtures()
{
    return L2MAC_TEST_FIXTURES;
}

inline std::filesystem::path task_fixtures()
{
    return std::filesystem::path(L2MAC_TASK_FIXTURES) / "tasks";
}

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content)
{
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
}

class TempDir
{
public:
    TempDir()
    {
        auto pattern = (std::filesystem::temp_directory_path() / "l2mac-test-XXXXXX").string();
        if (!::mkdtemp(pattern.data()))
            throw std::runtime_error("mkdtemp failed");
        path_ = pattern;
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// In-process evaluator over file contents. A line containing UNDEFINED_NAME
/// is a syntax error; in test_*.py files every "def test_" passes unless the
/// file contains "assert False", in which case the first one fails.
class FakeEvaluator final : public Evaluator
{
public:
    EvaluatorReport evaluate(const FileStore& store) override
    {
        ++calls;
        EvaluatorReport report;
        for (const auto& [path, content] : store.entries())
        {
            std::istringstream in(content);
            std::string line;
            std::size_t n = 0;
            while (std::getline(in, line))
            {
                ++n;
                if (line.find("UNDEFINED_NAME") != std::string::npos)
                    report.syntax_errors.push_back({path, n, "E0602", "Undefined variable 'UNDEFINED_NAME'"});
            }
            const auto slash = path.rfind('/');
            const auto base = slash == std::string::npos ? path : path.substr(slash + 1);
            if (base.rfind("test_", 0) != 0)
                continue;
            std::size_t tests = 0;
            for (auto pos = content.find("def test_"); pos != std::string::npos; pos = content.find("def test_", pos + 1))
                ++tests;
            const bool failing = content.find("assert False") != std::string::npos && tests > 0;
            report.tests_failed += failing ? 1 : 0;
            report.tests_passed += failing ? tests - 1 : tests;
        }
        if (!report.is_clean())
            report.raw_output = "===== fake evaluator =====\n" + std::to_string(report.tests_failed) + " failed\n";
        return report;
    }

    std::size_t calls = 0;
};

/// Structural checks applied after every control-unit transition.
struct InvariantLog
{
    std::size_t transitions = 0;
    std::size_t budget_violations = 0;
    std::size_t overflow_resets = 0;
    std::size_t advance_resets = 0;
    std::size_t instruction_loads = 0;
    std::vector<std::string> shape_violations;
};

inline RunHooks invariant_hooks(InvariantLog& log, const FileStore& store, const RunConfig& config)
{
    RunHooks hooks;
    hooks.after_transition = [&log, &store, config](const CuState& state, std::string_view event) {
        ++log.transitions;
        if (state.window.token_total() > config.budget_c)
            ++log.budget_violations;

        const auto& w = state.window.messages();
        const auto names = tool_names(execution_tool_schemas());
        auto fail = [&](const std::string& why) {
            log.shape_violations.push_back(std::string(event) + ": " + why);
        };
        if (event == "window_reset")
        {
            if (!state.last_summary)
                return fail("no summary after reset");
            if (state.buffer.pending.size() != 0)
                fail("buffer not flushed");
            if (state.instruction_done)
            {
                ++log.advance_resets;
                if (w.size() != 2 || w[0].kind != MessageKind::System || w[1] != *state.last_summary)
                    fail("advance window is not {M_s, M_rs}");
                if (w[0].content != prompts::system_message())
                    fail("system message altered");
            }
            else
            {
                ++log.overflow_resets;
                if (w.size() != 3)
                    return fail("overflow window has " + std::to_string(w.size()) + " messages");
                if (w[0].kind != MessageKind::System || w[0].content != prompts::system_message())
                    fail("first message is not M_s");
                if (w[1] != *state.last_summary)
                    fail("second message is not M_rs");
                const auto expected = prompts::cycle_start(state.current->text, store.list_files(),
                                                           state.last_summary->content, names);
                if (w[2].kind != MessageKind::Control || w[2].content != expected)
                    fail("third message is not the instruction prefix");
            }
        }
        else if (event == "instruction_start")
        {
            ++log.instruction_loads;
            const std::size_t expected_size = state.last_summary ? 3 : 2;
            if (w.size() != expected_size)
                return fail("loaded window has " + std::to_string(w.size()) + " messages");
            if (w[0].kind != MessageKind::System)
                fail("first message is not M_s");
            if (state.last_summary && w[1] != *state.last_summary)
                fail("second message is not M_rs");
            const auto expected = prompts::cycle_start(state.current->text, store.list_files(),
                                                       state.last_summary ? state.last_summary->content : "", names);
            if (w.back().content != expected)
                fail("last message is not the instruction prefix");
        }
    };
    return hooks;
}

struct ScriptedRun
{
    RunOutcome outcome;
    std::vector<TraceEvent> events;
    std::string store_hash;
    std::map<std::string, std::string> files;
    InvariantLog log;
    std::size_t script_remaining = 0;
};

/// Runs a script through the control unit. Without a workspace the store is
/// memory-only, so tool calls that need processes are rejected in-band.
inline ScriptedRun run_script(std::vector<ScriptedEntry> script, const RunConfig& config, Evaluator& evaluator,
                              std::string_view task = "", std::optional<PromptProgram> preset = std::nullopt,
                              std::optional<std::filesystem::path> workspace = std::nullopt,
                              const std::optional<std::filesystem::path>& trace_file = std::nullopt)
{
    ScriptedBackend backend(std::move(script));
    FileStore store(backend.tokenizer(), workspace);
    ProcessRunner runner({"python3"});
    std::unique_ptr<RunTrace> trace = trace_file ? std::make_unique<RunTrace>(*trace_file) : std::make_unique<RunTrace>();
    ScriptedRun result;
    ControlUnit cu(config, backend, store, evaluator, runner, *trace, invariant_hooks(result.log, store, config));
    result.outcome = cu.run(task, std::move(preset));
    result.events = trace->events();
    result.store_hash = store.content_hash();
    result.files = store.entries();
    result.script_remaining = backend.remaining();
    return result;
}

inline std::vector<ScriptedEntry> load_script(const std::string& name)
{
    return ScriptedBackend::parse_script(read_file(fixtures() / "golden" / name));
}

inline std::vector<const TraceEvent*> events_of(const std::vector<TraceEvent>& events, std::string_view type)
{
    std::vector<const TraceEvent*> out;
    for (const auto& e : events)
    {
        if (e.event_type == type)
            out.push_back(&e);
    }
    return out;
}

} // namespace l2mac::testing
