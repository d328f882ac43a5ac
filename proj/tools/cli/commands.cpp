#include "commands.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "l2mac/errors.hpp"
#include "l2mac/metrics.hpp"

#ifndef L2MAC_DEFAULT_FIXTURE_DIR
#define L2MAC_DEFAULT_FIXTURE_DIR "fixtures"
#endif

namespace fs = std::filesystem;

namespace l2mac::cli {

namespace {

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_json(const fs::path& path, const nlohmann::json& j)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw ConfigError("cannot write " + path.string());
    out << j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
}

std::string utc_now(const char* format = "%Y-%m-%dT%H:%M:%SZ")
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    ::gmtime_r(&now, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, format);
    return ss.str();
}

/// Scratch directory removed on scope exit.
class TempDir
{
public:
    explicit TempDir(const char* prefix)
    {
        auto pattern = (fs::temp_directory_path() / (std::string(prefix) + "-XXXXXX")).string();
        if (!::mkdtemp(pattern.data()))
            throw std::runtime_error("cannot create a temporary directory");
        path_ = pattern;
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const noexcept { return path_; }

private:
    fs::path path_;
};

PromptProgram load_program(const fs::path& path)
{
    nlohmann::json j;
    try
    {
        j = nlohmann::json::parse(read_text(path));
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw ConfigError("program file " + path.string() + " is not JSON: " + e.what());
    }
    const auto& steps = j.is_object() ? j.value("steps", nlohmann::json::array()) : j;
    if (!steps.is_array() || steps.empty())
        throw ConfigError("program file " + path.string() + " needs a non-empty \"steps\" array");
    std::vector<std::string> texts;
    for (const auto& s : steps)
    {
        if (!s.is_string())
            throw ConfigError("program steps must be strings");
        texts.push_back(s.get<std::string>());
    }
    return PromptProgram(std::move(texts), ProgramOrigin::UserProvided);
}

ProcessRunner make_runner(const EvalConfig& eval)
{
    std::set<std::string> allowed{"python3", eval.checker_cmd};
    if (!eval.test_cmd.empty())
        allowed.insert(eval.test_cmd.front());
    return ProcessRunner(std::move(allowed));
}

std::string sanitize_id(std::string id)
{
    for (auto& c : id)
    {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.')
            c = '_';
    }
    return id.empty() ? "task" : id;
}

struct RunPlan
{
    TaskSource task;
    std::optional<PromptProgram> program;
    std::optional<std::vector<ScriptedEntry>> script;
    std::optional<ChatClientConfig> wire;
    std::string stamp;
};

RunRecord run_one(const RunOptions& options, const RunPlan& plan, std::size_t index)
{
    RunConfig config = options.config;
    config.seed = options.config.seed + static_cast<std::int64_t>(index);

    RunRecord record;
    if (options.run_id)
        record.run_id = options.seeds > 1 ? *options.run_id + "-s" + std::to_string(config.seed) : *options.run_id;
    else
        record.run_id = sanitize_id(plan.task.id) + "-" + plan.stamp + "-s" + std::to_string(config.seed);
    record.run_dir = options.out / record.run_id;
    if (fs::exists(record.run_dir) && !fs::is_empty(record.run_dir))
        throw ConfigError("run directory already exists: " + record.run_dir.string());
    const auto workspace = record.run_dir / "workspace";
    fs::create_directories(workspace);

    nlohmann::json manifest{{"run_id", record.run_id},
                            {"task", {{"id", plan.task.id}, {"path", plan.task.path}}},
                            {"backend", options.backend},
                            {"config", config},
                            {"started_at", utc_now()},
                            {"status", "running"},
                            {"trace", "trace.jsonl"},
                            {"workspace", "workspace"}};
    if (options.trace)
        manifest["script"] = fs::absolute(*options.trace).string();
    const auto manifest_path = record.run_dir / "manifest.json";
    write_json(manifest_path, manifest);

    std::unique_ptr<LlmBackend> backend;
    if (plan.script)
        backend = std::make_unique<ScriptedBackend>(*plan.script);
    else
        backend = std::make_unique<ChatCompletionClient>(*plan.wire);

    FileStore store(backend->tokenizer(), workspace);
    auto runner = make_runner(config.eval);
    CommandEvaluator evaluator(config.eval, runner);
    RunTrace trace(record.run_dir / "trace.jsonl");
    RunHooks hooks;
    hooks.program_ready = [&](const PromptProgram& program) {
        write_json(record.run_dir / "prompt_program.json", program.dump());
    };
    ControlUnit cu(config, *backend, store, evaluator, runner, trace, hooks);
    record.outcome = cu.run(plan.task.prompt, plan.program);

    manifest["finished_at"] = utc_now();
    manifest["status"] = record.outcome.completed() ? "completed" : "failed";
    if (!record.outcome.reason.empty())
        manifest["reason"] = record.outcome.reason;
    manifest["turns"] = record.outcome.turns;
    manifest["instructions_done"] = record.outcome.program.count(InstructionStatus::Done);
    manifest["instructions_total"] = record.outcome.program.size();
    manifest["store_hash"] = store.content_hash();
    write_json(manifest_path, manifest);
    return record;
}

std::vector<fs::path> find_reports(const fs::path& input)
{
    std::vector<fs::path> found;
    if (fs::is_directory(input))
    {
        for (const auto& entry : fs::recursive_directory_iterator(input))
        {
            if (entry.is_regular_file() && entry.path().filename() == "report.json")
                found.push_back(entry.path());
        }
        std::sort(found.begin(), found.end());
    }
    else
    {
        found.push_back(input);
    }
    return found;
}

} // namespace

fs::path fixture_dir()
{
    if (const char* env = std::getenv("L2MAC_FIXTURES"); env && *env)
        return env;
    return L2MAC_DEFAULT_FIXTURE_DIR;
}

TaskSource resolve_task(const std::string& task)
{
    TaskSource source;
    if (task.empty())
    {
        source.id = "empty";
        return source;
    }
    const fs::path as_path(task);
    if (fs::is_regular_file(as_path))
    {
        source.id = as_path.stem().string();
        source.path = fs::absolute(as_path).string();
        source.prompt = read_text(as_path);
        return source;
    }
    const auto fixture = fixture_dir() / "tasks" / (task + ".md");
    if (fs::is_regular_file(fixture))
    {
        source.id = task;
        source.path = fixture.string();
        source.prompt = read_text(fixture);
        return source;
    }
    throw ConfigError("task \"" + task + "\" is neither a file nor a fixture id (looked for " + fixture.string() + ")");
}

std::vector<RunRecord> execute_runs(const RunOptions& options)
{
    options.config.validate();
    if (options.seeds == 0)
        throw ConfigError("--seeds must be at least 1");
    if (options.jobs == 0)
        throw ConfigError("--jobs must be at least 1");

    RunPlan plan;
    plan.task = resolve_task(options.task);
    plan.stamp = utc_now("%Y%m%dT%H%M%S");
    if (options.program)
        plan.program = load_program(*options.program);
    if (options.backend == "mock")
    {
        if (!options.trace)
            throw ConfigError("--backend mock needs --trace with a script or a recorded trace");
        plan.script = ScriptedBackend::parse_script(read_text(*options.trace));
    }
    else if (options.backend == "wire")
    {
        plan.wire = ChatCompletionClient::config_from_env();
        plan.wire->debug_wire = options.debug_wire;
    }
    else
    {
        throw ConfigError("unknown backend \"" + options.backend + "\" (expected mock or wire)");
    }

    {
        auto runner = make_runner(options.config.eval);
        try
        {
            CommandEvaluator(options.config.eval, runner).check_available();
        }
        catch (const EvaluatorUnavailable& e)
        {
            throw ConfigError(std::string("evaluator unavailable: ") + e.what());
        }
    }
    fs::create_directories(options.out);

    std::vector<std::optional<RunRecord>> records(options.seeds);
    std::vector<std::string> errors(options.seeds);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (auto i = next++; i < options.seeds; i = next++)
        {
            try
            {
                records[i] = run_one(options, plan, i);
            }
            catch (const std::exception& e)
            {
                errors[i] = e.what();
            }
        }
    };
    const auto jobs = std::min(options.jobs, options.seeds);
    std::vector<std::thread> pool;
    for (std::size_t j = 1; j < jobs; ++j)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();

    std::vector<RunRecord> out;
    for (std::size_t i = 0; i < options.seeds; ++i)
    {
        if (!errors[i].empty())
            throw ConfigError("seed " + std::to_string(options.config.seed + static_cast<std::int64_t>(i)) + ": " + errors[i]);
        out.push_back(std::move(*records[i]));
    }
    return out;
}

int cmd_run(const RunOptions& options, std::ostream& out)
{
    std::vector<RunRecord> records;
    try
    {
        records = execute_runs(options);
    }
    catch (const ConfigError& e)
    {
        out << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    bool all_completed = true;
    for (const auto& r : records)
    {
        out << r.run_id << ": " << (r.outcome.completed() ? "completed" : "failed") << " after " << r.outcome.turns
            << " LLM calls, " << r.outcome.program.count(InstructionStatus::Done) << "/" << r.outcome.program.size()
            << " instructions done";
        if (!r.outcome.reason.empty())
            out << " (" << r.outcome.reason << ")";
        out << "\n  " << r.run_dir.string() << '\n';
        all_completed = all_completed && r.outcome.completed();
    }
    return all_completed ? kExitOk : kExitFailed;
}

ReplayReport replay(const fs::path& trace_path, std::optional<fs::path> recorded_workspace)
{
    ReplayReport report;
    const auto loaded = RunTrace::load(trace_path);
    if (!loaded.complete)
        report.problem = "trace ends early: " + loaded.problem;
    if (loaded.events.empty() || loaded.events.front().event_type != "run_start" || !loaded.events.front().detail)
        throw TraceFormatError("trace does not start with a run_start event: " + trace_path.string());

    const auto& start = *loaded.events.front().detail;
    RunConfig config;
    start.at("config").get_to(config);
    const auto prompt = start.value("task_prompt", std::string{});
    std::optional<PromptProgram> preset;
    if (start.contains("preset_program"))
        preset = PromptProgram(start.at("preset_program").at("steps").get<std::vector<std::string>>(),
                               ProgramOrigin::UserProvided);

    std::vector<ScriptedEntry> entries;
    for (const auto& e : loaded.events)
    {
        if (e.event_type == "llm_response" && e.message)
            entries.push_back({e.message->content, e.message->tool_call, std::nullopt});
    }

    TempDir scratch("l2mac-replay");
    ScriptedBackend backend(std::move(entries));
    FileStore store(backend.tokenizer(), scratch.path());
    auto runner = make_runner(config.eval);
    CommandEvaluator evaluator(config.eval, runner);
    RunTrace fresh;
    // Stop the run at the first event that differs from the recording.
    bool aborted = false;
    fresh.set_observer([&](const TraceEvent& e) {
        const auto i = fresh.events().size() - 1;
        if (aborted || i >= loaded.events.size() || to_line(loaded.events[i]) == to_line(e))
            return;
        aborted = true;
        throw std::runtime_error("replay diverged at event " + std::to_string(i));
    });
    ControlUnit cu(config, backend, store, evaluator, runner, fresh);
    cu.run(prompt, preset);

    report.divergence = compare_traces(loaded.events, fresh.events());

    if (!recorded_workspace)
    {
        const auto sibling = trace_path.parent_path() / "workspace";
        if (fs::is_directory(sibling))
            recorded_workspace = sibling;
    }
    // A replay stopped early has no comparable workspace.
    if (recorded_workspace && !aborted)
    {
        const auto recorded = FileStore::open_directory(backend.tokenizer(), *recorded_workspace);
        const auto& a = recorded.entries();
        const auto& b = store.entries();
        for (const auto& [path, content] : a)
        {
            auto it = b.find(path);
            if (it == b.end())
                report.workspace_differences.push_back("missing in replay: " + path);
            else if (it->second != content)
                report.workspace_differences.push_back("content differs: " + path);
        }
        for (const auto& [path, content] : b)
        {
            if (!a.count(path))
                report.workspace_differences.push_back("extra in replay: " + path);
        }
    }
    report.identical = !report.divergence && report.workspace_differences.empty() && loaded.complete;
    return report;
}

int cmd_replay(const fs::path& trace_path, std::ostream& out)
{
    ReplayReport report;
    try
    {
        report = replay(trace_path);
    }
    catch (const Error& e)
    {
        out << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    if (report.identical)
    {
        out << "identical: trace and workspace reproduced byte for byte\n";
        return kExitOk;
    }
    if (!report.problem.empty())
        out << report.problem << '\n';
    if (report.divergence)
    {
        const auto& d = *report.divergence;
        out << "DivergenceAt(turn " << d.turn << ") at event " << d.index << "\n  recorded: " << d.expected
            << "\n  replayed: " << d.actual << '\n';
    }
    for (const auto& diff : report.workspace_differences)
        out << "workspace " << diff << '\n';
    return kExitDiverged;
}

int cmd_eval(const EvalOptions& options, std::ostream& out)
{
    try
    {
        if (!fs::is_directory(options.workspace))
            throw ConfigError("workspace is not a directory: " + options.workspace.string());
        const auto task = resolve_task(options.task);

        std::unique_ptr<LlmBackend> judge;
        if (options.judge == "mock")
        {
            if (!options.judge_script)
                throw ConfigError("--judge mock needs --judge-script");
            judge = std::make_unique<ScriptedBackend>(ScriptedBackend::from_file(*options.judge_script));
        }
        else if (options.judge == "wire")
        {
            auto config = ChatCompletionClient::config_from_env();
            config.debug_wire = options.debug_wire;
            judge = std::make_unique<ChatCompletionClient>(config);
        }
        else if (options.judge != "none")
        {
            throw ConfigError("unknown judge \"" + options.judge + "\" (expected none, mock or wire)");
        }

        // Metrics run on a copy so the sandbox never touches the original.
        QuarterCharTokenizer tokenizer;
        const auto original = FileStore::open_directory(tokenizer, options.workspace);
        TempDir scratch("l2mac-eval");
        FileStore store(tokenizer, scratch.path());
        for (const auto& [path, content] : original.entries())
            store.put(path, content);

        auto runner = make_runner(options.eval);
        const auto metrics = evaluate_workspace(store, task.prompt, judge.get(), runner, options.eval, options.model_id);
        nlohmann::json j = metrics;
        auto report_path = options.report;
        if (!report_path)
        {
            auto ws = fs::absolute(options.workspace).lexically_normal();
            if (ws.filename().empty())
                ws = ws.parent_path();
            report_path = ws.parent_path() / "report.json";
        }
        write_json(*report_path, j);
        out << j.dump(2) << '\n';
        return kExitOk;
    }
    catch (const Error& e)
    {
        out << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}

int cmd_aggregate(const std::vector<fs::path>& inputs, const fs::path& csv, std::ostream& out)
{
    try
    {
        std::vector<MetricReport> reports;
        for (const auto& input : inputs)
        {
            for (const auto& path : find_reports(input))
            {
                try
                {
                    reports.push_back(nlohmann::json::parse(read_text(path)).get<MetricReport>());
                }
                catch (const nlohmann::json::exception& e)
                {
                    throw ConfigError("bad report " + path.string() + ": " + e.what());
                }
            }
        }
        if (reports.empty())
            throw ConfigError("no report.json files found");
        const auto stats = aggregate(reports);
        std::ofstream file(csv, std::ios::binary | std::ios::trunc);
        if (!file)
            throw ConfigError("cannot write " + csv.string());
        write_aggregate_csv(file, stats);
        write_aggregate_csv(out, stats);
        return kExitOk;
    }
    catch (const Error& e)
    {
        out << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}

} // namespace l2mac::cli
