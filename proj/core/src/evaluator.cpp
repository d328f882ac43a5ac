#include "l2mac/evaluator.hpp"

#include <algorithm>
#include <regex>

#include "l2mac/errors.hpp"
#include "l2mac/tool_registry.hpp"

namespace l2mac {

namespace {

std::string basename_of(const std::string& path)
{
    auto slash = path.rfind('/');
    return slash == std::string::npos ? path : path.substr(slash + 1);
}

bool ends_with(const std::string& s, const std::string& suffix)
{
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::map<std::string, std::string> sandbox_env()
{
    return {{"PYTHONDONTWRITEBYTECODE", "1"}, {"PYTHONHASHSEED", "0"}};
}

} // namespace

void to_json(nlohmann::json& j, const SyntaxError& e)
{
    j = {{"path", e.path}, {"line", e.line}, {"code", e.code}, {"message", e.message}};
}

void from_json(const nlohmann::json& j, SyntaxError& e)
{
    j.at("path").get_to(e.path);
    j.at("line").get_to(e.line);
    j.at("code").get_to(e.code);
    j.at("message").get_to(e.message);
}

void to_json(nlohmann::json& j, const EvaluatorReport& r)
{
    j = {{"syntax_errors", r.syntax_errors},
         {"tests_passed", r.tests_passed},
         {"tests_failed", r.tests_failed},
         {"raw_output", r.raw_output},
         {"is_clean", r.is_clean()}};
}

void from_json(const nlohmann::json& j, EvaluatorReport& r)
{
    j.at("syntax_errors").get_to(r.syntax_errors);
    j.at("tests_passed").get_to(r.tests_passed);
    j.at("tests_failed").get_to(r.tests_failed);
    j.at("raw_output").get_to(r.raw_output);
}

void to_json(nlohmann::json& j, const EvalConfig& c)
{
    j = {{"checker_cmd", c.checker_cmd},
         {"checker_args", c.checker_args},
         {"test_cmd", c.test_cmd},
         {"timeout_s", c.timeout.count()},
         {"source_suffix", c.source_suffix},
         {"test_prefix", c.test_prefix}};
}

void from_json(const nlohmann::json& j, EvalConfig& c)
{
    c.checker_cmd = j.value("checker_cmd", c.checker_cmd);
    c.checker_args = j.value("checker_args", c.checker_args);
    c.test_cmd = j.value("test_cmd", c.test_cmd);
    c.timeout = std::chrono::seconds(j.value("timeout_s", static_cast<long long>(c.timeout.count())));
    c.source_suffix = j.value("source_suffix", c.source_suffix);
    c.test_prefix = j.value("test_prefix", c.test_prefix);
}

std::vector<SyntaxError> parse_checker_output(const std::string& output)
{
    static const std::regex record(R"(^(.+?):(\d+):([A-Z]\d{4}):(.*)$)");
    std::vector<SyntaxError> errors;
    std::size_t start = 0;
    while (start < output.size())
    {
        auto end = output.find('\n', start);
        if (end == std::string::npos)
            end = output.size();
        const auto line = output.substr(start, end - start);
        std::smatch m;
        if (std::regex_match(line, m, record))
        {
            const auto code = m[3].str();
            if (code.front() == 'E' || code.front() == 'F')
                errors.push_back({m[1].str(), std::stoul(m[2].str()), code, m[4].str()});
        }
        start = end + 1;
    }
    return errors;
}

TestTally parse_test_summary(const std::string& output)
{
    static const std::regex summary_line(R"((\d+) (passed|failed|errors?)\b)");
    TestTally tally;
    // The summary is the last line mentioning outcomes; earlier matches may be
    // test names or captured output.
    std::size_t end = output.size();
    while (end > 0)
    {
        auto start = output.rfind('\n', end - 1);
        start = (start == std::string::npos) ? 0 : start + 1;
        const auto line = output.substr(start, end - start);
        bool any = false;
        TestTally candidate;
        for (auto it = std::sregex_iterator(line.begin(), line.end(), summary_line); it != std::sregex_iterator(); ++it)
        {
            any = true;
            const auto count = std::stoul((*it)[1].str());
            if ((*it)[2].str() == "passed")
                candidate.passed += count;
            else
                candidate.failed += count;
        }
        if ((any && line.find(" in ") != std::string::npos) || line.find("no tests ran") != std::string::npos)
        {
            candidate.summary_found = true;
            return candidate;
        }
        if (start == 0)
            break;
        end = start - 1;
    }
    return tally;
}

std::vector<std::string> source_files(const FileStore& store, const EvalConfig& config)
{
    std::vector<std::string> out;
    for (auto& path : store.list_files())
    {
        if (ends_with(path, config.source_suffix))
            out.push_back(std::move(path));
    }
    return out;
}

std::vector<std::string> test_files(const FileStore& store, const EvalConfig& config)
{
    std::vector<std::string> out;
    for (auto& path : source_files(store, config))
    {
        if (basename_of(path).rfind(config.test_prefix, 0) == 0)
            out.push_back(std::move(path));
    }
    return out;
}

CommandEvaluator::CommandEvaluator(EvalConfig config, const ProcessRunner& runner)
    : config_(std::move(config)), runner_(&runner)
{
}

void CommandEvaluator::check_available() const
{
    auto probe = [&](std::vector<std::string> argv, const char* what) {
        if (argv.empty() || !ProcessRunner::program_available(argv.front()))
            throw EvaluatorUnavailable(std::string(what) + " program not found: " + (argv.empty() ? "" : argv.front()));
        if (!runner_->allows(argv.front()))
            throw EvaluatorUnavailable(std::string(what) + " program is not allowlisted: " + argv.front());
        argv.push_back("--version");
        ProcessSpec spec{argv, {}, std::chrono::seconds(60), sandbox_env()};
        auto result = runner_->run(spec);
        if (result.exit_code != 0)
            throw EvaluatorUnavailable(std::string(what) + " failed to start (exit " + std::to_string(result.exit_code) +
                                       "): " + result.output.substr(0, 400));
    };
    std::vector<std::string> checker{config_.checker_cmd};
    checker.insert(checker.end(), config_.checker_args.begin(), config_.checker_args.end());
    probe(checker, "syntax checker");
    probe(config_.test_cmd, "test runner");
}

CommandEvaluator::CheckerRun CommandEvaluator::run_checker(const FileStore& store,
                                                           const std::vector<std::string>& sources) const
{
    const auto& workspace = *store.mirror_root();
    ProcessSpec spec;
    spec.argv.push_back(config_.checker_cmd);
    spec.argv.insert(spec.argv.end(), config_.checker_args.begin(), config_.checker_args.end());
    spec.argv.insert(spec.argv.end(), sources.begin(), sources.end());
    spec.cwd = workspace;
    spec.timeout = config_.timeout;
    spec.env = sandbox_env();
    auto result = runner_->run(spec);
    if (result.exit_code == 127)
        throw EvaluatorUnavailable("syntax checker could not be executed: " + config_.checker_cmd);
    CheckerRun run;
    run.output = normalize_process_output(result.output, workspace);
    run.errors = parse_checker_output(run.output);
    run.timed_out = result.timed_out;
    if (run.errors.empty() && run.output.find("No module named") != std::string::npos)
        throw EvaluatorUnavailable("syntax checker is not installed: " + run.output.substr(0, 200));
    return run;
}

CommandEvaluator::TestRun CommandEvaluator::run_tests(const FileStore& store,
                                                     const std::vector<std::string>& tests) const
{
    const auto& workspace = *store.mirror_root();
    ProcessSpec spec;
    spec.argv = config_.test_cmd;
    spec.argv.insert(spec.argv.end(), tests.begin(), tests.end());
    spec.cwd = workspace;
    spec.timeout = config_.timeout;
    spec.env = sandbox_env();
    auto result = runner_->run(spec);
    if (result.exit_code == 127)
        throw EvaluatorUnavailable("test runner could not be executed: " + config_.test_cmd.front());
    TestRun run;
    run.output = normalize_process_output(result.output, workspace);
    run.tally = parse_test_summary(run.output);
    run.timed_out = result.timed_out;
    run.exit_code = result.exit_code;
    return run;
}

EvaluatorReport CommandEvaluator::evaluate(const FileStore& store)
{
    if (!store.mirror_root())
        throw EvaluatorUnavailable("the evaluator needs a file store with a workspace mirror");
    store.sync_mirror();
    const auto hash = store.content_hash();
    if (memo_ && memo_->first == hash)
        return memo_->second;

    EvaluatorReport report;
    const auto sources = source_files(store, config_);
    if (!sources.empty())
    {
        auto run = run_checker(store, sources);
        report.syntax_errors = std::move(run.errors);
        report.raw_output += run.output;
        if (run.timed_out)
            report.raw_output += "\n[syntax checker timed out]\n";
        store.sync_mirror();
    }

    const auto tests = test_files(store, config_);
    if (!tests.empty())
    {
        auto run = run_tests(store, tests);
        report.tests_passed = run.tally.passed;
        report.tests_failed = run.tally.failed;
        // A crash or timeout without a summary still blocks completion.
        if (run.timed_out || (!run.tally.summary_found && run.exit_code != 0 && run.exit_code != 5))
            report.tests_failed = std::max<std::size_t>(report.tests_failed, 1);
        if (!report.raw_output.empty() && report.raw_output.back() != '\n')
            report.raw_output += '\n';
        report.raw_output += run.output;
        if (run.timed_out)
            report.raw_output += "\n[test run timed out]\n";
        store.sync_mirror();
    }

    memo_ = {hash, report};
    return report;
}

std::optional<Message> render_error_message(const EvaluatorReport& report, const Tokenizer& tokenizer,
                                            std::size_t max_tokens)
{
    if (report.is_clean())
        return std::nullopt;

    std::string head = "The evaluator found problems in the codebase. Fix them before completing the step.\n";
    if (!report.syntax_errors.empty())
    {
        head += "\nSyntax errors (" + std::to_string(report.syntax_errors.size()) + "):\n";
        for (const auto& e : report.syntax_errors)
            head += e.path + ":" + std::to_string(e.line) + ": " + e.code + " " + e.message + "\n";
    }
    head += "\nTests: " + std::to_string(report.tests_passed) + " passed, " + std::to_string(report.tests_failed) +
            " failed.\n";
    if (report.tests_failed > 0)
        head += "\nTest output:\n";

    // Only the test runner's output is appended; the checker's findings are
    // already listed above.
    std::string detail;
    if (report.tests_failed > 0)
    {
        auto pos = report.raw_output.find("=====");
        detail = pos == std::string::npos ? report.raw_output : report.raw_output.substr(pos);
    }
    auto render = [&](std::string_view shown) { return head + std::string(shown); };
    return make_message(MessageKind::FunctionResponse, fit_to_tokens(detail, max_tokens, tokenizer, render), tokenizer);
}

} // namespace l2mac
