#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "l2mac/file_store.hpp"
#include "l2mac/messages.hpp"
#include "l2mac/process_runner.hpp"

namespace l2mac {

struct SyntaxError
{
    std::string path;
    std::size_t line = 0;
    std::string code;
    std::string message;

    bool operator==(const SyntaxError&) const = default;
};

struct EvaluatorReport
{
    std::vector<SyntaxError> syntax_errors;
    std::size_t tests_passed = 0;
    std::size_t tests_failed = 0;
    std::string raw_output;

    bool is_clean() const noexcept { return syntax_errors.empty() && tests_failed == 0; }
    bool operator==(const EvaluatorReport&) const = default;
};

void to_json(nlohmann::json& j, const SyntaxError& e);
void from_json(const nlohmann::json& j, SyntaxError& e);
void to_json(nlohmann::json& j, const EvaluatorReport& r);
void from_json(const nlohmann::json& j, EvaluatorReport& r);

/// Checks a file store and reports what the LLM has to fix.
class Evaluator
{
public:
    virtual ~Evaluator() = default;
    virtual EvaluatorReport evaluate(const FileStore& store) = 0;
};

struct EvalConfig
{
    /// Errors-only static check, run once over every source file.
    std::string checker_cmd = "python3";
    std::vector<std::string> checker_args{"-m",
                                          "pylint",
                                          "--disable=all",
                                          "--enable=E",
                                          "--score=n",
                                          "--reports=n",
                                          "--persistent=n",
                                          "--msg-template={path}:{line}:{msg_id}:{msg}"};
    /// Test runner argv prefix; test file paths are appended.
    std::vector<std::string> test_cmd{"python3", "-m", "pytest", "-p", "no:cacheprovider"};
    std::chrono::seconds timeout{120};
    std::string source_suffix = ".py";
    std::string test_prefix = "test_";
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

/// Pulls "path:line:CODE:message" records out of checker output.
std::vector<SyntaxError> parse_checker_output(const std::string& output);

struct TestTally
{
    std::size_t passed = 0;
    std::size_t failed = 0;
    bool summary_found = false;
};

/// Reads the final pytest summary ("3 passed, 1 failed in ..."). Errors count
/// as failures.
TestTally parse_test_summary(const std::string& output);

/// Source files (by suffix) and test files (basename prefix) in list order.
std::vector<std::string> source_files(const FileStore& store, const EvalConfig& config);
std::vector<std::string> test_files(const FileStore& store, const EvalConfig& config);

/// Runs the configured checker and test runner as sandboxed processes over
/// the store's disk mirror. Reports are memoized on the store's content hash,
/// so re-evaluating an unchanged store costs nothing.
class CommandEvaluator final : public Evaluator
{
public:
    CommandEvaluator(EvalConfig config, const ProcessRunner& runner);

    /// Throws EvaluatorUnavailable when the checker or test runner cannot be
    /// started.
    void check_available() const;

    EvaluatorReport evaluate(const FileStore& store) override;

    struct CheckerRun
    {
        std::vector<SyntaxError> errors;
        std::string output;
        bool timed_out = false;
    };
    struct TestRun
    {
        TestTally tally;
        std::string output;
        bool timed_out = false;
        int exit_code = 0;
    };

    /// Individual stages over the mirror. Callers sync it first. Throw
    /// EvaluatorUnavailable when the program cannot be executed.
    CheckerRun run_checker(const FileStore& store, const std::vector<std::string>& sources) const;
    TestRun run_tests(const FileStore& store, const std::vector<std::string>& tests) const;

    const EvalConfig& config() const noexcept { return config_; }

private:
    EvalConfig config_;
    const ProcessRunner* runner_;
    std::optional<std::pair<std::string, EvaluatorReport>> memo_;
};

/// The evaluator feedback message, or nothing when the report is clean.
/// Content is truncated to `max_tokens` with a notice.
std::optional<Message> render_error_message(const EvaluatorReport& report, const Tokenizer& tokenizer,
                                            std::size_t max_tokens);

} // namespace l2mac
