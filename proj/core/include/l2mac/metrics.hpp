#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "l2mac/evaluator.hpp"
#include "l2mac/file_store.hpp"
#include "l2mac/llm_backend.hpp"
#include "l2mac/process_runner.hpp"

namespace l2mac {

/// Metrics whose tool could not run are absent (null), never zero.
struct MetricReport
{
    std::optional<std::size_t> features_implemented;
    std::size_t features_total = 0;
    std::optional<double> features_pct;
    std::optional<std::size_t> syntax_errors;
    std::size_t loc = 0;
    std::size_t loc_without_tests = 0;
    std::optional<std::size_t> tests_passed;
    std::optional<std::size_t> tests_failed;
    std::optional<double> coverage_pct;
};

void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

/// Integer from the last line carrying FEATURES_FUNCTIONAL=<n>; within that
/// line the last occurrence wins.
std::optional<std::size_t> extract_features_functional(std::string_view response);

/// Checklist items ("- [ ]" / "- [x]") in a task prompt.
std::size_t count_features(std::string_view task_prompt);

/// Judge prompt over the whole store rendered as named fenced blocks.
std::string render_judge_prompt(const FileStore& store, std::string_view task_prompt);

struct FeatureScore
{
    std::size_t implemented = 0;
    std::size_t total = 0;
    double pct() const noexcept { return total == 0 ? 0.0 : 100.0 * static_cast<double>(implemented) / static_cast<double>(total); }
};

inline constexpr std::size_t kJudgeRetries = 3;

/// Asks the judge at temperature 0. A reply without the marker is asked
/// again up to kJudgeRetries times, then JudgeParseFailure is thrown.
/// Claims above the checklist size are clamped to it.
FeatureScore features_pct(const FileStore& store, std::string_view task_prompt, LlmBackend& judge,
                          const std::string& model_id = "gpt-4-0613");

struct LineCount
{
    std::size_t all = 0;
    std::size_t without_tests = 0;
};

/// Non-blank lines over every file; comments count.
LineCount count_loc(const FileStore& store, const EvalConfig& config = {});

/// Errors-only checker count; absent when the checker is unavailable.
std::optional<std::size_t> count_errors(const FileStore& store, const CommandEvaluator& evaluator);

/// Absent when the test runner is unavailable or there are no tests.
std::optional<TestTally> run_tests(const FileStore& store, const CommandEvaluator& evaluator);

struct CoverageConfig
{
    std::string python = "python3";
    std::chrono::seconds timeout{300};
};

/// Line coverage of the full test run over the workspace sources, in
/// percent. Absent when the coverage tool is unavailable.
std::optional<double> coverage_pct(const FileStore& store, const ProcessRunner& runner, const EvalConfig& eval,
                                   const CoverageConfig& config = {});

/// Every metric for one workspace. `judge` may be null, leaving Features %
/// absent.
MetricReport evaluate_workspace(const FileStore& store, std::string_view task_prompt, LlmBackend* judge,
                                const ProcessRunner& runner, const EvalConfig& eval, const std::string& model_id);

struct ColumnStats
{
    std::string column;
    double mean = 0.0;
    double ci95 = 0.0; // 1.96 * sample sd / sqrt(n)
    std::size_t n = 0;
};

/// Mean and 95% interval per reported column, ignoring absent values.
std::vector<ColumnStats> aggregate(const std::vector<MetricReport>& reports);

/// Header "metric,Features %,# Errors,LOC,Tests Passed,Tests Failed,Cov %"
/// then rows mean, ci95 and n.
void write_aggregate_csv(std::ostream& out, const std::vector<ColumnStats>& stats);

} // namespace l2mac
