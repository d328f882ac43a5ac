#include "l2mac/metrics.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <iomanip>
#include <ostream>
#include <regex>
#include <sstream>

#include <spdlog/spdlog.h>

#include "l2mac/errors.hpp"
#include "l2mac/prompts.hpp"

namespace l2mac {

namespace {

template <typename T>
nlohmann::json optional_json(const std::optional<T>& v)
{
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <typename T>
std::optional<T> optional_from(const nlohmann::json& j, const char* key)
{
    if (!j.contains(key) || j.at(key).is_null())
        return std::nullopt;
    return j.at(key).get<T>();
}

bool is_test_path(const std::string& path, const EvalConfig& config)
{
    const auto slash = path.rfind('/');
    const auto base = slash == std::string::npos ? path : path.substr(slash + 1);
    return base.rfind(config.test_prefix, 0) == 0 && base.size() >= config.source_suffix.size() &&
           base.compare(base.size() - config.source_suffix.size(), config.source_suffix.size(), config.source_suffix) == 0;
}

std::vector<std::string> split_lines(std::string_view text)
{
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= text.size())
    {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos)
            end = text.size();
        lines.emplace_back(text.substr(start, end - start));
        if (end == text.size())
            break;
        start = end + 1;
    }
    return lines;
}

/// Scratch directory removed on scope exit.
class TempDir
{
public:
    TempDir()
    {
        auto pattern = (std::filesystem::temp_directory_path() / "l2mac-metrics-XXXXXX").string();
        if (!::mkdtemp(pattern.data()))
            throw std::runtime_error("cannot create a temporary directory");
        path_ = pattern;
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace

void to_json(nlohmann::json& j, const MetricReport& r)
{
    j = {{"features_implemented", optional_json(r.features_implemented)},
         {"features_total", r.features_total},
         {"features_pct", optional_json(r.features_pct)},
         {"syntax_errors", optional_json(r.syntax_errors)},
         {"loc", r.loc},
         {"loc_without_tests", r.loc_without_tests},
         {"tests_passed", optional_json(r.tests_passed)},
         {"tests_failed", optional_json(r.tests_failed)},
         {"coverage_pct", optional_json(r.coverage_pct)}};
}

void from_json(const nlohmann::json& j, MetricReport& r)
{
    r.features_implemented = optional_from<std::size_t>(j, "features_implemented");
    r.features_total = j.value("features_total", std::size_t{0});
    r.features_pct = optional_from<double>(j, "features_pct");
    r.syntax_errors = optional_from<std::size_t>(j, "syntax_errors");
    r.loc = j.value("loc", std::size_t{0});
    r.loc_without_tests = j.value("loc_without_tests", std::size_t{0});
    r.tests_passed = optional_from<std::size_t>(j, "tests_passed");
    r.tests_failed = optional_from<std::size_t>(j, "tests_failed");
    r.coverage_pct = optional_from<double>(j, "coverage_pct");
}

std::optional<std::size_t> extract_features_functional(std::string_view response)
{
    static const std::regex marker(R"(FEATURES_FUNCTIONAL\s*=\s*(\d+))");
    const auto lines = split_lines(response);
    for (auto it = lines.rbegin(); it != lines.rend(); ++it)
    {
        std::optional<std::size_t> last;
        for (auto m = std::sregex_iterator(it->begin(), it->end(), marker); m != std::sregex_iterator(); ++m)
        {
            try
            {
                last = std::stoul((*m)[1].str());
            }
            catch (const std::out_of_range&)
            {
                last.reset();
            }
        }
        if (last)
            return last;
    }
    return std::nullopt;
}

std::size_t count_features(std::string_view task_prompt)
{
    static const std::regex item(R"(^\s*[-*+]\s*\[[ xX]\])");
    std::size_t n = 0;
    for (const auto& line : split_lines(task_prompt))
    {
        if (std::regex_search(line, item))
            ++n;
    }
    return n;
}

std::string render_judge_prompt(const FileStore& store, std::string_view task_prompt)
{
    const auto files = store.list_files();
    const auto code = files.empty() ? std::string{} : store.view_files(files).content;
    return prompts::features_judge(task_prompt, code);
}

FeatureScore features_pct(const FileStore& store, std::string_view task_prompt, LlmBackend& judge,
                          const std::string& model_id)
{
    FeatureScore score;
    score.total = count_features(task_prompt);
    const auto& tk = judge.tokenizer();
    CompletionRequest request{{make_message(MessageKind::User, render_judge_prompt(store, task_prompt), tk)},
                              {},
                              0.0,
                              model_id,
                              std::nullopt};
    for (std::size_t attempt = 0; attempt <= kJudgeRetries; ++attempt)
    {
        const auto reply = judge.complete(request);
        if (auto n = extract_features_functional(reply.content))
        {
            if (*n > score.total)
                spdlog::warn("judge claimed {} features of {}; clamping", *n, score.total);
            score.implemented = std::min(*n, score.total);
            return score;
        }
        spdlog::warn("judge reply {} has no FEATURES_FUNCTIONAL line", attempt + 1);
    }
    throw JudgeParseFailure("no FEATURES_FUNCTIONAL line after " + std::to_string(kJudgeRetries) + " retries");
}

LineCount count_loc(const FileStore& store, const EvalConfig& config)
{
    LineCount count;
    for (const auto& [path, content] : store.entries())
    {
        std::size_t n = 0;
        for (const auto& line : split_lines(content))
        {
            if (line.find_first_not_of(" \t\r\f\v") != std::string::npos)
                ++n;
        }
        count.all += n;
        if (!is_test_path(path, config))
            count.without_tests += n;
    }
    return count;
}

std::optional<std::size_t> count_errors(const FileStore& store, const CommandEvaluator& evaluator)
{
    const auto sources = source_files(store, evaluator.config());
    if (sources.empty())
        return 0;
    try
    {
        store.sync_mirror();
        auto run = evaluator.run_checker(store, sources);
        store.sync_mirror();
        return run.errors.size();
    }
    catch (const EvaluatorUnavailable& e)
    {
        spdlog::warn("# Errors unavailable: {}", e.what());
        return std::nullopt;
    }
}

std::optional<TestTally> run_tests(const FileStore& store, const CommandEvaluator& evaluator)
{
    const auto tests = test_files(store, evaluator.config());
    if (tests.empty())
        return TestTally{0, 0, true};
    try
    {
        store.sync_mirror();
        auto run = evaluator.run_tests(store, tests);
        store.sync_mirror();
        if (!run.tally.summary_found && run.output.find("No module named") != std::string::npos)
        {
            spdlog::warn("test runner unavailable: {}", run.output.substr(0, 200));
            return std::nullopt;
        }
        return run.tally;
    }
    catch (const EvaluatorUnavailable& e)
    {
        spdlog::warn("tests unavailable: {}", e.what());
        return std::nullopt;
    }
}

std::optional<double> coverage_pct(const FileStore& store, const ProcessRunner& runner, const EvalConfig& eval,
                                   const CoverageConfig& config)
{
    const auto tests = test_files(store, eval);
    if (tests.empty() || !store.mirror_root())
        return std::nullopt;

    TempDir scratch;
    const auto data = scratch.path() / "coverage.data";
    const auto report = scratch.path() / "coverage.json";
    const std::map<std::string, std::string> env{
        {"PYTHONDONTWRITEBYTECODE", "1"}, {"PYTHONHASHSEED", "0"}, {"COVERAGE_FILE", data.string()}};

    store.sync_mirror();
    ProcessSpec run_spec;
    run_spec.argv = {config.python, "-m", "coverage", "run", "--source=.", "-m", "pytest", "-p", "no:cacheprovider"};
    run_spec.argv.insert(run_spec.argv.end(), tests.begin(), tests.end());
    run_spec.cwd = *store.mirror_root();
    run_spec.timeout = config.timeout;
    run_spec.env = env;
    const auto ran = runner.run(run_spec);
    store.sync_mirror();
    if (ran.exit_code == 127 || ran.output.find("No module named coverage") != std::string::npos)
    {
        spdlog::warn("coverage unavailable: {}", ran.output.substr(0, 200));
        return std::nullopt;
    }

    ProcessSpec report_spec;
    report_spec.argv = {config.python, "-m", "coverage", "json", "-q", "-o", report.string()};
    report_spec.cwd = *store.mirror_root();
    report_spec.timeout = config.timeout;
    report_spec.env = env;
    const auto reported = runner.run(report_spec);
    store.sync_mirror();
    std::ifstream in(report);
    if (reported.exit_code != 0 || !in)
    {
        spdlog::warn("coverage report failed: {}", reported.output.substr(0, 200));
        return std::nullopt;
    }
    try
    {
        const auto j = nlohmann::json::parse(in);
        return j.at("totals").at("percent_covered").get<double>();
    }
    catch (const nlohmann::json::exception& e)
    {
        spdlog::warn("unreadable coverage report: {}", e.what());
        return std::nullopt;
    }
}

MetricReport evaluate_workspace(const FileStore& store, std::string_view task_prompt, LlmBackend* judge,
                                const ProcessRunner& runner, const EvalConfig& eval, const std::string& model_id)
{
    MetricReport report;
    report.features_total = count_features(task_prompt);
    if (judge)
    {
        const auto score = features_pct(store, task_prompt, *judge, model_id);
        report.features_implemented = score.implemented;
        report.features_pct = score.pct();
    }
    CommandEvaluator evaluator(eval, runner);
    report.syntax_errors = count_errors(store, evaluator);
    const auto loc = count_loc(store, eval);
    report.loc = loc.all;
    report.loc_without_tests = loc.without_tests;
    if (auto tally = run_tests(store, evaluator))
    {
        report.tests_passed = tally->passed;
        report.tests_failed = tally->failed;
    }
    report.coverage_pct = coverage_pct(store, runner, eval);
    return report;
}

std::vector<ColumnStats> aggregate(const std::vector<MetricReport>& reports)
{
    using Getter = std::optional<double> (*)(const MetricReport&);
    const std::vector<std::pair<std::string, Getter>> columns{
        {"Features %", [](const MetricReport& r) { return r.features_pct; }},
        {"# Errors",
         [](const MetricReport& r) {
             return r.syntax_errors ? std::optional<double>(static_cast<double>(*r.syntax_errors)) : std::nullopt;
         }},
        {"LOC", [](const MetricReport& r) { return std::optional<double>(static_cast<double>(r.loc)); }},
        {"Tests Passed",
         [](const MetricReport& r) {
             return r.tests_passed ? std::optional<double>(static_cast<double>(*r.tests_passed)) : std::nullopt;
         }},
        {"Tests Failed",
         [](const MetricReport& r) {
             return r.tests_failed ? std::optional<double>(static_cast<double>(*r.tests_failed)) : std::nullopt;
         }},
        {"Cov %", [](const MetricReport& r) { return r.coverage_pct; }},
    };

    std::vector<ColumnStats> out;
    for (const auto& [name, get] : columns)
    {
        std::vector<double> values;
        for (const auto& r : reports)
        {
            if (auto v = get(r))
                values.push_back(*v);
        }
        ColumnStats s;
        s.column = name;
        s.n = values.size();
        if (!values.empty())
        {
            double sum = 0.0;
            for (double v : values)
                sum += v;
            s.mean = sum / static_cast<double>(s.n);
            if (s.n > 1)
            {
                double sq = 0.0;
                for (double v : values)
                    sq += (v - s.mean) * (v - s.mean);
                const double sd = std::sqrt(sq / static_cast<double>(s.n - 1));
                s.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(s.n));
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_aggregate_csv(std::ostream& out, const std::vector<ColumnStats>& stats)
{
    out << "metric";
    for (const auto& s : stats)
        out << ',' << s.column;
    out << '\n';
    auto row = [&](const char* label, auto&& value) {
        out << label;
        for (const auto& s : stats)
            out << ',' << value(s);
        out << '\n';
    };
    auto fixed = [](double v) {
        std::ostringstream ss;
        ss << std::fixed << std::setprecision(4) << v;
        return ss.str();
    };
    row("mean", [&](const ColumnStats& s) { return s.n ? fixed(s.mean) : std::string{}; });
    row("ci95", [&](const ColumnStats& s) { return s.n ? fixed(s.ci95) : std::string{}; });
    row("n", [](const ColumnStats& s) { return std::to_string(s.n); });
}

} // namespace l2mac
