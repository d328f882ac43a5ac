#include <doctest.h>

#include "l2mac/errors.hpp"
#include "l2mac/evaluator.hpp"
#include "test_support.hpp"

using namespace l2mac;
using namespace l2mac::testing;

namespace {

const QuarterCharTokenizer tk;

bool python_available()
{
    return ProcessRunner::program_available("python3");
}

bool pylint_available()
{
    if (!python_available())
        return false;
    ProcessRunner runner({"python3"});
    return runner.run({{"python3", "-m", "pylint", "--version"}, std::filesystem::current_path(), std::chrono::seconds(60), {}}).exit_code == 0;
}

/// Checker stand-in: flags every source file mentioning UNDEF on line 1.
EvalConfig stub_checker_config()
{
    EvalConfig config;
    config.checker_args = {"-c", "import sys\n"
                                 "for p in sys.argv[1:]:\n"
                                 "    if 'UNDEF' in open(p).read():\n"
                                 "        print(f'{p}:1:E0602:Undefined variable \\'UNDEF\\'')\n"};
    return config;
}

} // namespace

TEST_SUITE("evaluator")
{
    TEST_CASE("checker output parsing")
    {
        const std::string out = "************* Module app\n"
                                "app.py:3:E0602:Undefined variable 'datetime'\n"
                                "pkg/m.py:10:E1101:Instance of 'X' has no 'y' member\n"
                                "not a record\n"
                                "weird:line:E0001:bad line number\n";
        const auto errors = parse_checker_output(out);
        REQUIRE(errors.size() == 2);
        CHECK(errors[0] == SyntaxError{"app.py", 3, "E0602", "Undefined variable 'datetime'"});
        CHECK(errors[1].path == "pkg/m.py");
        CHECK(errors[1].line == 10);
        CHECK(errors[1].code == "E1101");
        CHECK(parse_checker_output("").empty());
    }

    TEST_CASE("test summary parsing")
    {
        auto t = parse_test_summary("test_a.py ..F.\n=== 3 passed, 1 failed in 0.12s ===\n");
        CHECK(t.summary_found);
        CHECK(t.passed == 3);
        CHECK(t.failed == 1);

        t = parse_test_summary("=== 1 failed, 2 passed, 1 error in 1.00s ===");
        CHECK(t.passed == 2);
        CHECK(t.failed == 2);

        // Captured output mentioning "passed" is not the summary.
        t = parse_test_summary("print: 5 passed today\n=== 1 passed in 0.01s ===\n");
        CHECK(t.passed == 1);

        t = parse_test_summary("=== no tests ran in 0.01s ===");
        CHECK(t.summary_found);
        CHECK(t.passed + t.failed == 0);

        t = parse_test_summary("Segmentation fault");
        CHECK_FALSE(t.summary_found);
    }

    TEST_CASE("source and test selection")
    {
        FileStore store(tk);
        store.put("app.py", "");
        store.put("README.md", "");
        store.put("tests/test_app.py", "");
        store.put("test_top.py", "");
        store.put("helpers_test.py", "");
        const EvalConfig config;
        CHECK(source_files(store, config) ==
              std::vector<std::string>{"app.py", "helpers_test.py", "test_top.py", "tests/test_app.py"});
        CHECK(test_files(store, config) == std::vector<std::string>{"test_top.py", "tests/test_app.py"});
    }

    TEST_CASE("report JSON round-trip")
    {
        EvaluatorReport r{{{"a.py", 2, "E0602", "msg"}}, 3, 1, "raw"};
        nlohmann::json j = r;
        CHECK(j.get<EvaluatorReport>() == r);
        CHECK_FALSE(r.is_clean());
        CHECK(EvaluatorReport{}.is_clean());
    }

    TEST_CASE("feedback rendering")
    {
        CHECK_FALSE(render_error_message(EvaluatorReport{}, tk, 8000));

        EvaluatorReport two;
        two.syntax_errors = {{"app.py", 3, "E0602", "Undefined variable 'x'"}, {"pkg/m.py", 7, "E1120", "No value"}};
        const auto m = render_error_message(two, tk, 8000);
        REQUIRE(m);
        CHECK(m->kind == MessageKind::FunctionResponse);
        CHECK(m->content.find("app.py:3: E0602 Undefined variable 'x'") != std::string::npos);
        CHECK(m->content.find("pkg/m.py:7: E1120 No value") != std::string::npos);

        EvaluatorReport failing;
        failing.tests_passed = 2;
        failing.tests_failed = 1;
        failing.raw_output = "checker noise\n===== FAILURES =====\nassert 3 == 2\n";
        const auto f = render_error_message(failing, tk, 8000);
        REQUIRE(f);
        CHECK(f->content.find("2 passed, 1 failed") != std::string::npos);
        CHECK(f->content.find("===== FAILURES =====\nassert 3 == 2") != std::string::npos);
        CHECK(f->content.find("checker noise") == std::string::npos);
    }

    TEST_CASE("oversized test output is truncated")
    {
        EvaluatorReport big;
        big.tests_failed = 1;
        big.raw_output = "===== FAILURES =====\n" + std::string(30000, 'E');
        const std::size_t limit = 2000;
        const auto m = render_error_message(big, tk, limit);
        REQUIRE(m);
        CHECK(m->token_count <= limit);
        CHECK(m->content.size() <= limit * 4);
        CHECK(m->content.find("[output truncated: showing the first") != std::string::npos);
        CHECK(m->content.find("of 30021 characters]") != std::string::npos);
    }

    TEST_CASE("command evaluator" * doctest::skip(!python_available()))
    {
        TempDir dir;
        FileStore store(tk, dir.path() / "ws");
        ProcessRunner runner({"python3"});
        CommandEvaluator evaluator(stub_checker_config(), runner);

        SUBCASE("empty store is vacuously clean")
        {
            const auto r = evaluator.evaluate(store);
            CHECK(r.is_clean());
            CHECK(r.tests_passed == 0);
        }
        SUBCASE("checker findings and test tallies")
        {
            store.put("app.py", "x = UNDEF\n");
            store.put("test_app.py", "def test_a():\n    assert True\n\ndef test_b():\n    assert False\n");
            const auto r = evaluator.evaluate(store);
            REQUIRE(r.syntax_errors.size() == 1);
            CHECK(r.syntax_errors[0] == SyntaxError{"app.py", 1, "E0602", "Undefined variable 'UNDEF'"});
            CHECK(r.tests_passed == 1);
            CHECK(r.tests_failed == 1);
            CHECK_FALSE(r.is_clean());
        }
        SUBCASE("one passing test is clean")
        {
            store.put("app.py", "def f():\n    return 1\n");
            store.put("test_app.py", "from app import f\n\ndef test_f():\n    assert f() == 1\n");
            const auto r = evaluator.evaluate(store);
            CHECK(r.is_clean());
            CHECK(r.tests_passed == 1);
        }
        SUBCASE("idempotent on an unchanged store")
        {
            store.put("test_app.py", "def test_a():\n    assert True\n");
            const auto first = evaluator.evaluate(store);
            const auto second = evaluator.evaluate(store);
            CHECK(first == second);
            CommandEvaluator fresh(stub_checker_config(), runner);
            CHECK(fresh.evaluate(store) == first);
        }
        SUBCASE("a test file that does not import is a failure")
        {
            store.put("test_broken.py", "import does_not_exist\n\ndef test_a():\n    pass\n");
            const auto r = evaluator.evaluate(store);
            CHECK(r.tests_failed >= 1);
        }
        SUBCASE("missing checker is a configuration error")
        {
            EvalConfig config;
            config.checker_cmd = "python3";
            config.checker_args = {"-m", "module_that_is_not_installed_anywhere"};
            CommandEvaluator broken(config, runner);
            store.put("app.py", "x = 1\n");
            CHECK_THROWS_AS(broken.evaluate(store), EvaluatorUnavailable);
        }
        SUBCASE("no mirror")
        {
            FileStore memory(tk);
            CHECK_THROWS_AS(evaluator.evaluate(memory), EvaluatorUnavailable);
        }
    }

    TEST_CASE("errors-only checker pins the undefined-name code" * doctest::skip(!pylint_available()))
    {
        TempDir dir;
        FileStore store(tk, dir.path() / "ws");
        ProcessRunner runner({"python3"});
        CommandEvaluator evaluator(EvalConfig{}, runner);
        store.put("models.py", "import os\n\n\ndef now():\n    return datetime.now()\n");
        const auto r = evaluator.evaluate(store);
        REQUIRE(r.syntax_errors.size() == 1);
        CHECK(r.syntax_errors[0].code == "E0602");
        CHECK(r.syntax_errors[0].line == 5);
        CHECK(r.syntax_errors[0].path == "models.py");
    }
}
