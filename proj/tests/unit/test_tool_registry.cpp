#include <doctest.h>

#include "l2mac/errors.hpp"
#include "l2mac/tool_registry.hpp"
#include "test_support.hpp"

using namespace l2mac;
using namespace l2mac::testing;

namespace {

const QuarterCharTokenizer tk;

Message response_calling(const std::string& name, const std::string& arguments)
{
    return make_message(MessageKind::LlmResponse, "", tk, ToolCallPayload{name, arguments});
}

nlohmann::json reply(const Message& m)
{
    return nlohmann::json::parse(m.content);
}

} // namespace

TEST_SUITE("tool_registry")
{
    TEST_CASE("published function set and order")
    {
        CHECK(tool_names(code_tool_schemas()) ==
              std::vector<std::string>{"provide_detailed_sub_task_steps_for_sub_agents", "sub_task_step_complete",
                                       "view_files", "run_python_file", "pytest_files", "write_files", "delete_files"});
        CHECK(tool_names(execution_tool_schemas()).size() == 6);
        CHECK(find_schema(execution_tool_schemas(), tools::kProvideSteps) == nullptr);
        CHECK(tool_names(bootstrap_tool_schemas()) == std::vector<std::string>{"provide_detailed_sub_task_steps_for_sub_agents"});
    }

    TEST_CASE("wire form of view_files is the published definition")
    {
        const auto* schema = find_schema(code_tool_schemas(), tools::kViewFiles);
        REQUIRE(schema != nullptr);
        CHECK(to_wire_json(*schema).dump() ==
              R"({"name":"view_files","description":"Print out the file contents into the response to view.",)"
              R"("parameters":{"type":"object","properties":{"files":{"type":"array","description":"list of the files to view",)"
              R"("items":{"type":"string"}}},"required":["files"]}})");
    }

    TEST_CASE("parse_tool_call")
    {
        const auto offered = execution_tool_schemas();
        SUBCASE("valid write_files")
        {
            const auto call = parse_tool_call(
                response_calling("write_files", R"({"files_and_contents": [{"file_path": "app.py", "file_contents": "x"}]})"),
                offered);
            CHECK(call.name == "write_files");
            CHECK(call.arguments.at("files_and_contents")[0].at("file_path") == "app.py");
        }
        SUBCASE("unknown function")
        {
            CHECK_THROWS_AS(parse_tool_call(response_calling("format_disk", "{}"), offered), UnknownTool);
        }
        SUBCASE("planner is not offered during execution")
        {
            CHECK_THROWS_AS(parse_tool_call(response_calling(std::string(tools::kProvideSteps), R"({"steps": ["a"]})"), offered),
                            UnknownTool);
        }
        SUBCASE("pytest_files without arguments")
        {
            CHECK(parse_tool_call(response_calling("pytest_files", "{}"), offered).name == "pytest_files");
            CHECK(parse_tool_call(response_calling("pytest_files", ""), offered).name == "pytest_files");
        }
        SUBCASE("malformed arguments")
        {
            CHECK_THROWS_AS(parse_tool_call(response_calling("write_files", "{"), offered), MalformedArguments);
            CHECK_THROWS_AS(parse_tool_call(response_calling("write_files", "[]"), offered), MalformedArguments);
            CHECK_THROWS_AS(parse_tool_call(response_calling("write_files", "{}"), offered), MalformedArguments);
            CHECK_THROWS_AS(parse_tool_call(response_calling("write_files", R"({"files_and_contents": [{"file_path": "a"}]})"), offered),
                            MalformedArguments);
            CHECK_THROWS_AS(parse_tool_call(response_calling("view_files", R"({"files": "app.py"})"), offered),
                            MalformedArguments);
            CHECK_THROWS_AS(parse_tool_call(response_calling("view_files", R"({"files": [1]})"), offered),
                            MalformedArguments);
        }
        SUBCASE("a response without a call")
        {
            CHECK_THROWS(parse_tool_call(make_message(MessageKind::LlmResponse, "text", tk), offered));
        }
    }

    TEST_CASE("schema validation reports the location")
    {
        const nlohmann::ordered_json schema = nlohmann::ordered_json::parse(
            R"({"type":"object","properties":{"xs":{"type":"array","items":{"type":"string"}}},"required":["xs"]})");
        CHECK_FALSE(validate_against_schema(nlohmann::json::parse(R"({"xs": ["a"]})"), schema));
        const auto problem = validate_against_schema(nlohmann::json::parse(R"({"xs": ["a", 2]})"), schema);
        REQUIRE(problem);
        CHECK(problem->find("xs[1]") != std::string::npos);
    }

    TEST_CASE("in-memory dispatch")
    {
        FileStore store(tk);
        ProcessRunner runner({"python3"});
        DispatchContext ctx{store, runner, "python3", std::chrono::seconds(10), 8000, std::nullopt};
        const auto offered = execution_tool_schemas();
        auto run = [&](const std::string& name, const std::string& args) {
            return dispatch(parse_tool_call(response_calling(name, args), offered), ctx);
        };

        auto w = run("write_files", R"({"files_and_contents": [{"file_path": "app.py", "file_contents": "print(1)\n"}]})");
        CHECK(w.store_mutated);
        CHECK(reply(w.response).at("write_files_status") == "success");

        auto bad = run("write_files", R"({"files_and_contents": [{"file_path": "../x.py", "file_contents": ""}]})");
        CHECK_FALSE(bad.store_mutated);

        auto v = run("view_files", R"({"files": ["app.py"]})");
        CHECK(v.response.content == store.view_files({"app.py"}).content);
        CHECK_FALSE(v.store_mutated);

        auto done = run("sub_task_step_complete", "{}");
        CHECK(done.step_complete);

        auto exec = run("run_python_file", R"({"file_name_to_run": "app.py"})");
        CHECK(reply(exec.response).at("status") == "error");

        auto d = run("delete_files", R"({"files": ["-1"]})");
        CHECK(d.store_mutated);
        CHECK(store.empty());
    }

    TEST_CASE("view output is capped")
    {
        FileStore store(tk);
        store.put("big.py", std::string(4000, 'x'));
        ProcessRunner runner({"python3"});
        DispatchContext ctx{store, runner, "python3", std::chrono::seconds(10), 100, std::nullopt};
        const auto r = dispatch(ToolCall{"view_files", {{"files", {"big.py"}}}}, ctx);
        CHECK(r.response.token_count <= 100);
        CHECK(r.response.content.find("[output truncated") != std::string::npos);
    }

    TEST_CASE("sandboxed execution" * doctest::skip(!ProcessRunner::program_available("python3")))
    {
        TempDir dir;
        FileStore store(tk, dir.path() / "ws");
        ProcessRunner runner({"python3"});
        DispatchContext ctx{store, runner, "python3", std::chrono::seconds(60), 8000, std::nullopt};

        SUBCASE("a script that raises")
        {
            store.put("boom.py", "def f():\n    raise ValueError('kaboom')\n\nf()\n");
            const auto r = reply(dispatch(ToolCall{"run_python_file", {{"file_name_to_run", "boom.py"}}}, ctx).response);
            CHECK(r.at("exit_code") == 1);
            const auto out = r.at("output").get<std::string>();
            CHECK(out.find("Traceback (most recent call last)") != std::string::npos);
            CHECK(out.find("ValueError: kaboom") != std::string::npos);
            // Workspace paths are made relative.
            CHECK(out.find(dir.path().string()) == std::string::npos);
        }
        SUBCASE("a script with arguments")
        {
            store.put("echo.py", "import sys\nprint(' '.join(sys.argv[1:]))\n");
            const auto r = reply(
                dispatch(ToolCall{"run_python_file", {{"file_name_to_run", "echo.py"}, {"arguments", {"a", "b"}}}}, ctx)
                    .response);
            CHECK(r.at("output") == "a b\n");
            CHECK_FALSE(r.contains("exit_code"));
        }
        SUBCASE("missing script")
        {
            const auto r = reply(dispatch(ToolCall{"run_python_file", {{"file_name_to_run", "nope.py"}}}, ctx).response);
            CHECK(r.at("status") == "error");
        }
        SUBCASE("timeout")
        {
            store.put("spin.py", "while True:\n    pass\n");
            ctx.timeout = std::chrono::milliseconds(500);
            const auto r = reply(dispatch(ToolCall{"run_python_file", {{"file_name_to_run", "spin.py"}}}, ctx).response);
            CHECK(r.at("error").get<std::string>().find("timed out") != std::string::npos);
        }
        SUBCASE("files written by the script do not enter the store")
        {
            store.put("side.py", "open('made.txt', 'w').write('x')\n");
            dispatch(ToolCall{"run_python_file", {{"file_name_to_run", "side.py"}}}, ctx);
            CHECK_FALSE(store.contains("made.txt"));
            CHECK_FALSE(std::filesystem::exists(dir.path() / "ws" / "made.txt"));
        }
        SUBCASE("pytest with one passing test")
        {
            store.put("test_app.py", "def test_ok():\n    assert 1 + 1 == 2\n");
            const auto r = reply(dispatch(ToolCall{"pytest_files", nlohmann::json::object()}, ctx).response);
            const auto out = r.at("output").get<std::string>();
            CHECK(out.find("1 passed") != std::string::npos);
            CHECK(out.find("test_app.py .") != std::string::npos);
            CHECK(out.find("<duration>") != std::string::npos);
        }
    }

    TEST_CASE("process output normalization")
    {
        CHECK(normalize_process_output("File \"/tmp/ws/app.py\", line 3", "/tmp/ws") == "File \"app.py\", line 3");
        CHECK(normalize_process_output("cwd is /tmp/ws", "/tmp/ws") == "cwd is .");
        CHECK(normalize_process_output("1 passed in 0.03s", "") == "1 passed in <duration>");
        CHECK(normalize_process_output("3 failed in 61.20s (0:01:01)", "") == "3 failed in <duration>");
        CHECK(normalize_process_output("<Msg object at 0x7f3a12bc90d0>", "") == "<Msg object at 0x<address>>");
        CHECK(normalize_process_output("mask 0xff", "") == "mask 0xff");
    }

    TEST_CASE("fit_to_tokens")
    {
        auto id = [](std::string_view s) { return std::string(s); };
        CHECK(fit_to_tokens("short", 100, tk, id) == "short");
        const std::string long_text(30000, 'y');
        const auto cut = fit_to_tokens(long_text, 500, tk, id);
        CHECK(tk.count(cut) <= 500);
        CHECK(cut.find("[output truncated: showing the first ") != std::string::npos);
        CHECK(cut.find("of 30000 characters]") != std::string::npos);
        // Never splits a multi-byte character.
        std::string accents;
        for (int i = 0; i < 1000; ++i)
            accents += "\xc3\xa9";
        CHECK(is_text_content(fit_to_tokens(accents, 60, tk, id)));
    }

    TEST_CASE("rejection message shape")
    {
        const auto j = reply(rejection_message("format_disk", "Unknown function", tk));
        CHECK(j == nlohmann::json{{"function", "format_disk"}, {"status", "error"}, {"message", "Unknown function"}});
    }
}
